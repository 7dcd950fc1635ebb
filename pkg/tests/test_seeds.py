import numpy as np
import pytest

from hamiltonians.catalog import build_system
from hamiltonians.systems import poisson_bracket, poisson_bracket_gradient
from seeds.finder import DegenerateSeedError, Seed, find_seed, seed_scan
from seeds.commutator import (
    bracket_velocity, commutator_defect, commuting_local_pair, defect_scaling, local_quadratic
)


@pytest.mark.parametrize("a_val", [0.3, 0.5, 2.0])
@pytest.mark.parametrize("b_val", [0.5, 1.0, 2.0])
def test_harmonic_pair_seed(a_val, b_val):
    params = {"a": a_val, "b": b_val}
    inner = build_system("harmonic", params)
    driving = build_system("displaced_oscillator", params)
    seed = find_seed(inner, driving, [0.3, 0.3])
    np.testing.assert_allclose(seed.point.coords, [0.0, b_val / (1 - a_val ** 2)], atol=1e-10)
    assert seed.stability_class == "hyperbolic-like"
    assert seed.residual < 1e-11
    assert seed.energy_inner == pytest.approx(inner.value(seed.point.coords))


def test_duffing_seed_solves_the_cubic(duffing_pair):
    inner, driving = duffing_pair
    seeds = seed_scan(inner, driving, [[-1.0, 1.0], [-2.0, 2.0]], 5)
    assert len(seeds) == 1
    roots = np.roots([1.0, 0.0, -1.0, 0.5])
    real_root = float(roots[np.abs(roots.imag) < 1e-12].real[0])
    np.testing.assert_allclose(seeds[0].point.coords, [0.0, real_root], atol=1e-9)
    assert seeds[0].bracket_value == pytest.approx(0.0, abs=1e-12)


def test_double_well_has_three_seeds():
    inner = build_system("double_well", {"c": 1.0})
    driving = build_system("harmonic", {"a": 0.5})
    seeds = seed_scan(inner, driving, [[-1.0, 1.0], [-2.0, 2.0]], 7)
    q_values = sorted(seed.point.q[0] for seed in seeds)
    np.testing.assert_allclose(q_values, [-np.sqrt(1.5), 0.0, np.sqrt(1.5)], atol=1e-9)
    for seed in seeds:
        assert seed.point.p[0] == pytest.approx(0.0, abs=1e-9)


def test_commuting_pair_is_degenerate():
    inner = build_system("harmonic", {"a": 0.5})
    with pytest.raises(DegenerateSeedError):
        find_seed(inner, inner, [0.2, 0.1])


def test_seed_json_round_trip(harmonic_pair):
    inner, driving = harmonic_pair
    seed = find_seed(inner, driving, [0.1, 1.2])
    clone = Seed.from_json(seed.to_json())
    np.testing.assert_allclose(clone.point.coords, seed.point.coords)
    assert clone.stability_class == seed.stability_class
    np.testing.assert_allclose(clone.eigenvalues, seed.eigenvalues)


def test_scan_is_sorted_and_deduplicated(harmonic_pair):
    inner, driving = harmonic_pair
    seeds = seed_scan(inner, driving, [[-2.0, 2.0], [-3.0, 3.0]], 4)
    assert len(seeds) == 1
    with pytest.raises(ValueError):
        seed_scan(inner, driving, [[-2.0, 2.0]], 4)


def test_defect_is_second_order_away_from_seeds(harmonic_pair, tight_cfg):
    inner, driving = harmonic_pair
    point = [0.5, 0.3]
    scaling = defect_scaling(inner, driving, point, cfg=tight_cfg)
    assert 1.9 < scaling["exponent"] < 2.1
    assert scaling["extrapolated_ratio"] == pytest.approx(bracket_velocity(inner, driving, point), rel=1e-2)


def test_defect_is_third_order_at_the_seed(harmonic_pair, harmonic_seed_point, tight_cfg):
    inner, driving = harmonic_pair
    scaling = defect_scaling(inner, driving, harmonic_seed_point, cfg=tight_cfg)
    assert 2.7 < scaling["exponent"] < 3.3
    assert bracket_velocity(inner, driving, harmonic_seed_point) < 1e-12


def test_commutator_defect_vanishes_for_zero_steps(duffing_pair):
    inner, driving = duffing_pair
    assert commutator_defect(inner, driving, [0.2, 0.4], 0.0, 0.0) == 0.0


def test_local_quadratic_matches_taylor_data(duffing_pair):
    inner, _ = duffing_pair
    x0 = np.array([0.4, -0.7])
    quad = local_quadratic(inner, x0)
    assert quad.value(x0) == pytest.approx(inner.value(x0))
    np.testing.assert_allclose(quad.gradient(x0), inner.gradient(x0), atol=1e-12)
    np.testing.assert_allclose(quad.hessian(x0), inner.hessian(x0), atol=1e-12)


@pytest.mark.parametrize("x0", [[0.0, 4.0 / 3.0], [0.5, 0.3], [-0.4, 1.1]])
def test_commuting_local_pair_commutes(harmonic_pair, x0):
    inner, driving = harmonic_pair
    h_zero, l_zero = commuting_local_pair(inner, driving, x0)
    points = np.random.default_rng(11).uniform(-2.0, 2.0, size=(15, 2))
    np.testing.assert_allclose(poisson_bracket(h_zero, l_zero, points), 0.0, atol=1e-9)
    np.testing.assert_allclose(poisson_bracket_gradient(h_zero, l_zero, points), 0.0, atol=1e-9)
    np.testing.assert_allclose(h_zero.value(x0), inner.value(x0), atol=1e-12)
