import numpy as np
import pytest

from hamiltonians.catalog import build_system, perturbative_driving
from hamiltonians.systems import DomainError
from dynamics.integrator import (
    IntegrationError, IntegratorConfig, flow_map, integrate, resample, transport_velocity
)
from dynamics.sections import DrivenShellScan, EnergyShell, section_residual, shell_center


@pytest.fixture(scope="module")
def unit_oscillator():
    return build_system("harmonic", {"a": 1.0})


def test_harmonic_quarter_period(unit_oscillator, tight_cfg):
    seg = integrate(unit_oscillator, [0.0, 1.0], 0.0, np.pi / 2, tight_cfg)
    np.testing.assert_allclose(seg.end, [-1.0, 0.0], atol=1e-9)
    np.testing.assert_allclose(seg.monodromy, [[0.0, -1.0], [1.0, 0.0]], atol=1e-9)
    assert seg.duration == pytest.approx(np.pi / 2)


def test_action_over_one_period(unit_oscillator, tight_cfg):
    seg = integrate(unit_oscillator, [0.0, 1.0], 0.0, 2 * np.pi, tight_cfg)
    np.testing.assert_allclose(seg.end, seg.start, atol=1e-9)
    assert seg.action == pytest.approx(0.0, abs=1e-8)
    assert seg.area_integral == pytest.approx(np.pi, abs=1e-8)
    assert seg.energy_drift() < 1e-9


def test_zero_duration_is_the_identity(duffing_pair):
    inner, _ = duffing_pair
    seg = integrate(inner, [0.3, -0.2], 0.7, 0.7)
    np.testing.assert_array_equal(seg.monodromy, np.eye(2))
    assert seg.action == 0.0
    assert len(seg.times) == 1


def test_monodromy_is_symplectic(duffing_pair, tight_cfg):
    inner, driving = duffing_pair
    for system in (inner, driving, build_system("double_well")):
        seg = integrate(system, [0.4, 0.9], 0.0, 3.0, tight_cfg)
        assert seg.symplectic_defect() < 1e-8


def test_backward_integration_inverts(duffing_pair, tight_cfg):
    inner, _ = duffing_pair
    forward = integrate(inner, [0.4, 0.9], 0.0, 1.3, tight_cfg)
    backward = integrate(inner, forward.end, 1.3, 0.0, tight_cfg)
    np.testing.assert_allclose(backward.end, [0.4, 0.9], atol=1e-9)
    np.testing.assert_allclose(backward.monodromy @ forward.monodromy, np.eye(2), atol=1e-8)
    assert backward.action == pytest.approx(-forward.action, abs=1e-9)
    assert backward.times[0] == 1.3 and backward.times[-1] == 0.0


def test_time_dependent_driving_round_trip(unit_oscillator, tight_cfg):
    driving = perturbative_driving(unit_oscillator, "q", eta=0.3, time_factor="sin", omega=2.0)
    forward = integrate(driving, [0.2, 0.5], 0.0, 1.5, tight_cfg)
    backward = integrate(driving, forward.end, 1.5, 0.0, tight_cfg)
    np.testing.assert_allclose(backward.end, [0.2, 0.5], atol=1e-9)
    assert forward.symplectic_defect() < 1e-8


def test_symplectic_method_conserves_quadratic_energy(unit_oscillator):
    cfg = IntegratorConfig(method="symplectic", abs_tol=1e-12, rel_tol=1e-12, max_step=0.01)
    seg = integrate(unit_oscillator, [0.3, 1.1], 0.0, 10.0, cfg)
    assert seg.energy_drift() < 1e-10
    assert seg.symplectic_defect() < 1e-10
    reference = integrate(unit_oscillator, [0.3, 1.1], 0.0, 10.0, IntegratorConfig(abs_tol=1e-12, rel_tol=1e-12))
    np.testing.assert_allclose(seg.end, reference.end, atol=1e-6)


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(method="leapfrog")
    with pytest.raises(ValueError):
        IntegratorConfig(abs_tol=0.0)
    with pytest.raises(ValueError):
        IntegratorConfig(method="symplectic")
    tighter = IntegratorConfig(abs_tol=1e-8, rel_tol=1e-8).tightened()
    assert tighter.abs_tol == pytest.approx(1e-10)


def test_batch_flow_matches_single_points(duffing_pair, tight_cfg):
    _, driving = duffing_pair
    points = np.random.default_rng(3).uniform(-1.0, 1.0, size=(6, 2))
    batch = flow_map(driving, points, 0.0, 0.8, tight_cfg)
    singles = np.array([flow_map(driving, point, 0.0, 0.8, tight_cfg) for point in points])
    np.testing.assert_allclose(batch, singles, atol=1e-8)
    np.testing.assert_array_equal(flow_map(driving, points, 0.5, 0.5), points)


def test_blow_up_raises_with_partial_segment():
    unstable = build_system("p**2/2 - q**4/4")
    with pytest.raises(IntegrationError) as err:
        integrate(unstable, [2.0, 2.0], 0.0, 10.0, IntegratorConfig(max_steps=20000))
    partial = err.value.partial
    assert partial is None or partial.t_end < 10.0


def test_step_count_exhaustion(unit_oscillator):
    with pytest.raises(IntegrationError) as err:
        integrate(unit_oscillator, [0.0, 1.0], 0.0, 10.0, IntegratorConfig(max_step=0.01, max_steps=50))
    assert err.value.partial is not None
    assert err.value.partial.t_end < 10.0


def test_resample_stays_on_the_shell(unit_oscillator, tight_cfg):
    seg = integrate(unit_oscillator, [0.0, 1.0], 0.0, 3.0, tight_cfg)
    times, states = resample(seg, 50)
    assert len(times) == 50
    np.testing.assert_allclose(unit_oscillator.value(states), 0.5, atol=1e-7)
    np.testing.assert_allclose(states[:, 1], np.cos(times), atol=1e-7)


def test_transport_velocity(unit_oscillator, tight_cfg):
    seg = integrate(unit_oscillator, [0.0, 1.0], 0.0, np.pi, tight_cfg)
    np.testing.assert_allclose(transport_velocity(seg, [1.0, 0.0]), [-1.0, 0.0], atol=1e-9)
    with pytest.raises(ValueError):
        transport_velocity(seg, [1.0, 0.0, 0.0, 0.0])


def test_shell_radius_and_area(harmonic_pair):
    inner, _ = harmonic_pair
    np.testing.assert_allclose(shell_center(inner), [0.0, 0.0], atol=1e-8)
    shell = EnergyShell(inner, 0.4)
    # p^2 + a q^2 = 2E is an ellipse of area 2 pi E / sqrt(a)
    assert shell.enclosed_area() == pytest.approx(2 * np.pi * 0.4 / np.sqrt(0.5), rel=1e-10)
    assert shell.radius(0.0) == pytest.approx(np.sqrt(0.8), rel=1e-12)
    np.testing.assert_allclose(inner.value(shell.points(np.linspace(0, 6, 7))), 0.4, atol=1e-12)
    with pytest.raises(DomainError):
        EnergyShell(inner, -0.1)


def test_section_residual_vanishes_on_driven_shells(harmonic_pair, tight_cfg):
    inner, driving = harmonic_pair
    x_point = np.array([0.3, 0.4])
    y_point = flow_map(driving, x_point, 0.0, 0.7, tight_cfg)
    first, second = section_residual(inner, driving, y_point, 0.7, inner.value(x_point), inner.value(y_point),
                                     tight_cfg)
    assert first == pytest.approx(0.0, abs=1e-12)
    assert second == pytest.approx(0.0, abs=1e-9)


def test_driven_scan_roots_lie_on_both_shells(harmonic_pair, loose_cfg):
    inner, driving = harmonic_pair
    scan = DrivenShellScan(inner, driving, 0.6, 1.0, loose_cfg, n_theta=128)
    assert scan.overlap(0.6 + 50.0) < 0
    roots = scan.roots(0.5)
    assert len(roots) % 2 == 0 and len(roots) > 0
    for theta in roots:
        assert scan.driven_value(theta) == pytest.approx(0.5, abs=1e-8)


def test_quartic_energy_is_conserved(duffing_pair, tight_cfg):
    inner, _ = duffing_pair
    seg = integrate(inner, [0.0, 1.0], 0.0, 5.0, tight_cfg)
    assert seg.energy_drift() < 1e-8
    assert np.all(np.diff(seg.times) > 0)


@pytest.mark.slow
def test_monodromy_is_symplectic_on_random_segments(duffing_pair, tight_cfg):
    inner, driving = duffing_pair
    systems = (inner, driving, build_system("double_well"))
    rng = np.random.default_rng(20240101)
    defects = []
    for _ in range(1000):
        system = systems[rng.integers(len(systems))]
        start = rng.uniform(-1.0, 1.0, size=2)
        duration = rng.uniform(0.1, 2.0) * rng.choice([-1.0, 1.0])
        defects.append(integrate(system, start, 0.0, duration, tight_cfg).symplectic_defect())
    assert max(defects) < 1e-8
