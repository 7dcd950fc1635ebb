import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import chi2

from hamiltonians.catalog import build_system
from dynamics.integrator import flow_map
from cco.orbits import CompoundOrbit
from cco.families import CCOFamily, grow_thin_tau_family
from seeds.finder import find_seed
from density.grid import (
    TransitionGrid, l2_deviation, line_cut, lorentzian, peak_spacing, smear, smearing_matrix
)
from density.classical import (
    AnticausticNotFoundError, MonteCarloEstimate, classical_density_mc, classical_density_section,
    classical_density_section_grid, density_of_states, find_anticaustic, shell_bracket
)
from density.semiclassical import OscillatoryTerm, calibrate_sigma, sc_density, total_density


HBAR = 0.05
BOX = [[-2.0, 2.0], [-3.0, 3.0]]


def test_lorentzian_is_normalized():
    total, _ = quad(lambda energy: float(lorentzian(energy, 0.05)), -np.inf, np.inf)
    assert total == pytest.approx(1.0, rel=1e-8)


def test_grid_validation():
    with pytest.raises(ValueError):
        TransitionGrid([0.1, 0.2], [0.1, 0.2], 1.0, 0.0, HBAR)
    with pytest.raises(ValueError):
        TransitionGrid([0.1, 0.2], [0.1, 0.2], 1.0, 0.05, -1.0)
    with pytest.raises(ValueError):
        TransitionGrid([0.2, 0.1], [0.1, 0.2], 1.0, 0.05, HBAR)
    with pytest.raises(ValueError):
        TransitionGrid([0.1], [0.1, 0.2], 1.0, 0.05, HBAR)


def test_grid_from_ranges():
    grid = TransitionGrid.from_ranges((0.0, 1.0), (0.5, 1.5), 4, 1.0, 0.05, HBAR)
    np.testing.assert_allclose(grid.E_values, [0.125, 0.375, 0.625, 0.875])
    np.testing.assert_allclose(grid.E_edges, [0.0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_allclose(grid.E_prime_edges, [0.5, 0.75, 1.0, 1.25, 1.5])
    assert grid.shape == (4, 4)
    clone = TransitionGrid.from_json(grid.to_json())
    np.testing.assert_allclose(clone.E_prime_values, grid.E_prime_values)
    assert grid.with_tau(2.0).tau == 2.0 and grid.with_hbar(0.1).hbar == 0.1
    flipped = grid.transposed()
    assert flipped.tau == -1.0
    np.testing.assert_allclose(flipped.E_values, grid.E_prime_values)


def test_smearing_rows_integrate_to_one():
    values = np.linspace(-5.0, 5.0, 1001)
    weights = smearing_matrix(values, 0.05)
    assert np.sum(weights[500]) == pytest.approx(1.0, abs=1e-2)


def test_smear_is_linear():
    grid = TransitionGrid.from_ranges((0.0, 1.0), (0.0, 1.0), 8, 1.0, 0.05, HBAR)
    first = np.random.default_rng(0).random(grid.shape)
    second = np.random.default_rng(1).random(grid.shape)
    np.testing.assert_allclose(smear(first + 2 * second, grid), smear(first, grid) + 2 * smear(second, grid))
    np.testing.assert_array_equal(smear(np.zeros(grid.shape), grid), 0.0)


def test_line_cut_and_l2():
    grid = TransitionGrid.from_ranges((0.0, 1.0), (0.0, 2.0), 5, 1.0, 0.05, HBAR)
    matrix = np.arange(25, dtype=float).reshape(5, 5)
    _, cut = line_cut(matrix, grid, grid.E_values[2])
    np.testing.assert_allclose(cut, matrix[2])
    _, half = line_cut(matrix, grid, 0.5 * (grid.E_values[1] + grid.E_values[2]))
    np.testing.assert_allclose(half, 0.5 * (matrix[1] + matrix[2]))
    with pytest.raises(ValueError):
        line_cut(matrix, grid, 5.0)

    assert l2_deviation(matrix, matrix) == 0.0
    # a constant difference c gives c times the root of the grid area
    assert l2_deviation(matrix + 0.5, matrix, grid) == pytest.approx(0.5 * np.sqrt(1.0 * 2.0))
    partial = matrix.copy()
    partial[0, 0] = np.nan
    assert np.isfinite(l2_deviation(partial, matrix))


def test_peak_spacing():
    energies = np.linspace(0.0, 1.0, 1001)
    assert peak_spacing(energies, np.cos(2 * np.pi * energies / 0.1)) == pytest.approx(0.1)
    assert np.isnan(peak_spacing(energies, energies))


def test_density_of_states_of_the_oscillator(harmonic_pair):
    inner, _ = harmonic_pair
    # the area inside H = E grows as 2 pi E / omega
    np.testing.assert_allclose(density_of_states(inner, [0.3, 0.8], HBAR), 1 / (HBAR * np.sqrt(0.5)), rtol=1e-6)


def test_monte_carlo_without_driving_is_diagonal(harmonic_pair):
    inner, driving = harmonic_pair
    grid = TransitionGrid.from_ranges((0.2, 0.8), (0.2, 0.8), 6, 0.0, 0.05, HBAR)
    estimate = classical_density_mc(inner, driving, grid, 200000, BOX, random_seed=5)
    off_diagonal = estimate.counts - np.diag(np.diag(estimate.counts))
    assert np.all(off_diagonal == 0)
    assert estimate.failures == 0
    # each column integrates over E to the density of states
    column_mass = estimate.raw.sum(axis=0) * grid.cell_widths[0][0]
    expected = density_of_states(inner, grid.E_prime_values, HBAR)
    np.testing.assert_allclose(column_mass, expected, rtol=0.06)
    assert estimate.diagnostics()["samples"] == 200000


def test_monte_carlo_is_reproducible(harmonic_pair, loose_cfg):
    inner, driving = harmonic_pair
    grid = TransitionGrid.from_ranges((0.2, 0.8), (0.2, 0.8), 5, 0.5, 0.05, HBAR)
    first = classical_density_mc(inner, driving, grid, 10000, BOX, loose_cfg, random_seed=3, chunk_size=5000)
    second = classical_density_mc(inner, driving, grid, 10000, BOX, loose_cfg, random_seed=3, chunk_size=5000)
    other = classical_density_mc(inner, driving, grid, 10000, BOX, loose_cfg, random_seed=4, chunk_size=5000)
    np.testing.assert_array_equal(first.counts, second.counts)
    assert not np.array_equal(first.counts, other.counts)
    np.testing.assert_allclose(first.errors, np.sqrt(first.counts) * (first.raw / np.maximum(first.counts, 1)))


def test_monte_carlo_box_must_match_dimension(harmonic_pair):
    inner, driving = harmonic_pair
    grid = TransitionGrid.from_ranges((0.2, 0.8), (0.2, 0.8), 5, 0.5, 0.05, HBAR)
    with pytest.raises(ValueError):
        classical_density_mc(inner, driving, grid, 100, [[-1.0, 1.0]])


def test_shell_bracket_matches_finite_differences(harmonic_pair, tight_cfg):
    inner, driving = harmonic_pair
    tau = 0.8
    y_point = np.array([0.4, -0.6])
    bracket, x_point = shell_bracket(inner, driving, y_point, tau, tight_cfg)
    np.testing.assert_allclose(flow_map(driving, x_point, 0.0, tau, tight_cfg), y_point, atol=1e-9)

    def driven_energy(point):
        return inner.value(flow_map(driving, point, tau, 0.0, tight_cfg))

    step = 1e-5
    gradient = np.array([
        (driven_energy(y_point + step * unit) - driven_energy(y_point - step * unit)) / (2 * step)
        for unit in np.eye(2)
    ])
    velocity = np.array([-inner.gradient(y_point)[1], inner.gradient(y_point)[0]])
    assert bracket == pytest.approx(velocity @ gradient, rel=1e-5)


def test_section_formula(harmonic_pair, loose_cfg):
    inner, driving = harmonic_pair
    crossing = classical_density_section(inner, driving, 0.5, 0.6, 1.0, hbar=HBAR, cfg=loose_cfg, n_theta=128)
    assert len(crossing.points) >= 2 and len(crossing.points) % 2 == 0
    expected = sum(1.0 / abs(point.bracket) for point in crossing.points) / (2 * np.pi * HBAR)
    assert float(crossing) == pytest.approx(expected)
    for point in crossing.points:
        assert inner.value(point.y_point.coords) == pytest.approx(0.6, abs=1e-10)
        assert inner.value(point.x_point.coords) == pytest.approx(0.5, abs=1e-7)

    # shells that have not met yet
    apart = classical_density_section(inner, driving, 0.1, 1.1, 0.05, hbar=HBAR, cfg=loose_cfg, n_theta=128)
    assert apart.value == 0.0 and apart.points == []

    with pytest.raises(ValueError):
        quartic = build_system("coupled_quartic")
        classical_density_section(quartic, quartic, 0.5, 0.6, 1.0)


def test_anticaustic_degenerate_diagonal(harmonic_pair):
    inner, driving = harmonic_pair
    with pytest.raises(AnticausticNotFoundError) as err:
        find_anticaustic(inner, driving, 0.5, 0.5, tau_bracket=(0.0, 1.0))
    assert err.value.diagnostics["degenerate"]


def test_anticaustic_without_bracket_or_guess(harmonic_pair):
    inner, driving = harmonic_pair
    with pytest.raises(ValueError):
        find_anticaustic(inner, driving, 0.3, 0.6)


def test_anticaustic_is_a_tangency(harmonic_pair, loose_cfg, tight_cfg):
    inner, driving = harmonic_pair
    energy, energy_prime = 0.3, 0.6
    tangency = find_anticaustic(inner, driving, energy, energy_prime, tau_bracket=(0.1, 4.0), cfg=tight_cfg,
                                n_theta=128)
    assert 0.1 < tangency.tau < 4.0
    assert tangency.wedge_residual < 1e-8
    assert inner.value(tangency.x_point.coords) == pytest.approx(energy, abs=1e-9)
    assert inner.value(tangency.y_point.coords) == pytest.approx(energy_prime, abs=1e-9)
    tau_a, x_point = tangency
    assert tau_a == tangency.tau

    before = classical_density_section(inner, driving, energy, energy_prime, tau_a - 0.05, hbar=HBAR,
                                       cfg=loose_cfg)
    after = classical_density_section(inner, driving, energy, energy_prime, tau_a + 0.05, hbar=HBAR,
                                      cfg=loose_cfg)
    assert abs(len(after.points) - len(before.points)) == 2


def test_thin_tau_member_is_an_anticaustic(harmonic_pair, tight_cfg):
    inner, driving = harmonic_pair
    seed = find_seed(inner, driving, [0.1, 1.2])
    member = grow_thin_tau_family(inner, driving, seed, 1.0, 0.25, tight_cfg).members[-1]
    tangency = find_anticaustic(inner, driving, member.E, member.E_prime, cfg=tight_cfg,
                                guess=(member.x_start.coords, member.tau))
    assert tangency.tau == pytest.approx(member.tau, abs=1e-6)
    np.testing.assert_allclose(tangency.x_point.coords, member.x_start.coords, atol=1e-6)
    assert tangency.scale == pytest.approx(1.0, abs=1e-6)


def _interior_cells(section, divergent):
    """Cells whose value and every neighbour's value is positive and regular"""
    good = (section > 0) & ~divergent
    padded = np.pad(good, 1, constant_values=True)
    interior = good.copy()
    rows, cols = good.shape
    for d_row in (-1, 0, 1):
        for d_col in (-1, 0, 1):
            interior &= padded[1 + d_row:1 + d_row + rows, 1 + d_col:1 + d_col + cols]
    return interior


def _chi_square(first, second, cells):
    variance = first.errors[cells] ** 2 + second.errors[cells] ** 2
    return float(np.sum((first.raw[cells] - second.raw[cells]) ** 2 / variance))


@pytest.mark.slow
def test_monte_carlo_agrees_with_the_section_formula(harmonic_pair, loose_cfg):
    inner, driving = harmonic_pair
    grid = TransitionGrid.from_ranges((0.35, 0.85), (0.35, 0.85), 5, 1.0, 0.05, HBAR)
    estimate = classical_density_mc(inner, driving, grid, 1000000, BOX, loose_cfg, random_seed=11)
    section, divergent = classical_density_section_grid(inner, driving, grid, loose_cfg, n_theta=128,
                                                        subdivisions=6)
    compared = _interior_cells(section, divergent) & (estimate.counts > 0)
    assert np.sum(compared) >= 3
    z_scores = (estimate.raw[compared] - section[compared]) / estimate.errors[compared]
    assert np.max(np.abs(z_scores)) < 3.0
    # cells the driven shells never reach stay empty in both
    unreached = (section == 0) & ~divergent
    assert np.all(estimate.counts[unreached] < 50)


@pytest.mark.slow
def test_monte_carlo_is_unbiased_under_refinement(harmonic_pair, loose_cfg):
    inner, driving = harmonic_pair
    grid = TransitionGrid.from_ranges((0.3, 0.9), (0.3, 0.9), 6, 0.5, 0.05, HBAR)
    coarse = classical_density_mc(inner, driving, grid, 50000, BOX, loose_cfg, random_seed=5)
    fine = classical_density_mc(inner, driving, grid, 200000, BOX, loose_cfg, random_seed=6)
    cells = coarse.counts >= 20
    assert np.sum(cells) >= 5
    assert _chi_square(coarse, fine, cells) < chi2.ppf(0.999, np.sum(cells))

    # the backward driving between the exchanged shells samples the same density
    backward = classical_density_mc(inner, driving, grid.transposed(), 200000, BOX, loose_cfg, random_seed=7)
    backward_t = MonteCarloEstimate(grid, backward.counts.T, backward.samples, backward.failures,
                                    backward.boundary_hits, backward.in_grid, 24.0)
    assert _chi_square(fine, backward_t, cells) < chi2.ppf(0.999, np.sum(cells))


def test_section_formula_is_symmetric_under_time_reversal(harmonic_pair, tight_cfg):
    inner, driving = harmonic_pair
    forward = classical_density_section(inner, driving, 0.5, 0.6, 1.0, hbar=HBAR, cfg=tight_cfg, n_theta=128)
    backward = classical_density_section(inner, driving, 0.6, 0.5, -1.0, hbar=HBAR, cfg=tight_cfg, n_theta=128)
    assert len(forward.points) == len(backward.points) > 0
    assert backward.value == pytest.approx(forward.value, rel=1e-6)



def _synthetic_sheet(monodromy, n_side=5):
    """Sheet with E = 0.3 + 0.1 t, E' = 0.4 + 0.2 t' and a quadratic energy action"""
    t_values = np.linspace(1.0, 2.0, n_side)
    family = CCOFamily(None, None, None, "interior-sheet")
    family.t_values, family.t_prime_values = t_values, t_values.copy()
    for idx, t_val in enumerate(t_values):
        for jdx, t_prime in enumerate(t_values):
            energy, energy_prime = 0.3 + 0.1 * t_val, 0.4 + 0.2 * t_prime
            action = _energy_action(energy, energy_prime)
            orbit = CompoundOrbit(
                [0.0, 0.0], (t_val, t_prime, 1.0), maslov_sigma=0, closure_residual=0.0,
                action_total=action - energy_prime * t_prime + energy * t_val, monodromy_compound=monodromy,
                E=energy, E_prime=energy_prime, winding=(0, 0), driving_integral=0.0, area=0.0
            )
            family.append(orbit, lattice_index=(idx, jdx))
    return family


def _energy_action(energy, energy_prime):
    return -5.0 * (energy - 0.3) ** 2 + 2.5 * (energy_prime - 0.4) ** 2 + 0.37


SYMPLECTIC_M = np.array([[2.0, 1.0], [1.0, 1.0]])


def _inner_grid(epsilon):
    return TransitionGrid(np.linspace(0.41, 0.49, 5), np.linspace(0.62, 0.78, 5), 1.0, epsilon, HBAR)


def test_oscillatory_term_of_a_synthetic_sheet():
    grid = _inner_grid(0.01)
    terms = sc_density([_synthetic_sheet(SYMPLECTIC_M)], grid)
    assert len(terms) == 1
    term = terms[0]
    assert term.name == "j0_jp0_pos"
    assert not np.any(term.mask)

    e_mesh, ep_mesh = np.meshgrid(grid.E_values, grid.E_prime_values, indexing="ij")
    t_mesh, tp_mesh = 10 * (e_mesh - 0.3), 5 * (ep_mesh - 0.4)
    # |det d(t, t')/d(E, E')| = 50 and |det(I - M)| = 1
    amplitude = 2 / (np.pi * HBAR) * np.exp(-grid.epsilon * (t_mesh + tp_mesh) / HBAR) * np.sqrt(50.0)
    expected = amplitude * np.cos(_energy_action(e_mesh, ep_mesh) / HBAR)
    np.testing.assert_allclose(term.matrix(), expected, rtol=1e-8, atol=1e-8)
    np.testing.assert_allclose(term.matrix(1), -amplitude * np.sin(_energy_action(e_mesh, ep_mesh) / HBAR),
                               rtol=1e-8, atol=1e-8)
    np.testing.assert_allclose(term.matrix(2), -term.matrix(0), atol=1e-10)


def test_long_orbits_are_cut_off():
    grid = _inner_grid(1.0)
    terms = sc_density([_synthetic_sheet(SYMPLECTIC_M)], grid)
    assert all(np.all(term.matrix() == 0.0) for term in terms)


def test_no_families_no_oscillations():
    grid = _inner_grid(0.01)
    assert sc_density([], grid) == []
    edge = CCOFamily(None, None, None, "tau-edge")
    assert sc_density([edge], grid) == []
    classical = np.full(grid.shape, 3.0)
    density = total_density(classical, [], grid)
    np.testing.assert_array_equal(density.total, classical)
    assert density.diagnostics["negative_cells"] == 0


def test_caustic_cells_are_masked():
    grid = _inner_grid(0.01)
    terms = sc_density([_synthetic_sheet(np.eye(2))], grid)
    assert np.all(terms[0].mask)
    density = total_density(np.ones(grid.shape), terms, grid)
    assert np.all(np.isnan(density.total))
    assert density.diagnostics["masked_cells"] == grid.shape[0] * grid.shape[1]


def test_total_density_reports_negative_cells():
    grid = _inner_grid(0.01)
    terms = sc_density([_synthetic_sheet(SYMPLECTIC_M)], grid)
    density = total_density(np.zeros(grid.shape), terms, grid)
    np.testing.assert_allclose(density.total, terms[0].matrix())
    assert density.diagnostics["negative_cells"] == int(np.sum(terms[0].matrix() < 0))
    assert density.diagnostics["negative_cells"] > 0
    assert density.oscillatory_matrices().keys() == {"j0_jp0_pos"}


def test_calibration_recovers_the_phase_offset():
    grid = _inner_grid(0.01)
    term = sc_density([_synthetic_sheet(SYMPLECTIC_M)], grid)[0]
    classical = np.full(grid.shape, 40.0)
    reference = classical + term.matrix(3)
    result = calibrate_sigma(classical, [term], reference, grid)
    assert result["offsets"] == {"j0_jp0_pos": 3}
    assert result["error"] == pytest.approx(0.0, abs=1e-10)
    assert result["amplitude_scale"] == pytest.approx(1.0)
    assert result["classical_error"] > 0
    assert calibrate_sigma(classical, [], reference, grid)["offsets"] == {}


def test_term_offsets_wrap():
    term = OscillatoryTerm((1, 2, -1), np.ones((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)), sigma_offset=6)
    assert term.sigma_offset == 2
    assert term.name == "j1_jp2_neg"
    np.testing.assert_allclose(term.matrix(), -np.ones((2, 2)))
    np.testing.assert_allclose(term.with_offset(4).matrix(), np.ones((2, 2)))
