"""Classical transition density: Monte Carlo estimate, section formula, and anticaustics.

With the forward driving mapping the initial shell E onto the final shell E',
the density is (2 pi hbar)^-N times the integral over phase space of
delta(H(x) - E) delta(H(driving^tau x) - E').
"""
import os
import sys
from math import ceil
MODULE_PATH = os.path.abspath(f"{os.path.split(__file__)[0]}/..")
if sys.path[0] != MODULE_PATH: sys.path.insert(0, MODULE_PATH)

import numpy as np
from scipy.optimize import brentq
from tqdm import tqdm

from base import TransitionError
from utils import get_logger, parallel_generator, progress_disabled
from constants.numerics import BOX_BOUNDARY_FRACTION, FD_STEP
from hamiltonians.systems import PhaseSpacePoint, as_coords, hamiltonian_vector_field, wedge
from dynamics.integrator import IntegratorConfig, IntegrationError, integrate, flow_map
from dynamics.sections import DrivenShellScan, EnergyShell
from density.grid import smear, smear_errors


logger = get_logger("Classical Density")

# Thickness of the boundary layer of the sampling box, as a fraction of each side.
BOUNDARY_LAYER = 0.05


class AnticausticNotFoundError(TransitionError):
    stage = "density"


class MonteCarloEstimate:
    """Binned estimate of the classical density, before and after the Lorentzian post-convolution"""

    def __init__(self, grid, counts, samples, failures, boundary_hits, in_grid, box_volume, dof=1):
        self.grid = grid
        self.dof = int(dof)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.samples = int(samples)
        self.failures = int(failures)
        self.boundary_hits = int(boundary_hits)
        self.in_grid = int(in_grid)

        e_widths, ep_widths = grid.cell_widths
        scale = box_volume / np.outer(e_widths, ep_widths) / (2 * np.pi * grid.hbar) ** self.dof / self.samples
        self.raw = self.counts * scale
        self.errors = np.sqrt(self.counts) * scale
        self.smeared = smear(self.raw, grid)
        self.smeared_errors = smear_errors(self.errors, grid)

    @property
    def empty(self):
        return self.counts == 0

    @property
    def boundary_fraction(self):
        return self.boundary_hits / self.in_grid if self.in_grid > 0 else 0.0

    def diagnostics(self):
        return {
            "samples": self.samples,
            "failures": self.failures,
            "in_grid": self.in_grid,
            "empty_cells": int(np.sum(self.empty)),
            "boundary_fraction": self.boundary_fraction,
        }


def _sample_box(rng, box, n_points):
    lows = np.array([lo for lo, _ in box])
    highs = np.array([hi for _, hi in box])
    return lows + (highs - lows) * rng.random((n_points, len(box)))


def _in_boundary_layer(points, box):
    lows = np.array([lo for lo, _ in box])
    highs = np.array([hi for _, hi in box])
    layer = BOUNDARY_LAYER * (highs - lows)
    return np.any((points < lows + layer) | (points > highs - layer), axis=-1)


def _propagate_points(driving, points, tau, cfg):
    """Forward driven points; rows whose integration fails come back as nan"""
    try:
        return flow_map(driving, points, 0.0, tau, cfg)
    except IntegrationError:
        logger.debug("Batch integration failed, falling back to single points")
    result = np.full(points.shape, np.nan)
    for idx, point in enumerate(points):
        try:
            result[idx] = integrate(driving, point, 0.0, tau, cfg).end
        except (IntegrationError, TransitionError):
            continue
    return result


def _mc_chunk(chunk, inner=None, driving=None, tau=0.0, box=None, e_edges=None, ep_edges=None, cfg=None,
              random_seed=0):
    index, n_points = chunk
    # Counter based stream: chunk ``index`` depends only on (random_seed, index).
    rng = np.random.Generator(np.random.Philox(key=random_seed).jumped(index))
    points = _sample_box(rng, box, n_points)
    driven = _propagate_points(driving, points, tau, cfg)
    ok = np.all(np.isfinite(driven), axis=-1)
    energies = inner.value(points[ok])
    energies_prime = inner.value(driven[ok])
    counts, _, _ = np.histogram2d(energies, energies_prime, bins=[e_edges, ep_edges])

    in_grid = (
        (energies >= e_edges[0]) & (energies < e_edges[-1])
        & (energies_prime >= ep_edges[0]) & (energies_prime < ep_edges[-1])
    )
    boundary = _in_boundary_layer(points[ok], box) & in_grid
    return counts.astype(np.int64), int(np.sum(~ok)), int(np.sum(boundary)), int(np.sum(in_grid))


def classical_density_mc(inner, driving, grid, samples, box, cfg=None, random_seed=0, chunk_size=50000,
                         workers=1):
    """Monte Carlo estimate of the classical density by uniform sampling of ``box``.

    Every sample is driven forward by tau and binned in (H(x), H(x driven)).
    Counts are normalized by the cell areas and scaled by the box volume.
    """
    cfg = cfg or IntegratorConfig()
    box = [(float(lo), float(hi)) for lo, hi in box]
    if len(box) != 2 * inner.dof:
        raise ValueError(f"Box has {len(box)} axes, the phase space {2 * inner.dof}")
    if samples < 10000:
        logger.warning("Only %d samples requested, the error estimates are unreliable below 1e4", samples)

    n_chunks = int(ceil(samples / chunk_size))
    chunks = [(idx, min(chunk_size, samples - idx * chunk_size)) for idx in range(n_chunks)]
    kwargs = dict(
        inner=inner, driving=driving, tau=grid.tau, box=box, e_edges=grid.E_edges, ep_edges=grid.E_prime_edges,
        cfg=cfg, random_seed=int(random_seed)
    )
    logger.info("Sampling %d points in %d chunks (seed %d)", samples, n_chunks, random_seed)

    counts = np.zeros(grid.shape, dtype=np.int64)
    failures, boundary, in_grid = 0, 0, 0
    gen = parallel_generator(_mc_chunk, chunks, max_workers=workers, **kwargs)
    for (c_counts, c_fail, c_bound, c_in), _ in tqdm(
            gen, total=n_chunks, desc="Monte Carlo chunks", disable=progress_disabled(), leave=False):
        counts += c_counts
        failures += c_fail
        boundary += c_bound
        in_grid += c_in

    volume = float(np.prod([hi - lo for lo, hi in box]))
    # Failed samples stay in the normalization.
    estimate = MonteCarloEstimate(grid, counts, samples, failures, boundary, in_grid, volume, dof=inner.dof)

    if failures > 0:
        logger.warning("%d of %d samples failed to integrate and were dropped", failures, samples)
    if np.any(estimate.empty):
        logger.info("%d of %d cells received no samples", int(np.sum(estimate.empty)), estimate.counts.size)
    if estimate.boundary_fraction > BOX_BOUNDARY_FRACTION:
        logger.warning(
            "%.1f%% of the samples on the grid's shells lie in the boundary layer of the box, "
            "the box may cut the shells", 100 * estimate.boundary_fraction
        )
    return estimate


class SectionPoint:
    """Intersection point y of the E'-shell with the driven E-shell, its pre-image x, and the bracket there"""

    def __init__(self, y_point, x_point, bracket):
        self.y_point = PhaseSpacePoint(y_point)
        self.x_point = PhaseSpacePoint(x_point)
        self.bracket = float(bracket)

    def to_json(self):
        return {"y": self.y_point.to_json(), "x": self.x_point.to_json(), "bracket": self.bracket}


class SectionEvaluation:
    """Value of the section formula at one (E, E') together with its intersection points"""

    def __init__(self, value, points, divergent=False, tangency=None):
        self.value = float(value)
        self.points = points
        self.divergent = bool(divergent)
        self.tangency = tangency

    def __float__(self):
        return self.value

    def to_json(self):
        return {
            "value": self.value,
            "points": [point.to_json() for point in self.points],
            "divergent": self.divergent,
            "tangency": None if self.tangency is None else self.tangency.to_json(),
        }


def shell_bracket(inner, driving, y_point, tau, cfg=None):
    """{H, H o driving^-tau} at y on the E'-shell, as the wedge of the velocity at the pre-image
    with the back transported velocity at y"""
    segment = integrate(driving, y_point, tau, 0.0, cfg)
    x_point = segment.end
    transported = segment.monodromy @ hamiltonian_vector_field(inner, y_point)
    return -wedge(hamiltonian_vector_field(inner, x_point), transported), x_point


def _evaluate_section(scan, energy, hbar, cfg, divergence_tol):
    thetas = scan.roots(energy)
    points = []
    for theta in thetas:
        y_point = scan.shell.point(theta)
        bracket, x_point = shell_bracket(scan.inner, scan.driving, y_point, scan.tau, cfg)
        points.append(SectionPoint(y_point, x_point, bracket))

    divergent = False
    tangency = None
    if len(points) > 0 and min(abs(point.bracket) for point in points) < divergence_tol:
        divergent = True
        tangency = min(points, key=lambda point: abs(point.bracket)).y_point
    crowded = [abs(np.angle(np.exp(1j * (a_val - b_val)))) < 2 * scan.spacing
               for a_val, b_val in zip(thetas, thetas[1:] + thetas[:1])] if len(thetas) > 1 else []
    if any(crowded):
        divergent = True
    near = scan.near_tangent(energy)
    if len(near) > 0 and len(points) == 0:
        divergent = True
        tangency = PhaseSpacePoint(scan.shell.point(near[0]))

    value = sum(1.0 / abs(point.bracket) for point in points if point.bracket != 0.0)
    value /= 2 * np.pi * hbar
    return SectionEvaluation(value, points, divergent, tangency)


def classical_density_section(inner, driving, energy, energy_prime, tau, hbar=1.0, cfg=None, n_theta=256,
                              divergence_tol=1e-6):
    """Section formula for one degree of freedom: the sum of 1/|{H, H o driving^-tau}| over the
    intersection points of the E'-shell with the driven E-shell, over 2 pi hbar"""
    if inner.dof != 1:
        raise ValueError("The section formula is implemented for one degree of freedom")
    scan = DrivenShellScan(inner, driving, energy_prime, tau, cfg, n_theta=n_theta)
    result = _evaluate_section(scan, energy, hbar, cfg, divergence_tol)
    if result.divergent:
        logger.warning("Section at E=%.6g, E'=%.6g, tau=%.6g is close to a tangency", energy, energy_prime, tau)
    return result


def classical_density_section_grid(inner, driving, grid, cfg=None, n_theta=256, subdivisions=3,
                                   divergence_tol=1e-6):
    """Cell averages of the section formula over the grid, with a mask of the cells near a tangency.

    Each cell is averaged over subdivisions x subdivisions midpoints so that the
    result compares with a binned estimate.
    """
    cfg = cfg or IntegratorConfig()
    e_edges, ep_edges = grid.E_edges, grid.E_prime_edges
    offsets = (np.arange(subdivisions) + 0.5) / subdivisions
    values = np.zeros(grid.shape)
    divergent = np.zeros(grid.shape, dtype=bool)

    for jdx in tqdm(range(grid.shape[1]), desc="Section formula", disable=progress_disabled(), leave=False):
        for ep_val in ep_edges[jdx] + offsets * (ep_edges[jdx + 1] - ep_edges[jdx]):
            try:
                scan = DrivenShellScan(inner, driving, ep_val, grid.tau, cfg, n_theta=n_theta)
            except TransitionError as err:
                logger.debug("No E'-shell at %.6g: %s", ep_val, err)
                continue
            for idx in range(grid.shape[0]):
                for e_val in e_edges[idx] + offsets * (e_edges[idx + 1] - e_edges[idx]):
                    result = _evaluate_section(scan, e_val, grid.hbar, cfg, divergence_tol)
                    values[idx, jdx] += result.value
                    divergent[idx, jdx] |= result.divergent
    return values / subdivisions ** 2, divergent


def density_of_states(inner, energies, hbar, step=1e-4):
    """(2 pi hbar)^-1 dA/dE with A(E) the area inside the shell, for one degree of freedom"""
    energies = np.atleast_1d(np.asarray(energies, dtype=float))
    center = EnergyShell(inner, energies.min()).center if len(energies) > 0 else None
    values = []
    for energy in energies:
        upper = EnergyShell(inner, energy + step, center=center).enclosed_area()
        lower = EnergyShell(inner, energy - step, center=center).enclosed_area()
        values.append((upper - lower) / (2 * step) / (2 * np.pi * hbar))
    return np.array(values)


class Anticaustic:
    """Tangency of the driven E-shell with the E'-shell: driving time, the tangency point on the E-shell
    and its driven image on the E'-shell"""

    def __init__(self, tau, x_point, y_point, scale, wedge_residual, residual):
        self.tau = float(tau)
        self.x_point = PhaseSpacePoint(x_point)
        self.y_point = PhaseSpacePoint(y_point)
        self.scale = float(scale)
        self.wedge_residual = float(wedge_residual)
        self.residual = float(residual)

    def __iter__(self):
        return iter((self.tau, self.x_point))

    def to_json(self):
        return {
            "tau": self.tau,
            "x": self.x_point.to_json(),
            "y": self.y_point.to_json(),
            "scale": self.scale,
            "wedge_residual": self.wedge_residual,
            "residual": self.residual,
        }


def _tangency_residual(inner, driving, unknowns, energy, energy_prime, cfg):
    dim = 2 * inner.dof
    x_point, tau, scale = unknowns[:dim], unknowns[dim], unknowns[dim + 1]
    segment = integrate(driving, x_point, 0.0, tau, cfg)
    y_point = segment.end
    parallel = hamiltonian_vector_field(inner, y_point) - scale * segment.monodromy @ hamiltonian_vector_field(
        inner, x_point)
    return np.concatenate([[inner.value(x_point) - energy, inner.value(y_point) - energy_prime], parallel])


def _polish_tangency(inner, driving, x_guess, tau_guess, energy, energy_prime, cfg, tol, max_iter):
    x_guess = as_coords(x_guess, inner.dof)
    segment = integrate(driving, x_guess, 0.0, tau_guess, cfg)
    v_target = hamiltonian_vector_field(inner, segment.end)
    v_moved = segment.monodromy @ hamiltonian_vector_field(inner, x_guess)
    scale0 = float(v_target @ v_moved / max(v_moved @ v_moved, 1e-300))
    unknowns = np.concatenate([x_guess, [tau_guess, scale0]])

    def residual_fn(vec):
        return _tangency_residual(inner, driving, vec, energy, energy_prime, cfg)

    res_norm = np.inf
    for _ in range(max_iter):
        res_vec = residual_fn(unknowns)
        res_norm = float(np.linalg.norm(res_vec))
        if res_norm < tol:
            break
        step = FD_STEP * (1.0 + np.linalg.norm(unknowns))
        jac = np.empty((len(res_vec), len(unknowns)))
        for idx in range(len(unknowns)):
            shift = np.zeros(len(unknowns))
            shift[idx] = step
            jac[:, idx] = (residual_fn(unknowns + shift) - residual_fn(unknowns - shift)) / (2 * step)
        delta = np.linalg.lstsq(jac, -res_vec, rcond=None)[0]
        unknowns = unknowns + delta
    else:
        res_norm = float(np.linalg.norm(residual_fn(unknowns)))
    if res_norm >= tol:
        raise AnticausticNotFoundError(
            f"Tangency iteration did not converge, residual {res_norm:.3e}", residual=res_norm
        )
    return unknowns, res_norm


def find_anticaustic(inner, driving, energy, energy_prime, tau_bracket=None, cfg=None, guess=None, n_theta=256,
                     tol=1e-10, max_iter=30):
    """Driving time and point at which the driven E-shell touches the E'-shell.

    For one degree of freedom the driving time is bracketed by the sign change of
    the shell overlap over ``tau_bracket``; otherwise ``guess`` = (x, tau) is
    required. The tangency (velocity at the image parallel to the transported
    velocity) is then solved jointly with shell membership by Newton iteration.
    """
    cfg = cfg or IntegratorConfig()
    if guess is not None:
        x_guess, tau_guess = guess
    else:
        if inner.dof != 1:
            raise ValueError("Anticaustics of systems with more than one degree of freedom need a guess (x, tau)")
        if tau_bracket is None:
            raise ValueError("Either tau_bracket or guess is needed")
        tau_lo, tau_hi = (float(val) for val in tau_bracket)
        if abs(energy - energy_prime) < 1e-12 and abs(tau_lo) < 1e-8:
            raise AnticausticNotFoundError(
                "E = E' with a bracket starting at tau = 0: the shells coincide there and touch everywhere, "
                "the diagonal transition is degenerate", degenerate=True
            )

        def overlap(tau):
            return DrivenShellScan(inner, driving, energy_prime, tau, cfg, n_theta=n_theta).overlap(energy)

        lo_val, hi_val = overlap(tau_lo), overlap(tau_hi)
        if lo_val * hi_val > 0:
            raise AnticausticNotFoundError(
                f"No change of shell contact in tau bracket [{tau_lo}, {tau_hi}] "
                f"(overlaps {lo_val:.3e}, {hi_val:.3e})", tau_bracket=[tau_lo, tau_hi]
            )
        tau_guess = brentq(overlap, tau_lo, tau_hi, xtol=1e-12)
        scan = DrivenShellScan(inner, driving, energy_prime, tau_guess, cfg, n_theta=n_theta)
        values = scan.driven_values - energy
        idx = int(np.argmax(values)) if abs(np.max(values)) < abs(np.min(values)) else int(np.argmin(values))
        x_guess = flow_map(driving, scan.points[idx], tau_guess, 0.0, cfg)

    unknowns, residual = _polish_tangency(inner, driving, x_guess, tau_guess, energy, energy_prime, cfg, tol, max_iter)
    dim = 2 * inner.dof
    x_point, tau_a, scale = unknowns[:dim], unknowns[dim], unknowns[dim + 1]
    segment = integrate(driving, x_point, 0.0, tau_a, cfg)
    y_point = segment.end
    wedge_res = abs(wedge(hamiltonian_vector_field(inner, y_point),
                          segment.monodromy @ hamiltonian_vector_field(inner, x_point)))
    logger.info("Anticaustic at tau=%.10g, x=%s, wedge residual %.2e", tau_a, x_point, wedge_res)
    return Anticaustic(tau_a, x_point, y_point, scale, wedge_res, residual)
