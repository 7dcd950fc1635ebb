"""Oscillatory semiclassical density from interior sheets of closed compound orbits, and its sum with the
classical background.

Each branch of a sheet (fixed winding numbers and sign of det d(E, E')/d(t, t'))
contributes

    2^N / (pi hbar) exp(-eps (|t| + |t'|) / hbar) |det d(t, t')/d(E, E')|^1/2
        |det(I - M)|^-1/2 cos(S(E, E') / hbar + (sigma + sigma0) pi / 2)

with S the energy action, expanded to second order around the nearest sheet
member using dS/dE = -t and dS/dE' = t'.
"""
import os
import sys
from itertools import product
MODULE_PATH = os.path.abspath(f"{os.path.split(__file__)[0]}/..")
if sys.path[0] != MODULE_PATH: sys.path.insert(0, MODULE_PATH)

import numpy as np
from scipy.spatial import Delaunay, cKDTree, QhullError

from utils import get_logger
from constants.numerics import LONG_ORBIT_CUTOFF
from cco.families import CausticInEnergyError, family_jacobian
from density.grid import l2_deviation


logger = get_logger("Semiclassical Density")

CAUSTIC_DET = 1e-8


class OscillatoryTerm:
    """One branch of the oscillatory sum on the grid, kept as in-phase and quadrature parts so the
    phase offset sigma0 can be changed afterwards"""

    def __init__(self, key, cos_part, sin_part, mask, sigma_offset=0):
        self.key = tuple(key)
        self.cos_part = np.asarray(cos_part, dtype=float)
        self.sin_part = np.asarray(sin_part, dtype=float)
        self.mask = np.asarray(mask, dtype=bool)
        self.sigma_offset = int(sigma_offset) % 4

    @property
    def name(self):
        j_val, jp_val, sign = self.key
        return f"j{j_val}_jp{jp_val}_{'pos' if sign > 0 else 'neg'}"

    def matrix(self, sigma_offset=None):
        offset = self.sigma_offset if sigma_offset is None else int(sigma_offset) % 4
        shift = offset * np.pi / 2
        return self.cos_part * np.cos(shift) - self.sin_part * np.sin(shift)

    def with_offset(self, sigma_offset):
        return OscillatoryTerm(self.key, self.cos_part, self.sin_part, self.mask, sigma_offset)


class _BranchMember:
    def __init__(self, orbit, inv_jac):
        self.energies = np.array([orbit.E, orbit.E_prime])
        self.times = np.array([orbit.t, orbit.t_prime])
        self.action = orbit.energy_action
        self.inv_jac = inv_jac
        self.det_i_minus_m = orbit.det_i_minus_m
        self.sigma = orbit.maslov_sigma
        self.dof = orbit.dof


def _branches(family, scheme):
    groups = {}
    for index, orbit in enumerate(family.members):
        try:
            inv_jac = family_jacobian(family, index, scheme=scheme)
        except CausticInEnergyError as err:
            logger.debug("Member %d skipped: %s", index, err)
            continue
        except ValueError:
            continue
        sign = int(np.sign(np.linalg.det(inv_jac)))
        key = (orbit.winding[0], orbit.winding[1], sign)
        groups.setdefault(key, []).append(_BranchMember(orbit, inv_jac))
    return groups


def _branch_term(key, members, grid, cutoff, caustic_det):
    cos_part = np.zeros(grid.shape)
    sin_part = np.zeros(grid.shape)
    mask = np.zeros(grid.shape, dtype=bool)
    points = np.array([member.energies for member in members])
    try:
        hull = Delaunay(points)
    except (QhullError, ValueError) as err:
        logger.debug("Branch %s has no two dimensional energy hull: %s", key, err)
        return None
    tree = cKDTree(points)

    e_mesh, ep_mesh = np.meshgrid(grid.E_values, grid.E_prime_values, indexing="ij")
    cells = np.stack([e_mesh.ravel(), ep_mesh.ravel()], axis=-1)
    inside = hull.find_simplex(cells) >= 0
    if not np.any(inside):
        return None
    _, nearest = tree.query(cells[inside])

    hbar, eps = grid.hbar, grid.epsilon
    for flat, member_idx in zip(np.flatnonzero(inside), nearest):
        member = members[member_idx]
        row, col = np.unravel_index(flat, grid.shape)
        delta = cells[flat] - member.energies
        times = member.times + member.inv_jac @ delta
        damping = eps * (abs(times[0]) + abs(times[1])) / hbar
        if damping > cutoff:
            continue
        if abs(member.det_i_minus_m) < caustic_det:
            mask[row, col] = True
            continue
        inv = member.inv_jac
        off = 0.5 * (inv[1, 0] - inv[0, 1])
        hessian = np.array([[-inv[0, 0], off], [off, inv[1, 1]]])
        gradient = np.array([-member.times[0], member.times[1]])
        action = member.action + gradient @ delta + 0.5 * delta @ hessian @ delta
        amplitude = (
            2 ** member.dof / (np.pi * hbar) * np.exp(-damping)
            * np.sqrt(abs(np.linalg.det(inv))) / np.sqrt(abs(member.det_i_minus_m))
        )
        phase = action / hbar + member.sigma * np.pi / 2
        cos_part[row, col] = amplitude * np.cos(phase)
        sin_part[row, col] = amplitude * np.sin(phase)
    return OscillatoryTerm(key, cos_part, sin_part, mask)


def sc_density(families, grid, sigma_offsets=None, cutoff=LONG_ORBIT_CUTOFF, caustic_det=CAUSTIC_DET,
               scheme="centered"):
    """Oscillatory terms on the grid, one per branch of every interior sheet.

    Families that are not interior sheets carry no two parameter energy
    dependence and are skipped. Terms damped beyond exp(-cutoff) are dropped;
    cells whose nearest orbit has |det(I - M)| below ``caustic_det`` are masked.
    """
    sigma_offsets = sigma_offsets or {}
    terms = []
    for family in families:
        if family.parameterization != "interior-sheet":
            logger.debug("Skipping %s, only interior sheets enter the oscillatory sum", family)
            continue
        for key, members in sorted(_branches(family, scheme).items()):
            if len(members) < 3:
                continue
            term = _branch_term(key, members, grid, cutoff, caustic_det)
            if term is None:
                continue
            term.sigma_offset = sigma_offsets.get(term.name, 0) % 4
            terms.append(term)
            logger.info("Oscillatory branch %s from %d orbits, %d masked cells", term.name, len(members),
                        int(np.sum(term.mask)))
    return terms


def calibrate_sigma(classical, oscillatory, reference, grid=None):
    """Phase offsets sigma0 in {0, 1, 2, 3}, one per term, minimizing the L2 error of classical plus
    oscillatory against ``reference``.

    Returns the offsets by term name, the resulting error, the error of the
    classical background alone, and the least squares amplitude factor of the
    calibrated oscillatory sum. The factor is reported, never applied.
    """
    classical = np.asarray(classical, dtype=float)
    reference = np.asarray(reference, dtype=float)
    base_error = l2_deviation(classical, reference, grid)
    if len(oscillatory) == 0:
        return {"offsets": {}, "error": base_error, "classical_error": base_error, "amplitude_scale": None}

    best_offsets, best_error = None, np.inf
    for combo in product(range(4), repeat=len(oscillatory)):
        total = classical + sum(term.matrix(offset) for term, offset in zip(oscillatory, combo))
        error = l2_deviation(total, reference, grid)
        if error < best_error:
            best_offsets, best_error = combo, error

    osc = sum(term.matrix(offset) for term, offset in zip(oscillatory, best_offsets))
    residual = reference - classical
    valid = np.isfinite(osc) & np.isfinite(residual)
    norm = float(np.sum(osc[valid] ** 2))
    scale = float(np.sum(osc[valid] * residual[valid]) / norm) if norm > 0 else None
    offsets = {term.name: int(offset) for term, offset in zip(oscillatory, best_offsets)}
    logger.info("Calibrated phase offsets %s: L2 error %.4g (classical alone %.4g), amplitude factor %s",
                offsets, best_error, base_error, scale)
    return {"offsets": offsets, "error": float(best_error), "classical_error": base_error, "amplitude_scale": scale}


class TransitionDensity:
    """Classical background, oscillatory terms and their total on a TransitionGrid"""

    def __init__(self, grid, classical, oscillatory=None, errors=None, diagnostics=None):
        self.grid = grid
        self.classical = np.asarray(classical, dtype=float)
        self.oscillatory = list(oscillatory or [])
        self.errors = None if errors is None else np.asarray(errors, dtype=float)
        self.diagnostics = dict(diagnostics or {})
        if self.classical.shape != grid.shape:
            raise ValueError(f"Classical matrix shape {self.classical.shape} does not match the grid {grid.shape}")

        self.mask = np.zeros(grid.shape, dtype=bool)
        total = self.classical.copy()
        for term in self.oscillatory:
            total = total + term.matrix()
            self.mask |= term.mask
        total[self.mask] = np.nan
        self.total = total

        negative = np.argwhere(np.nan_to_num(self.total, nan=0.0) < 0)
        self.diagnostics["negative_cells"] = len(negative)
        self.diagnostics["masked_cells"] = int(np.sum(self.mask))
        self.diagnostics["sigma_offsets"] = {term.name: term.sigma_offset for term in self.oscillatory}
        if len(negative) > 0:
            logger.info("%d cells of the total density are negative", len(negative))

    def oscillatory_matrices(self):
        return {term.name: term.matrix() for term in self.oscillatory}

    def to_json(self):
        return {"grid": self.grid.to_json(), "diagnostics": self.diagnostics,
                "terms": [term.name for term in self.oscillatory]}


def total_density(classical, oscillatory, grid, errors=None, diagnostics=None):
    """Sum of the classical background and the oscillatory terms. Negative cells are reported, not clipped"""
    return TransitionDensity(grid, classical, oscillatory, errors=errors, diagnostics=diagnostics)
