"""Seeds of compound orbit families: equilibria of C(x) = {H(x), L(x|0)}."""
import os
import sys
MODULE_PATH = os.path.abspath(f"{os.path.split(__file__)[0]}/..")
if sys.path[0] != MODULE_PATH: sys.path.insert(0, MODULE_PATH)

import numpy as np
from tqdm import tqdm

from base import TransitionError
from utils import get_logger, ordered_parallel_map, progress_disabled
from constants.numerics import FD_STEP, DEGENERATE_EIGENVALUE
from hamiltonians.systems import (
    DomainError, PhaseSpacePoint, as_coords, poisson_bracket, poisson_bracket_gradient, symplectic_form
)


logger = get_logger("Seed Finder")

STABILITY_CLASSES = ("elliptic-like", "hyperbolic-like", "degenerate")


class SeedNotFoundError(TransitionError):
    stage = "seeds"


class DegenerateSeedError(TransitionError):
    stage = "seeds"


class Seed:
    def __init__(self, point, bracket_value, energy_inner, stability_class, residual, eigenvalues=None):
        self.point = point if isinstance(point, PhaseSpacePoint) else PhaseSpacePoint(point)
        self.bracket_value = float(bracket_value)
        self.energy_inner = float(energy_inner)
        self.stability_class = stability_class
        self.residual = float(residual)
        self.eigenvalues = np.asarray(eigenvalues if eigenvalues is not None else [], dtype=complex)

    @property
    def degenerate(self):
        return self.stability_class == "degenerate"

    def to_json(self):
        return {
            "point": self.point.to_json(),
            "bracket_value": self.bracket_value,
            "energy_inner": self.energy_inner,
            "stability_class": self.stability_class,
            "residual": self.residual,
            "eigenvalues": [[float(val.real), float(val.imag)] for val in self.eigenvalues],
        }

    @classmethod
    def from_json(cls, json_obj):
        eigen = [complex(real, imag) for real, imag in json_obj.get("eigenvalues", [])]
        return cls(
            json_obj["point"], json_obj["bracket_value"], json_obj["energy_inner"],
            json_obj["stability_class"], json_obj["residual"], eigenvalues=eigen
        )

    def __repr__(self):
        return (f"Seed(x0={self.point.to_json()}, C={self.bracket_value:.3g}, E0={self.energy_inner:.6g}, "
                f"{self.stability_class}, residual={self.residual:.2e})")


def bracket_hessian(inner, driving, x):
    """Jacobian of grad C by centered differences of the analytic bracket gradient"""
    x = as_coords(x, inner.dof)
    dim = x.shape[-1]
    step = FD_STEP * (1.0 + np.linalg.norm(x))
    jac = np.empty((dim, dim))
    for idx in range(dim):
        shift = np.zeros(dim)
        shift[idx] = step
        upper = poisson_bracket_gradient(inner, driving, x + shift, 0.0)
        lower = poisson_bracket_gradient(inner, driving, x - shift, 0.0)
        jac[:, idx] = (upper - lower) / (2 * step)
    return 0.5 * (jac + jac.T)


def classify(hessian_c, dof):
    """Stability class from the eigenvalues of J Hess(C)"""
    eigen = np.linalg.eigvals(symplectic_form(dof) @ hessian_c)
    if np.any(np.abs(eigen) < DEGENERATE_EIGENVALUE):
        return "degenerate", eigen
    if np.all(np.abs(eigen.real) < DEGENERATE_EIGENVALUE * np.max(np.abs(eigen))):
        return "elliptic-like", eigen
    return "hyperbolic-like", eigen


def _is_singular(jac):
    sing = np.linalg.svd(jac, compute_uv=False)
    return sing[0] < DEGENERATE_EIGENVALUE or sing[-1] < 1e-12 * sing[0]


def find_seed(inner, driving, guess, tol=1e-11, max_iter=50):
    """Newton iteration on grad {H, L}(x) = 0 started from ``guess``"""
    x = as_coords(guess, inner.dof)
    residual = np.inf
    for iteration in range(max_iter + 1):
        grad_c = poisson_bracket_gradient(inner, driving, x, 0.0)
        residual = float(np.linalg.norm(grad_c))
        if not np.isfinite(residual):
            break
        jac = bracket_hessian(inner, driving, x)
        if residual < tol:
            if np.max(np.abs(jac)) < DEGENERATE_EIGENVALUE:
                raise DegenerateSeedError(
                    "The bracket {H, L} vanishes to second order around the guess, every point is an equilibrium. "
                    "Try a perturbed guess or a different driving.", point=x.tolist()
                )
            stability, eigen = classify(jac, inner.dof)
            logger.debug("Seed converged after %d iterations at %s (%s)", iteration, x, stability)
            return Seed(
                x, poisson_bracket(inner, driving, x, 0.0), inner.value(x), stability, residual, eigenvalues=eigen
            )
        if iteration == max_iter:
            break
        if _is_singular(jac):
            raise DegenerateSeedError(
                f"Singular Hessian of the bracket at {x.tolist()}, try a perturbed guess",
                point=x.tolist(), residual=residual
            )

        delta = np.linalg.solve(jac, -grad_c)
        # Halve the step while the residual grows a lot.
        for _ in range(8):
            trial = x + delta
            trial_res = np.linalg.norm(poisson_bracket_gradient(inner, driving, trial, 0.0))
            if np.isfinite(trial_res) and trial_res < 2 * residual + tol:
                break
            delta = delta / 2
        x = x + delta

    raise SeedNotFoundError(
        f"Newton iteration for a seed did not converge from {np.asarray(guess).tolist()}, last residual {residual:.3e}",
        residual=residual, point=x.tolist()
    )


def _seed_job(guess, inner=None, driving=None, tol=1e-11, max_iter=50):
    try:
        return find_seed(inner, driving, guess, tol=tol, max_iter=max_iter)
    except (SeedNotFoundError, DegenerateSeedError, DomainError, np.linalg.LinAlgError, FloatingPointError):
        return None


def box_grid(box, grid):
    axes = [np.linspace(lo, hi, grid) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([axis.ravel() for axis in mesh], axis=-1)


def _in_box(point, box):
    return all(lo <= val <= hi for val, (lo, hi) in zip(point, box))


def seed_scan(inner, driving, box, grid, tol=1e-11, max_iter=50, workers=1):
    """All distinct seeds reached by Newton from the nodes of a regular grid over ``box``.

    Seeds are sorted by their coordinates, so the order does not depend on the
    scheduling of the workers.
    """
    box = [(float(lo), float(hi)) for lo, hi in box]
    if len(box) != 2 * inner.dof:
        raise ValueError(f"Box has {len(box)} axes, the phase space {2 * inner.dof}")
    nodes = list(box_grid(box, int(grid)))
    logger.info("Scanning %d starting points for seeds", len(nodes))

    results = ordered_parallel_map(
        _seed_job, nodes, max_workers=workers, inner=inner, driving=driving, tol=tol, max_iter=max_iter
    )
    diameter = float(np.linalg.norm([hi - lo for lo, hi in box]))
    radius = 1e-6 * diameter

    seeds = []
    for seed in tqdm(results, desc="Deduplicating seeds", disable=progress_disabled(), leave=False):
        if seed is None or not _in_box(seed.point.coords, box):
            continue
        if any(np.linalg.norm(seed.point.coords - known.point.coords) < radius for known in seeds):
            continue
        seeds.append(seed)

    seeds.sort(key=lambda item: tuple(np.round(item.point.coords, 9)))
    failed = sum(res is None for res in results)
    logger.info("Found %d distinct seeds (%d starting points failed)", len(seeds), failed)
    return seeds
