"""Differential commutator of the inner and driving flows, and the commuting local quadratic pair."""
import os
import sys
MODULE_PATH = os.path.abspath(f"{os.path.split(__file__)[0]}/..")
if sys.path[0] != MODULE_PATH: sys.path.insert(0, MODULE_PATH)

import numpy as np
from scipy.linalg import null_space

from utils import get_logger
from hamiltonians.systems import as_coords, poisson_bracket_gradient, symplectic_form
from hamiltonians.catalog import quadratic_system
from dynamics.integrator import flow_map


logger = get_logger("Commutator")


def commutator_defect(inner, driving, x, dt, dtau, cfg=None):
    """|L-flow(dtau) o H-flow(dt) x - H-flow(dt) o L-flow(dtau) x|"""
    x = as_coords(x, inner.dof)
    inner_first = flow_map(driving, flow_map(inner, x, 0.0, dt, cfg), 0.0, dtau, cfg)
    driving_first = flow_map(inner, flow_map(driving, x, 0.0, dtau, cfg), 0.0, dt, cfg)
    return float(np.linalg.norm(inner_first - driving_first))


def bracket_velocity(inner, driving, x):
    """|J grad C(x)|, the speed of the flow generated by the bracket Hamiltonian"""
    grad_c = poisson_bracket_gradient(inner, driving, x, 0.0)
    return float(np.linalg.norm(grad_c @ symplectic_form(inner.dof).T))


def defect_scaling(inner, driving, x, ladder=None, cfg=None):
    """Fit the power law of the commutator defect over a ladder of equal steps dt = dtau.

    Returns a dict with the fitted exponent, the defects, the ratios
    defect / (dt dtau), and their Richardson extrapolation to zero step, which
    assumes halving steps between the last two rungs.
    """
    if ladder is None:
        ladder = 0.1 * 0.5 ** np.arange(5)
    ladder = np.asarray(ladder, dtype=float)
    defects = np.array([commutator_defect(inner, driving, x, step, step, cfg) for step in ladder])
    ratios = defects / ladder ** 2
    exponent = np.polyfit(np.log(ladder), np.log(np.maximum(defects, np.finfo(float).tiny)), 1)[0]
    extrapolated = 2 * ratios[-1] - ratios[-2]
    logger.debug("Defect exponent %.4f, extrapolated ratio %.6g", exponent, extrapolated)
    return {
        "steps": ladder,
        "defects": defects,
        "ratios": ratios,
        "exponent": float(exponent),
        "extrapolated_ratio": float(extrapolated),
    }


def local_quadratic(sys_, x0, time=0.0):
    """Second order Taylor Hamiltonian of ``sys_`` around ``x0``"""
    x0 = as_coords(x0, sys_.dof)
    return quadratic_system(
        sys_.value(x0, time), sys_.gradient(x0, time), sys_.hessian(x0, time), x0,
        name=f"local quadratic of {sys_.name}"
    )


def _bracket_constraints(g_inner, s_inner, g_drv, s_drv, jmat):
    # {H0, L0} = g1.J^T g2 + y.(S1 J^T g2 + S2 J g1) + y.S1 J^T S2 y for quadratics around x0.
    const = g_inner @ jmat.T @ g_drv
    linear = s_inner @ jmat.T @ g_drv + s_drv @ jmat @ g_inner
    quad = s_inner @ jmat.T @ s_drv
    quad = quad + quad.T
    upper = np.triu_indices(len(g_inner))
    return np.concatenate([[const], linear, quad[upper]])


def commuting_local_pair(inner, driving, x0):
    """Local quadratics (H0, L0) around ``x0`` with {H0, L0} identically zero.

    H0 is the Taylor quadratic of the inner Hamiltonian. L0 is the quadratic
    closest, in the Frobenius norm of its gradient and Hessian, to the Taylor
    quadratic of the driving at t=0 among all quadratics commuting with H0.
    """
    x0 = as_coords(x0, inner.dof)
    dim = x0.shape[-1]
    jmat = symplectic_form(inner.dof)
    g_inner, s_inner = inner.gradient(x0), inner.hessian(x0)
    g_drv, s_drv = driving.gradient(x0, 0.0), driving.hessian(x0, 0.0)

    upper = np.triu_indices(dim)
    # Off diagonal Hessian entries appear twice in the Frobenius norm.
    weights = np.concatenate([np.ones(dim), np.where(upper[0] == upper[1], 1.0, np.sqrt(2.0))])

    def unpack(vec):
        grad = vec[:dim]
        hess = np.zeros((dim, dim))
        hess[upper] = vec[dim:]
        return grad, hess + np.triu(hess, 1).T

    n_unknown = dim + len(upper[0])
    columns = []
    for idx in range(n_unknown):
        basis = np.zeros(n_unknown)
        basis[idx] = 1.0 / weights[idx]
        columns.append(_bracket_constraints(g_inner, s_inner, *unpack(basis), jmat))
    constraint = np.stack(columns, axis=-1)

    kernel = null_space(constraint)
    target = weights * np.concatenate([g_drv, s_drv[upper]])
    projected = kernel @ (kernel.T @ target)
    g_new, s_new = unpack(projected / weights)
    logger.debug(
        "Commuting projection moved the driving quadratic by %.3e", np.linalg.norm(projected - target)
    )

    h_zero = local_quadratic(inner, x0)
    l_zero = quadratic_system(driving.value(x0, 0.0), g_new, s_new, x0, name=f"commuting quadratic of {driving.name}")
    return h_zero, l_zero
