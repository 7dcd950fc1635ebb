import os
import sys
MODULE_PATH = os.path.abspath(f"{os.path.split(__file__)[0]}/..")
if sys.path[0] != MODULE_PATH: sys.path.insert(0, MODULE_PATH)

import numpy as np
import sympy

from utils import get_logger
from constants.systems import BUILTIN_SYSTEMS, TIME_FACTORS
from hamiltonians.expression import ExpressionError, parse_expression, coordinate_symbols
from hamiltonians.systems import HamiltonianSystem


logger = get_logger("Hamiltonian Catalog")


def list_builtin():
    return sorted(BUILTIN_SYSTEMS)


def build_system(spec, params=None, dof=None, name=None):
    """Build a HamiltonianSystem from a built-in name or an expression string.

    Parameters
    ----------
    spec: str
        Name of a built-in system, or a polynomial expression in p, q and t.
    params: dict
        Numeric values of the names used in the expression. For built-in systems
        they override the catalog defaults; unused entries are ignored.
    dof: int
        Degrees of freedom. Taken from the catalog for built-in systems.
    """
    params = dict(params or {})
    if spec in BUILTIN_SYSTEMS:
        entry = BUILTIN_SYSTEMS[spec]
        if dof is not None and int(dof) != entry.dof:
            raise ExpressionError(
                f"Built-in system '{spec}' has {entry.dof} degrees of freedom, but {dof} requested",
                system=spec
            )
        merged = {**entry.params, **params}
        expr = parse_expression(entry.expression, entry.dof, merged)
        logger.debug("Built-in system %s: %s", spec, expr)
        return HamiltonianSystem(expr, entry.dof, name=name or spec)

    dof = 1 if dof is None else int(dof)
    expr = parse_expression(spec, dof, params)
    return HamiltonianSystem(expr, dof, name=name)


def perturbative_driving(inner, h, eta, time_factor="constant", omega=1.0, params=None):
    """Driving Hamiltonian H(x) + eta * f(t) * h(x) with f from the time factor table"""
    if time_factor not in TIME_FACTORS:
        raise ExpressionError(
            f"Unknown time factor '{time_factor}'. Available: {sorted(TIME_FACTORS)}", time_factor=time_factor
        )
    if isinstance(h, HamiltonianSystem):
        if h.dof != inner.dof:
            raise ValueError(f"Perturbation has {h.dof} degrees of freedom, inner system {inner.dof}")
        h_expr = h.expression
    else:
        h_expr = parse_expression(h, inner.dof, params)

    factor = parse_expression(TIME_FACTORS[time_factor], inner.dof, {"omega": omega})
    expr = inner.expression + sympy.Float(float(eta)) * factor * h_expr
    return HamiltonianSystem(expr, inner.dof, name=f"{inner.name}+perturbation")


def build_pair(system_settings):
    """Inner and driving systems from the System section of the settings"""
    params = dict(system_settings.params or {})
    dof = system_settings.dof
    inner = build_system(system_settings.inner, params=params, dof=dof)
    if system_settings.driving == "perturbed":
        pert = dict(system_settings.perturbation or {})
        if "h" not in pert:
            raise ExpressionError("Driving 'perturbed' needs a perturbation expression 'h'")
        driving = perturbative_driving(
            inner, pert["h"], pert.get("eta", 0.1), time_factor=pert.get("time_factor", "constant"),
            omega=pert.get("omega", 1.0), params=params
        )
    else:
        driving = build_system(system_settings.driving, params=params, dof=inner.dof)
    if driving.dof != inner.dof:
        raise ExpressionError(
            f"Inner system has {inner.dof} degrees of freedom, driving system {driving.dof}"
        )
    logger.info("Inner system: %s", inner)
    logger.info("Driving system: %s", driving)
    return inner, driving


def quadratic_system(constant, gradient, hessian, center, name=None):
    """c + g.(x - x0) + (x - x0).S.(x - x0)/2 as a HamiltonianSystem"""
    gradient = np.asarray(gradient, dtype=float)
    hessian = np.asarray(hessian, dtype=float)
    center = np.asarray(center, dtype=float)
    dof = gradient.shape[-1] // 2
    p_syms, q_syms = coordinate_symbols(dof)
    shifted = sympy.Matrix([sym - sympy.Float(float(c_val)) for sym, c_val in zip(p_syms + q_syms, center)])
    g_vec = sympy.Matrix([sympy.Float(float(val)) for val in gradient])
    s_mat = sympy.Matrix(hessian.shape[0], hessian.shape[1], [sympy.Float(float(val)) for val in hessian.ravel()])
    expr = sympy.Float(float(constant)) + (g_vec.T * shifted)[0] + sympy.Rational(1, 2) * (shifted.T * s_mat * shifted)[0]
    return HamiltonianSystem(sympy.expand(expr), dof, name=name)
