"""Parsing of the small Hamiltonian expression format.

An expression is a polynomial in the canonical coordinates whose coefficients
may depend on the driving time ``t``. Names that are neither coordinates nor
the time are looked up in the parameter mapping and substituted by numbers.
"""
import os
import sys
MODULE_PATH = os.path.abspath(f"{os.path.split(__file__)[0]}/..")
if sys.path[0] != MODULE_PATH: sys.path.insert(0, MODULE_PATH)

import sympy
from sympy.parsing.sympy_parser import parse_expr, standard_transformations, convert_xor

from base import TransitionError


TIME = sympy.Symbol("t", real=True)

_FUNCTIONS = {
    "sin": sympy.sin,
    "cos": sympy.cos,
    "exp": sympy.exp,
    "sqrt": sympy.sqrt,
    "pi": sympy.pi,
}


class ExpressionError(TransitionError):
    stage = "hamiltonians"


def coordinate_symbols(dof):
    """Momentum and position symbols, ordered (p1..pN), (q1..qN)"""
    if dof < 1:
        raise ValueError(f"Degrees of freedom must be positive, got {dof}")
    if dof == 1:
        return [sympy.Symbol("p", real=True)], [sympy.Symbol("q", real=True)]
    p_syms = [sympy.Symbol(f"p{idx}", real=True) for idx in range(1, dof + 1)]
    q_syms = [sympy.Symbol(f"q{idx}", real=True) for idx in range(1, dof + 1)]
    return p_syms, q_syms


def _local_names(dof, params):
    p_syms, q_syms = coordinate_symbols(dof)
    names = dict(_FUNCTIONS)
    for key, val in params.items():
        names[key] = sympy.Float(float(val))
    for sym in p_syms + q_syms:
        names[sym.name] = sym
    if dof == 1:
        names["p1"], names["q1"] = p_syms[0], q_syms[0]
    names["t"] = TIME
    names["tau"] = TIME
    return names


def parse_expression(text, dof=1, params=None):
    """Parse ``text`` into a sympy expression in the coordinates and the time.

    Raises ExpressionError when the text does not parse, names an unknown
    symbol, or is not a polynomial in the coordinates.
    """
    params = params or {}
    names = _local_names(dof, params)
    try:
        expr = parse_expr(
            str(text), local_dict=names, transformations=standard_transformations + (convert_xor,)
        )
    except (SyntaxError, TypeError, ValueError, sympy.SympifyError) as err:
        raise ExpressionError(f"Cannot parse Hamiltonian expression '{text}': {err}", expression=text)

    expr = sympy.sympify(expr)
    p_syms, q_syms = coordinate_symbols(dof)
    allowed = set(p_syms + q_syms + [TIME])
    unknown = sorted(sym.name for sym in expr.free_symbols if sym not in allowed)
    if unknown:
        raise ExpressionError(
            f"Unknown names {unknown} in expression '{text}'. Declare them as parameters.",
            expression=text, unknown=unknown
        )
    check_polynomial(expr, dof, text=text)
    return expr


def check_polynomial(expr, dof, text=None):
    """Raise ExpressionError if ``expr`` is not polynomial in the coordinates"""
    p_syms, q_syms = coordinate_symbols(dof)
    gens = p_syms + q_syms
    try:
        poly = sympy.Poly(expr, *gens)
    except sympy.PolynomialError as err:
        raise ExpressionError(
            f"Expression '{text or expr}' is not a polynomial in {[str(g) for g in gens]}: {err}",
            expression=str(text or expr)
        )
    for coeff in poly.coeffs():
        if not coeff.free_symbols <= {TIME}:
            raise ExpressionError(
                f"Coefficient {coeff} of '{text or expr}' depends on the coordinates in a non polynomial way",
                expression=str(text or expr)
            )
    return poly


def polynomial_terms(expr, dof):
    """Monomials of ``expr`` as a list of (powers, coefficient) with powers ordered (p.., q..).

    The coefficients may still depend on the time.
    """
    poly = check_polynomial(expr, dof)
    return list(poly.terms())
