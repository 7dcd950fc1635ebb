"""Evaluatable Hamiltonians, the symplectic form, and Poisson brackets.

Coordinates are ordered (p1..pN, q1..qN) and J = [[0, -I], [I, 0]], so that
Hamilton's equations read dx/dt = J grad K. Every evaluation is vectorized over
leading axes: a batch of points of shape (..., 2N) yields values of shape (...),
gradients (..., 2N) and Hessians (..., 2N, 2N).
"""
import os
import sys
from functools import lru_cache
MODULE_PATH = os.path.abspath(f"{os.path.split(__file__)[0]}/..")
if sys.path[0] != MODULE_PATH: sys.path.insert(0, MODULE_PATH)

import numpy as np
import sympy

from base import TransitionError
from constants.numerics import FD_STEP
from hamiltonians.expression import TIME, coordinate_symbols, check_polynomial


class DomainError(TransitionError):
    stage = "hamiltonians"


@lru_cache(maxsize=None)
def _symplectic_matrix(dof):
    eye = np.eye(dof)
    zero = np.zeros((dof, dof))
    mat = np.block([[zero, -eye], [eye, zero]])
    mat.setflags(write=False)
    return mat


def symplectic_form(dof):
    return _symplectic_matrix(int(dof))


class SymplecticForm:
    """The standard symplectic matrix of a 2N dimensional phase space"""

    def __init__(self, dof):
        self.dof = int(dof)
        self.matrix = symplectic_form(self.dof)

    @property
    def dimension(self):
        return 2 * self.dof

    def check(self, atol=1e-14):
        mat = self.matrix
        square_ok = np.allclose(mat @ mat, -np.eye(self.dimension), atol=atol)
        skew_ok = np.allclose(mat.T, -mat, atol=atol)
        return square_ok and skew_ok

    def violation(self, monodromy):
        """max |M^T J M - J|, zero for a symplectic matrix"""
        monodromy = np.asarray(monodromy, dtype=float)
        return float(np.max(np.abs(monodromy.T @ self.matrix @ monodromy - self.matrix)))


class PhaseSpacePoint:
    """A point x = (p, q) of the 2N dimensional phase space"""

    def __init__(self, coords, dof=None):
        self.coords = as_coords(coords, dof)
        if self.coords.ndim != 1:
            raise ValueError(f"A phase space point must be a flat vector, got shape {self.coords.shape}")
        self.coords.setflags(write=False)

    @property
    def dof(self):
        return self.coords.shape[-1] // 2

    @property
    def p(self):
        return self.coords[:self.dof]

    @property
    def q(self):
        return self.coords[self.dof:]

    def to_json(self):
        return [float(val) for val in self.coords]

    @classmethod
    def from_json(cls, values):
        return cls(values)

    def __array__(self, dtype=None):
        return np.asarray(self.coords, dtype=dtype)

    def __repr__(self):
        return f"PhaseSpacePoint(p={self.p.tolist()}, q={self.q.tolist()})"


def as_coords(x, dof=None):
    """Float array copy of ``x`` with its last axis checked against 2N"""
    if isinstance(x, PhaseSpacePoint):
        x = x.coords
    coords = np.array(x, dtype=float)
    if coords.ndim == 0 or coords.shape[-1] % 2 != 0:
        raise ValueError(f"Phase space coordinates need an even length last axis, got shape {coords.shape}")
    if dof is not None and coords.shape[-1] != 2 * dof:
        raise ValueError(f"Expected {2 * dof} coordinates for {dof} degrees of freedom, got {coords.shape[-1]}")
    if not np.all(np.isfinite(coords)):
        raise DomainError("Phase space point contains non finite entries", point=coords.tolist())
    return coords


def _stack(values, shape):
    return np.stack([np.broadcast_to(np.asarray(val, dtype=float), shape) for val in values], axis=-1)


class HamiltonianSystem:
    """Hamiltonian K(x | t) given by a polynomial expression in the coordinates.

    Gradient and Hessian are derived symbolically once and compiled to numpy
    functions. Instances are immutable and pickle through their expression.
    """

    def __init__(self, expression, dof=1, name=None):
        self.dof = int(dof)
        self.expression = sympy.sympify(expression)
        self.name = name or str(self.expression)
        check_polynomial(self.expression, self.dof)

        p_syms, q_syms = coordinate_symbols(self.dof)
        self.coordinates = p_syms + q_syms
        self.time_dependent = TIME in self.expression.free_symbols

        args = self.coordinates + [TIME]
        grad_exprs = [sympy.diff(self.expression, sym) for sym in self.coordinates]
        hess_exprs = [sympy.diff(g_expr, sym) for g_expr in grad_exprs for sym in self.coordinates]
        self._value_fn = sympy.lambdify(args, self.expression, modules="numpy")
        self._grad_fn = sympy.lambdify(args, grad_exprs, modules="numpy")
        self._hess_fn = sympy.lambdify(args, hess_exprs, modules="numpy")

    def __reduce__(self):
        return (HamiltonianSystem, (self.expression, self.dof, self.name))

    def __repr__(self):
        return f"HamiltonianSystem({self.name}: {self.expression}, dof={self.dof})"

    @property
    def source(self):
        return str(self.expression)

    def _columns(self, x):
        coords = as_coords(x, self.dof)
        return coords.shape[:-1], list(np.moveaxis(coords, -1, 0))

    def value(self, x, time=0.0):
        shape, cols = self._columns(x)
        val = np.broadcast_to(np.asarray(self._value_fn(*cols, float(time)), dtype=float), shape)
        return float(val) if val.ndim == 0 else np.array(val)

    def gradient(self, x, time=0.0):
        shape, cols = self._columns(x)
        return _stack(self._grad_fn(*cols, float(time)), shape)

    def hessian(self, x, time=0.0):
        shape, cols = self._columns(x)
        flat = _stack(self._hess_fn(*cols, float(time)), shape)
        dim = 2 * self.dof
        return flat.reshape(shape + (dim, dim))

    def with_time_shift(self, offset):
        """The same Hamiltonian evaluated at t + offset"""
        return HamiltonianSystem(self.expression.subs(TIME, TIME + offset), self.dof, name=self.name)


def hamiltonian_vector_field(sys_, x, time=0.0):
    """dx/dt = J grad K(x | time)"""
    grad = sys_.gradient(x, time)
    if not np.all(np.isfinite(grad)):
        raise DomainError(f"Non finite gradient of {sys_.name}", point=np.asarray(x).tolist(), time=time)
    return grad @ symplectic_form(sys_.dof).T


def _check_pair(a_sys, b_sys):
    if a_sys.dof != b_sys.dof:
        raise ValueError(f"Systems differ in degrees of freedom: {a_sys.dof} vs {b_sys.dof}")


def poisson_bracket(a_sys, b_sys, x, time=0.0):
    """{a, b} = dx_a/dt . grad b"""
    _check_pair(a_sys, b_sys)
    return np.sum(hamiltonian_vector_field(a_sys, x, time) * b_sys.gradient(x, time), axis=-1)


def poisson_bracket_gradient(a_sys, b_sys, x, time=0.0, method="analytic"):
    """Gradient of {a, b} as a scalar field.

    ``analytic`` uses the product rule Hess_a J^T grad_b + Hess_b J grad_a,
    ``fd`` centered differences of the bracket itself.
    """
    _check_pair(a_sys, b_sys)
    if method == "fd":
        return _fd_gradient(lambda pts: poisson_bracket(a_sys, b_sys, pts, time), x)
    if method != "analytic":
        raise ValueError(f"Unknown method {method}")

    jmat = symplectic_form(a_sys.dof)
    grad_a, grad_b = a_sys.gradient(x, time), b_sys.gradient(x, time)
    hess_a, hess_b = a_sys.hessian(x, time), b_sys.hessian(x, time)
    term_a = np.einsum("...ij,...j->...i", hess_a, grad_b @ jmat)
    term_b = np.einsum("...ij,...j->...i", hess_b, grad_a @ jmat.T)
    return term_a + term_b


def wedge(u, v):
    """Symplectic product u ^ v = v . J u, so that dx_a ^ dx_b = {a, b}"""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape[-1] != v.shape[-1]:
        raise ValueError(f"Vectors differ in length: {u.shape[-1]} vs {v.shape[-1]}")
    jmat = symplectic_form(u.shape[-1] // 2)
    return np.sum(v * (u @ jmat.T), axis=-1)


def _fd_gradient(func, x, step=FD_STEP):
    coords = as_coords(x)
    dim = coords.shape[-1]
    hstep = step * (1.0 + np.linalg.norm(coords, axis=-1, keepdims=True))
    grad = np.empty(coords.shape)
    for idx in range(dim):
        shift = np.zeros(dim)
        shift[idx] = 1.0
        upper = func(coords + hstep * shift)
        lower = func(coords - hstep * shift)
        grad[..., idx] = (upper - lower) / (2 * hstep[..., 0])
    return grad


def derivative_errors(sys_, points, time=0.0):
    """Largest relative deviation of the analytic gradient and Hessian from centered differences"""
    points = as_coords(points, sys_.dof)
    grad = sys_.gradient(points, time)
    fd_grad = _fd_gradient(lambda pts: sys_.value(pts, time), points)
    hess = sys_.hessian(points, time)
    fd_hess = np.stack(
        [_fd_gradient(lambda pts, col=col: sys_.gradient(pts, time)[..., col], points)
         for col in range(2 * sys_.dof)], axis=-1
    )

    def rel_err(exact, approx):
        scale = np.maximum(np.max(np.abs(exact)), 1.0)
        return float(np.max(np.abs(exact - approx)) / scale)

    return rel_err(grad, fd_grad), rel_err(hess, fd_hess)
