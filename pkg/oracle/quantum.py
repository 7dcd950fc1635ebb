"""Quantum reference for one degree of freedom in a truncated harmonic oscillator basis.

Position and momentum are represented by ladder operators of an oscillator with
configurable frequency and center,

    q = center + sqrt(hbar / 2w) (a + a^+),    p = i sqrt(hbar w / 2) (a^+ - a),

and monomials p^m q^n are Weyl ordered with McCoy's formula. Products are formed
in a basis padded by the polynomial degree and truncated afterwards, so every
retained matrix element is exact.
"""
import os
import sys
from math import comb
MODULE_PATH = os.path.abspath(f"{os.path.split(__file__)[0]}/..")
if sys.path[0] != MODULE_PATH: sys.path.insert(0, MODULE_PATH)

import numpy as np
import sympy
from scipy.linalg import eigh, expm
from tqdm import tqdm

from base import TransitionError
from utils import get_logger, progress_disabled
from hamiltonians.expression import TIME, ExpressionError, polynomial_terms
from density.grid import lorentzian


logger = get_logger("Quantum Oracle")


class UnsupportedSystemError(TransitionError):
    stage = "oracle"


class BasisTooSmallError(TransitionError):
    stage = "oracle"


class StepSizeError(TransitionError):
    stage = "oracle"


def ladder_operators(size, hbar, frequency=1.0, center=0.0):
    """(p, q) matrices of dimension ``size``"""
    lower = np.diag(np.sqrt(np.arange(1, size)), k=1).astype(complex)
    raise_ = lower.conj().T
    q_mat = np.sqrt(hbar / (2 * frequency)) * (lower + raise_) + center * np.eye(size)
    p_mat = 1j * np.sqrt(hbar * frequency / 2) * (raise_ - lower)
    return p_mat, q_mat


def weyl_monomial(p_mat, q_mat, p_power, q_power):
    """Weyl ordered p^m q^n = 2^-n sum_k C(n, k) q^k p^m q^(n-k)"""
    p_part = np.linalg.matrix_power(p_mat, p_power)
    q_pows = [np.linalg.matrix_power(q_mat, k) for k in range(q_power + 1)]
    total = np.zeros_like(p_mat)
    for k in range(q_power + 1):
        total = total + comb(q_power, k) * q_pows[k] @ p_part @ q_pows[q_power - k]
    return total / 2 ** q_power


class _OperatorTerms:
    """Monomials of a Hamiltonian with their (possibly time dependent) coefficients, as basis matrices"""

    def __init__(self, system, basis_size, hbar, frequency, center):
        if system.dof != 1:
            raise UnsupportedSystemError(
                f"The quantum reference supports one degree of freedom, {system.name} has {system.dof}"
            )
        try:
            terms = polynomial_terms(system.expression, 1)
        except ExpressionError as err:
            raise UnsupportedSystemError(f"{system.name} is not a polynomial: {err}") from err

        degree = max(sum(powers) for powers, _ in terms)
        padded = basis_size + degree + 1
        p_mat, q_mat = ladder_operators(padded, hbar, frequency, center)
        self.time_dependent = system.time_dependent
        self.terms = []
        for (p_power, q_power), coeff in terms:
            matrix = weyl_monomial(p_mat, q_mat, p_power, q_power)[:basis_size, :basis_size]
            if TIME in coeff.free_symbols:
                coeff_fn = sympy.lambdify(TIME, coeff, modules="numpy")
            else:
                value = complex(coeff)
                coeff_fn = (lambda time, val=value: val)
            self.terms.append((coeff_fn, matrix))

    def matrix(self, time=0.0):
        total = sum(complex(coeff_fn(float(time))) * matrix for coeff_fn, matrix in self.terms)
        return 0.5 * (total + total.conj().T)


class QuantumModel:
    """Inner and driving Hamiltonians in the oscillator basis, with the spectrum of the inner one"""

    def __init__(self, inner, driving, basis_size, hbar, frequency=1.0, center=0.0):
        self.inner = inner
        self.driving = driving
        self.basis_size = int(basis_size)
        self.hbar = float(hbar)
        self.frequency = float(frequency)
        self.center = float(center)

        self._inner_terms = _OperatorTerms(inner, self.basis_size, self.hbar, self.frequency, self.center)
        self._driving_terms = _OperatorTerms(driving, self.basis_size, self.hbar, self.frequency, self.center)
        if self._inner_terms.time_dependent:
            raise UnsupportedSystemError(f"The inner Hamiltonian {inner.name} must not depend on time")
        self.H_matrix = self._inner_terms.matrix()
        self.energies, self.eigenvectors = eigh(self.H_matrix)
        self.converged = self.basis_size

    @property
    def time_dependent(self):
        return self._driving_terms.time_dependent

    def Lambda_matrix(self, tau=0.0):
        return self._driving_terms.matrix(tau)

    def hermiticity_defect(self):
        raw = sum(complex(fn(0.0)) * mat for fn, mat in self._inner_terms.terms)
        return float(np.max(np.abs(raw - raw.conj().T)))

    def to_json(self):
        return {
            "basis_size": self.basis_size,
            "hbar": self.hbar,
            "frequency": self.frequency,
            "center": self.center,
            "converged_levels": self.converged,
            "energies": self.energies[:self.converged].tolist(),
        }


def converged_levels(inner, basis_size, hbar, frequency=1.0, center=0.0, tol=1e-8):
    """Number K of lowest levels that change by less than ``tol`` (relative above 1) when the basis doubles"""
    small = eigh(_OperatorTerms(inner, basis_size, hbar, frequency, center).matrix(), eigvals_only=True)
    large = eigh(_OperatorTerms(inner, 2 * basis_size, hbar, frequency, center).matrix(), eigvals_only=True)
    change = np.abs(small - large[:basis_size]) / np.maximum(1.0, np.abs(large[:basis_size]))
    unconverged = np.flatnonzero(change >= tol)
    return int(unconverged[0]) if len(unconverged) > 0 else basis_size


def build_model(inner, driving, basis_size, hbar, frequency=1.0, center=0.0, min_levels=None, tol=1e-8):
    """Assemble the model and determine how many levels the basis converges"""
    model = QuantumModel(inner, driving, basis_size, hbar, frequency, center)
    model.converged = converged_levels(inner, basis_size, hbar, frequency, center, tol=tol)
    logger.info("Basis of %d states converges %d levels of %s (hbar=%g)", basis_size, model.converged,
                inner.name, hbar)
    if min_levels is not None and model.converged < min_levels:
        raise BasisTooSmallError(
            f"Only {model.converged} levels converge with {basis_size} basis states, {min_levels} needed",
            converged=model.converged, basis_size=basis_size
        )
    return model


def _product_propagator(model, tau, steps):
    step = tau / steps
    unitary = np.eye(model.basis_size, dtype=complex)
    for idx in tqdm(range(steps), desc="Propagating", disable=progress_disabled(), leave=False):
        generator = model.Lambda_matrix((idx + 0.5) * step)
        unitary = expm(-1j * step / model.hbar * generator) @ unitary
    return unitary


def _spectral_propagator(model, tau):
    values, vectors = eigh(model.Lambda_matrix(0.0))
    return (vectors * np.exp(-1j * tau / model.hbar * values)) @ vectors.conj().T


def propagate(model, tau, steps=200, richardson=False, force_product=False, unitarity_tol=1e-9,
              richardson_tol=1e-7):
    """Time ordered product of midpoint exponentials of the driving over [0, tau].

    A time independent driving is exponentiated in one go unless
    ``force_product`` is set. With ``richardson`` the product is recomputed with
    halved steps and the two must agree within ``richardson_tol``.
    """
    if tau == 0.0:
        return np.eye(model.basis_size, dtype=complex)
    steps = int(steps)
    if steps < 1:
        raise ValueError(f"Need at least one step, got {steps}")

    if model.time_dependent or force_product:
        norm = np.linalg.norm(model.Lambda_matrix(0.0), 2)
        if norm * abs(tau) / steps / model.hbar > 1.0:
            logger.debug("Propagation step is coarse: |Lambda| dtau / hbar = %.3g", norm * abs(tau) / steps / model.hbar)
        unitary = _product_propagator(model, tau, steps)
    else:
        unitary = _spectral_propagator(model, tau)

    defect = float(np.max(np.abs(unitary.conj().T @ unitary - np.eye(model.basis_size))))
    if defect > unitarity_tol:
        raise StepSizeError(f"Propagator is not unitary: max |U^+U - I| = {defect:.3e}", defect=defect)

    if richardson and (model.time_dependent or force_product):
        refined = _product_propagator(model, tau, 2 * steps)
        change = float(np.max(np.abs(refined - unitary)))
        if change > richardson_tol:
            raise StepSizeError(
                f"Halving the step changes the propagator by {change:.3e}, increase the steps from {steps}",
                change=change, steps=steps
            )
        logger.debug("Richardson check passed, change %.3e", change)
    return unitary


def transition_probabilities(model, unitary):
    """P_kl = |<k|U|l>|^2 in the eigenbasis of the inner Hamiltonian (k final, l initial)"""
    vecs = model.eigenvectors
    return np.abs(vecs.conj().T @ unitary @ vecs) ** 2


def density_diagnostics(model, probabilities, grid, levels=None):
    """Retained levels, probability leaking to the excluded levels, and the mean level spacing on the grid"""
    levels = model.converged if levels is None else int(levels)
    energies = model.energies[:levels]
    kept = np.asarray(probabilities)[:levels, :levels]
    leakage = float(np.max(1.0 - kept.sum(axis=0))) if levels > 0 else 1.0
    lo = min(grid.E_values[0], grid.E_prime_values[0])
    hi = max(grid.E_values[-1], grid.E_prime_values[-1])
    window = energies[(energies >= lo) & (energies <= hi)]
    spacing = float(np.mean(np.diff(window))) if len(window) > 1 else float("nan")
    return {
        "levels": levels,
        "leakage": leakage,
        "mean_spacing": spacing,
        "single_state": bool(np.isfinite(spacing) and grid.epsilon < spacing),
        "levels_in_window": int(len(window)),
    }


def smeared_density(model, probabilities, grid, levels=None):
    """sum_kl delta_eps(E' - E_k) delta_eps(E - E_l) P_kl over the converged levels"""
    levels = model.converged if levels is None else int(levels)
    if levels == 0:
        raise BasisTooSmallError("No level of the basis converged")
    energies = model.energies[:levels]
    top = max(grid.E_values[-1], grid.E_prime_values[-1])
    if top > energies[-1]:
        raise BasisTooSmallError(
            f"The grid reaches E={top:.6g}, above the highest converged level {energies[-1]:.6g}",
            converged=levels
        )
    info = density_diagnostics(model, probabilities, grid, levels)
    if info["single_state"]:
        logger.warning(
            "eps=%.3g is below the mean level spacing %.3g, the density resolves single states",
            grid.epsilon, info["mean_spacing"]
        )
    if info["leakage"] > 1e-6:
        logger.info("Up to %.3g of the probability leaves the converged levels", info["leakage"])

    initial = lorentzian(grid.E_values[:, None] - energies[None, :], grid.epsilon)
    final = lorentzian(grid.E_prime_values[:, None] - energies[None, :], grid.epsilon)
    kept = np.asarray(probabilities)[:levels, :levels]
    return initial @ kept.T @ final.T
