import os
import sys
MODULE_PATH = os.path.abspath(f"{os.path.split(__file__)[0]}/..")
if sys.path[0] != MODULE_PATH: sys.path.insert(0, MODULE_PATH)

import numpy as np


def lorentzian(energy, epsilon):
    """delta_eps(E) = eps / (pi (eps^2 + E^2))"""
    energy = np.asarray(energy, dtype=float)
    return epsilon / (np.pi * (epsilon ** 2 + energy ** 2))


class TransitionGrid:
    """Cell centers in the initial energy E (rows) and the final energy E' (columns), with tau, eps and hbar"""

    def __init__(self, E_values, E_prime_values, tau, epsilon, hbar):
        self.E_values = np.asarray(E_values, dtype=float)
        self.E_prime_values = np.asarray(E_prime_values, dtype=float)
        self.tau = float(tau)
        self.epsilon = float(epsilon)
        self.hbar = float(hbar)
        if self.epsilon <= 0 or self.hbar <= 0:
            raise ValueError(f"epsilon and hbar must be positive, got {self.epsilon} and {self.hbar}")
        for name, values in (("E", self.E_values), ("E'", self.E_prime_values)):
            if values.ndim != 1 or len(values) < 2 or np.any(np.diff(values) <= 0):
                raise ValueError(f"The {name} grid must be strictly increasing with at least two values")

    @classmethod
    def from_ranges(cls, e_range, ep_range, bins, tau, epsilon, hbar):
        """Grid of ``bins`` equal cells over each range, values at the cell centers"""
        def centers(lo, hi):
            width = (hi - lo) / bins
            return lo + width * (np.arange(bins) + 0.5)
        return cls(centers(*e_range), centers(*ep_range), tau, epsilon, hbar)

    @property
    def shape(self):
        return len(self.E_values), len(self.E_prime_values)

    @staticmethod
    def _edges(values):
        mids = 0.5 * (values[1:] + values[:-1])
        return np.concatenate([[2 * values[0] - mids[0]], mids, [2 * values[-1] - mids[-1]]])

    @property
    def E_edges(self):
        return self._edges(self.E_values)

    @property
    def E_prime_edges(self):
        return self._edges(self.E_prime_values)

    @property
    def cell_widths(self):
        return np.diff(self.E_edges), np.diff(self.E_prime_edges)

    def with_tau(self, tau):
        return TransitionGrid(self.E_values, self.E_prime_values, tau, self.epsilon, self.hbar)

    def with_hbar(self, hbar):
        return TransitionGrid(self.E_values, self.E_prime_values, self.tau, self.epsilon, hbar)

    def transposed(self):
        """Grid with the roles of E and E' exchanged and the driving time reversed"""
        return TransitionGrid(self.E_prime_values, self.E_values, -self.tau, self.epsilon, self.hbar)

    def to_json(self):
        return {
            "E_values": self.E_values.tolist(),
            "E_prime_values": self.E_prime_values.tolist(),
            "tau": self.tau,
            "epsilon": self.epsilon,
            "hbar": self.hbar,
        }

    @classmethod
    def from_json(cls, json_obj):
        return cls(json_obj["E_values"], json_obj["E_prime_values"], json_obj["tau"], json_obj["epsilon"],
                   json_obj["hbar"])

    def __repr__(self):
        return (f"TransitionGrid({self.shape[0]}x{self.shape[1]}, tau={self.tau}, eps={self.epsilon}, "
                f"hbar={self.hbar})")


def smearing_matrix(values, epsilon):
    """Discrete Lorentzian convolution weights delta_eps(E_i - E_k) dE_k"""
    widths = np.diff(TransitionGrid._edges(values))
    return lorentzian(values[:, None] - values[None, :], epsilon) * widths[None, :]


def smear(matrix, grid):
    """Lorentzian post-convolution of a binned density in both energies"""
    rows = smearing_matrix(grid.E_values, grid.epsilon)
    cols = smearing_matrix(grid.E_prime_values, grid.epsilon)
    return rows @ np.asarray(matrix, dtype=float) @ cols.T


def smear_errors(errors, grid):
    """Standard errors after smearing, for independent errors per cell"""
    rows = smearing_matrix(grid.E_values, grid.epsilon) ** 2
    cols = smearing_matrix(grid.E_prime_values, grid.epsilon) ** 2
    return np.sqrt(rows @ np.asarray(errors, dtype=float) ** 2 @ cols.T)


def line_cut(matrix, grid, energy):
    """(E' grid, density) along E' at fixed E, linearly interpolated between the two nearest rows"""
    matrix = np.asarray(matrix, dtype=float)
    if not grid.E_values[0] <= energy <= grid.E_values[-1]:
        raise ValueError(f"E={energy} outside the grid [{grid.E_values[0]}, {grid.E_values[-1]}]")
    upper = int(np.clip(np.searchsorted(grid.E_values, energy), 1, len(grid.E_values) - 1))
    lower = upper - 1
    weight = (energy - grid.E_values[lower]) / (grid.E_values[upper] - grid.E_values[lower])
    return grid.E_prime_values.copy(), (1 - weight) * matrix[lower] + weight * matrix[upper]


def l2_deviation(first, second, grid=None):
    """L2 norm of the difference over the cells where both are finite.

    Weighted by the cell areas when a grid is given, the root mean square otherwise.
    """
    diff = np.asarray(first, dtype=float) - np.asarray(second, dtype=float)
    if diff.shape != np.shape(second):
        raise ValueError(f"Shapes differ: {np.shape(first)} vs {np.shape(second)}")
    valid = np.isfinite(diff)
    if not np.any(valid):
        return float("nan")
    if grid is None:
        return float(np.sqrt(np.mean(diff[valid] ** 2)))
    e_widths, ep_widths = grid.cell_widths
    area = np.outer(e_widths, ep_widths)
    return float(np.sqrt(np.sum(diff[valid] ** 2 * area[valid])))


def peak_spacing(energies, values):
    """Mean spacing of the interior local maxima of a sampled curve, nan with fewer than two maxima"""
    values = np.asarray(values, dtype=float)
    interior = (values[1:-1] > values[:-2]) & (values[1:-1] >= values[2:])
    peaks = np.asarray(energies)[1:-1][interior]
    if len(peaks) < 2:
        return float("nan")
    return float(np.mean(np.diff(peaks)))
