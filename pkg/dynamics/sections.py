"""Energy shells and their intersections with driven shells.

For one degree of freedom a shell H(x) = E is parameterized by the polar angle
around the minimum of H, which requires the shell to be star shaped about that
point (true for the bound systems of the catalog at energies above the
barriers).
"""
import os
import sys
MODULE_PATH = os.path.abspath(f"{os.path.split(__file__)[0]}/..")
if sys.path[0] != MODULE_PATH: sys.path.insert(0, MODULE_PATH)

import numpy as np
from scipy.optimize import brentq, minimize

from utils import get_logger
from hamiltonians.systems import DomainError, as_coords
from dynamics.integrator import flow_map


logger = get_logger("Energy Shell")


def driven_back(driving, x, tau, cfg=None):
    """Image of ``x`` under the inverse of the forward driving over [0, tau]"""
    return flow_map(driving, x, tau, 0.0, cfg)


def section_residual(inner, driving, x, tau, energy, energy_prime, cfg=None):
    """(H(x) - E', H(x driven back by tau) - E).

    Both vanish when x lies on the E'-shell and its driven pre-image on the E-shell.
    """
    x = as_coords(x, inner.dof)
    first = inner.value(x) - energy_prime
    second = inner.value(driven_back(driving, x, tau, cfg)) - energy
    return first, second


def shell_center(inner, guess=None):
    """Minimum of the inner Hamiltonian, the origin of the polar shell parameterization"""
    if inner.dof != 1:
        raise ValueError("Polar shell parameterization needs one degree of freedom")
    start = np.zeros(2) if guess is None else as_coords(guess, 1)
    result = minimize(inner.value, start, jac=inner.gradient, method="BFGS", options={"gtol": 1e-12})
    return np.asarray(result.x, dtype=float)


class EnergyShell:
    """The closed curve H(x) = E of a one degree of freedom system, as x(theta) around ``center``"""

    def __init__(self, inner, energy, center=None, r_max=1e3):
        if inner.dof != 1:
            raise ValueError("EnergyShell needs one degree of freedom")
        self.inner = inner
        self.energy = float(energy)
        self.center = shell_center(inner) if center is None else as_coords(center, 1)
        self.r_max = float(r_max)
        if inner.value(self.center) >= self.energy:
            raise DomainError(
                f"Energy {self.energy} is not above the minimum {inner.value(self.center):.6g} of {inner.name}",
                energy=self.energy
            )

    @staticmethod
    def direction(theta):
        return np.array([np.cos(theta), np.sin(theta)])

    def radius(self, theta):
        direction = self.direction(theta)

        def excess(r_val):
            return self.inner.value(self.center + r_val * direction) - self.energy

        r_hi = 1.0
        while excess(r_hi) < 0:
            r_hi *= 2
            if r_hi > self.r_max:
                raise DomainError(f"Shell E={self.energy} is unbounded along angle {theta:.6g}", energy=self.energy)
        return brentq(excess, 0.0, r_hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)

    def point(self, theta):
        return self.center + self.radius(theta) * self.direction(theta)

    def points(self, thetas):
        return np.array([self.point(theta) for theta in np.atleast_1d(thetas)])

    def enclosed_area(self, n_theta=512):
        """Phase space area inside the shell, by the trapezoid rule on the periodic angle"""
        thetas = np.linspace(0.0, 2 * np.pi, n_theta, endpoint=False)
        radii = np.array([self.radius(theta) for theta in thetas])
        return float(0.5 * np.sum(radii ** 2) * (2 * np.pi / n_theta))


class DrivenShellScan:
    """Values of H(driving^{-tau} y) - E over the E'-shell points y(theta).

    The back driven points are computed once per (E', tau), so many E values can
    be scanned on the same grid of angles.
    """

    def __init__(self, inner, driving, energy_prime, tau, cfg=None, n_theta=256, center=None):
        self.inner = inner
        self.driving = driving
        self.tau = float(tau)
        self.cfg = cfg
        self.shell = EnergyShell(inner, energy_prime, center=center)
        self.thetas = np.linspace(0.0, 2 * np.pi, n_theta, endpoint=False)
        self.points = self.shell.points(self.thetas)
        self.driven_values = inner.value(driven_back(driving, self.points, self.tau, cfg))

    @property
    def spacing(self):
        return 2 * np.pi / len(self.thetas)

    def driven_value(self, theta):
        return self.inner.value(driven_back(self.driving, self.shell.point(theta), self.tau, self.cfg))

    def overlap(self, energy):
        """Positive when the driven E-shell crosses the E'-shell, negative when they are apart"""
        values = self.driven_values - energy
        return float(min(np.max(values), -np.min(values)))

    def roots(self, energy, xtol=1e-13):
        """Angles theta at which the back driven E'-shell point lies on the E-shell"""
        values = self.driven_values - energy
        n_theta = len(values)
        roots = []
        for idx in range(n_theta):
            nxt = (idx + 1) % n_theta
            if values[idx] == 0.0:
                roots.append(self.thetas[idx])
                continue
            if values[idx] * values[nxt] >= 0:
                continue
            lo = self.thetas[idx]
            hi = lo + self.spacing
            roots.append(brentq(lambda theta: self.driven_value(theta) - energy, lo, hi, xtol=xtol) % (2 * np.pi))
        return roots

    def near_tangent(self, energy):
        """Angles of grid local extrema of the driven values that come within one grid step of the level"""
        values = self.driven_values - energy
        prev_vals, next_vals = np.roll(values, 1), np.roll(values, -1)
        extremum = ((values - prev_vals) * (next_vals - values)) <= 0
        step_scale = np.maximum(np.abs(next_vals - values), np.abs(values - prev_vals))
        close = np.abs(values) <= step_scale
        return self.thetas[extremum & close]
