"""Closed compound orbits: four joined segments driving(+tau), inner(+t'), driving(-tau), inner(-t).

The driving legs run over the physical driving times, [0, tau] forward and
[tau, 0] backward, so the third leg is the exact inverse of the first one even
for a time dependent driving.
"""
import os
import sys
MODULE_PATH = os.path.abspath(f"{os.path.split(__file__)[0]}/..")
if sys.path[0] != MODULE_PATH: sys.path.insert(0, MODULE_PATH)

import numpy as np
from numpy.polynomial.legendre import leggauss

from base import TransitionError
from utils import get_logger
from constants.numerics import BIFURCATION_DET
from hamiltonians.systems import PhaseSpacePoint, SymplecticForm, as_coords, hamiltonian_vector_field
from dynamics.integrator import IntegratorConfig, integrate


logger = get_logger("Compound Orbit")


class ClosureError(TransitionError):
    stage = "cco"


class NearBifurcationError(ClosureError):
    pass


def compound_segments(inner, driving, x_start, times, cfg=None):
    """The four segments of the compound circuit started at ``x_start``"""
    t_val, t_prime, tau = times
    first = integrate(driving, x_start, 0.0, tau, cfg)
    second = integrate(inner, first.end, 0.0, t_prime, cfg)
    third = integrate(driving, second.end, tau, 0.0, cfg)
    fourth = integrate(inner, third.end, 0.0, -t_val, cfg)
    return [first, second, third, fourth]


def _turning_points(segment):
    if len(segment.times) < 2:
        return 0
    q_dot = hamiltonian_vector_field(segment.generator, segment.states)[:, segment.dof]
    signs = np.sign(q_dot[np.abs(q_dot) > 1e-12])
    return int(np.sum(signs[1:] != signs[:-1]))


class CompoundOrbit:
    """A (possibly not yet closed) compound circuit and its action and stability data.

    Built either from the four integrated segments or, when read back from a
    record, from the stored summary values only (``segments`` is None then).
    """

    def __init__(self, x_start, times, segments=None, maslov_sigma=0, **summary):
        self.x_start = x_start if isinstance(x_start, PhaseSpacePoint) else PhaseSpacePoint(x_start)
        self.times = tuple(float(val) for val in times)
        self.segments = segments
        self.maslov_sigma = int(maslov_sigma)
        if segments is not None:
            self._summarize(segments)
        else:
            self.closure_residual = float(summary["closure_residual"])
            self.action_total = float(summary["action_total"])
            self.monodromy_compound = np.asarray(summary["monodromy_compound"], dtype=float)
            self.E = float(summary["E"])
            self.E_prime = float(summary["E_prime"])
            self.winding = tuple(summary["winding"])
            self.driving_integral = float(summary["driving_integral"])
            self.area = float(summary["area"])

    def _summarize(self, segments):
        first, second, third, fourth = segments
        self.closure_residual = float(np.linalg.norm(fourth.end - self.x_start.coords))
        self.action_total = float(sum(seg.action for seg in segments))
        self.monodromy_compound = fourth.monodromy @ third.monodromy @ second.monodromy @ first.monodromy
        self.E = float(fourth.energy_start)
        self.E_prime = float(second.energy_start)
        self.winding = ((_turning_points(fourth) + 1) // 2, (_turning_points(second) + 1) // 2)
        self.driving_integral = first.energy_integral + third.energy_integral
        self.area = float(sum(seg.area_integral for seg in segments))

    @property
    def t(self):
        return self.times[0]

    @property
    def t_prime(self):
        return self.times[1]

    @property
    def tau(self):
        return self.times[2]

    @property
    def dof(self):
        return self.x_start.dof

    @property
    def det_i_minus_m(self):
        dim = self.monodromy_compound.shape[0]
        return float(np.linalg.det(np.eye(dim) - self.monodromy_compound))

    @property
    def energy_action(self):
        """Action as a function of the energies: S(t, t') + E' t' - E t"""
        return self.action_total + self.E_prime * self.t_prime - self.E * self.t

    @property
    def quadrilateral_area(self):
        """Integral of p.dq around the whole circuit"""
        return self.area

    def factorization_error(self):
        """Deviation of the stored compound monodromy from the product of the segment monodromies"""
        if self.segments is None:
            raise ValueError("Orbit was loaded from a record and carries no segments")
        first, second, third, fourth = self.segments
        product = fourth.monodromy @ third.monodromy @ second.monodromy @ first.monodromy
        return float(np.max(np.abs(product - self.monodromy_compound)))

    def symplectic_defect(self):
        return SymplecticForm(self.dof).violation(self.monodromy_compound)

    def energy_drifts(self):
        """Energy variation of the inner system along the two inner segments"""
        if self.segments is None:
            raise ValueError("Orbit was loaded from a record and carries no segments")
        return self.segments[1].energy_drift(), self.segments[3].energy_drift()

    def to_json(self):
        return {
            "x_start": self.x_start.to_json(),
            "times": list(self.times),
            "closure_residual": self.closure_residual,
            "action_total": self.action_total,
            "energy_action": self.energy_action,
            "monodromy_compound": self.monodromy_compound.tolist(),
            "det_i_minus_m": self.det_i_minus_m,
            "E": self.E,
            "E_prime": self.E_prime,
            "winding": list(self.winding),
            "maslov_sigma": self.maslov_sigma,
            "driving_integral": self.driving_integral,
            "area": self.area,
        }

    @classmethod
    def from_json(cls, json_obj):
        summary = {key: json_obj[key] for key in (
            "closure_residual", "action_total", "monodromy_compound", "E", "E_prime", "winding",
            "driving_integral", "area"
        )}
        return cls(json_obj["x_start"], json_obj["times"], maslov_sigma=json_obj["maslov_sigma"], **summary)

    def __repr__(self):
        return (f"CompoundOrbit(t={self.t:.6g}, t'={self.t_prime:.6g}, tau={self.tau:.6g}, E={self.E:.6g}, "
                f"E'={self.E_prime:.6g}, S={self.action_total:.6g}, residual={self.closure_residual:.2e})")


def build_orbit(inner, driving, x_start, times, cfg=None, maslov_sigma=0):
    x_start = as_coords(x_start, inner.dof)
    segments = compound_segments(inner, driving, x_start, times, cfg)
    return CompoundOrbit(x_start, times, segments=segments, maslov_sigma=maslov_sigma)


def close_cco(inner, driving, guess, times, cfg=None, tol=1e-10, max_iter=30, bifurcation_det=BIFURCATION_DET):
    """Fixed point of the compound map at fixed (t, t', tau) by full Newton iteration.

    The Jacobian of x -> map(x) - x is M - I with M the compound monodromy of
    the current iterate.
    """
    cfg = cfg or IntegratorConfig()
    x_vec = as_coords(guess, inner.dof)
    dim = x_vec.shape[-1]
    residual = np.inf
    for iteration in range(max_iter + 1):
        orbit = build_orbit(inner, driving, x_vec, times, cfg)
        residual = orbit.closure_residual
        if residual < tol:
            logger.debug("Closed orbit at %s after %d Newton steps, residual %.2e", times, iteration, residual)
            return orbit
        if iteration == max_iter or not np.isfinite(residual):
            break

        jac = orbit.monodromy_compound - np.eye(dim)
        det = np.linalg.det(jac)
        if abs(det) < bifurcation_det:
            raise NearBifurcationError(
                f"|det(M - I)| = {abs(det):.3e} at times {times}: the orbit family bifurcates here",
                det=det, times=times, point=x_vec.tolist(), residual=residual
            )
        mismatch = orbit.segments[3].end - x_vec
        x_vec = x_vec - np.linalg.solve(jac, mismatch)

    raise ClosureError(
        f"Compound orbit at times {times} did not close, last residual {residual:.3e}",
        times=times, residual=residual, point=x_vec.tolist()
    )


def winding(orbit):
    """(j, j'): half the number of turning points of the first coordinate along the inner segments, rounded up"""
    return orbit.winding


def driven_segment_action_parts(orbit, cfg=None, n_nodes=64):
    """Actions entering the Poincare-Cartan balance of the driven image of the fourth segment.

    The tube of driving trajectories started on the fourth segment is bounded by
    that segment, the first and third driving legs, and the image of the segment
    under the forward driving. The integral of p.dq along the image therefore
    equals the one along the fourth segment plus the actions of the two legs.

    The image integral is a Gauss-Legendre sum over the time of the fourth
    segment, with the image tangent transported by the driving monodromy.
    """
    if orbit.segments is None:
        raise ValueError("Orbit was loaded from a record and carries no segments")
    cfg = cfg or IntegratorConfig()
    first, _, third, fourth = orbit.segments
    dof = orbit.dof

    if len(fourth.times) < 2 or orbit.tau == 0.0:
        image_area = fourth.area_integral
    else:
        fine = cfg.tightened(10.0)
        inner = fourth.generator
        nodes, weights = leggauss(n_nodes)
        half = 0.5 * (fourth.t_end - fourth.t_start)
        times = fourth.t_start + half * (nodes + 1.0)
        image_area = 0.0
        for time, weight in zip(times, weights):
            point = integrate(inner, fourth.start, fourth.t_start, time, fine).end
            image = integrate(first.generator, point, 0.0, orbit.tau, fine)
            tangent = image.monodromy @ hamiltonian_vector_field(inner, point, time)
            image_area += half * weight * float(image.end[:dof] @ tangent[dof:])

    return {
        "image_area": image_area,
        "inner_area": fourth.area_integral,
        "inner_action": fourth.action,
        "first_leg_action": first.action,
        "third_leg_action": third.action,
    }


def driven_segment_action_check(orbit, cfg=None, n_nodes=64):
    """Discrepancy of the Poincare-Cartan balance for the driven image of the fourth segment"""
    parts = driven_segment_action_parts(orbit, cfg, n_nodes)
    expected = parts["inner_area"] + parts["first_leg_action"] + parts["third_leg_action"]
    return abs(parts["image_area"] - expected)
