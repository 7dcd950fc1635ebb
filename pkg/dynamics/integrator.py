"""Integration of Hamiltonian flows together with action and monodromy.

The integrated state is the phase space point, the monodromy matrix flattened
row by row, the action and the time integral of the generator, joined in one
vector. Negative durations are
integrated in the reversed time s = sign * (t - t0), so that every solver runs
forward and the stored times are the physical ones.
"""
import os
import sys
from math import ceil, sqrt
MODULE_PATH = os.path.abspath(f"{os.path.split(__file__)[0]}/..")
if sys.path[0] != MODULE_PATH: sys.path.insert(0, MODULE_PATH)

import numpy as np
from scipy.integrate import DOP853
from scipy.interpolate import CubicHermiteSpline

from base import TransitionError
from utils import get_logger
from hamiltonians.systems import as_coords, symplectic_form, hamiltonian_vector_field, SymplecticForm


logger = get_logger("Integrator")

METHODS = ("adaptive", "symplectic")

# Butcher tableau of the two stage Gauss-Legendre collocation method.
_GL_A = np.array([[0.25, 0.25 - sqrt(3) / 6], [0.25 + sqrt(3) / 6, 0.25]])
_GL_B = np.array([0.5, 0.5])
_GL_C = np.array([0.5 - sqrt(3) / 6, 0.5 + sqrt(3) / 6])
_GL_MAX_ITER = 100


class IntegrationError(TransitionError):
    """Integration stopped before reaching the final time. ``partial`` holds the segment so far"""

    stage = "dynamics"

    def __init__(self, message, partial=None, **diagnostics):
        super().__init__(message, **diagnostics)
        self.partial = partial


class BlowUpError(IntegrationError):
    pass


class IntegratorConfig:
    def __init__(self, method="adaptive", abs_tol=1e-10, rel_tol=1e-10, max_step=np.inf, max_steps=100000):
        if method not in METHODS:
            raise ValueError(f"Unknown integration method '{method}', choose from {METHODS}")
        if abs_tol <= 0 or rel_tol <= 0:
            raise ValueError(f"Tolerances must be positive, got abs_tol={abs_tol}, rel_tol={rel_tol}")
        if max_step is None:
            max_step = np.inf
        if method == "symplectic" and not np.isfinite(max_step):
            raise ValueError("The symplectic method needs a finite max_step, which is its step size")
        self.method = method
        self.abs_tol = float(abs_tol)
        self.rel_tol = float(rel_tol)
        self.max_step = float(max_step)
        self.max_steps = int(max_steps)

    @classmethod
    def from_settings(cls, settings):
        return cls(
            method=settings.method, abs_tol=settings.abs_tol, rel_tol=settings.rel_tol,
            max_step=settings.max_step, max_steps=settings.max_steps
        )

    @property
    def tolerance(self):
        return max(self.abs_tol, self.rel_tol)

    def tightened(self, factor=100.0, floor=1e-13):
        return IntegratorConfig(
            method=self.method, abs_tol=max(self.abs_tol / factor, floor), rel_tol=max(self.rel_tol / factor, floor),
            max_step=self.max_step, max_steps=self.max_steps * 10
        )

    def __repr__(self):
        return (f"IntegratorConfig({self.method}, abs_tol={self.abs_tol}, rel_tol={self.rel_tol}, "
                f"max_step={self.max_step}, max_steps={self.max_steps})")


class TrajectorySegment:
    """Flow of ``generator`` from t_start to t_end, with action and monodromy"""

    def __init__(self, generator, times, states, action, monodromy, energy_integral=0.0):
        self.generator = generator
        self.times = np.asarray(times, dtype=float)
        self.states = np.asarray(states, dtype=float)
        self.action = float(action)
        self.energy_integral = float(energy_integral)
        self.monodromy = np.asarray(monodromy, dtype=float)
        self.t_start = float(self.times[0])
        self.t_end = float(self.times[-1])
        self.energy_start = generator.value(self.states[0], self.t_start)
        self.energy_end = generator.value(self.states[-1], self.t_end)
        for arr in (self.times, self.states, self.monodromy):
            arr.setflags(write=False)

    @property
    def duration(self):
        return self.t_end - self.t_start

    @property
    def start(self):
        return self.states[0]

    @property
    def end(self):
        return self.states[-1]

    @property
    def dof(self):
        return self.generator.dof

    def symplectic_defect(self):
        return SymplecticForm(self.dof).violation(self.monodromy)

    @property
    def area_integral(self):
        """Integral of p.dq along the segment"""
        return self.action + self.energy_integral

    def energy_drift(self):
        return abs(self.energy_end - self.energy_start)

    def pairs(self):
        """The states as a list of (time, point)"""
        return list(zip(self.times.tolist(), self.states))

    def __repr__(self):
        return (f"TrajectorySegment({self.generator.name}, t={self.t_start:.6g}->{self.t_end:.6g}, "
                f"action={self.action:.6g}, steps={len(self.times) - 1})")


def _joint_rhs(sys_, t0, sign):
    dof = sys_.dof
    dim = 2 * dof
    jmat = symplectic_form(dof)

    def rhs(s_val, y_vec):
        time = t0 + sign * s_val
        if not np.all(np.isfinite(y_vec)):
            raise BlowUpError(f"Non finite state of {sys_.name} at t={time}", time=time)
        x_vec = y_vec[:dim]
        mono = y_vec[dim:dim + dim * dim].reshape(dim, dim)
        grad = sys_.gradient(x_vec, time)
        hess = sys_.hessian(x_vec, time)
        if not (np.all(np.isfinite(grad)) and np.all(np.isfinite(hess))):
            raise BlowUpError(f"Non finite derivatives of {sys_.name} at t={time}", time=time)
        x_dot = jmat @ grad
        m_dot = jmat @ hess @ mono
        energy = sys_.value(x_vec, time)
        lagrangian = x_dot[dof:] @ x_vec[:dof] - energy
        return sign * np.concatenate([x_dot, m_dot.ravel(), [lagrangian, energy]])

    return rhs


def _batch_rhs(sys_, t0, sign, n_points):
    dim = 2 * sys_.dof
    jmat = symplectic_form(sys_.dof)

    def rhs(s_val, y_vec):
        if not np.all(np.isfinite(y_vec)):
            raise BlowUpError(f"Non finite state in the batch of {sys_.name}")
        points = y_vec.reshape(n_points, dim)
        return sign * (sys_.gradient(points, t0 + sign * s_val) @ jmat.T).ravel()

    return rhs


def _run_adaptive(rhs, y0, s_end, cfg):
    solver = DOP853(rhs, 0.0, y0, s_end, rtol=cfg.rel_tol, atol=cfg.abs_tol, max_step=cfg.max_step)
    s_list, y_list = [0.0], [np.array(y0)]
    while solver.status == "running":
        message = solver.step()
        if solver.status == "failed":
            return s_list, y_list, f"solver failure: {message}"
        if not np.all(np.isfinite(solver.y)):
            return s_list, y_list, "blow-up"
        s_list.append(solver.t)
        y_list.append(np.array(solver.y))
        if len(s_list) - 1 >= cfg.max_steps and solver.status == "running":
            return s_list, y_list, "step-count exhaustion"
    return s_list, y_list, None


def _gauss_legendre_step(rhs, s_val, y_vec, step, tol):
    k_mat = np.stack([rhs(s_val, y_vec)] * 2)
    for _ in range(_GL_MAX_ITER):
        stages = [y_vec + step * (_GL_A[idx] @ k_mat) for idx in range(2)]
        k_new = np.stack([rhs(s_val + _GL_C[idx] * step, stages[idx]) for idx in range(2)])
        change = np.max(np.abs(k_new - k_mat)) * abs(step)
        scale = 1.0 + np.max(np.abs(k_new)) * abs(step)
        k_mat = k_new
        if change < tol * scale:
            return y_vec + step * (_GL_B @ k_mat)
    return None


def _run_symplectic(rhs, y0, s_end, cfg):
    n_steps = max(1, int(ceil(s_end / cfg.max_step - 1e-12)))
    if n_steps > cfg.max_steps:
        return [0.0], [np.array(y0)], "step-count exhaustion"
    step = s_end / n_steps
    tol = 0.01 * min(cfg.abs_tol, cfg.rel_tol)
    s_list, y_list = [0.0], [np.array(y0)]
    y_vec = np.array(y0)
    for idx in range(n_steps):
        y_new = _gauss_legendre_step(rhs, s_list[-1], y_vec, step, tol)
        if y_new is None:
            return s_list, y_list, "implicit stage iteration did not converge"
        if not np.all(np.isfinite(y_new)):
            return s_list, y_list, "blow-up"
        y_vec = y_new
        s_list.append((idx + 1) * step)
        y_list.append(y_vec)
    return s_list, y_list, None


def _solve(rhs, y0, duration, cfg):
    s_end = abs(duration)
    if cfg.method == "adaptive":
        return _run_adaptive(rhs, y0, s_end, cfg)
    return _run_symplectic(rhs, y0, s_end, cfg)


def integrate(sys_, x0, t0, t1, cfg=None):
    """Integrate ``sys_`` from ``x0`` at time t0 to time t1 (either order).

    Returns a TrajectorySegment whose monodromy solves dM/dt = J Hess M with
    M(t0) = I and whose action is the integral of p.dq - K dt.
    """
    cfg = cfg or IntegratorConfig()
    dof = sys_.dof
    dim = 2 * dof
    x0 = as_coords(x0, dof)
    t0, t1 = float(t0), float(t1)
    y0 = np.concatenate([x0, np.eye(dim).ravel(), [0.0, 0.0]])
    if t1 == t0:
        return _to_segment(sys_, [t0], [y0], dim)

    sign = 1.0 if t1 > t0 else -1.0
    rhs = _joint_rhs(sys_, t0, sign)
    try:
        s_list, y_list, failure = _solve(rhs, y0, t1 - t0, cfg)
    except BlowUpError as err:
        raise BlowUpError(str(err), system=sys_.name, t_start=t0, t_end=t1) from err

    if failure is not None:
        times = [t0 + sign * s_val for s_val in s_list]
        partial = _to_segment(sys_, times, y_list, dim) if np.all(np.isfinite(y_list[-1])) else None
        err_cls = BlowUpError if failure == "blow-up" else IntegrationError
        logger.debug("Integration of %s stopped at t=%s: %s", sys_.name, times[-1], failure)
        raise err_cls(
            f"Integration of {sys_.name} from t={t0} to t={t1} stopped at t={times[-1]}: {failure}",
            partial=partial, system=sys_.name, t_start=t0, t_end=t1, t_reached=times[-1], steps=len(times) - 1
        )

    # Land exactly on the requested end time.
    times = [t0 + sign * s_val for s_val in s_list]
    times[-1] = t1
    return _to_segment(sys_, times, y_list, dim)


def _to_segment(sys_, times, y_list, dim):
    y_arr = np.asarray(y_list)
    states = y_arr[:, :dim]
    monodromy = y_arr[-1, dim:dim + dim * dim].reshape(dim, dim)
    return TrajectorySegment(sys_, times, states, y_arr[-1, -2], monodromy, energy_integral=y_arr[-1, -1])


def flow_map(sys_, x0, t0, t1, cfg=None):
    """Endpoint of the flow. ``x0`` may hold a batch of points of shape (n, 2N)"""
    cfg = cfg or IntegratorConfig()
    points = as_coords(x0, sys_.dof)
    if points.ndim == 1:
        return integrate(sys_, points, t0, t1, cfg).end
    if t1 == t0:
        return points

    n_points = points.shape[0]
    sign = 1.0 if t1 > t0 else -1.0
    rhs = _batch_rhs(sys_, float(t0), sign, n_points)
    s_list, y_list, failure = _solve(rhs, points.ravel(), t1 - t0, cfg)
    if failure is not None:
        raise IntegrationError(
            f"Batch integration of {sys_.name} ({n_points} points) stopped: {failure}",
            system=sys_.name, t_start=t0, t_end=t1, steps=len(s_list) - 1
        )
    return y_list[-1].reshape(n_points, 2 * sys_.dof)


def transport_velocity(segment, vec):
    """Monodromy of the segment applied to a tangent vector"""
    vec = np.asarray(vec, dtype=float)
    if vec.shape[-1] != 2 * segment.dof:
        raise ValueError(f"Tangent vector of length {vec.shape[-1]} for a {2 * segment.dof} dimensional space")
    return segment.monodromy @ vec


def resample(segment, n_points):
    """States at ``n_points`` equally spaced times, by Hermite interpolation of the stored steps"""
    if len(segment.times) < 2:
        return np.repeat(segment.times, n_points), np.repeat(segment.states, n_points, axis=0)

    order = np.argsort(segment.times)
    times = segment.times[order]
    states = segment.states[order]
    slopes = np.array([hamiltonian_vector_field(segment.generator, state, time) for time, state in zip(times, states)])
    spline = CubicHermiteSpline(times, states, slopes, axis=0)
    grid = np.linspace(segment.t_start, segment.t_end, n_points)
    return grid, spline(grid)
