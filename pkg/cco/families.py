"""Families of closed compound orbits: thin edges grown from a seed, continuation and interior sheets."""
import os
import sys
from math import ceil
MODULE_PATH = os.path.abspath(f"{os.path.split(__file__)[0]}/..")
if sys.path[0] != MODULE_PATH: sys.path.insert(0, MODULE_PATH)

import numpy as np
from tqdm import tqdm

from base import TransitionError
from utils import get_logger, progress_disabled
from hamiltonians.systems import hamiltonian_vector_field
from dynamics.integrator import IntegratorConfig, IntegrationError, integrate
from constants.numerics import DEGENERATE_EIGENVALUE
from seeds.finder import Seed, bracket_hessian
from cco.orbits import CompoundOrbit, ClosureError, NearBifurcationError, build_orbit, close_cco


logger = get_logger("CCO Family")

PARAMETERIZATIONS = ("t-edge", "tau-edge", "interior-sheet")


class DegenerateFamilyError(TransitionError):
    stage = "cco"


class ContinuationStalledError(TransitionError):
    stage = "cco"

    def __init__(self, message, last_good=None, family=None, **diagnostics):
        super().__init__(message, **diagnostics)
        self.last_good = last_good
        self.family = family


class CausticInEnergyError(TransitionError):
    stage = "cco"


class _ThinSolveError(TransitionError):
    stage = "cco"


class _SingularThinJacobian(_ThinSolveError):
    pass


class CCOFamily:
    """Ordered compound orbits along a continuation path, or on a (t, t') lattice for interior sheets"""

    def __init__(self, inner, driving, seed, parameterization, members=None):
        if parameterization not in PARAMETERIZATIONS:
            raise ValueError(f"Unknown parameterization '{parameterization}', choose from {PARAMETERIZATIONS}")
        self.inner = inner
        self.driving = driving
        self.seed = seed
        self.parameterization = parameterization
        self.members = list(members or [])
        self.lattice = {}
        self.t_values = None
        self.t_prime_values = None
        self.diagnostics = {"bifurcations": [], "truncated": None, "holes": []}

    def __len__(self):
        return len(self.members)

    def append(self, member, lattice_index=None):
        self.members.append(member)
        if lattice_index is not None:
            self.lattice[tuple(lattice_index)] = len(self.members) - 1

    def parameters(self):
        return np.array([member.times for member in self.members])

    def energies(self):
        return np.array([[member.E, member.E_prime] for member in self.members])

    def lattice_index(self, member_index):
        for key, val in self.lattice.items():
            if val == member_index:
                return key
        return None

    def to_json(self):
        return {
            "seed": None if self.seed is None else self.seed.to_json(),
            "parameterization": self.parameterization,
            "inner": self.inner.source,
            "driving": self.driving.source,
            "members": [member.to_json() for member in self.members],
            "lattice": [[idx, jdx, pos] for (idx, jdx), pos in sorted(self.lattice.items())],
            "t_values": None if self.t_values is None else [float(val) for val in self.t_values],
            "t_prime_values": None if self.t_prime_values is None else [float(val) for val in self.t_prime_values],
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_json(cls, json_obj, inner, driving):
        seed = None if json_obj["seed"] is None else Seed.from_json(json_obj["seed"])
        members = [CompoundOrbit.from_json(member) for member in json_obj["members"]]
        family = cls(inner, driving, seed, json_obj["parameterization"], members=members)
        family.lattice = {(idx, jdx): pos for idx, jdx, pos in json_obj["lattice"]}
        if json_obj["t_values"] is not None:
            family.t_values = np.array(json_obj["t_values"])
            family.t_prime_values = np.array(json_obj["t_prime_values"])
        family.diagnostics = json_obj["diagnostics"]
        return family

    def __repr__(self):
        return f"CCOFamily({self.parameterization}, {len(self.members)} members)"


def thin_t_residual(inner, driving, x, t_val, cfg=None):
    """(L-velocity at H-flow(t) x  -  M(x, t) L-velocity at x) / t"""
    seg = integrate(inner, x, 0.0, t_val, cfg)
    v_end = hamiltonian_vector_field(driving, seg.end, 0.0)
    v_start = hamiltonian_vector_field(driving, seg.start, 0.0)
    return (v_end - seg.monodromy @ v_start) / t_val


def thin_tau_residual(inner, driving, x, tau, cfg=None):
    """(H-velocity at L-flow(tau) x  -  Gamma(x, tau) H-velocity at x) / tau"""
    seg = integrate(driving, x, 0.0, tau, cfg)
    v_end = hamiltonian_vector_field(inner, seg.end)
    v_start = hamiltonian_vector_field(inner, seg.start)
    return (v_end - seg.monodromy @ v_start) / tau


def _fd_jacobian(func, x_vec, rel_step=1e-5):
    step = rel_step * (1.0 + np.linalg.norm(x_vec))
    cols = []
    for idx in range(len(x_vec)):
        shift = np.zeros(len(x_vec))
        shift[idx] = step
        cols.append((func(x_vec + shift) - func(x_vec - shift)) / (2 * step))
    return np.stack(cols, axis=-1)


def _solve_thin(func, guess, tol, max_iter, check_degenerate=False):
    x_vec = np.array(guess, dtype=float)
    residual = np.inf
    for iteration in range(max_iter + 1):
        res_vec = func(x_vec)
        residual = float(np.linalg.norm(res_vec))
        if residual < tol and not (check_degenerate and iteration == 0):
            return x_vec, residual
        jac = _fd_jacobian(func, x_vec)
        sing = np.linalg.svd(jac, compute_uv=False)
        if check_degenerate and iteration == 0 and sing[0] < 1e-10:
            raise DegenerateFamilyError(
                "The thin family condition is satisfied by a continuum of points: the flows commute identically",
                point=x_vec.tolist()
            )
        if residual < tol:
            return x_vec, residual
        if iteration == max_iter:
            break
        if sing[-1] < 1e-10 * sing[0]:
            raise _SingularThinJacobian(f"Singular Jacobian of the thin condition at {x_vec.tolist()}")
        x_vec = x_vec - np.linalg.solve(jac, res_vec)
    raise _ThinSolveError(f"Thin family Newton did not converge, last residual {residual:.3e}", residual=residual)


def _grow_thin(inner, driving, seed, param_max, step, cfg, tol, max_iter, edge):
    if seed.degenerate:
        raise DegenerateFamilyError(f"Seed {seed} is degenerate and does not seed a family", seed=seed.to_json())
    if np.max(np.abs(bracket_hessian(inner, driving, seed.point.coords))) < DEGENERATE_EIGENVALUE:
        raise DegenerateFamilyError(
            "The bracket {H, L} vanishes to second order around the seed: the flows commute identically",
            seed=seed.to_json()
        )
    cfg = cfg or IntegratorConfig()
    family = CCOFamily(inner, driving, seed, edge)
    residual_fn = thin_t_residual if edge == "t-edge" else thin_tau_residual
    n_rungs = max(1, int(ceil(param_max / step - 1e-9)))
    ladder = np.minimum(step * np.arange(1, n_rungs + 1), param_max)

    history = [seed.point.coords]
    for rung, value in enumerate(tqdm(ladder, desc=f"Growing {edge} family", disable=progress_disabled(), leave=False)):
        guess = history[-1] if len(history) < 2 else 2 * history[-1] - history[-2]
        try:
            x_vec, residual = _solve_thin(
                lambda pt, val=value: residual_fn(inner, driving, pt, val, cfg), guess, tol, max_iter,
                check_degenerate=(rung == 0)
            )
        except _SingularThinJacobian as err:
            logger.warning("Bifurcation of the %s family at %.6g: %s", edge, value, err)
            family.diagnostics["bifurcations"].append({"parameter": float(value), "reason": str(err)})
            family.diagnostics["truncated"] = f"singular Jacobian at {value:.6g}"
            break
        except (_ThinSolveError, IntegrationError) as err:
            logger.warning("The %s family is truncated at %.6g: %s", edge, value, err)
            family.diagnostics["truncated"] = f"Newton divergence at {value:.6g}: {err}"
            break

        times = (value, value, 0.0) if edge == "t-edge" else (0.0, 0.0, value)
        member = build_orbit(inner, driving, x_vec, times, cfg)
        family.append(member)
        history.append(x_vec)
        logger.debug("%s member at %.6g: E=%.8g, E'=%.8g, residual %.2e", edge, value, member.E, member.E_prime, residual)
    logger.info("Grew %s family with %d members", edge, len(family))
    return family


def grow_thin_t_family(inner, driving, seed, t_max, step, cfg=None, tol=1e-9, max_iter=30):
    """Members (t, t, 0) solving L-velocity(H-flow(t) x) = M(x, t) L-velocity(x), from t=step up to t_max"""
    return _grow_thin(inner, driving, seed, t_max, step, cfg, tol, max_iter, "t-edge")


def grow_thin_tau_family(inner, driving, seed, tau_max, step, cfg=None, tol=1e-9, max_iter=30):
    """Members (0, 0, tau) solving H-velocity(L-flow(tau) x) = Gamma(x, tau) H-velocity(x)"""
    return _grow_thin(inner, driving, seed, tau_max, step, cfg, tol, max_iter, "tau-edge")


def _det_sign(orbit):
    det = orbit.det_i_minus_m
    return 0 if abs(det) < 1e-14 else int(np.sign(det))


def _corrector(inner, driving, params, guess, cfg, tol, max_iter, mode, sigma):
    t_val, t_prime, tau = params
    if mode == "tau-edge":
        x_vec, _ = _solve_thin(lambda pt: thin_tau_residual(inner, driving, pt, tau, cfg), guess, tol, max_iter)
        return build_orbit(inner, driving, x_vec, (0.0, 0.0, tau), cfg, maslov_sigma=sigma)
    if mode == "t-edge":
        x_vec, _ = _solve_thin(lambda pt: thin_t_residual(inner, driving, pt, t_val, cfg), guess, tol, max_iter)
        return build_orbit(inner, driving, x_vec, (t_val, t_val, 0.0), cfg, maslov_sigma=sigma)
    orbit = close_cco(inner, driving, guess, (t_val, t_prime, tau), cfg, tol=tol, max_iter=max_iter)
    orbit.maslov_sigma = sigma
    return orbit


def _path_mode(start, target):
    if start[0] == start[1] == target[0] == target[1] == 0.0:
        return "tau-edge"
    if start[2] == target[2] == 0.0 and start[0] == start[1] and target[0] == target[1]:
        return "t-edge"
    return "interior-sheet"


class _SigmaTracker:
    def __init__(self, orbit):
        self.sigma = orbit.maslov_sigma
        self.sign = _det_sign(orbit)

    def update(self, orbit, diagnostics):
        sign = _det_sign(orbit)
        if sign != 0 and self.sign != 0 and sign != self.sign:
            self.sigma += 1
            logger.info("det(I - M) changes sign near %s, sigma -> %d", orbit.times, self.sigma)
            diagnostics["bifurcations"].append({"times": list(orbit.times), "reason": "det(I - M) sign change"})
        if sign != 0:
            self.sign = sign
        orbit.maslov_sigma = self.sigma
        return orbit


def continue_family(family, target, cfg=None, step=0.05, min_step=1e-5, tol=1e-10, max_iter=30, max_jump=0.5):
    """Predictor-corrector continuation from the last member straight towards ``target`` = (t, t', tau).

    The predictor extrapolates the starting point linearly along the path; the
    corrector is the thin condition while the path stays on an edge and the
    closure Newton iteration otherwise. Failed steps are halved.
    """
    cfg = cfg or IntegratorConfig()
    if len(family) == 0:
        raise ValueError("Cannot continue an empty family")
    inner, driving = family.inner, family.driving
    start = family.members[-1]
    origin = np.array(start.times)
    target = np.asarray(target, dtype=float)
    length = float(np.linalg.norm(target - origin))
    mode = _path_mode(origin, target)
    result = CCOFamily(inner, driving, family.seed,
                       family.parameterization if mode == family.parameterization else mode,
                       members=family.members)
    result.diagnostics = {key: (list(val) if isinstance(val, list) else val) for key, val in family.diagnostics.items()}
    if length == 0.0:
        return result

    direction = (target - origin) / length
    tracker = _SigmaTracker(start)
    history = [(0.0, start.x_start.coords)]
    arc, h_step = 0.0, min(step, length)
    while arc < length - 1e-14:
        h_step = min(h_step, length - arc)
        arc_try = arc + h_step
        params = origin + arc_try * direction
        if arc_try >= length - 1e-14:
            params = target
        if len(history) >= 2:
            (s_0, x_0), (s_1, x_1) = history[-2], history[-1]
            guess = x_1 + (x_1 - x_0) * (arc_try - s_1) / (s_1 - s_0)
        else:
            guess = history[-1][1]

        try:
            member = _corrector(inner, driving, params, guess, cfg, tol, max_iter, mode, tracker.sigma)
            jump = np.linalg.norm(member.x_start.coords - history[-1][1])
            if jump > max_jump:
                raise ClosureError(f"Corrector jumped by {jump:.3g} to another branch")
        except NearBifurcationError as err:
            result.diagnostics["bifurcations"].append({"times": list(params), "reason": str(err)})
            member = None
        except (ClosureError, _ThinSolveError, IntegrationError, np.linalg.LinAlgError) as err:
            logger.debug("Continuation step %.3g to %s failed: %s", h_step, params, err)
            member = None

        if member is None:
            h_step /= 2
            if h_step < min_step:
                result.diagnostics["truncated"] = f"step underflow near {params.tolist()}"
                raise ContinuationStalledError(
                    f"Continuation stalled near {params.tolist()} with step {h_step:.3g}",
                    last_good=result.members[-1], family=result, times=params.tolist()
                )
            continue

        result.append(tracker.update(member, result.diagnostics))
        history.append((arc_try, member.x_start.coords))
        arc = arc_try
        h_step = min(1.5 * h_step, step)
    logger.info("Continued family to %s, %d members", target.tolist(), len(result))
    return result


def grow_sheet(inner, driving, start, t_values, t_prime_values, tau, cfg=None, tol=1e-10, max_iter=30, max_jump=0.5):
    """Interior sheet on the (t, t') lattice at fixed tau, visited row by row in alternating direction.

    Every node is closed from the previous one, with a linear predictor along
    the current row. Nodes that fail to close are left as holes of the lattice.
    """
    cfg = cfg or IntegratorConfig()
    t_values = np.asarray(t_values, dtype=float)
    t_prime_values = np.asarray(t_prime_values, dtype=float)
    seed = getattr(start, "seed", None)
    family = CCOFamily(inner, driving, seed, "interior-sheet")
    family.t_values, family.t_prime_values = t_values, t_prime_values

    tracker = _SigmaTracker(start)
    last_x = start.x_start.coords
    row_history = []
    order = []
    for idx in range(len(t_values)):
        cols = range(len(t_prime_values)) if idx % 2 == 0 else reversed(range(len(t_prime_values)))
        order.extend((idx, jdx) for jdx in cols)

    prev_row = None
    for idx, jdx in tqdm(order, desc="Growing interior sheet", disable=progress_disabled(), leave=False):
        if idx != prev_row:
            row_history = []
            prev_row = idx
        guess = last_x
        if len(row_history) >= 2:
            guess = 2 * row_history[-1] - row_history[-2]
        times = (t_values[idx], t_prime_values[jdx], tau)
        try:
            orbit = close_cco(inner, driving, guess, times, cfg, tol=tol, max_iter=max_iter)
            if np.linalg.norm(orbit.x_start.coords - last_x) > max_jump:
                raise ClosureError(f"Closure at {times} jumped to another branch")
        except (ClosureError, IntegrationError, np.linalg.LinAlgError) as err:
            logger.debug("Sheet node %s left open: %s", times, err)
            family.diagnostics["holes"].append([int(idx), int(jdx)])
            if isinstance(err, NearBifurcationError):
                family.diagnostics["bifurcations"].append({"times": list(times), "reason": str(err)})
            row_history = []
            continue
        family.append(tracker.update(orbit, family.diagnostics), lattice_index=(idx, jdx))
        last_x = orbit.x_start.coords
        row_history.append(last_x)
    logger.info(
        "Interior sheet at tau=%.6g: %d closed orbits, %d holes", tau, len(family), len(family.diagnostics["holes"])
    )
    return family


def _energy_derivative(family, idx, jdx, axis, scheme):
    values = family.t_values if axis == 0 else family.t_prime_values

    def member_at(i_val, j_val):
        pos = family.lattice.get((i_val, j_val))
        return None if pos is None else family.members[pos]

    def offset(delta):
        i_val, j_val = (idx + delta, jdx) if axis == 0 else (idx, jdx + delta)
        k_val = i_val if axis == 0 else j_val
        if k_val < 0 or k_val >= len(values):
            return None, None
        return member_at(i_val, j_val), values[k_val]

    center, c_val = offset(0)
    upper, u_val = offset(1)
    lower, l_val = offset(-1)
    if scheme == "centered" and upper is not None and lower is not None:
        pair = (upper, u_val, lower, l_val)
    elif scheme in ("centered", "forward") and upper is not None:
        pair = (upper, u_val, center, c_val)
    elif scheme in ("centered", "backward") and lower is not None:
        pair = (center, c_val, lower, l_val)
    else:
        raise ValueError(f"Member at lattice node {(idx, jdx)} lacks neighbours for {scheme} differences")
    hi_m, hi_v, lo_m, lo_v = pair
    return np.array([hi_m.E - lo_m.E, hi_m.E_prime - lo_m.E_prime]) / (hi_v - lo_v)


def energy_jacobian(family, member_index, scheme="centered"):
    """d(E, E')/d(t, t') of a sheet member by finite differences over the lattice"""
    if family.parameterization != "interior-sheet" or family.t_values is None:
        raise ValueError("Energy Jacobians need a two parameter interior sheet")
    node = family.lattice_index(member_index)
    if node is None:
        raise ValueError(f"Member {member_index} is not on the lattice")
    d_t = _energy_derivative(family, node[0], node[1], 0, scheme)
    d_tp = _energy_derivative(family, node[0], node[1], 1, scheme)
    return np.stack([d_t, d_tp], axis=-1)


def family_jacobian(family, member_index, scheme="centered", caustic_det=1e-10):
    """d(t, t')/d(E, E') of a sheet member, the inverse of the finite difference d(E, E')/d(t, t')"""
    forward = energy_jacobian(family, member_index, scheme)
    det = np.linalg.det(forward)
    scale = max(np.max(np.abs(forward)) ** 2, 1e-300)
    if abs(det) < caustic_det * scale:
        raise CausticInEnergyError(
            f"d(E, E')/d(t, t') is singular at member {member_index} (det {det:.3e}): caustic in energy",
            member=member_index, det=det
        )
    return np.linalg.inv(forward)


def target_energies(family, energy, energy_prime, cfg=None, tol=1e-9, max_iter=30):
    """Sheet orbit with prescribed (E, E') by a Broyden iteration on (t, t'), started at the nearest member"""
    cfg = cfg or IntegratorConfig()
    if len(family) == 0:
        raise ValueError("Cannot target energies on an empty family")
    energies = family.energies()
    target = np.array([energy, energy_prime], dtype=float)
    nearest = int(np.argmin(np.linalg.norm(energies - target, axis=-1)))
    orbit = family.members[nearest]
    tau = orbit.tau
    try:
        broyden = energy_jacobian(family, nearest)
    except ValueError:
        broyden = np.eye(2)

    z_vec = np.array([orbit.t, orbit.t_prime])
    mismatch = np.array([orbit.E, orbit.E_prime]) - target
    for _ in range(max_iter):
        if np.linalg.norm(mismatch) < tol:
            return orbit
        if abs(np.linalg.det(broyden)) < 1e-14:
            raise CausticInEnergyError(f"Energy Jacobian singular while targeting {target.tolist()}")
        delta = -np.linalg.solve(broyden, mismatch)
        new_orbit = close_cco(
            family.inner, family.driving, orbit.x_start.coords, (z_vec[0] + delta[0], z_vec[1] + delta[1], tau), cfg
        )
        new_mismatch = np.array([new_orbit.E, new_orbit.E_prime]) - target
        change = new_mismatch - mismatch
        broyden = broyden + np.outer(change - broyden @ delta, delta) / (delta @ delta)
        z_vec = z_vec + delta
        orbit, mismatch = new_orbit, new_mismatch
        orbit.maslov_sigma = family.members[nearest].maslov_sigma
    if np.linalg.norm(mismatch) < tol:
        return orbit
    raise ClosureError(
        f"Energy targeting of {target.tolist()} did not converge, mismatch {np.linalg.norm(mismatch):.3e}",
        mismatch=mismatch.tolist()
    )


def action_derivatives(inner, driving, orbit, step=1e-4, cfg=None, tol=1e-11):
    """Centered differences (dS/dt, dS/dt') of the compound action at the orbit's times.

    The fourth leg runs the inner flow over -t, so on a closed orbit dS/dt = +E
    and dS/dt' = -E'.
    """
    t_val, t_prime, tau = orbit.times
    guess = orbit.x_start.coords

    def action(times):
        return close_cco(inner, driving, guess, times, cfg, tol=tol).action_total

    d_t = (action((t_val + step, t_prime, tau)) - action((t_val - step, t_prime, tau))) / (2 * step)
    d_tp = (action((t_val, t_prime + step, tau)) - action((t_val, t_prime - step, tau))) / (2 * step)
    return d_t, d_tp
