"""Quasi-static planar simulator of a two-finger tendon-driven compliant hand.

Frame: origin at the middle of the hand base, +y away from the palm, +x
toward finger 2. Finger 1 sits on the left (x < 0), finger 2 on the right.

Each finger has a proximal and a distal revolute joint with torsional springs.
Joint angles are flexion angles measured from the outward horizontal, so a
larger angle curls the finger toward the centre line. The inner face of the
distal link (offset ``pad_thickness`` from the link axis) is the contact pad;
the contact offset ``xi`` runs along it from the distal joint (where the
tactile bulge sits) toward the fingertip.

The equilibrium is frictionless in the normal direction: the object is held
by the two pad normal forces only, which forces antipodal contact. Object yaw
is not part of the force balance; it is advanced by a rolling overlay after
each solve (see :func:`step`).
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigError, DomainError, ResetExhausted, StepOnDroppedState

_SIDES = (-1.0, 1.0)


@dataclass(frozen=True)
class Pose:
    """Object pose relative to the hand base: millimetres and radians."""

    x: float
    y: float
    yaw: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.yaw])

    def mirrored(self) -> "Pose":
        return Pose(-self.x, self.y, -self.yaw)


@dataclass(frozen=True)
class TactilePad:
    """Synthetic FlX-finger response parameters."""

    alpha: float = 0.15  # V/N
    xi0: float = 30.0  # mm, zero crossing of the signal along the pad
    v_sat: float = 2.5  # V

    def __post_init__(self):
        if self.alpha <= 0 or self.xi0 <= 0 or self.v_sat <= 0:
            raise ConfigError("tactile pad parameters must be positive")


@dataclass(frozen=True)
class HandConfig:
    base_separation: float = 30.0
    link_lengths: tuple = (50.0, 40.0)
    joint_stiffnesses: tuple = (300.0, 200.0)  # N*mm/rad
    joint_rest_angles: tuple = (math.radians(100.0), math.radians(10.0))
    tendon_stiffness: float = 5.0  # N/mm
    tendon_moment_arms: tuple = (10.0, 5.0)  # mm
    actuator_gain: float = 12.0  # mm of tendon per rad of actuator
    action_delta_max: float = 0.007  # rad per step at a full action
    pad_length: float = 40.0
    pad_thickness: float = 10.0
    f_min: float = 0.05  # N
    timestep: float = 0.1  # s
    slip_threshold: float = 0.3  # mm of tangential contact motion per step
    max_newton_iters: int = 50
    newton_tol: float = 1e-10
    grasp_range: tuple = (1.43, 1.57)  # actuator preload interval, rad
    reset_offset: float = 2.0  # mm, lateral jitter of the solver seed
    reset_yaw: float = 0.15  # rad, half-width of the initial yaw interval
    max_reset_tries: int = 100
    tactile: TactilePad = field(default_factory=TactilePad)

    def __post_init__(self):
        positive = [
            self.base_separation,
            *self.link_lengths,
            *self.joint_stiffnesses,
            self.tendon_stiffness,
            *self.tendon_moment_arms,
            self.actuator_gain,
            self.pad_length,
            self.timestep,
            self.action_delta_max,
        ]
        if any(not (v > 0) for v in positive):
            raise ConfigError("hand lengths, stiffnesses, timestep and action_delta_max must be > 0")
        if len(self.link_lengths) != 2 or len(self.joint_stiffnesses) != 2:
            raise ConfigError("each finger has exactly two links")
        if self.pad_thickness < 0 or self.f_min < 0 or self.slip_threshold < 0:
            raise ConfigError("pad_thickness, f_min and slip_threshold must be >= 0")
        if self.grasp_range[0] > self.grasp_range[1]:
            raise ConfigError("grasp_range must be (low, high)")
        if self.max_newton_iters < 1 or self.max_reset_tries < 1:
            raise ConfigError("iteration budgets must be >= 1")


@dataclass(frozen=True)
class ObjectSpec:
    shape: str  # "disk" or "square"
    size: float  # radius for a disk, side for a square
    friction: str = "standard"
    label: str = ""

    def __post_init__(self):
        if self.shape not in ("disk", "square"):
            raise ConfigError(f"unknown object shape {self.shape!r}")
        if not (self.size > 0):
            raise ConfigError("object size must be > 0")
        if self.friction not in ("standard", "high"):
            raise ConfigError(f"unknown friction class {self.friction!r}")
        if not self.label:
            object.__setattr__(self, "label", f"{self.shape}{self.size:g}")

    @property
    def rolling_radius(self) -> float:
        return self.size if self.shape == "disk" else self.size / 2.0

    @property
    def rotation_invariant(self) -> bool:
        return self.shape == "disk"


OBJECTS = {
    "circ15": ObjectSpec("disk", 15.0, "standard", "circ15"),
    "circ10": ObjectSpec("disk", 10.0, "standard", "circ10"),
    "circ15hf": ObjectSpec("disk", 15.0, "high", "circ15hf"),
    "sq20": ObjectSpec("square", 20.0, "standard", "sq20"),
}


@dataclass(frozen=True)
class NoiseModel:
    sigma_enc: float = 0.002  # rad
    sigma_load: float = 3.0  # N, ~5% of the tension span
    sigma_tac: float = 0.05  # V, ~6% of the voltage span
    adc_bits: int = 10
    seed: int = 0

    def __post_init__(self):
        if min(self.sigma_enc, self.sigma_load, self.sigma_tac) < 0:
            raise ConfigError("noise standard deviations must be >= 0")
        if not 8 <= self.adc_bits <= 16:
            raise ConfigError("adc_bits must lie in [8, 16]")


@dataclass
class SimState:
    config: HandConfig
    obj: ObjectSpec
    theta: np.ndarray  # actuator angles (2,)
    q: np.ndarray  # joint angles (q11, q12, q21, q22)
    pose: Pose
    xi: np.ndarray  # contact offsets along the pads (2,)
    f: np.ndarray  # normal forces (2,)
    tension: np.ndarray  # tendon tensions (2,)
    dropped: bool = False
    drop_reason: str = ""
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0), repr=False)

    def copy(self) -> "SimState":
        return copy.deepcopy(self)

    @property
    def unknowns(self) -> np.ndarray:
        return np.concatenate([self.q, [self.pose.x, self.pose.y], self.f])


@dataclass(frozen=True)
class SensorReading:
    enc_angles: tuple
    loads: tuple
    tactile: tuple
    truth_pose: Pose


@dataclass
class StepOutcome:
    next: SimState
    dropped: bool


# ---------------------------------------------------------------------------
# Contact geometry
# ---------------------------------------------------------------------------

def _square_corners(side, yaw):
    h = side / 2.0
    c, s = math.cos(yaw), math.sin(yaw)
    return [(c * px - s * py, s * px + c * py) for px, py in ((h, h), (-h, h), (-h, -h), (h, -h))]


def _support(obj: ObjectSpec, yaw: float, dx: float, dy: float):
    """Support distance along unit (dx, dy) and the (smoothed) contact point offset.

    For a square the distance is the exact maximum over corners; the contact
    point is a soft-max blend so a nearly flush face loads near its middle
    instead of jumping between corners.
    """
    if obj.shape == "disk":
        r = obj.size
        return r, r * dx, r * dy
    corners = _square_corners(obj.size, yaw)
    proj = [cx * dx + cy * dy for cx, cy in corners]
    top = max(proj)
    w = [math.exp((p - top) / 0.5) for p in proj]
    tot = sum(w)
    px = sum(wi * c[0] for wi, c in zip(w, corners)) / tot
    py = sum(wi * c[1] for wi, c in zip(w, corners)) / tot
    return top, px, py


def _finger(cfg: HandConfig, s: float, q1: float, q2: float):
    l1 = cfg.link_lengths[0]
    bx = s * cfg.base_separation / 2.0
    jx = bx + l1 * s * math.cos(q1)
    jy = l1 * math.sin(q1)
    psi = q1 + q2
    tx, ty = s * math.cos(psi), math.sin(psi)
    nx, ny = -s * math.sin(psi), math.cos(psi)
    return bx, jx, jy, tx, ty, nx, ny


def _tension(cfg: HandConfig, theta: float, q1: float, q2: float) -> float:
    r1, r2 = cfg.tendon_moment_arms
    return cfg.tendon_stiffness * max(0.0, cfg.actuator_gain * theta - (r1 * q1 + r2 * q2))


def _contact(cfg, obj, u, yaw, i):
    s = _SIDES[i]
    q1, q2 = u[2 * i], u[2 * i + 1]
    bx, jx, jy, tx, ty, nx, ny = _finger(cfg, s, q1, q2)
    h, px, py = _support(obj, yaw, -nx, -ny)
    ox, oy = u[4], u[5]
    dist = (ox - jx) * nx + (oy - jy) * ny - h - cfg.pad_thickness
    cx, cy = ox + px, oy + py
    xi = (cx - jx) * tx + (cy - jy) * ty
    return bx, jx, jy, tx, ty, nx, ny, dist, xi


def equilibrium_residual(cfg: HandConfig, obj: ObjectSpec, theta, u, yaw: float = 0.0) -> np.ndarray:
    """The 8 equilibrium residuals at unknowns u = (q11, q12, q21, q22, ox, oy, f1, f2).

    Rows 0-3: joint torque balances (N*mm); rows 4-5: pad contact gaps (mm);
    rows 6-7: object force balance (N).
    """
    k1, k2 = cfg.joint_stiffnesses
    qr1, qr2 = cfg.joint_rest_angles
    r1, r2 = cfg.tendon_moment_arms
    tp = cfg.pad_thickness
    res = np.empty(8)
    fx = fy = 0.0
    for i in range(2):
        s = _SIDES[i]
        q1, q2 = u[2 * i], u[2 * i + 1]
        fi = u[6 + i]
        bx, jx, jy, tx, ty, nx, ny, dist, xi = _contact(cfg, obj, u, yaw, i)
        t_i = _tension(cfg, theta[i], q1, q2)
        # load point on the pad surface; the finger feels -f*n there
        lx = jx + tp * nx + xi * tx
        ly = jy + tp * ny + xi * ty
        fxi, fyi = -fi * nx, -fi * ny
        tau_b = (lx - bx) * fyi - ly * fxi
        tau_j = (lx - jx) * fyi - (ly - jy) * fxi
        res[2 * i] = -k1 * (q1 - qr1) + t_i * r1 + s * tau_b
        res[2 * i + 1] = -k2 * (q2 - qr2) + t_i * r2 + s * tau_j
        res[4 + i] = dist
        fx += fi * nx
        fy += fi * ny
    res[6] = fx
    res[7] = fy
    return res


def _jacobian(cfg, obj, theta, u, yaw):
    jac = np.empty((8, 8))
    for j in range(8):
        h = 1e-7 * max(1.0, abs(u[j]))
        up = u.copy()
        um = u.copy()
        up[j] += h
        um[j] -= h
        jac[:, j] = (equilibrium_residual(cfg, obj, theta, up, yaw) - equilibrium_residual(cfg, obj, theta, um, yaw)) / (2 * h)
    return jac


def _newton(cfg, obj, theta, u, yaw):
    r = equilibrium_residual(cfg, obj, theta, u, yaw)
    for _ in range(cfg.max_newton_iters):
        if not np.all(np.isfinite(r)):
            return u, False
        if np.max(np.abs(r)) < cfg.newton_tol:
            return u, True
        try:
            d = np.linalg.solve(_jacobian(cfg, obj, theta, u, yaw), -r)
        except np.linalg.LinAlgError:
            return u, False
        merit = r @ r
        lam = 1.0
        while True:
            cand = u + lam * d
            rc = equilibrium_residual(cfg, obj, theta, cand, yaw)
            if np.all(np.isfinite(rc)) and rc @ rc < merit:
                break
            lam *= 0.5
            if lam < 1e-6:
                return u, False
        u, r = cand, rc
    return u, bool(np.max(np.abs(r)) < cfg.newton_tol)


def _default_guess(cfg: HandConfig, obj: ObjectSpec, offset: float = 0.0) -> np.ndarray:
    # distal links parallel at the rest distal angle, object centred between pads
    q2 = cfg.joint_rest_angles[1]
    q1 = math.pi / 2 - q2
    half = _support(obj, 0.0, 1.0, 0.0)[0] + cfg.pad_thickness
    jx = cfg.base_separation / 2.0 + cfg.link_lengths[0] * math.cos(q1)
    # close the proximal link until the pad touches the object
    c = (half - cfg.base_separation / 2.0) / cfg.link_lengths[0]
    if -1.0 < c < 1.0 and jx > half:
        q1 = math.acos(c)
        q2 = math.pi / 2 - q1
    oy = cfg.link_lengths[0] * math.sin(q1) + cfg.pad_length / 2.0
    return np.array([q1, q2, q1, q2, offset, oy, 1.0, 1.0])


def solve_equilibrium(
    config: HandConfig,
    obj: ObjectSpec,
    actuator_angles,
    guess: Optional[SimState] = None,
    yaw: Optional[float] = None,
) -> SimState:
    """Solve the quasi-static grasp for given actuator angles.

    Always returns a :class:`SimState`; a failed solve, a vanishing normal
    force or a contact leaving the pad yields ``dropped=True``.
    """
    theta = np.asarray(actuator_angles, dtype=float).copy()
    if guess is not None:
        u0 = guess.unknowns
        if not np.all(np.isfinite(u0)):
            raise DomainError("guess state has non-finite fields")
        yaw0 = guess.pose.yaw if yaw is None else yaw
        rng = guess.rng
    else:
        u0 = _default_guess(config, obj)
        yaw0 = 0.0 if yaw is None else yaw
        rng = np.random.default_rng(0)
    u, ok = _newton(config, obj, theta, u0.copy(), yaw0)
    return _state_from(config, obj, theta, u, yaw0, ok, rng)


def _state_from(cfg, obj, theta, u, yaw, converged, rng) -> SimState:
    xi = np.array([_contact(cfg, obj, u, yaw, i)[8] for i in range(2)])
    tension = np.array([_tension(cfg, theta[i], u[2 * i], u[2 * i + 1]) for i in range(2)])
    f = u[6:8].copy()
    reason = ""
    if not converged:
        reason = "non-convergence"
    elif f.min() <= cfg.f_min:
        reason = "normal force below f_min"
    elif xi.min() < 0.0 or xi.max() > cfg.pad_length:
        reason = "contact left the pad"
    return SimState(
        config=cfg,
        obj=obj,
        theta=theta,
        q=u[:4].copy(),
        pose=Pose(float(u[4]), float(u[5]), float(yaw)),
        xi=xi,
        f=f,
        tension=tension,
        dropped=bool(reason),
        drop_reason=reason,
        rng=rng,
    )


def residual_of(state: SimState) -> np.ndarray:
    """Re-evaluate the equilibrium residuals of a state from its stored fields."""
    return equilibrium_residual(state.config, state.obj, state.theta, state.unknowns, state.pose.yaw)


def grasp_reset(config: HandConfig, obj: ObjectSpec, seed: int) -> SimState:
    """Randomised preload and lateral offset, re-sampled until the grasp holds."""
    ss = np.random.SeedSequence(int(seed))
    reset_seq, sensor_seq = ss.spawn(2)
    rng = np.random.default_rng(reset_seq)
    lo, hi = config.grasp_range
    for _ in range(config.max_reset_tries):
        theta = rng.uniform(lo, hi, size=2)
        offset = rng.uniform(-config.reset_offset, config.reset_offset)
        yaw = rng.uniform(-config.reset_yaw, config.reset_yaw)
        u, ok = _newton(config, obj, theta, _default_guess(config, obj, offset), yaw)
        state = _state_from(config, obj, theta, u, yaw, ok, np.random.default_rng(sensor_seq))
        if not state.dropped:
            return state
    raise ResetExhausted(
        f"no valid grasp of {obj.label} after {config.max_reset_tries} tries"
    )


def step(state: SimState, action) -> StepOutcome:
    """Apply a normalised action for one timestep.

    ``a = 0.5`` is neutral; each actuator moves by ``(2a - 1) * action_delta_max``.
    After the re-solve, yaw advances by the mean rolling rate of the two
    contacts unless a standard-friction object slips this step.
    """
    if state.dropped:
        raise StepOnDroppedState("cannot step a dropped state")
    a = np.asarray(action, dtype=float)
    if a.shape != (2,) or np.any(a < 0.0) or np.any(a > 1.0):
        raise DomainError(f"action components must lie in [0, 1], got {action!r}")
    cfg, obj = state.config, state.obj
    theta = state.theta + (2.0 * a - 1.0) * cfg.action_delta_max
    yaw = state.pose.yaw
    u, ok = _newton(cfg, obj, theta, state.unknowns, yaw)
    nxt = _state_from(cfg, obj, theta, u, yaw, ok, state.rng)
    if nxt.dropped:
        return StepOutcome(nxt, True)
    dxi = nxt.xi - state.xi
    slip = obj.friction == "standard" and float(np.max(np.abs(dxi))) > cfg.slip_threshold
    if not slip:
        rho = obj.rolling_radius
        dyaw = 0.5 * sum(-_SIDES[i] * dxi[i] / rho for i in range(2))
        yaw = yaw + dyaw
        if obj.rotation_invariant:
            nxt.pose = replace(nxt.pose, yaw=float(yaw))
        else:
            u, ok = _newton(cfg, obj, theta, u, yaw)
            nxt = _state_from(cfg, obj, theta, u, yaw, ok, state.rng)
    return StepOutcome(nxt, nxt.dropped)


def mirror_state(state: SimState) -> SimState:
    """Reflect a state through the hand's symmetry axis (swap fingers, negate x and yaw)."""
    q = state.q
    return replace(
        state,
        theta=state.theta[::-1].copy(),
        q=np.array([q[2], q[3], q[0], q[1]]),
        pose=state.pose.mirrored(),
        xi=state.xi[::-1].copy(),
        f=state.f[::-1].copy(),
        tension=state.tension[::-1].copy(),
        rng=copy.deepcopy(state.rng),
    )


def tactile_voltage(xi: float, f: float, pad: TactilePad = TactilePad()) -> float:
    """Baseline-relative pad voltage: linear in force, falling along the pad, negative past xi0."""
    if f < 0:
        raise DomainError(f"normal force must be >= 0, got {f}")
    v = pad.alpha * f * (1.0 - xi / pad.xi0)
    return min(max(v, -pad.v_sat), pad.v_sat)


def adc_step(pad: TactilePad, bits: int) -> float:
    return 2.0 * pad.v_sat / (2 ** bits)


def read_sensors(state: SimState, noise: NoiseModel) -> SensorReading:
    """Noisy encoder angles, tendon loads and quantised tactile voltages.

    Draws advance ``state.rng``; copy the state first to replay a reading.
    """
    if state.dropped:
        raise StepOnDroppedState("cannot read sensors of a dropped state")
    rng = state.rng
    pad = state.config.tactile
    enc = state.theta + rng.normal(0.0, 1.0, 2) * noise.sigma_enc
    loads = state.tension + rng.normal(0.0, 1.0, 2) * noise.sigma_load
    raw = np.array([tactile_voltage(state.xi[i], state.f[i], pad) for i in range(2)])
    raw = raw + rng.normal(0.0, 1.0, 2) * noise.sigma_tac
    lsb = adc_step(pad, noise.adc_bits)
    tac = np.clip(np.round(raw / lsb) * lsb, -pad.v_sat, pad.v_sat)
    return SensorReading(
        enc_angles=tuple(float(v) for v in enc),
        loads=tuple(float(v) for v in loads),
        tactile=tuple(float(v) for v in tac),
        truth_pose=state.pose,
    )
