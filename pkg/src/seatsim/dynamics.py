"""Forward dynamics and fixed-step time integration of the occupant chain.

The equations of motion are assembled in joint space from the body
Jacobians of one kinematics pass:

    M(q) v̇ = τ_gravity + τ_joint_pd + τ_external − τ_bias(q, v)

with ``M`` built from composite body inertias (always symmetric positive
definite for positive masses) and solved densely each step; at ~33 DOF a
dense solve is trivial. The seat moves kinematically (infinite seat
inertia): occupant forces do not back-react on the seat.

Default integrator is semi-implicit Euler at the fixed step, with
quaternion renormalization each step; RK4 is available for convergence
studies (contact forces are held over the step in both cases).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .kinematics import (
    JOINT_FREE,
    JOINT_REVOLUTE,
    JOINT_SPHERICAL,
    ArticulatedSystem,
    Kinematics,
    SystemState,
    coordinate_rates,
    integrate_coordinates,
    normalize_quaternions,
)
from .rotations import cross3, cross_batch, cross_rows_batch, rotvec_from_quat_batch

GRAVITY = np.array([0.0, 0.0, -9.81])  # m/s^2

AXIS_VECTORS = {
    "fore_aft": np.array([1.0, 0.0, 0.0]),
    "lateral": np.array([0.0, 1.0, 0.0]),
    "vertical": np.array([0.0, 0.0, 1.0]),
}


class DivergenceError(RuntimeError):
    """State became non-finite during integration."""

    def __init__(self, t: float, coordinate: str):
        super().__init__(f"simulation diverged at t={t:.4f} s (coordinate {coordinate})")
        self.t = t
        self.coordinate = coordinate


class NumericalError(RuntimeError):
    pass


@dataclass
class ExternalForces:
    """Per-segment wrench accumulator (world frame, about body origins)."""

    force: np.ndarray  # (B,3) N
    torque: np.ndarray  # (B,3) N m

    @classmethod
    def zero(cls, system: ArticulatedSystem) -> "ExternalForces":
        return cls(np.zeros((system.n_bodies, 3)), np.zeros((system.n_bodies, 3)))

    def reset(self) -> None:
        self.force[:] = 0.0
        self.torque[:] = 0.0

    def add_force_at_point(self, body: int, f: np.ndarray, point: np.ndarray, kin: Kinematics) -> None:
        self.force[body] += f
        self.torque[body] += cross3(point - kin.p[body], f)

    def add_torque(self, body: int, tau: np.ndarray) -> None:
        self.torque[body] += tau


@dataclass
class SeatMotion:
    """Prescribed single-axis seat-frame motion sampled at the solver step.

    Velocity and position are cumulative trapezoidal integrals of the
    stored acceleration, so they are reproducible bit-for-bit from the
    series.
    """

    axis: str
    dt: float
    accel: np.ndarray  # m/s^2
    vel: np.ndarray = field(default=None)  # type: ignore[assignment]
    pos: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.axis not in AXIS_VECTORS:
            raise ValueError(f"unknown seat axis {self.axis!r}")
        if self.vel is None or self.pos is None:
            a, dt = self.accel, self.dt
            self.vel = np.concatenate(([0.0], np.cumsum(0.5 * (a[1:] + a[:-1]) * dt)))
            self.pos = np.concatenate(([0.0], np.cumsum(0.5 * (self.vel[1:] + self.vel[:-1]) * dt)))

    @property
    def axis_vector(self) -> np.ndarray:
        return AXIS_VECTORS[self.axis]

    @property
    def n_samples(self) -> int:
        return len(self.accel)

    @property
    def duration(self) -> float:
        return (len(self.accel) - 1) * self.dt

    def displacement(self, i: int) -> np.ndarray:
        return self.pos[i] * self.axis_vector

    def velocity(self, i: int) -> np.ndarray:
        return self.vel[i] * self.axis_vector

    def acceleration(self, i: int) -> np.ndarray:
        return self.accel[i] * self.axis_vector

    def with_settling_prefix(self, settle_s: float) -> "SeatMotion":
        """Seat motion preceded by ``settle_s`` of rest (zero acceleration)."""
        n = int(round(settle_s / self.dt))
        return SeatMotion(self.axis, self.dt, np.concatenate((np.zeros(n), self.accel)))

    @classmethod
    def rest(cls, axis: str, duration: float, dt: float) -> "SeatMotion":
        n = int(round(duration / dt))
        return cls(axis, dt, np.zeros(n + 1))


def joint_pd_forces(system: ArticulatedSystem, kin: Kinematics) -> np.ndarray:
    """Generalized forces of the passive postural PD stabilization.

    Spherical joints are driven toward their rest rotation vector with
    per-axis gains; revolute joints toward their rest angle. The torque
    acts directly on the joint's own velocity coordinates (parent frame).
    """
    Q = np.zeros(system.nv)
    q, v = kin.q, kin.v
    if len(system._sph):
        rv = rotvec_from_quat_batch(q[system._sph_q])
        tau = system._sph_K * (rv - system._sph_rest) + system._sph_C * v[system._sph_v]
        Q[system._sph_v.ravel()] = -tau.ravel()
    if len(system._rev):
        tau = system._rev_K * (q[system._rev_q] - system._rev_rest) + system._rev_C * v[system._rev_v]
        Q[system._rev_v] = -tau
    return Q


def joint_elastic_energy(system: ArticulatedSystem, state: SystemState) -> float:
    e = 0.0
    for i in range(system.n_bodies):
        jt = system.joint_type[i]
        if jt == JOINT_FREE:
            continue
        if jt == JOINT_SPHERICAL:
            d = system.joint_rotvec(state.q, i) - system.rest_angles[i]
        else:
            d = state.q[system.q_start[i]:system.q_start[i] + 1] - system.rest_angles[i]
        e += 0.5 * float(np.dot(system.stiffness[i], d * d))
    return e


def _world_inertias(system: ArticulatedSystem, kin: Kinematics) -> np.ndarray:
    return np.matmul(np.matmul(kin.R, system.inertia), kin.R.transpose(0, 2, 1))


def mass_matrix(system: ArticulatedSystem, state: SystemState, kin: Kinematics | None = None) -> np.ndarray:
    kin = kin or system.kinematics(state)
    B, nv = system.n_bodies, system.nv
    Iw = _world_inertias(system, kin)
    Jc = kin.Jcom.reshape(3 * B, nv)
    Jw = kin.Jw.reshape(3 * B, nv)
    M = Jc.T @ (system._mass3 * Jc)
    M += Jw.T @ np.matmul(Iw, kin.Jw).reshape(3 * B, nv)
    return M


def forward_dynamics(
    system: ArticulatedSystem,
    state: SystemState,
    ext: ExternalForces | None = None,
    kin: Kinematics | None = None,
    gravity: np.ndarray = GRAVITY,
) -> np.ndarray:
    """Generalized accelerations v̇ solving M(q) v̇ = τ(q, v, ext, gravity)."""
    kin = kin or system.kinematics(state)
    B, nv = system.n_bodies, system.nv
    m = system.mass

    Iw = _world_inertias(system, kin)
    Jc = kin.Jcom.reshape(3 * B, nv)
    Jw = kin.Jw.reshape(3 * B, nv)
    M = Jc.T @ (system._mass3 * Jc)
    M += Jw.T @ np.matmul(Iw, kin.Jw).reshape(3 * B, nv)

    # generalized forces: gravity minus velocity-product terms, via the
    # same Jacobian blocks
    Iw_om = np.matmul(Iw, kin.om[:, :, None])[:, :, 0]
    ang_bias = np.matmul(Iw, kin.alpha_bias[:, :, None])[:, :, 0] + cross_batch(kin.om, Iw_om)
    lin = m[:, None] * (gravity[None, :] - kin.acom_bias)
    tau = Jc.T @ lin.reshape(3 * B)
    tau -= Jw.T @ ang_bias.reshape(3 * B)
    tau += joint_pd_forces(system, kin)

    if ext is not None:
        if not (np.all(np.isfinite(ext.force)) and np.all(np.isfinite(ext.torque))):
            raise NumericalError("non-finite external forces")
        # wrench stored about body origins; JO pairs with the wrench about
        # the world origin
        tau0 = ext.torque + cross_batch(kin.p, ext.force)
        tau += kin.JO.reshape(3 * B, nv).T @ ext.force.reshape(3 * B)
        tau += Jw.T @ tau0.reshape(3 * B)

    try:
        return np.linalg.solve(M, tau)
    except np.linalg.LinAlgError as err:
        raise NumericalError(
            f"singular mass matrix (condition number {np.linalg.cond(M):.3e})"
        ) from err


def _coordinate_name(system: ArticulatedSystem, q_index: int) -> str:
    for i in range(system.n_bodies):
        qs = system.q_start[i]
        qe = qs + (7 if i == 0 else (4 if system.joint_type[i] == JOINT_SPHERICAL else 1))
        if qs <= q_index < qe:
            return f"{system.names[i]}[q{q_index - qs}]"
    return f"q{q_index}"


def step(
    system: ArticulatedSystem,
    state: SystemState,
    forces: ExternalForces | None,
    dt: float,
    *,
    integrator: str = "semi_implicit",
    gravity: np.ndarray = GRAVITY,
    kin: Kinematics | None = None,
    vdot: np.ndarray | None = None,
) -> SystemState:
    """Advance one fixed step; deterministic for identical inputs.

    Contact/external forces are held constant over the step.
    """
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    if integrator == "semi_implicit":
        if vdot is None:
            vdot = forward_dynamics(system, state, forces, kin=kin, gravity=gravity)
        v_new = state.v + dt * vdot
        q_new = integrate_coordinates(system, state.q, v_new, dt)
    elif integrator == "rk4":
        def f(qx, vx):
            st = SystemState(qx, vx, state.t)
            return coordinate_rates(system, qx, vx), forward_dynamics(
                system, st, forces, gravity=gravity
            )

        q0, v0 = state.q, state.v
        k1q, k1v = f(q0, v0)
        k2q, k2v = f(q0 + 0.5 * dt * k1q, v0 + 0.5 * dt * k1v)
        k3q, k3v = f(q0 + 0.5 * dt * k2q, v0 + 0.5 * dt * k2v)
        k4q, k4v = f(q0 + dt * k3q, v0 + dt * k3v)
        q_new = q0 + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
        v_new = v0 + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        q_new = normalize_quaternions(system, q_new)
    else:
        raise ValueError(f"unknown integrator {integrator!r}")

    t_new = state.t + dt
    if not np.all(np.isfinite(q_new)):
        bad = int(np.argmax(~np.isfinite(q_new)))
        raise DivergenceError(t_new, _coordinate_name(system, bad))
    if not np.all(np.isfinite(v_new)):
        raise DivergenceError(t_new, f"v{int(np.argmax(~np.isfinite(v_new)))}")
    return SystemState(q_new, v_new, t_new)


@dataclass
class Trajectory:
    """Sampled simulation output: marker kinematics plus audit channels."""

    times: np.ndarray
    dt: float
    settle_s: float
    marker_names: list
    marker_accel: np.ndarray  # (N, n_markers, 3) world frame, m/s^2
    marker_pos: np.ndarray  # (N, n_markers, 3) m
    angvel_names: list
    angvel: np.ndarray  # (N, n_angvel, 3) world frame, rad/s
    seat_axis: str
    seat_accel: np.ndarray  # (N,) m/s^2 along the excitation axis
    energy: np.ndarray | None = None
    audit: dict = field(default_factory=dict)  # name -> (N,) contact audit series
    wall_clock_s: float = 0.0

    @property
    def n_samples(self) -> int:
        return len(self.times)

    def marker_channel(self, marker: str, component: int) -> np.ndarray:
        return self.marker_accel[:, self.marker_names.index(marker), component]

    def angvel_channel(self, body: str, component: int) -> np.ndarray:
        return self.angvel[:, self.angvel_names.index(body), component]

    def channels(self) -> dict:
        """All output channels keyed by CSV column name."""
        out = {}
        for k, name in enumerate(self.marker_names):
            for c, ax in enumerate("xyz"):
                out[f"{name}_a{ax}"] = self.marker_accel[:, k, c]
        for k, name in enumerate(self.angvel_names):
            label = "trunk" if name == "thoracic_trunk" else name
            for c, ax in enumerate("xyz"):
                out[f"{label}_w{ax}"] = self.angvel[:, k, c]
        return out

    def analysis_slice(self) -> slice:
        """Sample range after the settling phase."""
        return slice(int(round(self.settle_s / self.dt)), self.n_samples)


def simulate(
    system: ArticulatedSystem,
    contact,
    seat: SeatMotion,
    duration: float,
    dt: float,
    *,
    settle_s: float = 0.0,
    integrator: str = "semi_implicit",
    gravity: np.ndarray = GRAVITY,
    initial_state: SystemState | None = None,
    angvel_bodies: tuple = ("thoracic_trunk", "head"),
    record_energy: bool = False,
) -> Trajectory:
    """Run a full simulation and sample every step.

    Pure with respect to its inputs (the contact assembler is created per
    run), so independent simulations may execute concurrently. The settle
    phase is part of ``duration``; restraint anchors are re-captured when
    it ends.
    """
    if duration <= 0.0:
        raise ValueError("duration must be > 0")
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    n_steps = int(round(duration / dt))
    if seat.n_samples < n_steps + 1:
        raise ValueError(
            f"seat motion covers {seat.n_samples} samples, need {n_steps + 1}"
        )
    settle_steps = int(round(settle_s / dt))

    state = initial_state.copy() if initial_state is not None else system.default_state()
    n_mark = len(system.markers)
    marker_items = sorted(system.markers.items())
    marker_names = [name for name, _ in marker_items]
    mk_body = np.array([b for _, (b, _) in marker_items], dtype=int)
    mk_local = np.stack([loc for _, (_, loc) in marker_items]) if marker_items else np.zeros((0, 3))
    ang_idx = np.array([system.body_index(b) for b in angvel_bodies], dtype=int)

    N = n_steps + 1
    times = np.arange(N) * dt
    marker_accel = np.empty((N, n_mark, 3))
    marker_pos = np.empty((N, n_mark, 3))
    angvel = np.empty((N, len(ang_idx), 3))
    energy = np.empty(N) if record_energy else None
    audit_fields = tuple(getattr(contact, "audit_fields", ())) if contact is not None else ()
    audit_data = np.zeros((N, len(audit_fields)))

    t_start = time.perf_counter()
    for i in range(N):
        kin = system.kinematics(state)
        if contact is not None and i == settle_steps:
            contact.capture_anchors(kin, seat, i)
        if contact is not None:
            ext, audit_row = contact.forces(kin, seat, i, dt)
            if audit_fields:
                audit_data[i] = audit_row
        else:
            ext = None
        vdot = forward_dynamics(system, state, ext, kin=kin, gravity=gravity)

        if n_mark:
            r = np.matmul(kin.R[mk_body], mk_local[:, :, None])[:, :, 0]
            pts = kin.p[mk_body] + r
            marker_pos[i] = pts
            Jp = kin.JO[mk_body] - cross_rows_batch(pts, kin.Jw[mk_body])
            om_m = kin.om[mk_body]
            bias = (
                kin.ao_bias[mk_body]
                + cross_batch(kin.alpha_bias[mk_body], r)
                + cross_batch(om_m, cross_batch(om_m, r))
            )
            marker_accel[i] = Jp @ vdot + bias
        angvel[i] = kin.om[ang_idx]
        if record_energy:
            Iw = np.einsum("bij,bjk,blk->bil", kin.R, system.inertia, kin.R)
            ke = 0.5 * float(
                np.sum(system.mass * np.einsum("bi,bi->b", kin.vcom, kin.vcom))
                + np.einsum("bi,bij,bj->", kin.om, Iw, kin.om)
            )
            pe = -float(np.sum(system.mass * (kin.com @ gravity)))
            e = ke + pe + joint_elastic_energy(system, state)
            if contact is not None:
                e += contact.stored_energy()
            energy[i] = e

        if i < n_steps:
            state = step(
                system, state, ext, dt,
                integrator=integrator, gravity=gravity, kin=kin,
                vdot=vdot if integrator == "semi_implicit" else None,
            )

    wall = time.perf_counter() - t_start
    return Trajectory(
        times=times,
        dt=dt,
        settle_s=settle_s,
        marker_names=marker_names,
        marker_accel=marker_accel,
        marker_pos=marker_pos,
        angvel_names=list(angvel_bodies),
        angvel=angvel,
        seat_axis=seat.axis,
        seat_accel=seat.accel[:N].copy(),
        energy=energy,
        audit={name: audit_data[:, k] for k, name in enumerate(audit_fields)},
        wall_clock_s=wall,
    )
