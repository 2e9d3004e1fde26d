"""Reduced-coordinate kinematics of a rigid-body tree.

The occupant is a tree of rigid segments: a 6-DOF free base (pelvis) plus
spherical (quaternion) and revolute joints. Joint constraints are
eliminated by construction, so the generalized coordinates are

    q = [base position (3), base quaternion (4, wxyz),
         per spherical joint: relative quaternion (4, wxyz),
         per revolute joint: angle (1)]

and the generalized velocities are

    v = [base linear velocity (3, world), base angular velocity (3, world),
         per spherical joint: relative angular velocity (3, parent frame),
         per revolute joint: angle rate (1)]

One kinematics pass produces world poses, velocities, point Jacobians and
the velocity-product (bias) accelerations needed by the dynamics. Test
rigs (pendula, single blocks) may instead anchor body 0 to the world with
a revolute or spherical joint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .body import BodyModel
from .rotations import (
    QUAT_IDENTITY,
    cross3,
    cross_batch,
    cross_rows,
    cross_rows_batch,
    quat_derivative,
    quat_from_rotvec,
    quat_from_rotvec_batch,
    quat_mul,
    quat_mul_batch,
    quat_normalize,
    quat_to_matrix,
    quat_to_matrix_batch,
    rotvec_from_quat,
    skew,
)

JOINT_FREE = 0
JOINT_SPHERICAL = 1
JOINT_REVOLUTE = 2

_QDIM = {JOINT_FREE: 7, JOINT_SPHERICAL: 4, JOINT_REVOLUTE: 1}
_VDIM = {JOINT_FREE: 6, JOINT_SPHERICAL: 3, JOINT_REVOLUTE: 1}


@dataclass
class SystemState:
    """Generalized coordinates/velocities of the chain at time ``t``."""

    q: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def copy(self) -> "SystemState":
        return SystemState(self.q.copy(), self.v.copy(), self.t)


class StateDimensionError(ValueError):
    pass


class ArticulatedSystem:
    """Lowered, array-based form of a rigid-body tree.

    Bodies are stored in topological order (parents before children);
    body 0 attaches to the world (free joint for the occupant base).
    """

    def __init__(self, names, parents, joint_types, parent_offsets, axes,
                 masses, inertias, com_offsets, stiffness, damping, rest_angles,
                 markers=None, joint_names=None):
        self.names = list(names)
        self.n_bodies = len(self.names)
        self.parent = np.asarray(parents, dtype=int)
        self.joint_type = np.asarray(joint_types, dtype=int)
        self.parent_offset = np.asarray(parent_offsets, dtype=float)
        self.axis = np.asarray(axes, dtype=float)
        self.mass = np.asarray(masses, dtype=float)
        self.inertia = np.asarray(inertias, dtype=float)
        self.com_offset = np.asarray(com_offsets, dtype=float)
        self.stiffness = [np.asarray(k, dtype=float) for k in stiffness]
        self.damping = [np.asarray(c, dtype=float) for c in damping]
        self.rest_angles = [np.asarray(r, dtype=float) for r in rest_angles]
        self.markers = dict(markers or {})  # name -> (body index, local point)
        self.joint_names = list(joint_names) if joint_names else [""] * self.n_bodies

        if self.parent[0] != -1:
            raise ValueError("body 0 must attach to the world")
        if np.any(self.joint_type[1:] == JOINT_FREE):
            raise ValueError("only body 0 may use a free joint")
        if np.any(self.parent[1:] >= np.arange(1, self.n_bodies)):
            raise ValueError("bodies must be topologically ordered")

        self.q_start = np.zeros(self.n_bodies, dtype=int)
        self.v_start = np.zeros(self.n_bodies, dtype=int)
        nq = nv = 0
        for i, jt in enumerate(self.joint_type):
            self.q_start[i] = nq
            self.v_start[i] = nv
            nq += _QDIM[jt]
            nv += _VDIM[jt]
        self.nq = nq
        self.nv = nv
        self.total_mass = float(self.mass.sum())
        self._build_index_cache()

    def _build_index_cache(self) -> None:
        sph = [i for i in range(self.n_bodies) if self.joint_type[i] == JOINT_SPHERICAL]
        rev = [i for i in range(self.n_bodies) if self.joint_type[i] == JOINT_REVOLUTE]
        self._sph = np.array(sph, dtype=int)
        self._rev = np.array(rev, dtype=int)
        self._sph_q = np.array([[self.q_start[i] + k for k in range(4)] for i in sph], dtype=int).reshape(len(sph), 4)
        self._sph_v = np.array([[self.v_start[i] + k for k in range(3)] for i in sph], dtype=int).reshape(len(sph), 3)
        self._rev_q = np.array([self.q_start[i] for i in rev], dtype=int)
        self._rev_v = np.array([self.v_start[i] for i in rev], dtype=int)
        # Rodrigues terms for the constant revolute axes
        self._rev_skew = np.stack([skew(self.axis[i]) for i in rev]) if rev else np.zeros((0, 3, 3))
        self._rev_skew2 = np.matmul(self._rev_skew, self._rev_skew) if rev else np.zeros((0, 3, 3))
        # PD gain blocks
        self._sph_K = np.array([self.stiffness[i] for i in sph]).reshape(len(sph), 3)
        self._sph_C = np.array([self.damping[i] for i in sph]).reshape(len(sph), 3)
        self._sph_rest = np.array([self.rest_angles[i] for i in sph]).reshape(len(sph), 3)
        self._rev_K = np.array([self.stiffness[i][0] for i in rev])
        self._rev_C = np.array([self.damping[i][0] for i in rev])
        self._rev_rest = np.array([self.rest_angles[i][0] for i in rev])
        self._mass3 = np.repeat(self.mass, 3)[:, None]

    # --- state construction -------------------------------------------------

    def default_state(self, root_position=(0.0, 0.0, 0.0)) -> SystemState:
        q = np.zeros(self.nq)
        for i in range(self.n_bodies):
            qs = self.q_start[i]
            if self.joint_type[i] == JOINT_FREE:
                q[qs:qs + 3] = root_position
                q[qs + 3:qs + 7] = QUAT_IDENTITY
            elif self.joint_type[i] == JOINT_SPHERICAL:
                q[qs:qs + 4] = QUAT_IDENTITY
        return SystemState(q=q, v=np.zeros(self.nv), t=0.0)

    def check_state(self, state: SystemState) -> None:
        if state.q.shape != (self.nq,) or state.v.shape != (self.nv,):
            raise StateDimensionError(
                f"state dimensions {state.q.shape}/{state.v.shape} do not match "
                f"model ({self.nq},)/({self.nv},)"
            )
        for i in range(self.n_bodies):
            if self.joint_type[i] == JOINT_REVOLUTE:
                continue
            s = self.q_start[i] + (3 if self.joint_type[i] == JOINT_FREE else 0)
            norm = np.linalg.norm(state.q[s:s + 4])
            if abs(norm - 1.0) > 1e-9:
                raise StateDimensionError(
                    f"quaternion of body {self.names[i]} has norm {norm:.12f}"
                )

    # --- joint coordinate access ---------------------------------------------

    def joint_rotation(self, q: np.ndarray, i: int) -> np.ndarray:
        jt = self.joint_type[i]
        s = self.q_start[i]
        if jt == JOINT_FREE:
            return quat_to_matrix(q[s + 3:s + 7])
        if jt == JOINT_SPHERICAL:
            return quat_to_matrix(q[s:s + 4])
        return quat_to_matrix(quat_from_rotvec(self.axis[i] * q[s]))

    def joint_rotvec(self, q: np.ndarray, i: int) -> np.ndarray:
        """Relative rotation of joint i as a rotation vector (spherical) or angle (revolute)."""
        jt = self.joint_type[i]
        s = self.q_start[i]
        if jt == JOINT_SPHERICAL:
            return rotvec_from_quat(q[s:s + 4])
        if jt == JOINT_REVOLUTE:
            return q[s:s + 1]
        raise ValueError("free joint has no joint angle coordinates")

    # --- forward kinematics ---------------------------------------------------

    def kinematics(self, state: SystemState) -> "Kinematics":
        B, nv = self.n_bodies, self.nv
        q, v = state.q, state.v

        # joint-local rotations and relative angular velocities, batched
        R_rel = np.empty((B, 3, 3))
        w_rel = np.zeros((B, 3))
        if len(self._sph):
            R_rel[self._sph] = quat_to_matrix_batch(q[self._sph_q])
            w_rel[self._sph] = v[self._sph_v]
        if len(self._rev):
            ang = q[self._rev_q]
            s, c = np.sin(ang), np.cos(ang)
            R_rel[self._rev] = (
                np.eye(3)[None, :, :]
                + s[:, None, None] * self._rev_skew
                + (1.0 - c)[:, None, None] * self._rev_skew2
            )
            w_rel[self._rev] = self.axis[self._rev] * v[self._rev_v][:, None]

        R = np.empty((B, 3, 3))
        p = np.empty((B, 3))
        om = np.empty((B, 3))
        vo = np.empty((B, 3))
        Jw = np.zeros((B, 3, nv))
        # JO: Jacobian of the body-fixed point instantaneously at the world
        # origin; a joint only touches its own columns, so the recursion
        # copies the parent block instead of re-crossing the full width
        JO = np.zeros((B, 3, nv))
        alpha_b = np.zeros((B, 3))
        ao_b = np.zeros((B, 3))

        eye3 = np.eye(3)
        zero3 = np.zeros(3)
        zero_J = np.zeros((3, nv))

        for i in range(B):
            par = self.parent[i]
            jt = self.joint_type[i]
            qs, vs = self.q_start[i], self.v_start[i]

            if jt == JOINT_FREE:
                R[i] = quat_to_matrix(q[qs + 3:qs + 7])
                p[i] = q[qs:qs + 3]
                vo[i] = v[vs:vs + 3]
                om[i] = v[vs + 3:vs + 6]
                JO[i, :, vs:vs + 3] = eye3
                JO[i, :, vs + 3:vs + 6] = skew(p[i])
                Jw[i, :, vs + 3:vs + 6] = eye3
                continue

            if par >= 0:
                Rp, pp = R[par], p[par]
                omp, vop = om[par], vo[par]
                alphap, aop = alpha_b[par], ao_b[par]
            else:  # anchored to the world frame
                Rp, pp = eye3, zero3
                omp, vop = zero3, zero3
                alphap, aop = zero3, zero3

            r = Rp @ self.parent_offset[i]
            R[i] = Rp @ R_rel[i]
            pi = pp + r
            p[i] = pi
            w_rel_w = Rp @ w_rel[i]
            om[i] = omp + w_rel_w
            om_x_r = cross3(omp, r)
            vo[i] = vop + om_x_r

            if par >= 0:
                Jw[i] = Jw[par]
                JO[i] = JO[par]
            if jt == JOINT_SPHERICAL:
                Jw[i, :, vs:vs + 3] += Rp
                JO[i, :, vs:vs + 3] += skew(pi) @ Rp
            else:
                sw = Rp @ self.axis[i]
                Jw[i, :, vs] += sw
                JO[i, :, vs] += cross3(pi, sw)

            alpha_b[i] = alphap + cross3(omp, w_rel_w)
            ao_b[i] = aop + cross3(alphap, r) + cross3(omp, om_x_r)

        c = np.matmul(R, self.com_offset[:, :, None])[:, :, 0]
        com = p + c
        vcom = vo + cross_batch(om, c)
        Jcom = JO - cross_rows_batch(com, Jw)
        acom_b = ao_b + cross_batch(alpha_b, c) + cross_batch(om, cross_batch(om, c))

        return Kinematics(
            system=self, R=R, p=p, om=om, vo=vo, com=com, vcom=vcom,
            Jw=Jw, JO=JO, Jcom=Jcom,
            alpha_bias=alpha_b, ao_bias=ao_b, acom_bias=acom_b,
            w_rel=w_rel, q=q, v=v,
        )

    # --- marker helpers --------------------------------------------------------

    def marker_position(self, state: SystemState, name: str) -> np.ndarray:
        if name not in self.markers:
            raise KeyError(f"unknown marker {name!r}")
        body, local = self.markers[name]
        kin = self.kinematics(state)
        return kin.p[body] + kin.R[body] @ local

    def body_index(self, name: str) -> int:
        return self.names.index(name)


@dataclass
class Kinematics:
    """World-frame poses, velocities, Jacobians and bias accelerations."""

    system: ArticulatedSystem
    R: np.ndarray          # (B,3,3) body orientation
    p: np.ndarray          # (B,3) body origin (proximal joint)
    om: np.ndarray         # (B,3) angular velocity
    vo: np.ndarray         # (B,3) origin linear velocity
    com: np.ndarray        # (B,3)
    vcom: np.ndarray       # (B,3)
    Jw: np.ndarray         # (B,3,nv) angular Jacobians
    JO: np.ndarray         # (B,3,nv) world-origin-point Jacobians
    Jcom: np.ndarray       # (B,3,nv) COM Jacobians
    alpha_bias: np.ndarray  # (B,3) angular acceleration at zero v̇
    ao_bias: np.ndarray     # (B,3) origin acceleration at zero v̇
    acom_bias: np.ndarray   # (B,3)
    w_rel: np.ndarray       # (B,3) joint relative angular velocity (parent frame)
    q: np.ndarray
    v: np.ndarray

    def world_point(self, body: int, local: np.ndarray) -> np.ndarray:
        return self.p[body] + self.R[body] @ local

    def point_velocity(self, body: int, world_point: np.ndarray) -> np.ndarray:
        return self.vo[body] + cross3(self.om[body], world_point - self.p[body])

    def point_jacobian(self, body: int, world_point: np.ndarray) -> np.ndarray:
        return self.JO[body] - cross_rows(world_point, self.Jw[body])

    def point_bias_acceleration(self, body: int, world_point: np.ndarray) -> np.ndarray:
        r = world_point - self.p[body]
        return (
            self.ao_bias[body]
            + cross3(self.alpha_bias[body], r)
            + cross3(self.om[body], cross3(self.om[body], r))
        )

    def point_acceleration(self, body: int, world_point: np.ndarray, vdot: np.ndarray) -> np.ndarray:
        return self.point_jacobian(body, world_point) @ vdot + self.point_bias_acceleration(
            body, world_point
        )


def build_system(model: BodyModel) -> ArticulatedSystem:
    """Lower a validated BodyModel into the array representation."""
    order = [model.root]
    joint_for_child = {j.child: j for j in model.joints}
    child_map: dict[str, list[str]] = {}
    for j in model.joints:
        child_map.setdefault(j.parent, []).append(j.child)
    stack = [model.root]
    while stack:
        seg = stack.pop(0)
        for c in child_map.get(seg, ()):
            order.append(c)
            stack.append(c)

    idx = {n: i for i, n in enumerate(order)}
    names, parents, jtypes, offsets, axes = [], [], [], [], []
    masses, inertias, coms, stiff, damp, rest, jnames = [], [], [], [], [], [], []
    for name in order:
        seg = model.segment(name)
        names.append(name)
        masses.append(seg.mass)
        inertias.append(seg.inertia)
        coms.append(seg.com_offset)
        if name == model.root:
            parents.append(-1)
            jtypes.append(JOINT_FREE)
            offsets.append(np.zeros(3))
            axes.append(np.zeros(3))
            stiff.append(np.zeros(0))
            damp.append(np.zeros(0))
            rest.append(np.zeros(0))
            jnames.append("")
        else:
            j = joint_for_child[name]
            parents.append(idx[j.parent])
            jtypes.append(JOINT_SPHERICAL if j.joint_type == "spherical" else JOINT_REVOLUTE)
            offsets.append(j.parent_offset)
            axes.append(j.axis if j.axis is not None else np.zeros(3))
            stiff.append(j.stiffness)
            damp.append(j.damping)
            rest.append(j.rest_angles)
            jnames.append(j.name)

    markers = {m.name: (idx[m.segment], np.asarray(m.local_point, dtype=float)) for m in model.markers}
    return ArticulatedSystem(
        names, parents, jtypes, offsets, axes, masses, inertias, coms,
        stiff, damp, rest, markers=markers, joint_names=jnames,
    )


def integrate_coordinates(system: ArticulatedSystem, q: np.ndarray, v: np.ndarray, dt: float) -> np.ndarray:
    """Advance generalized coordinates by ``dt`` at constant velocity.

    Quaternions advance along the exponential map and are renormalized.
    """
    qn = q.copy()
    if system.joint_type[0] == JOINT_FREE:
        qn[0:3] = q[0:3] + dt * v[0:3]
        qn[3:7] = quat_normalize(quat_mul(quat_from_rotvec(v[3:6] * dt), q[3:7]))
    if len(system._sph):
        dq = quat_from_rotvec_batch(v[system._sph_v] * dt)
        qnew = quat_mul_batch(dq, q[system._sph_q])
        qnew /= np.sqrt(np.einsum("ij,ij->i", qnew, qnew))[:, None]
        qn[system._sph_q] = qnew
    if len(system._rev):
        qn[system._rev_q] = q[system._rev_q] + dt * v[system._rev_v]
    return qn


def coordinate_rates(system: ArticulatedSystem, q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """dq/dt for RK-style integrators (quaternion rates, not renormalized)."""
    qd = np.zeros_like(q)
    for i in range(system.n_bodies):
        jt = system.joint_type[i]
        qs, vs = system.q_start[i], system.v_start[i]
        if jt == JOINT_FREE:
            qd[qs:qs + 3] = v[vs:vs + 3]
            qd[qs + 3:qs + 7] = quat_derivative(q[qs + 3:qs + 7], v[vs + 3:vs + 6])
        elif jt == JOINT_SPHERICAL:
            qd[qs:qs + 4] = quat_derivative(q[qs:qs + 4], v[vs:vs + 3])
        else:
            qd[qs] = v[vs]
    return qd


def normalize_quaternions(system: ArticulatedSystem, q: np.ndarray) -> np.ndarray:
    qn = q.copy()
    for i in range(system.n_bodies):
        qs = system.q_start[i]
        if system.joint_type[i] == JOINT_FREE:
            qn[qs + 3:qs + 7] = quat_normalize(q[qs + 3:qs + 7])
        elif system.joint_type[i] == JOINT_SPHERICAL:
            qn[qs:qs + 4] = quat_normalize(q[qs:qs + 4])
    return qn
