"""Rigid seat contact layer and backrest contact variants.

The occupant meets the seat through ellipsoid-vs-plane penalty contacts.
Three backrest treatments are supported:

* ``mb_friction`` - rigid pan and backrest with regularized Coulomb
  friction everywhere, plus weak lateral springs at pelvis and thighs
  that stop the slow lateral drift friction cannot prevent;
* ``mb_shear``   - frictionless rigid surfaces with massless 2D point
  restraints (linear stiffness + damping acting only in the contact
  plane) at thighs, pelvis and back;
* ``foam_fe``    - pan as in ``mb_friction``, backrest replaced by the
  deformable foam blocks (see :mod:`seatsim.foam`).

The normal law is a Hunt-Crossley style nonlinear spring-damper
``F = k_n d^e + c_n d^e d_rate`` clamped at zero (no adhesion); scaling
the damping with penetration keeps the force continuous at touchdown and
release. Friction uses a tanh-regularized Coulomb law: set-valued
stiction is not representable in a fixed-step explicit scheme, so below
``v_reg`` the friction behaves as stiff viscous creep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import ExternalForces, SeatMotion
from .kinematics import Kinematics

VARIANTS = ("foam_fe", "mb_friction", "mb_shear")


class ContactConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PlaneSurface:
    """Rectangular rigid patch fixed in the seat frame."""

    point: np.ndarray  # m, seat frame
    normal: np.ndarray  # unit, points toward the occupant
    extent: np.ndarray  # in-plane half-widths, m

    def __post_init__(self):
        n = np.linalg.norm(self.normal)
        if abs(n - 1.0) > 1e-12:
            raise ContactConfigError(f"plane normal must be unit length (|n|={n})")
        if np.any(self.extent <= 0.0):
            raise ContactConfigError("plane extents must be > 0")
        # in-plane basis for the patch test
        ref = np.array([0.0, 0.0, 1.0])
        if abs(self.normal @ ref) > 0.9:
            ref = np.array([0.0, 1.0, 0.0])
        u = np.cross(self.normal, ref)
        u /= np.linalg.norm(u)
        object.__setattr__(self, "_u", u)
        object.__setattr__(self, "_v", np.cross(self.normal, u))

    def contains(self, point: np.ndarray, offset: np.ndarray) -> bool:
        d = point - (self.point + offset)
        return abs(d @ self._u) <= self.extent[0] and abs(d @ self._v) <= self.extent[1]


@dataclass(frozen=True)
class NormalContactLaw:
    """Nonlinear penalty normal force F = k_n d^e (1-sided) + damping."""

    k_n: float  # N/m^e at unit penetration
    e: float = 1.5  # >= 1
    c_n: float = 0.0  # damping, scaled by d^e when penetration_limited
    penetration_limited: bool = True

    def __post_init__(self):
        if self.k_n <= 0.0:
            raise ContactConfigError("k_n must be > 0")
        if self.c_n < 0.0:
            raise ContactConfigError("c_n must be >= 0")
        if self.e < 1.0:
            raise ContactConfigError("contact exponent must be >= 1")

    def force(self, delta: float, delta_rate: float) -> float:
        """Normal force magnitude, never negative (no adhesion)."""
        if delta <= 0.0:
            return 0.0
        de = delta ** self.e
        damp = self.c_n * (de if self.penetration_limited else 1.0) * delta_rate
        return max(0.0, self.k_n * de + damp)

    def stored_energy(self, delta: float) -> float:
        if delta <= 0.0:
            return 0.0
        return self.k_n * delta ** (self.e + 1.0) / (self.e + 1.0)


@dataclass(frozen=True)
class FrictionLaw:
    """Regularized Coulomb friction: |F_t| = mu F_n tanh(|v_t| / v_reg)."""

    mu: float
    v_reg: float = 0.01  # m/s

    def __post_init__(self):
        if self.mu < 0.0:
            raise ContactConfigError("mu must be >= 0")
        if self.v_reg <= 0.0:
            raise ContactConfigError("v_reg must be > 0")


def friction_force(f_n: float, v_t: np.ndarray, law: FrictionLaw) -> np.ndarray:
    """Tangential force opposing v_t, inside the cone |F_t| <= mu F_n."""
    speed = math.sqrt(float(v_t @ v_t))
    if speed < 1e-14 or f_n <= 0.0 or law.mu == 0.0:
        return np.zeros(3)
    scale = law.mu * f_n * math.tanh(speed / law.v_reg) / speed
    return -scale * v_t


def ellipsoid_plane_penetration(
    center: np.ndarray, R: np.ndarray, semi: np.ndarray,
    plane_point: np.ndarray, normal: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Penetration depth and deepest ellipsoid point against a plane.

    Uses the exact ellipsoid support function along the plane normal;
    depth <= 0 means no overlap.
    """
    dRn = semi * (R.T @ normal)
    s = math.sqrt(float(dRn @ dRn))
    lowest = float(normal @ center) - s
    delta = float(normal @ plane_point) - lowest
    deepest = center - R @ (semi * dRn / s)
    return delta, deepest


def ellipsoid_plane_contact(
    center: np.ndarray, R: np.ndarray, semi: np.ndarray,
    surface: PlaneSurface, law: NormalContactLaw,
    point_velocity=None, surface_offset: np.ndarray | None = None,
    surface_velocity: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Penalty normal force at the deepest-penetration point.

    ``point_velocity(point) -> world velocity`` supplies the body-side
    velocity of the contact point; the surface may be displaced/moving
    with the seat frame. Returns (force vector, contact point, depth);
    zero force when there is no overlap.
    """
    offset = surface_offset if surface_offset is not None else np.zeros(3)
    delta, deepest = ellipsoid_plane_penetration(
        center, R, semi, surface.point + offset, surface.normal
    )
    if delta <= 0.0 or not surface.contains(deepest, offset):
        return np.zeros(3), deepest, min(delta, 0.0)
    v_rel = np.zeros(3)
    if point_velocity is not None:
        v_rel = point_velocity(deepest)
    if surface_velocity is not None:
        v_rel = v_rel - surface_velocity
    delta_rate = -float(surface.normal @ v_rel)
    f_n = law.force(delta, delta_rate)
    return f_n * surface.normal, deepest, delta


@dataclass
class PointRestraint:
    """Massless in-plane spring-damper tying a body point to a seat anchor."""

    body: int
    local_point: np.ndarray
    plane_normal: np.ndarray  # unit; force has no component along it
    k_t: float  # N/m
    c_t: float  # N s/m
    anchor: np.ndarray | None = None  # seat-frame point, captured after settling

    def __post_init__(self):
        if self.k_t < 0.0 or self.c_t < 0.0:
            raise ContactConfigError("restraint stiffness/damping must be >= 0")


def point_restraint_force(
    restraint: PointRestraint,
    point: np.ndarray, point_velocity: np.ndarray,
    anchor: np.ndarray, anchor_velocity: np.ndarray,
) -> np.ndarray:
    """Restoring force from in-plane displacement/velocity only."""
    n = restraint.plane_normal
    d = point - anchor
    v = point_velocity - anchor_velocity
    d_par = d - (d @ n) * n
    v_par = v - (v @ n) * n
    return -(restraint.k_t * d_par + restraint.c_t * v_par)


@dataclass
class WeakSpring:
    """Weak anti-drift spring acting along a single lateral axis."""

    body: int
    local_point: np.ndarray
    axis: np.ndarray  # unit lateral direction
    k_w: float  # N/m
    anchor: float | None = None  # seat-frame coordinate along axis

    def __post_init__(self):
        if self.k_w < 0.0:
            raise ContactConfigError("weak spring stiffness must be >= 0")


@dataclass
class EllipsoidGeom:
    """Contact ellipsoid of one segment, in world via the body pose."""

    body: int
    offset: np.ndarray  # center in segment frame
    semi: np.ndarray


@dataclass
class SeatGeometry:
    pan: PlaneSurface
    backrest: PlaneSurface
    pan_bodies: list  # list[EllipsoidGeom]
    backrest_bodies: list  # list[EllipsoidGeom]


AUDIT_FIELDS = (
    "fz_total",      # vertical component of all seat-to-body forces, N
    "fn_pan",        # pan normal force sum, N
    "fn_back",       # backrest normal force sum, N
    "ft_friction",   # tangential friction force magnitude sum, N
    "ft_restraint",  # restraint force magnitude sum, N
    "cone_margin",   # max of |F_t| - mu F_n over contacts (<= 0 inside cone)
    "elastic",       # stored contact energy, J
)


class SeatContact:
    """Stateful per-simulation contact assembler for one variant.

    Holds the restraint/weak-spring anchor memory (fixed after settling)
    and, for the foam variant, the deformable backrest state. Everything
    else is stateless force evaluation.
    """

    audit_fields = AUDIT_FIELDS

    def __init__(
        self,
        variant: str,
        geometry: SeatGeometry,
        normal_law: NormalContactLaw,
        friction: FrictionLaw,
        restraints: list | None = None,
        weak_springs: list | None = None,
        foam=None,
    ):
        if variant not in VARIANTS:
            raise ContactConfigError(
                f"unknown contact variant {variant!r}; expected one of {VARIANTS}"
            )
        if variant == "foam_fe" and foam is None:
            raise ContactConfigError("foam_fe variant requires a foam model")
        self.variant = variant
        self.geometry = geometry
        self.normal_law = normal_law
        self.friction = friction
        self.restraints = list(restraints or [])
        self.weak_springs = list(weak_springs or [])
        self.foam = foam
        self._elastic = 0.0
        self._anchors_initialized = False

    # friction applies on rigid surfaces except in the shear variant,
    # where restraints carry all tangential load
    @property
    def _rigid_friction(self) -> bool:
        return self.variant != "mb_shear"

    def capture_anchors(self, kin: Kinematics, seat: SeatMotion, i: int) -> None:
        """Anchor restraints/springs at the current body points (seat frame)."""
        disp = seat.displacement(i)
        for r in self.restraints:
            r.anchor = kin.world_point(r.body, r.local_point) - disp
        for s in self.weak_springs:
            s.anchor = float((kin.world_point(s.body, s.local_point) - disp) @ s.axis)
        self._anchors_initialized = True

    def stored_energy(self) -> float:
        e = self._elastic
        if self.foam is not None:
            e += self.foam.total_energy()
        return e

    def forces(self, kin: Kinematics, seat: SeatMotion, i: int, dt: float):
        """Assemble seat reaction forces for the current state."""
        if not self._anchors_initialized:
            self.capture_anchors(kin, seat, i)
        ext = ExternalForces.zero(kin.system)
        disp = seat.displacement(i)
        vel = seat.velocity(i)
        fz = fn_pan = fn_back = ft_fric = ft_rest = 0.0
        cone = 0.0
        elastic = 0.0

        surfaces = [(self.geometry.pan, self.geometry.pan_bodies, True)]
        if self.variant != "foam_fe":
            surfaces.append((self.geometry.backrest, self.geometry.backrest_bodies, False))

        for surface, bodies, is_pan in surfaces:
            n = surface.normal
            plane_pt = surface.point + disp
            for ell in bodies:
                center = kin.world_point(ell.body, ell.offset)
                delta, deepest = ellipsoid_plane_penetration(
                    center, kin.R[ell.body], ell.semi, plane_pt, n
                )
                if delta <= 0.0 or not surface.contains(deepest, disp):
                    continue
                v_rel = kin.point_velocity(ell.body, deepest) - vel
                vn = float(n @ v_rel)
                f_n = self.normal_law.force(delta, -vn)
                force = f_n * n
                if self._rigid_friction:
                    v_t = v_rel - vn * n
                    f_t = friction_force(f_n, v_t, self.friction)
                    force = force + f_t
                    mag_t = math.sqrt(float(f_t @ f_t))
                    ft_fric += mag_t
                    cone = max(cone, mag_t - self.friction.mu * f_n)
                ext.add_force_at_point(ell.body, force, deepest, kin)
                fz += float(force[2])
                if is_pan:
                    fn_pan += f_n
                else:
                    fn_back += f_n
                elastic += self.normal_law.stored_energy(delta)

        if self.variant == "mb_shear":
            for r in self.restraints:
                pt = kin.world_point(r.body, r.local_point)
                pv = kin.point_velocity(r.body, pt)
                f = point_restraint_force(r, pt, pv, r.anchor + disp, vel)
                ext.add_force_at_point(r.body, f, pt, kin)
                fz += float(f[2])
                ft_rest += math.sqrt(float(f @ f))
                d = pt - (r.anchor + disp)
                d_par = d - (d @ r.plane_normal) * r.plane_normal
                elastic += 0.5 * r.k_t * float(d_par @ d_par)
        else:
            for s in self.weak_springs:
                pt = kin.world_point(s.body, s.local_point)
                stretch = float(pt @ s.axis) - (s.anchor + float(disp @ s.axis))
                f = -s.k_w * stretch * s.axis
                ext.add_force_at_point(s.body, f, pt, kin)
                fz += float(f[2])
                elastic += 0.5 * s.k_w * stretch * stretch

        if self.foam is not None:
            foam_audit = self.foam.advance(kin, seat, i, dt, ext)
            fz += foam_audit["fz"]
            fn_back += foam_audit["fn"]
            ft_fric += foam_audit["ft"]
            cone = max(cone, foam_audit["cone_margin"])

        self._elastic = elastic
        return ext, np.array([fz, fn_pan, fn_back, ft_fric, ft_rest, cone, elastic])
