"""Twelve-segment seated occupant model.

Segments, joints and output markers for a seated human excited through the
seat. The default anthropometry uses de Leva (1996) adjusted male segment
mass fractions, remapped onto this model's 12-segment partition:

* pelvis / lumbar trunk       <- de Leva lower / middle trunk
* thoracic trunk + neck       <- de Leva upper trunk, with 1.2 % of body
                                 mass carved out as a cervical link (the
                                 de Leva head fraction, 6.94 %, already
                                 includes neck soft tissue and is kept
                                 intact on the head segment)
* lower legs                  <- shank + foot lumped (feet unsupported)
* forearms + hands            <- one combined segment for both sides,
                                 attached at the torso midline so the
                                 model stays laterally symmetric

Segment frames are aligned with the world frame in the initial posture
(erect trunk, horizontal thighs, vertical shanks), so identity joint
rotations reproduce the seated pose. Lengths scale with stature, segment
masses with total mass; inertia tensors are those of a uniform solid
ellipsoid with the segment's contact ellipsoid semi-axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


class BodyValidationError(ValueError):
    """Raised when a body definition violates a model invariant."""


# mass fraction of total body mass per segment (sums to 1.0 exactly)
MASS_FRACTIONS = {
    "pelvis": 0.1117,
    "lumbar_trunk": 0.1633,
    "thoracic_trunk": 0.1476,
    "neck": 0.0120,
    "head": 0.0694,
    "left_upper_leg": 0.1416,
    "right_upper_leg": 0.1416,
    "left_lower_leg": 0.0570,
    "right_lower_leg": 0.0570,
    "left_upper_arm": 0.0271,
    "right_upper_arm": 0.0271,
    "forearms_hands": 0.0446,
}

TOTAL_MASS_RANGE = (40.0, 120.0)  # kg
STATURE_RANGE = (1.4, 2.1)  # m

SEGMENT_COUNT = 12

# geometry below is expressed as fractions of stature
_PELVIS_ELL_CENTER = (0.0, 0.0, 0.010)
_PELVIS_ELL_SEMI = (0.074, 0.094, 0.060)
_LUMBAR_JOINT = (-0.034, 0.0, 0.057)  # in pelvis frame
_LUMBAR_LEN = 0.100
_THORACIC_LEN = 0.180
_NECK_LEN = 0.050
_HIP_OFFSET = (0.011, 0.051, -0.017)  # +/- y in pelvis frame
_THIGH_LEN = 0.245
_SHANK_LEN = 0.246
_SHOULDER_OFFSET = (0.006, 0.104, 0.166)  # in thoracic frame
_UPPER_ARM_LEN = 0.186
_FOREARM_JOINT = (0.034, 0.0, -0.020)  # in thoracic frame, near elbow height
_FOREARM_LEN = 0.254


@dataclass(frozen=True)
class SegmentSpec:
    """Rigid segment: mass, inertia and contact ellipsoid geometry."""

    name: str
    mass: float  # kg
    inertia: np.ndarray  # 3x3 principal inertia about the COM, kg m^2
    com_offset: np.ndarray  # from proximal joint, segment frame, m
    ellipsoid_semi_axes: np.ndarray  # m
    ellipsoid_offset: np.ndarray  # ellipsoid center in segment frame, m
    ellipsoid_orientation: np.ndarray = field(
        default_factory=lambda: np.eye(3)
    )  # in segment frame

    def validate(self) -> None:
        if self.mass <= 0.0:
            raise BodyValidationError(f"segment {self.name}: mass must be > 0")
        d = np.diag(self.inertia)
        if np.any(d <= 0.0):
            raise BodyValidationError(f"segment {self.name}: inertia diagonal must be > 0")
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            if d[i] > d[j] + d[k] + 1e-12:
                raise BodyValidationError(
                    f"segment {self.name}: principal inertias violate the triangle inequality"
                )
        if np.any(self.ellipsoid_semi_axes <= 0.0):
            raise BodyValidationError(f"segment {self.name}: ellipsoid semi-axes must be > 0")


@dataclass(frozen=True)
class JointSpec:
    """Kinematic joint with passive postural stabilization gains.

    ``stiffness``/``damping`` are PD gains toward ``rest_angles``:
    per-axis (3,) for spherical joints, scalars wrapped to shape (1,) for
    revolute joints. ``parent_offset`` locates the joint (and the child
    frame origin) in the parent segment frame.
    """

    name: str
    parent: str
    child: str
    joint_type: str  # "spherical" | "revolute"
    parent_offset: np.ndarray  # m
    axis: np.ndarray | None = None  # unit vector, revolute only
    rest_angles: np.ndarray | None = None  # rad
    stiffness: np.ndarray | None = None  # N m / rad per DOF
    damping: np.ndarray | None = None  # N m s / rad per DOF

    @property
    def dof(self) -> int:
        return 3 if self.joint_type == "spherical" else 1

    def validate(self) -> None:
        if self.joint_type not in ("spherical", "revolute"):
            raise BodyValidationError(f"joint {self.name}: unknown type {self.joint_type!r}")
        if self.joint_type == "revolute":
            if self.axis is None or abs(np.linalg.norm(self.axis) - 1.0) > 1e-9:
                raise BodyValidationError(f"joint {self.name}: revolute axis must be a unit vector")
        for label, arr in (("stiffness", self.stiffness), ("damping", self.damping)):
            if arr is None or len(arr) != self.dof:
                raise BodyValidationError(f"joint {self.name}: {label} must have {self.dof} entries")
            if np.any(arr < 0.0):
                raise BodyValidationError(f"joint {self.name}: {label} must be >= 0")


@dataclass(frozen=True)
class Marker:
    """Named output point fixed in a segment frame."""

    name: str
    segment: str
    local_point: np.ndarray  # m


@dataclass(frozen=True)
class BodyModel:
    """Validated 12-segment occupant: segments, joint tree and markers.

    Immutable after construction; safe to share across concurrent
    simulations.
    """

    segments: tuple[SegmentSpec, ...]
    joints: tuple[JointSpec, ...]
    markers: tuple[Marker, ...]

    def __post_init__(self):
        self.validate()

    @property
    def root(self) -> str:
        return self.segments[0].name

    @property
    def total_mass(self) -> float:
        return float(sum(s.mass for s in self.segments))

    def segment(self, name: str) -> SegmentSpec:
        for s in self.segments:
            if s.name == name:
                return s
        raise KeyError(f"unknown segment {name!r}")

    def joint(self, name: str) -> JointSpec:
        for j in self.joints:
            if j.name == name:
                return j
        raise KeyError(f"unknown joint {name!r}")

    def marker(self, name: str) -> Marker:
        for m in self.markers:
            if m.name == name:
                return m
        raise KeyError(f"unknown marker {name!r}")

    def validate(self) -> None:
        if len(self.segments) != SEGMENT_COUNT:
            raise BodyValidationError(
                f"segment count must be {SEGMENT_COUNT}, got {len(self.segments)}"
            )
        names = [s.name for s in self.segments]
        if len(set(names)) != len(names):
            raise BodyValidationError("duplicate segment names")
        for s in self.segments:
            s.validate()
        total = self.total_mass
        if not (TOTAL_MASS_RANGE[0] <= total <= TOTAL_MASS_RANGE[1]):
            raise BodyValidationError(
                f"total mass {total:.1f} kg outside sanity range {TOTAL_MASS_RANGE}"
            )
        name_set = set(names)
        children = set()
        for j in self.joints:
            j.validate()
            if j.parent not in name_set:
                raise BodyValidationError(f"joint {j.name}: unknown parent {j.parent!r}")
            if j.child not in name_set:
                raise BodyValidationError(f"joint {j.name}: unknown child {j.child!r}")
            if j.child in children:
                raise BodyValidationError(f"segment {j.child} has more than one parent joint")
            children.add(j.child)
        root = self.segments[0].name
        if root in children:
            raise BodyValidationError(f"root segment {root} must not have a parent joint")
        # tree rooted at the first segment: every other segment reachable, no cycles
        reach = {root}
        frontier = [root]
        child_map: dict[str, list[str]] = {}
        for j in self.joints:
            child_map.setdefault(j.parent, []).append(j.child)
        while frontier:
            seg = frontier.pop()
            for c in child_map.get(seg, ()):
                if c in reach:
                    raise BodyValidationError("joint graph contains a cycle")
                reach.add(c)
                frontier.append(c)
        if reach != name_set:
            missing = sorted(name_set - reach)
            raise BodyValidationError(f"segments not reachable from {root}: {missing}")
        for m in self.markers:
            if m.segment not in name_set:
                raise BodyValidationError(f"marker {m.name}: unknown segment {m.segment!r}")

    def with_joint_gains(self, gains: dict[str, tuple[float, float]]) -> "BodyModel":
        """New model with per-joint (stiffness, damping) scalars applied to all DOF."""
        new_joints = []
        for j in self.joints:
            if j.name in gains:
                k, c = gains[j.name]
                new_joints.append(
                    replace(
                        j,
                        stiffness=np.full(j.dof, float(k)),
                        damping=np.full(j.dof, float(c)),
                    )
                )
            else:
                new_joints.append(j)
        return BodyModel(self.segments, tuple(new_joints), self.markers)


def _ellipsoid_inertia(mass: float, semi: np.ndarray) -> np.ndarray:
    a, b, c = semi
    return np.diag(
        [
            mass / 5.0 * (b * b + c * c),
            mass / 5.0 * (a * a + c * c),
            mass / 5.0 * (a * a + b * b),
        ]
    )


def _segment(name: str, mass: float, center, semi) -> SegmentSpec:
    center = np.asarray(center, dtype=float)
    semi = np.asarray(semi, dtype=float)
    return SegmentSpec(
        name=name,
        mass=mass,
        inertia=_ellipsoid_inertia(mass, semi),
        com_offset=center.copy(),
        ellipsoid_semi_axes=semi,
        ellipsoid_offset=center.copy(),
    )


# default per-joint PD gains (N m/rad, N m s/rad), shared across both sides
DEFAULT_JOINT_GAINS = {
    "lumbar": (180.0, 15.0),
    "thoracic": (220.0, 18.0),
    "neck": (15.0, 1.2),
    "head": (15.0, 1.2),
    "left_hip": (120.0, 10.0),
    "right_hip": (120.0, 10.0),
    "left_knee": (25.0, 1.5),
    "right_knee": (25.0, 1.5),
    "left_shoulder": (30.0, 2.5),
    "right_shoulder": (30.0, 2.5),
    "elbows": (8.0, 0.8),
}


def build_default_body(total_mass: float, stature: float) -> BodyModel:
    """Construct the default seated occupant.

    The pelvis frame is the model origin; the seat geometry is placed
    around the settled body by the scenario builder. Segment masses sum
    exactly to ``total_mass``.
    """
    if not (TOTAL_MASS_RANGE[0] <= total_mass <= TOTAL_MASS_RANGE[1]):
        raise BodyValidationError(
            f"total_mass {total_mass} kg out of range [{TOTAL_MASS_RANGE[0]}, {TOTAL_MASS_RANGE[1]}]"
        )
    if not (STATURE_RANGE[0] <= stature <= STATURE_RANGE[1]):
        raise BodyValidationError(
            f"stature {stature} m out of range [{STATURE_RANGE[0]}, {STATURE_RANGE[1]}]"
        )

    h = stature
    m = {name: frac * total_mass for name, frac in MASS_FRACTIONS.items()}

    def sc(v) -> np.ndarray:  # stature-fraction triple -> meters
        return np.array(v, dtype=float) * h

    segments = (
        _segment("pelvis", m["pelvis"], sc(_PELVIS_ELL_CENTER), sc(_PELVIS_ELL_SEMI)),
        _segment("lumbar_trunk", m["lumbar_trunk"], sc((0.029, 0.0, 0.050)), sc((0.063, 0.086, 0.069))),
        _segment("thoracic_trunk", m["thoracic_trunk"], sc((0.029, 0.0, 0.080)), sc((0.063, 0.092, 0.100))),
        _segment("neck", m["neck"], sc((0.029, 0.0, 0.025)), sc((0.034, 0.034, 0.034))),
        _segment("head", m["head"], sc((0.029, 0.0, 0.063)), sc((0.057, 0.045, 0.067))),
        _segment("left_upper_leg", m["left_upper_leg"], sc((0.123, 0.0, 0.006)), sc((0.131, 0.040, 0.037))),
        _segment("right_upper_leg", m["right_upper_leg"], sc((0.123, 0.0, 0.006)), sc((0.131, 0.040, 0.037))),
        _segment("left_lower_leg", m["left_lower_leg"], sc((0.009, 0.0, -0.110)), sc((0.046, 0.040, 0.126))),
        _segment("right_lower_leg", m["right_lower_leg"], sc((0.009, 0.0, -0.110)), sc((0.046, 0.040, 0.126))),
        _segment("left_upper_arm", m["left_upper_arm"], sc((0.0, 0.0, -0.093)), sc((0.040, 0.040, 0.103))),
        _segment("right_upper_arm", m["right_upper_arm"], sc((0.0, 0.0, -0.093)), sc((0.040, 0.040, 0.103))),
        _segment("forearms_hands", m["forearms_hands"], sc((0.127, 0.0, -0.006)), sc((0.143, 0.091, 0.034))),
    )

    y_axis = np.array([0.0, 1.0, 0.0])
    hip_l = sc((_HIP_OFFSET[0], +_HIP_OFFSET[1], _HIP_OFFSET[2]))
    hip_r = sc((_HIP_OFFSET[0], -_HIP_OFFSET[1], _HIP_OFFSET[2]))
    sh_l = sc((_SHOULDER_OFFSET[0], +_SHOULDER_OFFSET[1], _SHOULDER_OFFSET[2]))
    sh_r = sc((_SHOULDER_OFFSET[0], -_SHOULDER_OFFSET[1], _SHOULDER_OFFSET[2]))

    def jnt(name, parent, child, offset, jtype="spherical", axis=None):
        k, c = DEFAULT_JOINT_GAINS[name]
        dof = 3 if jtype == "spherical" else 1
        return JointSpec(
            name=name,
            parent=parent,
            child=child,
            joint_type=jtype,
            parent_offset=np.asarray(offset, dtype=float),
            axis=None if axis is None else np.asarray(axis, dtype=float),
            rest_angles=np.zeros(dof),
            stiffness=np.full(dof, k),
            damping=np.full(dof, c),
        )

    joints = (
        jnt("lumbar", "pelvis", "lumbar_trunk", sc(_LUMBAR_JOINT)),
        jnt("thoracic", "lumbar_trunk", "thoracic_trunk", sc((0.0, 0.0, _LUMBAR_LEN))),
        jnt("neck", "thoracic_trunk", "neck", sc((0.0, 0.0, _THORACIC_LEN))),
        jnt("head", "neck", "head", sc((0.0, 0.0, _NECK_LEN))),
        jnt("left_hip", "pelvis", "left_upper_leg", hip_l),
        jnt("right_hip", "pelvis", "right_upper_leg", hip_r),
        jnt("left_knee", "left_upper_leg", "left_lower_leg", sc((_THIGH_LEN, 0.0, -0.006)), "revolute", y_axis),
        jnt("right_knee", "right_upper_leg", "right_lower_leg", sc((_THIGH_LEN, 0.0, -0.006)), "revolute", y_axis),
        jnt("left_shoulder", "thoracic_trunk", "left_upper_arm", sh_l),
        jnt("right_shoulder", "thoracic_trunk", "right_upper_arm", sh_r),
        # both forearms + hands as one midline segment; the "elbows" hinge
        # hangs it from the thoracic trunk to keep the model symmetric
        jnt("elbows", "thoracic_trunk", "forearms_hands", sc(_FOREARM_JOINT), "revolute", y_axis),
    )

    markers = (
        Marker("pelvis", "pelvis", np.zeros(3)),
        Marker("trunk", "thoracic_trunk", sc((0.0, 0.0, _THORACIC_LEN))),  # T1-equivalent
        Marker("head", "head", sc((0.029, 0.0, 0.063))),
        Marker("left_knee", "left_lower_leg", np.zeros(3)),
        Marker("right_knee", "right_lower_leg", np.zeros(3)),
    )

    return BodyModel(segments=segments, joints=joints, markers=markers)


# --- contact attachment sites (used by the contact layer) ---

# segment -> site in segment frame, as stature fractions
_SEAT_SITES = {
    "pelvis": (0.0, 0.0, -0.050),  # ellipsoid bottom
    "left_upper_leg": (0.123, 0.0, -0.031),
    "right_upper_leg": (0.123, 0.0, -0.031),
}
_BACK_SITES = {
    "lumbar_trunk": (-0.034, 0.0, 0.050),  # ellipsoid rear point
    "thoracic_trunk": (-0.034, 0.0, 0.080),
}


def seat_contact_site(segment: str, stature: float) -> np.ndarray:
    """Underside attachment point for pan restraints / anti-drift springs."""
    if segment in _SEAT_SITES:
        return np.array(_SEAT_SITES[segment]) * stature
    if segment in _BACK_SITES:
        return np.array(_BACK_SITES[segment]) * stature
    raise KeyError(f"no seat contact site defined for segment {segment!r}")


def contact_plane_for_segment(segment: str) -> str:
    """Which seat surface ("pan" or "backrest") a restraint on this segment couples to."""
    if segment in _SEAT_SITES:
        return "pan"
    if segment in _BACK_SITES:
        return "backrest"
    raise KeyError(f"segment {segment!r} has no default restraint surface")


# --- config (de)serialization ---


def body_to_config(model: BodyModel) -> dict:
    """Body definition as plain config data (body.segments[]/joints[]/markers[])."""
    segs = []
    for s in model.segments:
        segs.append(
            {
                "name": s.name,
                "mass": float(s.mass),
                "inertia": [float(v) for v in np.diag(s.inertia)],
                "com_offset": [float(v) for v in s.com_offset],
                "ellipsoid_semi_axes": [float(v) for v in s.ellipsoid_semi_axes],
                "ellipsoid_offset": [float(v) for v in s.ellipsoid_offset],
            }
        )
    joints = []
    for j in model.joints:
        joints.append(
            {
                "name": j.name,
                "parent": j.parent,
                "child": j.child,
                "type": j.joint_type,
                "parent_offset": [float(v) for v in j.parent_offset],
                "axis": None if j.axis is None else [float(v) for v in j.axis],
                "rest_angles": [float(v) for v in j.rest_angles],
                "stiffness": [float(v) for v in j.stiffness],
                "damping": [float(v) for v in j.damping],
            }
        )
    markers = [
        {"name": m.name, "segment": m.segment, "point": [float(v) for v in m.local_point]}
        for m in model.markers
    ]
    return {"segments": segs, "joints": joints, "markers": markers}


def body_from_config(data: dict) -> BodyModel:
    """Inverse of :func:`body_to_config`."""
    segments = tuple(
        SegmentSpec(
            name=s["name"],
            mass=float(s["mass"]),
            inertia=np.diag([float(v) for v in s["inertia"]]),
            com_offset=np.array(s["com_offset"], dtype=float),
            ellipsoid_semi_axes=np.array(s["ellipsoid_semi_axes"], dtype=float),
            ellipsoid_offset=np.array(s["ellipsoid_offset"], dtype=float),
        )
        for s in data["segments"]
    )
    joints = tuple(
        JointSpec(
            name=j["name"],
            parent=j["parent"],
            child=j["child"],
            joint_type=j["type"],
            parent_offset=np.array(j["parent_offset"], dtype=float),
            axis=None if j.get("axis") is None else np.array(j["axis"], dtype=float),
            rest_angles=np.array(j["rest_angles"], dtype=float),
            stiffness=np.array(j["stiffness"], dtype=float),
            damping=np.array(j["damping"], dtype=float),
        )
        for j in data["joints"]
    )
    markers = tuple(
        Marker(m["name"], m["segment"], np.array(m["point"], dtype=float))
        for m in data["markers"]
    )
    return BodyModel(segments=segments, joints=joints, markers=markers)


def marker_world_position(model: BodyModel, state, marker: str) -> np.ndarray:
    """World position of a named marker at the given system state."""
    from .kinematics import build_system  # local import avoids a cycle

    system = build_system(model)
    return system.marker_position(state, marker)
