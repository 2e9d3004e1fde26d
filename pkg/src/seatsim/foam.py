"""Deformable foam backrest: tetrahedral blocks with a hysteretic material.

The backrest is two disjoint blocks of four-node tetrahedra bonded to the
rigid seat frame at their back face. The material is an isotropic linear
tetrahedron whose modulus is the secant of a tabulated compressive
stress-strain curve, evaluated at the element's energy-equivalent strain
``s = sqrt(eps : C : eps)`` (identical to the compressive strain under
uniaxial compression). Evaluating the secant at this invariant makes the
stress the exact gradient of a potential, so the element is passive;
scaling by the principal compressive strain instead gives an unsymmetric
tangent whose compression/shear cycles generate energy and blow up the
explicit integration. On unloading (equivalent strain below the
historical maximum) the stress follows a straight branch with slope
``hysteresis_slope`` toward a shifted origin, which closes a dissipative
loop over compression cycles; crushed elements keep a small residual
modulus. Stiffness-proportional damping supplies the viscous loss.

Free nodes integrate explicitly with lumped masses from the foam density,
substepped below the body step to satisfy the stability limit; fixed
nodes follow the prescribed seat motion exactly. Node-vs-ellipsoid
penalty contact couples the foam to the occupant with regularized
friction, accumulating the exact opposite wrench on the body segment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .contact import ContactConfigError, FrictionLaw
from .dynamics import ExternalForces, SeatMotion
from .kinematics import Kinematics
from .rotations import cross_batch


class FoamMaterialError(ValueError):
    pass


class FoamMeshError(ValueError):
    pass


class ElementInversionError(RuntimeError):
    """A tetrahedron volume went non-positive during simulation."""

    def __init__(self, element: int):
        super().__init__(f"foam element {element} inverted (volume <= 0)")
        self.element = element


@dataclass(frozen=True)
class FoamMaterial:
    """Tabulated compressive loading curve plus hysteresis and density."""

    strain: np.ndarray  # dimensionless, increasing from 0
    stress: np.ndarray  # Pa, through (0, 0), strictly increasing
    hysteresis_slope: float  # Pa, unloading branch stiffness
    density: float  # kg/m^3
    damping_ratio: float = 0.05
    poisson: float = 0.0

    def __post_init__(self):
        s, t = self.strain, self.stress
        if len(s) < 2 or len(s) != len(t):
            raise FoamMaterialError("loading curve needs matching strain/stress arrays")
        if abs(s[0]) > 1e-12 or abs(t[0]) > 1e-12:
            raise FoamMaterialError("loading curve must pass through (0, 0)")
        if np.any(np.diff(s) <= 0.0) or np.any(np.diff(t) <= 0.0):
            raise FoamMaterialError("loading curve must be strictly increasing")
        if s[-1] > 0.9 + 1e-12 or np.any(s < 0.0):
            raise FoamMaterialError("loading curve strains must lie in [0, 0.9]")
        if self.hysteresis_slope <= 0.0:
            raise FoamMaterialError("hysteresis_slope must be > 0")
        if self.density <= 0.0:
            raise FoamMaterialError("density must be > 0")
        if not (0.0 <= self.poisson < 0.5):
            raise FoamMaterialError("poisson ratio must lie in [0, 0.5)")

    @property
    def initial_modulus(self) -> float:
        return float(self.stress[1] / self.strain[1])

    @property
    def max_tangent_modulus(self) -> float:
        tangents = np.diff(self.stress) / np.diff(self.strain)
        return float(max(tangents.max(), self.hysteresis_slope))

    def loading_stress(self, eps: np.ndarray) -> np.ndarray:
        """Virgin-curve stress; extrapolates the last tabulated slope."""
        eps = np.asarray(eps, dtype=float)
        out = np.interp(eps, self.strain, self.stress)
        last_slope = (self.stress[-1] - self.stress[-2]) / (self.strain[-1] - self.strain[-2])
        over = eps > self.strain[-1]
        if np.any(over):
            out = np.where(over, self.stress[-1] + last_slope * (eps - self.strain[-1]), out)
        return out

    def effective_stress(self, eps: np.ndarray, eps_max: np.ndarray) -> np.ndarray:
        """Stress on the hysteretic path at strain ``eps`` with memory ``eps_max``."""
        return np.maximum(
            0.0,
            self.loading_stress(eps_max) - self.hysteresis_slope * (eps_max - eps),
        )

    @classmethod
    def from_csv(cls, path, hysteresis_slope: float, density: float,
                 damping_ratio: float = 0.05, poisson: float = 0.0) -> "FoamMaterial":
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        return cls(
            strain=np.ascontiguousarray(data[:, 0]),
            stress=np.ascontiguousarray(data[:, 1]),
            hysteresis_slope=hysteresis_slope,
            density=density,
            damping_ratio=damping_ratio,
            poisson=poisson,
        )


def _tet_volumes(nodes: np.ndarray, tets: np.ndarray) -> np.ndarray:
    a = nodes[tets[:, 1]] - nodes[tets[:, 0]]
    b = nodes[tets[:, 2]] - nodes[tets[:, 0]]
    c = nodes[tets[:, 3]] - nodes[tets[:, 0]]
    return np.einsum("ij,ij->i", np.cross(a, b), c) / 6.0


def _connected_components(n_nodes: int, tets: np.ndarray) -> np.ndarray:
    parent = np.arange(n_nodes)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for tet in tets:
        r = find(tet[0])
        for k in tet[1:]:
            parent[find(k)] = r
    roots = np.array([find(i) for i in range(n_nodes)])
    _, labels = np.unique(roots, return_inverse=True)
    return labels


@dataclass
class FoamMesh:
    """Tet mesh of the two backrest blocks, anchored at fixed nodes."""

    nodes: np.ndarray  # (N,3) reference positions, seat frame
    tets: np.ndarray  # (E,4) int
    fixed: np.ndarray  # node indices bonded to the seat frame

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.tets = np.asarray(self.tets, dtype=int)
        self.fixed = np.asarray(self.fixed, dtype=int)
        vols = _tet_volumes(self.nodes, self.tets)
        if np.any(vols <= 0.0):
            bad = int(np.argmax(vols <= 0.0))
            raise FoamMeshError(f"reference tet {bad} has non-positive volume")
        if len(self.fixed) == 0:
            raise FoamMeshError("mesh must have fixed nodes anchoring it to the seat")
        labels = _connected_components(len(self.nodes), self.tets)
        if labels.max() + 1 != 2:
            raise FoamMeshError(
                f"mesh must consist of exactly two disjoint blocks, found {labels.max() + 1}"
            )
        self.block_of_node = labels

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.tets)

    def total_volume(self) -> float:
        return float(_tet_volumes(self.nodes, self.tets).sum())

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"nodes {self.n_nodes}\n")
            for x, y, z in self.nodes:
                fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")
            fh.write(f"tets {self.n_elements}\n")
            for t in self.tets:
                fh.write(f"{t[0]} {t[1]} {t[2]} {t[3]}\n")
            fh.write(f"fixed {len(self.fixed)}\n")
            for i in self.fixed:
                fh.write(f"{i}\n")

    @classmethod
    def load(cls, path) -> "FoamMesh":
        with open(path) as fh:
            tokens = fh.read().split()
        pos = 0

        def expect(kw):
            nonlocal pos
            if tokens[pos] != kw:
                raise FoamMeshError(f"mesh file: expected {kw!r}, found {tokens[pos]!r}")
            pos += 1
            n = int(tokens[pos])
            pos += 1
            return n

        n = expect("nodes")
        nodes = np.array(tokens[pos:pos + 3 * n], dtype=float).reshape(n, 3)
        pos += 3 * n
        e = expect("tets")
        tets = np.array(tokens[pos:pos + 4 * e], dtype=int).reshape(e, 4)
        pos += 4 * e
        f = expect("fixed")
        fixed = np.array(tokens[pos:pos + f], dtype=int)
        return cls(nodes=nodes, tets=tets, fixed=fixed)


# 6-tet decomposition of a hexahedral cell (consistent diagonal)
_HEX_TETS = (
    (0, 1, 3, 7), (0, 1, 7, 5), (0, 5, 7, 4),
    (0, 3, 2, 7), (0, 2, 6, 7), (0, 6, 4, 7),
)


def build_block_mesh(blocks, fixed_face: str = "x0") -> FoamMesh:
    """Structured tet mesh of rectangular blocks.

    ``blocks`` is a sequence of (origin, size, divisions); nodes on the
    ``fixed_face`` plane of each block (local x=0 by default, the face
    bonded to the seat frame) are fixed.
    """
    all_nodes, all_tets, all_fixed = [], [], []
    offset = 0
    for origin, size, div in blocks:
        origin = np.asarray(origin, dtype=float)
        size = np.asarray(size, dtype=float)
        nx, ny, nz = (int(d) for d in div)
        xs = np.linspace(0.0, size[0], nx + 1)
        ys = np.linspace(0.0, size[1], ny + 1)
        zs = np.linspace(0.0, size[2], nz + 1)
        X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
        nodes = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1) + origin

        def nid(i, j, k):
            return (i * (ny + 1) + j) * (nz + 1) + k

        tets = []
        for i in range(nx):
            for j in range(ny):
                for k in range(nz):
                    corners = [
                        nid(i, j, k), nid(i + 1, j, k), nid(i, j + 1, k), nid(i + 1, j + 1, k),
                        nid(i, j, k + 1), nid(i + 1, j, k + 1), nid(i, j + 1, k + 1),
                        nid(i + 1, j + 1, k + 1),
                    ]
                    for tet in _HEX_TETS:
                        tets.append([corners[c] for c in tet])
        tets = np.array(tets, dtype=int)
        vols = _tet_volumes(nodes, tets)
        flip = vols < 0.0
        tets[flip, 2], tets[flip, 3] = tets[flip, 3], tets[flip, 2].copy()

        if fixed_face == "x0":
            fixed = np.nonzero(np.isclose(nodes[:, 0] - origin[0], 0.0))[0]
        else:
            raise FoamMeshError(f"unsupported fixed face {fixed_face!r}")

        all_nodes.append(nodes)
        all_tets.append(tets + offset)
        all_fixed.append(fixed + offset)
        offset += len(nodes)

    return FoamMesh(
        nodes=np.concatenate(all_nodes),
        tets=np.concatenate(all_tets),
        fixed=np.concatenate(all_fixed),
    )


def _isotropic_unit_compliance(poisson: float) -> np.ndarray:
    """Voigt stiffness for unit Young's modulus (engineering shear)."""
    lam = poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson)) if poisson > 0.0 else 0.0
    mu = 1.0 / (2.0 * (1.0 + poisson))
    C = np.zeros((6, 6))
    C[:3, :3] = lam
    C[np.diag_indices(3)] += 2.0 * mu
    C[3, 3] = C[4, 4] = C[5, 5] = mu
    return C


class FoamModel:
    """Per-simulation deformable backrest state and force evaluation."""

    def __init__(
        self,
        mesh: FoamMesh,
        material: FoamMaterial,
        contact_bodies=(),  # list[EllipsoidGeom] candidates for node contact
        friction: FrictionLaw = FrictionLaw(mu=1.2),
        dt: float = 1e-3,
        substeps: int = 0,
        contact_stiffness: float | None = None,
        cfl_safety: float = 0.5,
    ):
        self.mesh = mesh
        self.material = material
        self.contact_bodies = list(contact_bodies)
        self.friction = friction
        self.dt = float(dt)

        nodes, tets = mesh.nodes, mesh.tets
        E = mesh.n_elements
        self.volumes = _tet_volumes(nodes, tets)

        # constant strain-displacement matrices
        B = np.zeros((E, 6, 12))
        d_xi = np.array(
            [[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
        )
        J = np.stack(
            [nodes[tets[:, k + 1]] - nodes[tets[:, 0]] for k in range(3)], axis=2
        )
        Jinv = np.linalg.inv(J)
        grads = np.einsum("nk,eki->eni", d_xi, Jinv)  # (E, 4, 3) shape gradients
        for nloc in range(4):
            g = grads[:, nloc, :]
            col = 3 * nloc
            B[:, 0, col] = g[:, 0]
            B[:, 1, col + 1] = g[:, 1]
            B[:, 2, col + 2] = g[:, 2]
            B[:, 3, col] = g[:, 1]
            B[:, 3, col + 1] = g[:, 0]
            B[:, 4, col + 1] = g[:, 2]
            B[:, 4, col + 2] = g[:, 1]
            B[:, 5, col] = g[:, 2]
            B[:, 5, col + 2] = g[:, 0]
        self.B = B
        self.C_unit = _isotropic_unit_compliance(material.poisson)
        self.CB = np.einsum("ab,ebj->eaj", self.C_unit, B)  # (E,6,12)

        # lumped nodal masses from density
        self.node_mass = np.zeros(mesh.n_nodes)
        np.add.at(self.node_mass, tets.ravel(), np.repeat(material.density * self.volumes / 4.0, 4))

        self.free = np.ones(mesh.n_nodes, dtype=bool)
        self.free[mesh.fixed] = False
        self._scatter_idx = (tets[:, :, None] * 3 + np.arange(3)[None, None, :]).reshape(-1)

        # crushed foam keeps a small residual stiffness so elements never
        # fully decouple
        self.min_modulus_fraction = 0.05

        # stiffness-proportional damping tuned to the quarter-wave mode
        # through the thinnest block dimension
        e0 = material.initial_modulus
        bbox = nodes.max(axis=0) - nodes.min(axis=0)
        thickness = max(float(np.min(bbox[bbox > 1e-9])), 1e-3)
        c0 = math.sqrt(e0 / material.density)
        omega1 = 0.5 * math.pi * c0 / thickness
        self.damping_beta = 2.0 * material.damping_ratio / omega1

        # per-node contact penalty, scaled to the foam stiffness
        h_char = (self.volumes.mean() * 6.0) ** (1.0 / 3.0)
        self.contact_k = (
            contact_stiffness if contact_stiffness is not None else 4.0 * e0 * h_char
        )
        self.contact_c = 0.6 * math.sqrt(self.contact_k * float(np.median(self.node_mass)))

        # explicit stability: bound the highest nodal frequency with the
        # stiffest possible modulus, then substep the body dt below it
        e_max = material.max_tangent_modulus
        k_diag = np.zeros(mesh.n_nodes)
        diagK = np.einsum("eij,eij->ej", self.B, self.CB) * self.volumes[:, None] * e_max
        np.add.at(k_diag, tets.ravel(), diagK.reshape(E, 4, 3).sum(axis=2).ravel())
        k_diag[self.free] += self.contact_k
        omega_max = math.sqrt(float(np.max(k_diag / self.node_mass)))
        self.dt_stable = 2.0 / omega_max * cfl_safety
        if substeps and substeps > 0:
            self.substeps = int(substeps)
            if self.dt / self.substeps > self.dt_stable:
                need = self.dt / self.dt_stable
                raise ContactConfigError(
                    f"foam substep dt {self.dt / self.substeps:.2e} s exceeds the stable "
                    f"step {self.dt_stable:.2e} s; use dt <= {self.dt_stable:.2e} s or "
                    f"at least {math.ceil(need)} substeps"
                )
        else:
            self.substeps = max(1, math.ceil(self.dt / self.dt_stable))

        # mutable state
        self.x = nodes.copy()
        self.v = np.zeros_like(nodes)
        self.eps_max = np.zeros(E)  # hysteresis memory
        self._last_elastic = 0.0

    # --- material/element force evaluation -----------------------------------

    def element_forces(self, x: np.ndarray, v: np.ndarray, update_memory: bool = True):
        """Internal nodal forces (N,3) for node positions/velocities.

        Secant-modulus elasticity on the loading curve, hysteresis branch
        on unloading, plus stiffness-proportional damping. Forces sum to
        zero per element under rigid translation by construction (B maps
        uniform translation to zero strain).
        """
        mesh, mat = self.mesh, self.material
        u = (x - mesh.nodes)[mesh.tets].reshape(-1, 12)
        ve = v[mesh.tets].reshape(-1, 12)
        eps = np.einsum("eij,ej->ei", self.B, u)
        ceps = np.einsum("eaj,ej->ea", self.CB, u)
        eps_c = np.sqrt(np.maximum(np.einsum("ea,ea->e", eps, ceps), 0.0))

        eps_mem = np.maximum(self.eps_max, eps_c)
        if update_memory:
            self.eps_max = eps_mem
        s_eff = self.material.effective_stress(eps_c, eps_mem)
        e0 = mat.initial_modulus
        e_eff = np.where(eps_c > 1e-9, s_eff / np.maximum(eps_c, 1e-9), e0)
        e_eff = np.maximum(e_eff, self.min_modulus_fraction * e0)

        sig = e_eff[:, None] * (ceps + self.damping_beta * np.einsum("eaj,ej->ea", self.CB, ve))
        f_elem = -np.einsum("eaj,ea->ej", self.B, sig) * self.volumes[:, None]
        return np.bincount(
            self._scatter_idx, weights=f_elem.reshape(-1), minlength=3 * mesh.n_nodes
        ).reshape(-1, 3)

    # --- node-vs-ellipsoid contact --------------------------------------------

    def contact_forces(self, kin: Kinematics, x: np.ndarray, v: np.ndarray, ext_accum=None):
        """Penalty push-out plus friction on penetrating nodes.

        Returns (nodal forces, audit dict); the equal-and-opposite wrench
        is accumulated per body into ``ext_accum`` (body index -> force,
        torque about world origin) for later averaging.
        """
        f = np.zeros_like(x)
        fn_sum = ft_sum = fz_sum = 0.0
        cone = 0.0
        for ell in self.contact_bodies:
            Rb = kin.R[ell.body]
            center = kin.p[ell.body] + Rb @ ell.offset
            local = (x - center) @ Rb / ell.semi
            rho2 = np.einsum("ij,ij->i", local, local)
            mask = rho2 < 1.0
            if not np.any(mask):
                continue
            idx = np.nonzero(mask)[0]
            xi = local[idx]
            rho = np.sqrt(np.maximum(rho2[idx], 1e-20))
            # radial push-out: depth along the outward surface normal
            n_loc = xi / ell.semi
            n_loc /= np.linalg.norm(n_loc, axis=1, keepdims=True)
            n_world = n_loc @ Rb.T
            surf_local = xi / rho[:, None] * ell.semi
            depth = np.linalg.norm((surf_local - xi * ell.semi), axis=1)

            pts = x[idx]
            v_body = kin.vo[ell.body] + cross_batch(kin.om[ell.body][None, :], pts - kin.p[ell.body])
            v_rel = v[idx] - v_body
            vn = np.einsum("ij,ij->i", v_rel, n_world)
            f_n = np.maximum(0.0, self.contact_k * depth - self.contact_c * vn)
            force = f_n[:, None] * n_world
            v_t = v_rel - vn[:, None] * n_world
            speed = np.linalg.norm(v_t, axis=1)
            sat = np.tanh(speed / self.friction.v_reg)
            with np.errstate(invalid="ignore", divide="ignore"):
                f_t = np.where(
                    (speed > 1e-14)[:, None],
                    -(self.friction.mu * f_n * sat / np.maximum(speed, 1e-14))[:, None] * v_t,
                    0.0,
                )
            force = force + f_t
            f[idx] += force

            if ext_accum is not None:
                F_tot = -force.sum(axis=0)
                T_tot = -cross_batch(pts, force).sum(axis=0)
                acc = ext_accum.setdefault(ell.body, [np.zeros(3), np.zeros(3)])
                acc[0] += F_tot
                acc[1] += T_tot

            fn_sum += float(f_n.sum())
            ft_mags = np.linalg.norm(f_t, axis=1)
            ft_sum += float(ft_mags.sum())
            with np.errstate(invalid="ignore"):
                cone = max(cone, float(np.max(ft_mags - self.friction.mu * f_n, initial=0.0)))
            fz_sum += float(-force[:, 2].sum())  # reaction on the body
        return f, {"fn": fn_sum, "ft": ft_sum, "fz": fz_sum, "cone_margin": cone}

    # --- explicit integration ---------------------------------------------------

    def step_foam(self, loads: np.ndarray, dt_sub: float, seat_disp: np.ndarray, seat_vel: np.ndarray) -> None:
        """One explicit substep; fixed nodes track the seat frame exactly."""
        free = self.free
        acc = loads[free] / self.node_mass[free, None]
        self.v[free] += dt_sub * acc
        self.x[free] += dt_sub * self.v[free]
        self.x[~free] = self.mesh.nodes[~free] + seat_disp
        self.v[~free] = seat_vel

    def check_inversion(self) -> None:
        vols = _tet_volumes(self.x, self.mesh.tets)
        if np.any(vols <= 0.0):
            raise ElementInversionError(int(np.argmax(vols <= 0.0)))

    def advance(self, kin: Kinematics, seat: SeatMotion, i: int, dt: float, ext: ExternalForces):
        """Advance the foam by one body step (substepped), averaging the
        coupling wrench onto the occupant."""
        n_sub = self.substeps
        dt_sub = dt / n_sub
        wrench: dict = {}
        audit = {"fn": 0.0, "ft": 0.0, "fz": 0.0, "cone_margin": 0.0}
        last = seat.n_samples - 1
        for s in range(n_sub):
            if i < last:
                frac = s / n_sub
                disp = seat.pos[i] * (1.0 - frac) + seat.pos[i + 1] * frac
                velm = seat.vel[i] * (1.0 - frac) + seat.vel[i + 1] * frac
            else:
                disp, velm = seat.pos[last], seat.vel[last]
            seat_disp = disp * seat.axis_vector
            seat_vel = velm * seat.axis_vector

            loads = self.element_forces(self.x, self.v)
            fc, sub_audit = self.contact_forces(kin, self.x, self.v, wrench)
            loads += fc
            self.step_foam(loads, dt_sub, seat_disp, seat_vel)
            for k in ("fn", "ft", "fz"):
                audit[k] += sub_audit[k] / n_sub
            audit["cone_margin"] = max(audit["cone_margin"], sub_audit["cone_margin"])

        if not np.all(np.isfinite(self.x)):
            raise ElementInversionError(int(np.argmax(~np.isfinite(self.x).all(axis=1))))
        self.check_inversion()
        for body, (F, T0) in wrench.items():
            ext.force[body] += F / n_sub
            # torque accumulated about the world origin; convert to the
            # body-origin reference used by ExternalForces
            ext.torque[body] += T0 / n_sub - np.cross(kin.p[body], F / n_sub)
        return audit

    # --- energy audit --------------------------------------------------------------

    def kinetic_energy(self) -> float:
        return 0.5 * float(np.sum(self.node_mass[:, None] * self.v * self.v))

    def elastic_energy(self) -> float:
        """Quadratic estimate 0.5 sigma : eps at the current secant state."""
        mesh = self.mesh
        u = (self.x - mesh.nodes)[mesh.tets].reshape(-1, 12)
        eps = np.einsum("eij,ej->ei", self.B, u)
        ceps = np.einsum("eaj,ej->ea", self.CB, u)
        eps_c = np.sqrt(np.maximum(np.einsum("ea,ea->e", eps, ceps), 0.0))
        e0 = self.material.initial_modulus
        s_eff = self.material.effective_stress(eps_c, np.maximum(self.eps_max, eps_c))
        e_eff = np.where(eps_c > 1e-9, s_eff / np.maximum(eps_c, 1e-9), e0)
        e_eff = np.maximum(e_eff, self.min_modulus_fraction * e0)
        return 0.5 * float(np.einsum("e,ea,ea,e->", e_eff, ceps, eps, self.volumes))

    def total_energy(self) -> float:
        return self.kinetic_energy() + self.elastic_energy()

    def total_mass(self) -> float:
        return float(self.node_mass.sum())
