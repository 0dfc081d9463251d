"""Ground-truth Hamiltonian (and one dissipative) systems.

Every field, energy and bivector here is vectorised over leading axes: a state
batch of shape ``(..., n)`` maps to ``(..., n)`` fields and ``(..., n, n)``
bivectors.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

SYSTEMS = ("RB", "P2D", "Sh", "P3D", "HT", "RBdis")
DIMS = {"RB": 3, "P2D": 4, "Sh": 4, "P3D": 6, "HT": 6, "RBdis": 3}

# Tracked sub-vectors: (slice of M, slice of r) or None where the table has N/A.
PARTS = {
    "RB": (slice(0, 3), None),
    "RBdis": (slice(0, 3), None),
    "P2D": (slice(2, 4), slice(0, 2)),
    "P3D": (slice(3, 6), slice(0, 3)),
    "Sh": (None, slice(0, 4)),
    "HT": (slice(0, 3), slice(3, 6)),
}


def canonical_name(name: str) -> str:
    for s in SYSTEMS:
        if s.lower() == str(name).lower():
            return s
    raise ValueError(f"unknown system {name!r}; expected one of {', '.join(SYSTEMS)}")


def _default_box(name):
    if name == "Sh":
        return ((-0.5, 0.5), (-0.5, 0.5), (-0.1, 0.1), (-0.5, 0.5))
    if name == "HT":
        return ((-1.0, 1.0),) * 3
    return ((-1.0, 1.0),) * DIMS[name]


@dataclass(frozen=True)
class SystemSpec:
    """Physical parameters and initial-condition box of one system.

    For the heavy top, ``ic_box`` covers M only; r is drawn uniformly on the
    unit sphere and scaled by a radius uniform in ``r_radius``.
    """

    name: str = "RB"
    inertia: tuple[float, float, float] = (1.0, 2.0, 3.0)
    k: float = 1.0
    mgl: float = 1.0
    chi: tuple[float, float, float] = (0.0, 0.0, 1.0)
    tau: float = 0.1
    ic_box: tuple | None = None
    r_radius: tuple[float, float] = (0.5, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "name", canonical_name(self.name))
        object.__setattr__(self, "inertia", tuple(float(v) for v in self.inertia))
        object.__setattr__(self, "chi", tuple(float(v) for v in self.chi))
        if self.ic_box is None:
            object.__setattr__(self, "ic_box", _default_box(self.name))
        else:
            object.__setattr__(self, "ic_box", tuple(tuple(float(v) for v in iv) for iv in self.ic_box))
        if len(self.inertia) != 3 or min(self.inertia) <= 0:
            raise ValueError("inertia entries must be three positive numbers")
        if abs(np.linalg.norm(self.chi) - 1.0) > 1e-12:
            raise ValueError("gravity axis chi must have unit norm")
        if self.tau < 0:
            raise ValueError("dissipation tau must be non-negative")
        expected = 3 if self.name == "HT" else self.dim
        if len(self.ic_box) != expected:
            raise ValueError(f"ic_box for {self.name} needs {expected} intervals, got {len(self.ic_box)}")

    @property
    def dim(self) -> int:
        return DIMS[self.name]

    @property
    def hamiltonian_system(self) -> bool:
        return self.name != "RBdis"

    @property
    def max_abs(self) -> float | None:
        # Shivamoggi solutions can blow up; tails past this bound are dropped
        return 10.0 if self.name == "Sh" else None


# --- small helpers --------------------------------------------------------------

def hat3(v: np.ndarray) -> np.ndarray:
    """Skew matrix with ``hat3(v) @ w == cross(v, w)``."""
    v = np.asarray(v, dtype=np.float64)
    z = np.zeros(v.shape[:-1])
    x, y, w = v[..., 0], v[..., 1], v[..., 2]
    return np.stack([np.stack([z, -w, y], -1),
                     np.stack([w, z, -x], -1),
                     np.stack([-y, x, z], -1)], -2)


def canonical_bivector(n: int) -> np.ndarray:
    if n % 2:
        raise ValueError("canonical bivector needs an even dimension")
    m = n // 2
    L = np.zeros((n, n))
    L[:m, m:] = np.eye(m)
    L[m:, :m] = -np.eye(m)
    return L


def luv_to_bivector(U: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Assemble the 4x4 skew matrix from its (U, V) vector pair."""
    U = np.asarray(U, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    z = np.zeros(U.shape[:-1])
    u1, u2, u3 = U[..., 0], U[..., 1], U[..., 2]
    v1, v2, v3 = V[..., 0], V[..., 1], V[..., 2]
    return np.stack([np.stack([z, -u1, -u2, -u3], -1),
                     np.stack([u1, z, -v3, v2], -1),
                     np.stack([u2, v3, z, -v1], -1),
                     np.stack([u3, -v2, v1, z], -1)], -2)


def bivector_to_luv(L: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    L = np.asarray(L)
    U = np.stack([L[..., 1, 0], L[..., 2, 0], L[..., 3, 0]], -1)
    V = np.stack([L[..., 3, 2], L[..., 1, 3], L[..., 2, 1]], -1)
    return U, V


# --- rigid body ----------------------------------------------------------------------

def rb_energy(M, spec: SystemSpec):
    M = np.asarray(M, dtype=np.float64)
    return 0.5 * np.sum(M * M / np.asarray(spec.inertia), axis=-1)


def rb_energy_gradient(M, spec: SystemSpec):
    return np.asarray(M, dtype=np.float64) / np.asarray(spec.inertia)


def rb_field(M, spec: SystemSpec):
    """Euler's equations, dM/dt = M x dE/dM."""
    M = np.asarray(M, dtype=np.float64)
    return np.cross(M, rb_energy_gradient(M, spec))


def rbdis_field(M, spec: SystemSpec):
    """Rigid body with energetic Ehrenfest regularisation.

    dM/dt = M x E_M - (tau/2) Xi E_M with Xi = L^T diag(1/I) L and L = hat(M).
    Both terms are orthogonal to M, so |M| is conserved while E decays.
    """
    M = np.asarray(M, dtype=np.float64)
    g = rb_energy_gradient(M, spec)
    w = np.cross(M, g)                      # L g
    xi_g = -np.cross(M, w / np.asarray(spec.inertia))   # L^T D L g, L^T = -L
    return w - 0.5 * spec.tau * xi_g


# --- particles ---------------------------------------------------------------------

def particle_energy(x, spec: SystemSpec):
    x = np.asarray(x, dtype=np.float64)
    m = x.shape[-1] // 2
    q, p = x[..., :m], x[..., m:]
    return 0.5 * np.sum(p * p, axis=-1) + 0.5 * spec.k * np.sum(q * q, axis=-1)


def _particle_gradient(x, spec):
    x = np.asarray(x, dtype=np.float64)
    m = x.shape[-1] // 2
    return np.concatenate([spec.k * x[..., :m], x[..., m:]], axis=-1)


def particle_field(x, spec: SystemSpec):
    """Isotropic harmonic well: dq/dt = p, dp/dt = -k q."""
    x = np.asarray(x, dtype=np.float64)
    m = x.shape[-1] // 2
    return np.concatenate([x[..., m:], -spec.k * x[..., :m]], axis=-1)


# --- Shivamoggi ---------------------------------------------------------------------

def shivamoggi_field(s, spec: SystemSpec | None = None):
    s = np.asarray(s, dtype=np.float64)
    u, x, y, z = s[..., 0], s[..., 1], s[..., 2], s[..., 3]
    return np.stack([-u * y, z * y, z * x - u * u, x * y], axis=-1)


def shivamoggi_integrals(s):
    """First integrals (H1, H2, H3) stacked on the last axis."""
    s = np.asarray(s, dtype=np.float64)
    u, x, y, z = s[..., 0], s[..., 1], s[..., 2], s[..., 3]
    return np.stack([x * x - z * z, z * z + u * u - y * y, u * (z + x)], axis=-1)


def shivamoggi_poisson_pairs() -> list[Callable]:
    """The three (U_i, V_i) pairs, each a function of states returning (U, V)."""

    def pair1(s):
        u, x, y, z = np.moveaxis(np.asarray(s, dtype=np.float64), -1, 0)
        U = 2 * u[..., None] * np.stack([-y, z, y], -1)
        V = 2 * np.stack([u * u, y * (x + z), u * u - z * (x + z)], -1)
        return U, V

    def pair2(s):
        u, x, y, z = np.moveaxis(np.asarray(s, dtype=np.float64), -1, 0)
        c = 2 * (x + z)[..., None]
        return c * np.stack([0 * u, u, 0 * u], -1), c * np.stack([x, 0 * u, -z], -1)

    def pair3(s):
        u, x, y, z = np.moveaxis(np.asarray(s, dtype=np.float64), -1, 0)
        U = -4 * np.stack([y * z, z * x, x * y], -1)
        V = 4 * u[..., None] * np.stack([-x, 0 * u, z], -1)
        return U, V

    return [pair1, pair2, pair3]


def shivamoggi_bivector(s):
    """Smooth ground-truth bivector: conformal factor -1/(4(x+z)) times N2.

    With H2 as energy it reproduces the Shivamoggi field; H1 and H3 are its
    Casimirs.
    """
    u, x, y, z = np.moveaxis(np.asarray(s, dtype=np.float64), -1, 0)
    zero = 0 * u
    U = -0.5 * np.stack([zero, u, zero], -1)
    V = -0.5 * np.stack([x, zero, -z], -1)
    return luv_to_bivector(U, V)


# --- heavy top ----------------------------------------------------------------------

def heavy_top_energy(state, spec: SystemSpec):
    state = np.asarray(state, dtype=np.float64)
    return rb_energy(state[..., :3], spec) + spec.mgl * state[..., 3:] @ np.asarray(spec.chi)


def heavy_top_field(state, spec: SystemSpec):
    """dM/dt = M x H_M + r x H_r,  dr/dt = r x H_M."""
    state = np.asarray(state, dtype=np.float64)
    M, r = state[..., :3], state[..., 3:]
    hm = rb_energy_gradient(M, spec)
    hr = spec.mgl * np.broadcast_to(np.asarray(spec.chi), r.shape)
    return np.concatenate([np.cross(M, hm) + np.cross(r, hr), np.cross(r, hm)], axis=-1)


def heavy_top_bivector(state):
    state = np.asarray(state, dtype=np.float64)
    hM, hr = hat3(state[..., :3]), hat3(state[..., 3:])
    top = np.concatenate([hM, hr], -1)
    bottom = np.concatenate([hr, np.zeros_like(hr)], -1)
    return np.concatenate([top, bottom], -2)


# --- assembled ground truth ------------------------------------------------------------

@dataclass
class GroundTruth:
    field: Callable
    hamiltonian: Callable
    bivector: Callable
    hamiltonian_gradient: Callable | None = None
    casimirs: dict[str, Callable] = field(default_factory=dict)
    first_integrals: dict[str, Callable] = field(default_factory=dict)


def _casimir_quantities(name):
    # the quantity names understood by quantity()
    return {"RB": ("M2",), "RBdis": ("M2",), "P2D": ("rxM",), "P3D": ("rxM",),
            "Sh": ("H1", "H3"), "HT": ("r2", "Mr")}[name]


def quantity(name: str, system: str) -> Callable:
    """Scalar (or, for r x M in 3D, vector) tracked quantity of a system's states."""
    system = canonical_name(system)
    m_part, r_part = PARTS[system]
    if name == "M2" and m_part is not None:
        return lambda x: np.sum(np.asarray(x)[..., m_part] ** 2, axis=-1)
    if name == "r2" and r_part is not None and m_part is not None:
        return lambda x: np.sum(np.asarray(x)[..., r_part] ** 2, axis=-1)
    if name == "Mr" and system == "HT":
        return lambda x: np.sum(np.asarray(x)[..., m_part] * np.asarray(x)[..., r_part], axis=-1)
    if name == "rxM" and system in ("P2D", "P3D"):
        if system == "P2D":
            return lambda x: np.asarray(x)[..., 0] * np.asarray(x)[..., 3] - np.asarray(x)[..., 1] * np.asarray(x)[..., 2]
        return lambda x: np.cross(np.asarray(x)[..., r_part], np.asarray(x)[..., m_part])
    if name in ("H1", "H2", "H3") and system == "Sh":
        i = int(name[1]) - 1
        return lambda x: shivamoggi_integrals(x)[..., i]
    raise ValueError(f"quantity {name!r} is not defined for system {system}")


def ground_truth(spec: SystemSpec) -> GroundTruth:
    name = spec.name
    if name in ("RB", "RBdis"):
        gt = GroundTruth(
            field=(lambda x: rb_field(x, spec)) if name == "RB" else (lambda x: rbdis_field(x, spec)),
            hamiltonian=lambda x: rb_energy(x, spec),
            bivector=hat3,
            hamiltonian_gradient=lambda x: rb_energy_gradient(x, spec),
        )
    elif name in ("P2D", "P3D"):
        Lc = canonical_bivector(spec.dim)
        gt = GroundTruth(
            field=lambda x: particle_field(x, spec),
            hamiltonian=lambda x: particle_energy(x, spec),
            bivector=lambda x: np.broadcast_to(Lc, np.shape(x)[:-1] + Lc.shape).copy(),
            hamiltonian_gradient=lambda x: _particle_gradient(x, spec),
        )
    elif name == "Sh":
        gt = GroundTruth(
            field=shivamoggi_field,
            hamiltonian=lambda s: shivamoggi_integrals(s)[..., 1],
            bivector=shivamoggi_bivector,
            hamiltonian_gradient=lambda s: 2 * np.asarray(s) * np.array([1.0, 0.0, -1.0, 1.0]),
            first_integrals={f"H{i + 1}": quantity(f"H{i + 1}", "Sh") for i in range(3)},
        )
    else:
        gt = GroundTruth(
            field=lambda x: heavy_top_field(x, spec),
            hamiltonian=lambda x: heavy_top_energy(x, spec),
            bivector=heavy_top_bivector,
            hamiltonian_gradient=lambda x: np.concatenate(
                [rb_energy_gradient(np.asarray(x)[..., :3], spec),
                 spec.mgl * np.broadcast_to(np.asarray(spec.chi), np.shape(x)[:-1] + (3,))], -1),
        )
    gt.casimirs = {q: quantity(q, name) for q in _casimir_quantities(name)}
    return gt


def sample_initial_conditions(spec: SystemSpec, count: int, seed) -> np.ndarray:
    """Uniform draws from the system's box, shape ``(count, dim)``."""
    if count < 1:
        raise ValueError("count must be at least 1")
    box = np.asarray(spec.ic_box, dtype=np.float64)
    if np.any(box[:, 1] <= box[:, 0]):
        raise ValueError("initial-condition box has an empty interval")
    rng = np.random.default_rng(seed)
    x = rng.uniform(box[:, 0], box[:, 1], size=(count, len(box)))
    if spec.name != "HT":
        return x
    lo, hi = spec.r_radius
    if not 0 <= lo < hi:
        raise ValueError("heavy-top radius interval is empty")
    d = rng.normal(size=(count, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = d * rng.uniform(lo, hi, size=(count, 1))
    return np.concatenate([x, r], axis=1)
