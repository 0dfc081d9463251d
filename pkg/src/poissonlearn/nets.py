"""One-hidden-layer softplus networks for the energy H(x) and the bivector L(x).

All evaluation functions work on numpy arrays and on :class:`~poissonlearn.ad.Var`
parameters alike, so the same code path is used for training (recorded on a
tape) and for rollouts/metrics (plain arrays).  Input gradients are closed form,
which keeps the tape first-order.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import ad

PHI_EPS = 1e-3
FLAVORS = ("WJ", "SJ", "IJ")


@dataclass
class MlpParams:
    """Weights of ``x -> W2 softplus(W1 x + b1) + b2``."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    NAMES = ("W1", "b1", "W2", "b2")

    @classmethod
    def init(cls, n_in: int, hidden: int, n_out: int, rng: np.random.Generator) -> "MlpParams":
        if hidden < 1 or n_out < 1 or n_in < 1:
            raise ValueError("network sizes must be positive")
        a1 = 1.0 / np.sqrt(n_in)
        a2 = 1.0 / np.sqrt(hidden)
        return cls(
            W1=rng.uniform(-a1, a1, size=(hidden, n_in)),
            b1=np.zeros(hidden),
            W2=rng.uniform(-a2, a2, size=(n_out, hidden)),
            b2=np.zeros(n_out),
        )

    @property
    def n_in(self) -> int:
        return ad.value_of(self.W1).shape[1]

    @property
    def hidden(self) -> int:
        return ad.value_of(self.W1).shape[0]

    @property
    def n_out(self) -> int:
        return ad.value_of(self.W2).shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.NAMES}

    def on_tape(self, tape: ad.Tape) -> "MlpParams":
        return MlpParams(*(tape.leaf(getattr(self, k)) for k in self.NAMES))

    def to_json(self) -> dict:
        return {k: np.asarray(getattr(self, k)).tolist() for k in self.NAMES}

    @classmethod
    def from_json(cls, d: dict) -> "MlpParams":
        p = cls(**{k: np.asarray(d[k], dtype=np.float64) for k in cls.NAMES})
        p.W1 = p.W1.reshape(len(p.b1), -1)
        p.W2 = p.W2.reshape(len(p.b2), -1)
        for k, v in p.arrays().items():
            if not np.all(np.isfinite(v)):
                raise ValueError(f"non-finite entries in {k}")
        return p


def _check_dim(p: MlpParams, x) -> None:
    n = ad.value_of(x).shape[-1]
    if n != p.n_in:
        raise ValueError(f"state dimension {n} does not match network input dimension {p.n_in}")


def _preact(p: MlpParams, x):
    _check_dim(p, x)
    return ad.matvec(p.W1, x) + p.b1


def mlp(p: MlpParams, x):
    """Network output, shape ``(..., n_out)``."""
    return ad.matvec(p.W2, ad.softplus(_preact(p, x))) + p.b2


def mlp_input_jacobian(p: MlpParams, x):
    """d(output)/dx, shape ``(..., n_out, n_in)``."""
    s = ad.sigmoid(_preact(p, x))
    s = ad.reshape(s, s.shape[:-1] + (1, s.shape[-1]))
    return ad.matmul(s * p.W2, p.W1)


def _scalar_out(p: MlpParams, x):
    out = mlp(p, x)
    return ad.reshape(out, out.shape[:-1])


def _scalar_grad(p: MlpParams, x):
    # W1^T (sigmoid(W1 x + b1) * w2)
    s = ad.sigmoid(_preact(p, x))
    return ad.matvec(ad.transpose(p.W1, (1, 0)), s * p.W2[0])


def _scalar_hessian(p: MlpParams, x: np.ndarray) -> np.ndarray:
    """Closed-form input Hessian of a scalar network (numpy only)."""
    s = ad.sigmoid(_preact(p, x))
    w = s * (1.0 - s) * p.W2[0]
    return np.einsum("hi,...h,hj->...ij", p.W1, w, p.W1)


# --- skew assembly -------------------------------------------------------------

@lru_cache(maxsize=None)
def upper_index(n: int) -> tuple[tuple[int, int], ...]:
    """Row-major strictly-upper-triangular index pairs; part of the checkpoint contract."""
    return tuple((i, j) for i in range(n) for j in range(i + 1, n))


@lru_cache(maxsize=None)
def _assembly(n: int) -> np.ndarray:
    # maps the n(n-1)/2 upper entries to the flattened n*n skew matrix
    pairs = upper_index(n)
    P = np.zeros((n * n, len(pairs)))
    for k, (i, j) in enumerate(pairs):
        P[i * n + j, k] = 1.0
        P[j * n + i, k] = -1.0
    P.setflags(write=False)
    return P


@lru_cache(maxsize=None)
def _hat() -> np.ndarray:
    # J -> [[0,-Jz,Jy],[Jz,0,-Jx],[-Jy,Jx,0]], flattened
    Q = np.zeros((9, 3))
    for (i, j, k, sign) in [(0, 1, 2, -1), (0, 2, 1, 1), (1, 0, 2, 1),
                            (1, 2, 0, -1), (2, 0, 1, -1), (2, 1, 0, 1)]:
        Q[i * 3 + j, k] = sign
    Q.setflags(write=False)
    return Q


def skew_from_upper(upper, n: int):
    flat = ad.matvec(_assembly(n), upper)
    return ad.reshape(flat, flat.shape[:-1] + (n, n))


def hat(J):
    """3-vector(s) to skew matrices, ``hat(J) @ v == cross(J, v)``."""
    flat = ad.matvec(_hat(), J)
    return ad.reshape(flat, flat.shape[:-1] + (3, 3))


def vee(L: np.ndarray) -> np.ndarray:
    """Inverse of :func:`hat` for numpy arrays."""
    L = np.asarray(L)
    return np.stack([L[..., 2, 1], L[..., 0, 2], L[..., 1, 0]], axis=-1)


# --- model types -------------------------------------------------------------------

@dataclass
class HamiltonianModel:
    params: MlpParams

    @classmethod
    def init(cls, n, hidden, rng):
        return cls(MlpParams.init(n, hidden, 1, rng))


@dataclass
class BivectorModel:
    params: MlpParams

    @classmethod
    def init(cls, n, hidden, rng):
        return cls(MlpParams.init(n, hidden, n * (n - 1) // 2, rng))

    @property
    def n(self) -> int:
        return self.params.n_in


@dataclass
class CasimirModel:
    """Implicit-Jacobi bivector ``J = grad C / phi`` (3D only)."""

    casimir_params: MlpParams
    phi_params: MlpParams

    @classmethod
    def init(cls, hidden, rng):
        return cls(MlpParams.init(3, hidden, 1, rng), MlpParams.init(3, hidden, 1, rng))


def eval_h(model: HamiltonianModel, x):
    return _scalar_out(model.params, x)


def grad_h(model: HamiltonianModel, x):
    return _scalar_grad(model.params, x)


def eval_bivector(model: BivectorModel, x):
    return skew_from_upper(mlp(model.params, x), model.n)


def bivector_jacobian(model: BivectorModel, x):
    """``D[..., i, j, k] = dL^{ij}/dx^k``."""
    n = model.n
    dup = mlp_input_jacobian(model.params, x)           # (..., m, n)
    D = ad.matmul(_assembly(n), dup)                    # (..., n*n, n)
    return ad.reshape(D, D.shape[:-2] + (n, n, n))


def _ij_phi(model: CasimirModel, x):
    return ad.softplus(_scalar_out(model.phi_params, x)) + PHI_EPS


def eval_ij_vector(model: CasimirModel, x):
    if ad.value_of(x).shape[-1] != 3:
        raise ValueError("IJ flavor is 3D-only")
    phi = _ij_phi(model, x)
    gc = _scalar_grad(model.casimir_params, x)
    return gc / ad.reshape(phi, phi.shape + (1,))


def eval_ij_bivector(model: CasimirModel, x):
    return hat(eval_ij_vector(model, x))


def ij_vector_jacobian(model: CasimirModel, x: np.ndarray) -> np.ndarray:
    """dJ_i/dx_k for the implicit-Jacobi vector (numpy only)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != 3:
        raise ValueError("IJ flavor is 3D-only")
    raw = _scalar_out(model.phi_params, x)
    phi = np.logaddexp(0.0, raw) + PHI_EPS
    dphi = ad.sigmoid(raw)[..., None] * _scalar_grad(model.phi_params, x)
    gc = _scalar_grad(model.casimir_params, x)
    hc = _scalar_hessian(model.casimir_params, x)
    return hc / phi[..., None, None] - gc[..., :, None] * dphi[..., None, :] / (phi ** 2)[..., None, None]


# --- flavored composite --------------------------------------------------------------

@dataclass
class PoissonModel:
    """Energy plus bivector, in one of the WJ / SJ / IJ flavors."""

    flavor: str
    n: int
    hamiltonian: HamiltonianModel
    bivector: BivectorModel | None = None
    casimir: CasimirModel | None = None
    seed: int = 0

    @classmethod
    def init(cls, flavor: str, n: int, hidden: int, rng: np.random.Generator, seed: int = 0):
        if flavor not in FLAVORS:
            raise ValueError(f"unknown flavor {flavor!r}")
        if flavor == "IJ" and n != 3:
            raise ValueError("IJ flavor is 3D-only")
        h = HamiltonianModel.init(n, hidden, rng)
        if flavor == "IJ":
            return cls(flavor, n, h, casimir=CasimirModel.init(hidden, rng), seed=seed)
        return cls(flavor, n, h, bivector=BivectorModel.init(n, hidden, rng), seed=seed)

    @property
    def hidden(self) -> int:
        return self.hamiltonian.params.hidden

    # parameters are addressed as "<block>.<array>", e.g. "h.W1"
    def _blocks(self) -> dict[str, MlpParams]:
        if self.flavor == "IJ":
            return {"h": self.hamiltonian.params, "casimir": self.casimir.casimir_params,
                    "phi": self.casimir.phi_params}
        return {"h": self.hamiltonian.params, "l": self.bivector.params}

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{b}.{k}": v for b, p in self._blocks().items() for k, v in p.arrays().items()}

    def with_blocks(self, blocks: dict[str, MlpParams]) -> "PoissonModel":
        if self.flavor == "IJ":
            return replace(self, hamiltonian=HamiltonianModel(blocks["h"]),
                           casimir=CasimirModel(blocks["casimir"], blocks["phi"]))
        return replace(self, hamiltonian=HamiltonianModel(blocks["h"]),
                       bivector=BivectorModel(blocks["l"]))

    def with_parameters(self, flat: dict) -> "PoissonModel":
        blocks = {b: MlpParams(*(flat[f"{b}.{k}"] for k in MlpParams.NAMES)) for b in self._blocks()}
        return self.with_blocks(blocks)

    def on_tape(self, tape: ad.Tape) -> tuple["PoissonModel", dict[str, ad.Var]]:
        """Copy with every parameter registered as a leaf of ``tape``."""
        leaves = {name: tape.leaf(v) for name, v in self.parameters().items()}
        return self.with_parameters(leaves), leaves

    # -- evaluation
    def energy(self, x):
        return eval_h(self.hamiltonian, x)

    def energy_gradient(self, x):
        return grad_h(self.hamiltonian, x)

    def L(self, x):
        if self.flavor == "IJ":
            return eval_ij_bivector(self.casimir, x)
        return eval_bivector(self.bivector, x)

    def field(self, x):
        """Hamiltonian vector field ``L(x) grad H(x)``."""
        g = grad_h(self.hamiltonian, x)
        if self.flavor == "IJ":
            return ad.cross3(eval_ij_vector(self.casimir, x), g)
        L = eval_bivector(self.bivector, x)
        v = ad.matmul(L, ad.reshape(g, g.shape + (1,)))
        return ad.reshape(v, v.shape[:-1])

    def dL(self, x):
        """Closed-form ``dL^{ij}/dx^k``, shape ``(..., n, n, n)``."""
        if self.flavor == "IJ":
            dJ = ij_vector_jacobian(self.casimir, x)
            return np.einsum("abi,...ik->...abk", _hat().reshape(3, 3, 3), dJ)
        return bivector_jacobian(self.bivector, x)

    def bivector_and_jacobian(self, x):
        return self.L(x), self.dL(x)

    def rescaled(self, a: float) -> "PoissonModel":
        """Gauge transform ``(L, H) -> (a L, H / a)``; leaves the field unchanged."""
        if not a > 0:
            raise ValueError("gauge factor must be positive")
        h = self.hamiltonian.params
        h = replace(h, W2=h.W2 / a, b2=h.b2 / a)
        blocks = self._blocks()
        blocks["h"] = h
        key = "casimir" if self.flavor == "IJ" else "l"
        p = blocks[key]
        blocks[key] = replace(p, W2=p.W2 * a, b2=p.b2 * a)
        return self.with_blocks(blocks)

    # -- persistence
    def to_checkpoint(self) -> dict:
        d = {"flavor": self.flavor, "n": self.n, "hidden": self.hidden, "seed": self.seed,
             "h_params": self.hamiltonian.params.to_json()}
        if self.flavor == "IJ":
            d["casimir_params"] = self.casimir.casimir_params.to_json()
            d["phi_params"] = self.casimir.phi_params.to_json()
        else:
            d["l_params"] = self.bivector.params.to_json()
        return d

    @classmethod
    def from_checkpoint(cls, d: dict) -> "PoissonModel":
        flavor, n = d["flavor"], int(d["n"])
        if flavor not in FLAVORS:
            raise ValueError(f"unknown flavor {flavor!r}")
        h = HamiltonianModel(MlpParams.from_json(d["h_params"]))
        if flavor == "IJ":
            if n != 3:
                raise ValueError("IJ flavor is 3D-only")
            cas = CasimirModel(MlpParams.from_json(d["casimir_params"]), MlpParams.from_json(d["phi_params"]))
            model = cls(flavor, n, h, casimir=cas, seed=int(d.get("seed", 0)))
        else:
            model = cls(flavor, n, h, bivector=BivectorModel(MlpParams.from_json(d["l_params"])),
                        seed=int(d.get("seed", 0)))
        if model.hamiltonian.params.n_in != n:
            raise ValueError("checkpoint dimension mismatch")
        return model
