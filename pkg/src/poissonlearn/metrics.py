"""Geometric error measures, the error report, and the Hamiltonianity verdict."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from . import ad
from . import systems as S
from .nets import vee

FD_STEP = 1e-4
CLASSIFIER_MARGIN = 1.5

HAMILTONIAN = "hamiltonian-consistent"
NON_HAMILTONIAN = "non-hamiltonian-consistent"
INCONCLUSIVE = "inconclusive"


# --- derivatives by central differences ---------------------------------------------

def fd_jacobian(fn, points, h=FD_STEP):
    """Central-difference derivative; output shape ``fn(x).shape + (n,)``."""
    points = np.asarray(points, dtype=np.float64)
    cols = []
    for k in range(points.shape[-1]):
        e = np.zeros(points.shape[-1])
        e[k] = h
        cols.append((np.asarray(fn(points + e)) - np.asarray(fn(points - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def curl(J, points, h=FD_STEP, jacobian=None):
    # D[..., i, k] = dJ_i/dx_k
    D = jacobian(points) if jacobian is not None else fd_jacobian(J, points, h)
    return np.stack([D[..., 2, 1] - D[..., 1, 2],
                     D[..., 0, 2] - D[..., 2, 0],
                     D[..., 1, 0] - D[..., 0, 1]], axis=-1)


# --- Jacobi identity ----------------------------------------------------------------

@lru_cache(maxsize=None)
def _triple_mask(n):
    m = np.zeros((n, n, n))
    for i in range(n):
        for j in range(i + 1, n):
            m[i, j, j + 1:] = 1.0
    m.setflags(write=False)
    return m


def jacobiator(L, D):
    """Jacobiator tensor ``Jac[..., i, j, l]`` from ``L`` and ``D[..., i, j, k] = dL^{ij}/dx^k``.

    Works on arrays and on tape Vars.
    """
    n = L.shape[-1]
    lead = len(L.shape) - 2
    # T[i,j,l] = sum_k dL^{ij}/dx^k L^{kl}
    T = ad.matmul(D, ad.reshape(L, L.shape[:-2] + (1, n, n)))
    ax = tuple(range(lead))
    return (T + ad.transpose(T, ax + (lead + 2, lead, lead + 1))
            + ad.transpose(T, ax + (lead + 1, lead + 2, lead)))


def jacobiator_sq(L, D):
    """Per-point sum over i<j<l of squared Jacobiator components."""
    jac = jacobiator(L, D)
    return ad.sum(ad.square(jac) * _triple_mask(L.shape[-1]), axis=(-3, -2, -1))


def jacobiator_norm(bivector, points, jacobian=None, h=FD_STEP) -> float:
    """Root mean square over points of the i<j<l Jacobiator components' norm.

    ``bivector`` maps points to ``(..., n, n)``.  ``jacobian`` supplies
    ``dL^{ij}/dx^k`` in closed form; without it central differences are used.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    L = np.asarray(bivector(points))
    D = np.asarray(jacobian(points)) if jacobian is not None else fd_jacobian(bivector, points, h)
    return float(np.sqrt(np.mean(jacobiator_sq(L, D))))


def jacobi_scalar_3d(J, points, h=FD_STEP, jacobian=None):
    """``J . curl J``; vanishes iff the 3D bivector of J satisfies Jacobi."""
    points = np.asarray(points, dtype=np.float64)
    return np.sum(np.asarray(J(points)) * curl(J, points, h, jacobian), axis=-1)


# --- compatibility / symplecticity ------------------------------------------------------

def compat3d_pointwise(J1, J2, points, h=FD_STEP):
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    a = np.sum(J1(points) * curl(J2, points, h), axis=-1)
    b = np.sum(J2(points) * curl(J1, points, h), axis=-1)
    return (a - b) ** 2


def compat3d_error(J1, J2, points, h=FD_STEP) -> float:
    return float(np.mean(compat3d_pointwise(J1, J2, points, h)))


def symplecticity_pointwise(L_values):
    L_values = np.asarray(L_values, dtype=np.float64)
    n = L_values.shape[-1]
    if n % 2:
        raise ValueError("symplecticity needs an even dimension")
    Lc = S.canonical_bivector(n)
    C = L_values @ Lc - Lc @ L_values
    return np.sum(C * C, axis=(-2, -1))


def symplecticity_error(L, points=None) -> float:
    """Mean squared Frobenius norm of ``L L_can - L_can L``.

    ``L`` is either a callable evaluated at ``points`` or an array of values.
    """
    vals = L(np.asarray(points)) if callable(L) else L
    return float(np.mean(symplecticity_pointwise(vals)))


def compat4d_pointwise(L_values, uv_ref):
    U1, V1 = S.bivector_to_luv(L_values)
    U2, V2 = uv_ref
    return (np.sum(U1 * V2, -1) + np.sum(V1 * U2, -1)) ** 2


def compat4d_error(L, uv_ref, points) -> float:
    """Mean squared ``U1.V2 + V1.U2`` between a learned bivector and a reference pair.

    ``uv_ref`` is a function of points returning ``(U, V)``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    vals = L(points) if callable(L) else L
    return float(np.mean(compat4d_pointwise(vals, uv_ref(points))))


# --- gauge and determinant ------------------------------------------------------------

def gauge_scale(L_learned, L_ref) -> float:
    """Positive factor matching the learned mean Frobenius norm to the reference."""
    fl = np.mean(np.linalg.norm(L_learned, axis=(-2, -1)))
    fr = np.mean(np.linalg.norm(L_ref, axis=(-2, -1)))
    if fl == 0:
        return 1.0
    return float(fr / fl)


def det_scale(L_ref) -> float:
    """Reference determinant scale; Frobenius-based when the reference is degenerate."""
    L_ref = np.asarray(L_ref)
    n = L_ref.shape[-1]
    med = np.median(np.abs(np.linalg.det(L_ref)))
    fro = np.mean(np.sum(L_ref * L_ref, axis=(-2, -1)))
    if med > 1e-12 * max(fro, 1e-300) ** (n / 2):
        return float(med)
    return float((fro / n) ** (n / 2))


def normalized_det(L_learned, L_ref):
    """Per-point normalised determinants of the gauge-normalised learned bivector."""
    L_learned = np.asarray(L_learned)
    a = gauge_scale(L_learned, L_ref)
    return np.linalg.det(a * L_learned) / det_scale(L_ref)


def summarize_det(dets, degenerate: bool, n: int) -> float:
    """Median for symplectic systems, log10 median |det| for even-dimensional
    degenerate ones; odd dimensions give the structural zero."""
    if n % 2:
        return 0.0
    if degenerate:
        med = np.median(np.abs(dets))
        return float(np.log10(med)) if med > 0 else float("-inf")
    return float(np.median(dets))


# --- conserved quantities ------------------------------------------------------------

def casimir_drift(states, quantity: str, system: str) -> float:
    """Median over time steps of the squared drift of a tracked quantity.

    ``states`` is a single trajectory ``(T, n)`` or a batch ``(K, T, n)``;
    NaN-padded tails are ignored.
    """
    q = S.quantity(quantity, system)
    states = np.asarray(states, dtype=np.float64)
    if states.ndim == 2:
        states = states[None]
    vals = np.asarray(q(states))
    d = vals - vals[:, :1]
    sq = d ** 2 if d.ndim == 2 else np.sum(d ** 2, axis=-1)
    sq = sq[:, 1:] if sq.shape[1] > 1 else sq
    return float(np.nanmedian(sq))


# --- Hamiltonianity ------------------------------------------------------------

def classify_hamiltonianity(errors: dict[str, float], margin: float = CLASSIFIER_MARGIN) -> str:
    """Ordering test: IJ < SJ < WJ suggests a Hamiltonian system, the reverse a
    non-Hamiltonian one.  Each consecutive pair must differ by ``margin``."""
    order = [f for f in ("IJ", "SJ", "WJ") if errors.get(f) is not None]
    if len(order) < 2:
        raise ValueError("the ordering test needs errors for at least two flavors")
    e = [float(errors[f]) for f in order]
    if any(not np.isfinite(v) for v in e):
        return INCONCLUSIVE
    if all(margin * a <= b for a, b in zip(e, e[1:])):
        return HAMILTONIAN
    if all(margin * b <= a for a, b in zip(e, e[1:])):
        return NON_HAMILTONIAN
    return INCONCLUSIVE


# --- report ------------------------------------------------------------

TABLE_COLUMNS = ("system", "flavor", "delta_M", "delta_r", "delta_L", "delta_M2",
                 "delta_rxM", "delta_r2", "delta_Mr", "det_L")


@dataclass
class MetricsReport:
    system: str
    flavor: str
    delta_M: float | None = None
    delta_r: float | None = None
    delta_L: float | None = None
    delta_casimirs: dict[str, float] = field(default_factory=dict)
    det_L: float | None = None
    jacobiator_norm: float | None = None
    # supplementary values kept next to the table cells
    delta_L_raw: float | None = None
    gauge_scale: float | None = None
    jacobiator_norm_gauged: float | None = None
    first_integrals: dict[str, float] = field(default_factory=dict)
    n_points: int = 0
    n_trajectories: int = 0
    n_truncated: int = 0

    def table_row(self) -> dict[str, object]:
        cas = self.delta_casimirs
        cells = {"system": self.system, "flavor": self.flavor, "delta_M": self.delta_M,
                 "delta_r": self.delta_r, "delta_L": self.delta_L,
                 "delta_M2": cas.get("M2"), "delta_rxM": cas.get("rxM"),
                 "delta_r2": cas.get("r2"), "delta_Mr": cas.get("Mr"), "det_L": self.det_L}
        return {k: ("N/A" if v is None else v) for k, v in cells.items()}

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls.from_dict(json.loads(text))


def _fmt(v):
    if isinstance(v, float):
        if v != v:
            return "NaN"
        if v in (float("inf"), float("-inf")):
            return "Infinity" if v > 0 else "-Infinity"
        return format(v, ".17g")
    return json.dumps(v)


def dumps(obj) -> str:
    """JSON with every float written at 17 significant digits."""
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {dumps(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(dumps(v) for v in obj) + "]"
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return _fmt(float(obj))
    if isinstance(obj, (np.integer,)):
        return str(int(obj))
    return json.dumps(obj)


def _log10_median(values):
    med = float(np.nanmedian(values))
    return float(np.log10(med)) if med > 0 else float("-inf")


@dataclass
class PointwiseErrors:
    """Per-point values behind the histogram files."""

    delta_M: np.ndarray | None = None
    delta_L: np.ndarray | None = None
    det: np.ndarray | None = None


def build_report(model, comparison, spec: S.SystemSpec, return_pointwise: bool = False):
    """Assemble all applicable table cells for one trained model.

    ``comparison`` is a :class:`~poissonlearn.train.GtComparison` holding the
    ground-truth and model rollouts from identical initial conditions.
    """
    gt = S.ground_truth(spec)
    name = spec.name
    m_part, r_part = S.PARTS[name]
    gts, preds = comparison.gt, comparison.pred
    valid = np.all(np.isfinite(gts), -1) & np.all(np.isfinite(preds), -1)
    valid[:, 0] = False  # the initial state carries no error

    def state_err(part):
        d = np.sum((preds[..., part] - gts[..., part]) ** 2, axis=-1)
        return d[valid]

    rep = MetricsReport(system=name, flavor=model.flavor,
                        n_trajectories=int(len(gts)),
                        n_truncated=int(np.sum(comparison.pred_lengths < gts.shape[1])))
    point_errs = PointwiseErrors()
    if m_part is not None:
        e = state_err(m_part)
        rep.delta_M = float(np.median(e))
        point_errs.delta_M = e
    if r_part is not None:
        e = state_err(r_part)
        rep.delta_r = float(np.median(e))
        if point_errs.delta_M is None:
            point_errs.delta_M = e

    # conserved quantities along the model rollouts
    pred_valid = np.where(np.all(np.isfinite(preds), -1)[..., None], preds, np.nan)
    for q in gt.casimirs:
        if q in ("H1", "H3"):
            continue
        rep.delta_casimirs[q] = casimir_drift(pred_valid, q, name)
    for q in gt.first_integrals:
        rep.first_integrals[q] = casimir_drift(pred_valid, q, name)

    # geometry on the ground-truth states
    pts = gts[np.all(np.isfinite(gts), -1)]
    rep.n_points = int(len(pts))
    L_learned = np.asarray(model.L(pts))
    L_ref = np.asarray(gt.bivector(pts))
    a = gauge_scale(L_learned, L_ref)
    rep.gauge_scale = a
    pointwise_L = None
    if name in ("RB", "RBdis"):
        J1 = lambda x: a * vee(model.L(x))
        pointwise_L = compat3d_pointwise(J1, lambda x: np.asarray(x, dtype=np.float64), pts)
        raw = compat3d_pointwise(lambda x: vee(model.L(x)), lambda x: np.asarray(x, dtype=np.float64), pts)
        rep.delta_L_raw = _log10_median(raw)
    elif name in ("P2D", "P3D"):
        pointwise_L = symplecticity_pointwise(a * L_learned)
        rep.delta_L_raw = _log10_median(symplecticity_pointwise(L_learned))
    elif name == "Sh":
        pairs = S.shivamoggi_poisson_pairs()
        pointwise_L = np.mean([compat4d_pointwise(a * L_learned, p(pts)) for p in pairs], axis=0)
        rep.delta_L_raw = _log10_median(np.mean([compat4d_pointwise(L_learned, p(pts)) for p in pairs], axis=0))
    if pointwise_L is not None:
        rep.delta_L = _log10_median(pointwise_L)
    dets = normalized_det(L_learned, L_ref)
    degenerate = name not in ("P2D", "P3D")
    rep.det_L = summarize_det(dets, degenerate, spec.dim)
    point_errs.delta_L = pointwise_L
    point_errs.det = dets
    rep.jacobiator_norm = jacobiator_norm(model.L, pts, model.dL)
    # the Jacobiator is quadratic in L, so this is its value after gauge fixing
    rep.jacobiator_norm_gauged = a * a * rep.jacobiator_norm
    if return_pointwise:
        return rep, point_errs
    return rep

