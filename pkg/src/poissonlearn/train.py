"""Datasets, flavour losses, Adam, the training loop and ground-truth comparison."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import ad
from . import systems as S
from .integrate import imr_step_unrolled, simulate_batch
from .metrics import jacobiator_norm, jacobiator_sq
from .nets import FLAVORS, PoissonModel

logger = logging.getLogger(__name__)

# independent RNG streams derived from the run seed
_IC, _INIT, _SHUFFLE, _SPLIT, _GT = range(5)


def stream(seed: int, which: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), which])


class TrainingDiverged(RuntimeError):
    """Validation loss stayed non-finite; carries what was produced so far."""

    def __init__(self, msg, model=None, history=None):
        super().__init__(msg)
        self.model = model
        self.history = history or []


@dataclass
class TrainConfig:
    flavor: str = "WJ"
    system: str = "RB"
    n_train_traj: int = 200
    n_gt_traj: int = 400
    dt: float = 0.05
    steps: int = 100
    hidden: int = 64
    lr: float = 1e-3
    batch_size: int = 128
    epochs: int = 300
    jacobi_weight: float = 1.0
    unroll_iters: int = 10
    seed: int = 0
    val_fraction: float = 0.2

    def __post_init__(self):
        self.flavor = str(self.flavor).upper()
        self.system = S.canonical_name(self.system)
        self.validate()

    def validate(self):
        if self.flavor not in FLAVORS:
            raise ValueError(f"unknown flavor {self.flavor!r}")
        if self.flavor == "IJ" and S.DIMS[self.system] != 3:
            raise ValueError("IJ flavor is 3D-only")
        if self.jacobi_weight < 0:
            raise ValueError("jacobi_weight must be non-negative")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        for name in ("n_train_traj", "n_gt_traj", "steps", "hidden", "batch_size", "epochs", "unroll_iters"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))


@dataclass
class Dataset:
    x0: np.ndarray
    x1: np.ndarray
    dt: float
    train_idx: np.ndarray
    val_idx: np.ndarray
    trajectories: np.ndarray | None = None
    lengths: np.ndarray | None = None

    def __len__(self):
        return len(self.x0)


def pairs_from_states(states: np.ndarray, lengths: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x0, x1 = [], []
    for traj, m in zip(states, lengths):
        x0.append(traj[: m - 1])
        x1.append(traj[1:m])
    return np.concatenate(x0), np.concatenate(x1)


def split_indices(count: int, val_fraction: float, rng: np.random.Generator):
    perm = rng.permutation(count)
    n_val = int(round(val_fraction * count))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def simulate_system(spec: S.SystemSpec, count: int, dt: float, steps: int, seed: int, which: int = _IC):
    gt = S.ground_truth(spec)
    x0 = S.sample_initial_conditions(spec, count, stream(seed, which))
    return simulate_batch(gt.field, x0, dt, steps, spec.max_abs)


def build_dataset(spec: S.SystemSpec, config: TrainConfig) -> Dataset:
    """Simulate training trajectories, cut them into steps, split train/validation."""
    states, lengths = simulate_system(spec, config.n_train_traj, config.dt, config.steps, config.seed)
    keep = lengths >= 2
    if not keep.any():
        raise RuntimeError("every training trajectory failed at its first step")
    states, lengths = states[keep], lengths[keep]
    x0, x1 = pairs_from_states(states, lengths)
    tr, va = split_indices(len(x0), config.val_fraction, stream(config.seed, _SPLIT))
    return Dataset(x0, x1, config.dt, tr, va, states, lengths)


# --- losses ------------------------------------------------------------------------

def sample_losses(model: PoissonModel, x0, x1, dt, jacobi_weight=0.0, unroll_iters=10):
    """Per-sample loss vector (array or tape Var).

    Trajectory term ``|x1_hat - x1|^2`` with ``x1_hat`` from the
    unrolled implicit midpoint step of the model field; SJ adds the weighted
    squared Jacobiator at ``x0``.
    """
    x1_hat = imr_step_unrolled(model.field, x0, dt, unroll_iters)
    loss = ad.sum(ad.square(x1_hat - x1), axis=-1)
    if model.flavor == "SJ" and jacobi_weight > 0:
        L = model.L(x0)
        D = model.dL(x0)
        loss = loss + jacobi_weight * jacobiator_sq(L, D)
    return loss


def batch_loss(model, x0, x1, dt, jacobi_weight=0.0, unroll_iters=10):
    losses = sample_losses(model, x0, x1, dt, jacobi_weight, unroll_iters)
    return ad.sum(losses) * (1.0 / losses.shape[0])


def step_loss(model, x0, x1, dt, config: TrainConfig):
    """Loss of a single :class:`StepPair`-like ``(x0, x1, dt)``."""
    x0 = np.asarray(x0, dtype=np.float64)[None]
    x1 = np.asarray(x1, dtype=np.float64)[None]
    return batch_loss(model, x0, x1, dt, config.jacobi_weight, config.unroll_iters)


def loss_and_grad(model: PoissonModel, x0, x1, dt, jacobi_weight, unroll_iters):
    """Mean loss and parameter gradients, skipping non-finite samples.

    Returns ``(loss, grads, n_excluded)``; ``grads`` is None when every sample
    was excluded.
    """
    excluded = 0
    for _ in range(2):
        tape = ad.Tape()
        m, leaves = model.on_tape(tape)
        per = sample_losses(m, x0, x1, dt, jacobi_weight, unroll_iters)
        ok = np.isfinite(per.value)
        if ok.all():
            loss = ad.sum(per) * (1.0 / len(ok))
            adj = ad.backward(tape, loss)
            grads = {k: adj.get(v.id, np.zeros_like(v.value)) for k, v in leaves.items()}
            return float(loss.value), grads, excluded
        excluded = int((~ok).sum())
        if not ok.any():
            return float("nan"), None, excluded
        x0, x1 = x0[ok], x1[ok]
    return float("nan"), None, excluded


# --- Adam --------------------------------------------------------------------------

BETA1, BETA2, EPS = 0.9, 0.999, 1e-8


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    skipped: int = 0


def adam_update(params: dict, grads: dict, state: AdamState, lr: float) -> tuple[dict, AdamState]:
    """One Adam step with bias correction; non-finite gradients skip the step."""
    if any(not np.all(np.isfinite(g)) for g in grads.values()):
        state.skipped += 1
        return params, state
    state.t += 1
    bc1 = 1.0 - BETA1 ** state.t
    bc2 = 1.0 - BETA2 ** state.t
    new = {}
    for k, p in params.items():
        g = grads[k]
        if np.shape(g) != np.shape(p):
            raise ValueError(f"gradient shape {np.shape(g)} does not match parameter {k} {np.shape(p)}")
        m = BETA1 * state.m.get(k, np.zeros_like(p)) + (1.0 - BETA1) * g
        v = BETA2 * state.v.get(k, np.zeros_like(p)) + (1.0 - BETA2) * g * g
        state.m[k], state.v[k] = m, v
        new[k] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + EPS)
    return new, state


# --- training loop -----------------------------------------------------------------

def validation_metrics(model, x0, x1, dt, jacobi_weight, unroll_iters, chunk=4096):
    total, count = 0.0, 0
    for s in range(0, len(x0), chunk):
        per = sample_losses(model, x0[s:s + chunk], x1[s:s + chunk], dt, jacobi_weight, unroll_iters)
        total += float(np.sum(per))
        count += len(per)
    val_loss = total / max(count, 1)
    jac = jacobiator_norm(model.L, x0, model.dL) if len(x0) else float("nan")
    return val_loss, jac


@dataclass
class FitResult:
    model: PoissonModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    excluded_samples: int = 0
    skipped_updates: int = 0


def fit_pairs(x0_tr, x1_tr, x0_va, x1_va, dt, *, flavor="WJ", hidden=64, lr=1e-3, batch_size=128,
              epochs=300, jacobi_weight=1.0, unroll_iters=10, seed=0, model=None) -> FitResult:
    """Train a flavoured model on one-step pairs; keeps the best-validation weights."""
    n = x0_tr.shape[-1]
    if model is None:
        model = PoissonModel.init(flavor, n, hidden, stream(seed, _INIT), seed=seed)
    weight = jacobi_weight if model.flavor == "SJ" else 0.0
    params = model.parameters()
    adam = AdamState()
    rng = stream(seed, _SHUFFLE)
    history: list[dict] = []
    best = (np.inf, model, -1)
    bad_epochs = 0
    excluded = 0
    n_tr = len(x0_tr)
    for epoch in range(epochs):
        order = rng.permutation(n_tr)
        total, seen = 0.0, 0
        for s in range(0, n_tr, batch_size):
            idx = order[s:s + batch_size]
            cur = model.with_parameters(params)
            loss, grads, exc = loss_and_grad(cur, x0_tr[idx], x1_tr[idx], dt, weight, unroll_iters)
            excluded += exc
            if grads is None:
                continue
            params, adam = adam_update(params, grads, adam, lr)
            total += loss * len(idx)
            seen += len(idx)
        model = model.with_parameters(params)
        val_loss, val_jac = validation_metrics(model, x0_va, x1_va, dt, weight, unroll_iters)
        train_loss = total / seen if seen else float("nan")
        history.append({"epoch": epoch + 1, "train_loss": train_loss,
                        "val_loss": val_loss, "val_jacobiator": val_jac})
        logger.debug("epoch %d train %.3e val %.3e jac %.3e", epoch + 1, train_loss, val_loss, val_jac)
        if np.isfinite(val_loss):
            bad_epochs = 0
            if val_loss < best[0]:
                best = (val_loss, model, epoch + 1)
        else:
            bad_epochs += 1
            if bad_epochs >= 3:
                raise TrainingDiverged("validation loss non-finite for 3 epochs", best[1], history)
    return FitResult(best[1], history, best[2], excluded, adam.skipped)


@dataclass
class TrainResult:
    model: PoissonModel
    history: list[dict]
    dataset: Dataset
    config: TrainConfig
    best_epoch: int = -1
    excluded_samples: int = 0
    skipped_updates: int = 0


def train(config: TrainConfig, spec: S.SystemSpec | None = None, dataset: Dataset | None = None) -> TrainResult:
    """Simulate training data, split it and fit one model."""
    spec = spec or S.SystemSpec(config.system)
    if spec.name != config.system:
        raise ValueError("system spec does not match the config")
    config.validate()
    ds = dataset if dataset is not None else build_dataset(spec, config)
    tr, va = ds.train_idx, ds.val_idx
    fit = fit_pairs(ds.x0[tr], ds.x1[tr], ds.x0[va], ds.x1[va], ds.dt,
                    flavor=config.flavor, hidden=config.hidden, lr=config.lr,
                    batch_size=config.batch_size, epochs=config.epochs,
                    jacobi_weight=config.jacobi_weight, unroll_iters=config.unroll_iters,
                    seed=config.seed)
    return TrainResult(fit.model, fit.history, ds, config, fit.best_epoch,
                       fit.excluded_samples, fit.skipped_updates)


# --- ground-truth comparison -------------------------------------------------------------

@dataclass
class GtComparison:
    gt: np.ndarray             # (K, T, n), NaN-padded
    pred: np.ndarray           # (K, T, n), NaN-padded
    gt_lengths: np.ndarray
    pred_lengths: np.ndarray

    def squared_deviation(self, part=slice(None)) -> np.ndarray:
        """Per-(trajectory, step) squared deviation; NaN where either run stopped."""
        return np.sum((self.pred[..., part] - self.gt[..., part]) ** 2, axis=-1)


def evaluate_gt(model: PoissonModel, config: TrainConfig, spec: S.SystemSpec | None = None,
                n_traj: int | None = None) -> GtComparison:
    """Roll out ground truth and model from the same fresh initial conditions."""
    spec = spec or S.SystemSpec(config.system)
    if model.n != spec.dim:
        raise ValueError(f"checkpoint dimension {model.n} does not match system {spec.name} ({spec.dim})")
    count = n_traj or config.n_gt_traj
    gt = S.ground_truth(spec)
    x0 = S.sample_initial_conditions(spec, count, stream(config.seed, _GT))
    gts, gl = simulate_batch(gt.field, x0, config.dt, config.steps, spec.max_abs)
    preds, pl = simulate_batch(model.field, x0, config.dt, config.steps)
    return GtComparison(gts, preds, gl, pl)
