"""scikit-learn style wrapper around the flavoured Poisson models."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .integrate import imr_step, simulate_batch
from .nets import FLAVORS
from .train import _SPLIT, fit_pairs, split_indices, stream


class PoissonNetRegressor(RegressorMixin, BaseEstimator):
    """Learn ``dx/dt = L(x) grad H(x)`` from one-step pairs ``(x_t, x_{t+dt})``.

    ``X`` holds the states at the start of each step and ``y`` the states one
    step ``dt`` later.  ``predict`` advances states by one implicit-midpoint
    step of the learned field.

    Parameters
    ----------
    flavor : {"WJ", "SJ", "IJ"}
        Without, soft or implicit Jacobi identity.  IJ needs 3D states.
    hidden : int
        Hidden width of every network.
    jacobi_weight : float
        Weight of the squared Jacobiator (SJ only).
    """

    def __init__(self, flavor="WJ", hidden=64, dt=0.05, lr=1e-3, batch_size=128, epochs=300,
                 jacobi_weight=1.0, unroll_iters=10, val_fraction=0.2, random_state=0):
        self.flavor = flavor
        self.hidden = hidden
        self.dt = dt
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.jacobi_weight = jacobi_weight
        self.unroll_iters = unroll_iters
        self.val_fraction = val_fraction
        self.random_state = random_state

    def _check_params(self, n_features):
        flavor = str(self.flavor).upper()
        if flavor not in FLAVORS:
            raise ValueError(f"flavor must be one of {FLAVORS}, got {self.flavor!r}")
        if flavor == "IJ" and n_features != 3:
            raise ValueError("IJ flavor is 3D-only")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.jacobi_weight < 0:
            raise ValueError("jacobi_weight must be non-negative")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")
        return flavor

    def fit(self, X, y, validation_data=None):
        X, y = check_X_y(X, y, multi_output=True, dtype=np.float64)
        if y.ndim != 2 or y.shape != X.shape:
            raise ValueError(f"y must have the same shape as X, got {y.shape} and {X.shape}")
        flavor = self._check_params(X.shape[1])
        seed = 0 if self.random_state is None else int(self.random_state)
        if validation_data is None:
            tr, va = split_indices(len(X), self.val_fraction, stream(seed, _SPLIT))
            Xv, yv = X[va], y[va]
            X, y = X[tr], y[tr]
        else:
            Xv, yv = check_X_y(*validation_data, multi_output=True, dtype=np.float64)
        fit = fit_pairs(X, y, Xv, yv, self.dt, flavor=flavor, hidden=self.hidden, lr=self.lr,
                        batch_size=self.batch_size, epochs=self.epochs,
                        jacobi_weight=self.jacobi_weight, unroll_iters=self.unroll_iters, seed=seed)
        self.model_ = fit.model
        self.history_ = fit.history
        self.best_epoch_ = fit.best_epoch
        self.n_features_in_ = X.shape[1]
        return self

    def _states(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def predict(self, X):
        """States one step ``dt`` after ``X``."""
        X = self._states(X)
        return imr_step(self.model_.field, X, self.dt)

    def rollout(self, X, steps):
        """Trajectories ``(n_samples, steps + 1, n)``; NaN after a failed step."""
        X = self._states(X)
        states, _ = simulate_batch(self.model_.field, X, self.dt, steps)
        return states

    def vector_field(self, X):
        X = self._states(X)
        return np.asarray(self.model_.field(X))

    def hamiltonian(self, X):
        X = self._states(X)
        return np.asarray(self.model_.energy(X))

    def bivector(self, X):
        X = self._states(X)
        return np.asarray(self.model_.L(X))
