"""Scikit-learn style front ends for training and approximation."""
from __future__ import annotations

import itertools
import math

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .approx import build_approximant
from .exact import MAX_LATTICE
from .net import Activation, init_random
from .ritz import _loss_and_grad, minimize_ritz
from .spectral import CosineSeries, norm

__all__ = ["DeepRitzSolver", "BarronApproximator"]


def _check_cube(X):
    if X.size and (X.min() < 0.0 or X.max() > 1.0):
        raise ValueError("points must lie in the unit cube [0, 1]^d")
    return X


def _activation(name: str, tau, m: int) -> Activation:
    if name == "relu":
        return Activation.relu()
    if name == "softplus":
        return Activation.softplus(math.sqrt(m) if tau is None else float(tau))
    raise ValueError(f"unknown activation {name!r}")


class DeepRitzSolver(RegressorMixin, BaseEstimator):
    """Fit a budgeted two-layer network to the Ritz energy of sampled data.

    ``fit(X, y)`` takes collocation points ``X`` in the unit cube and the
    source values ``y = f(X)``.  Passing ``potential = V(X)`` switches from
    the Neumann Poisson energy to the Schrodinger energy.

    Parameters
    ----------
    m : int
        Hidden width.
    budget : float
        Class budget ``B``.
    activation : {"softplus", "relu"}
    tau : float, optional
        Softplus sharpness; ``sqrt(m)`` when omitted.
    optimizer : {"adam", "momentum", "sgd"}
    lr : float, optional
        Step size; ``1e-2 * budget`` when omitted.
    iterations : int
    schedule : {"cosine", "constant"}
    random_state : int, RandomState or None

    Attributes
    ----------
    net_ : TwoLayerNet
        Best projected iterate.
    losses_ : ndarray
        Empirical loss per iteration.
    best_iteration_ : int
    """

    def __init__(self, m=16, budget=1.0, activation="softplus", tau=None, optimizer="adam",
                 lr=None, iterations=1000, schedule="cosine", momentum=0.9, random_state=None):
        self.m = m
        self.budget = budget
        self.activation = activation
        self.tau = tau
        self.optimizer = optimizer
        self.lr = lr
        self.iterations = iterations
        self.schedule = schedule
        self.momentum = momentum
        self.random_state = random_state

    def _validate(self, X, y, potential):
        X, y = check_X_y(X, y, y_numeric=True)
        _check_cube(X)
        if potential is not None:
            potential = check_array(potential, ensure_2d=False)
            if potential.shape != y.shape:
                raise ValueError("potential must have one value per sample")
        return X, y, potential

    def fit(self, X, y, potential=None):
        X, y, potential = self._validate(X, y, potential)
        rng = check_random_state(self.random_state)
        self.n_features_in_ = X.shape[1]
        act = _activation(self.activation, self.tau, self.m)
        net = init_random(X.shape[1], self.m, self.budget, act, rng.randint(2 ** 31 - 1))
        lr = 1e-2 * self.budget if self.lr is None else self.lr
        self.net_, self.losses_, self.best_iteration_ = minimize_ritz(
            net, X, y, potential, optimizer=self.optimizer, lr=lr, momentum=self.momentum,
            schedule=self.schedule, iterations=self.iterations)
        return self

    def predict(self, X):
        check_is_fitted(self, "net_")
        X = _check_cube(check_array(X))
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self.net_(X)

    def score(self, X, y, potential=None):
        """Negative empirical Ritz energy of the fitted network (higher is better)."""
        check_is_fitted(self, "net_")
        X, y, potential = self._validate(X, y, potential)
        return -_loss_and_grad(self.net_, X, y, potential)[0]


class BarronApproximator(RegressorMixin, BaseEstimator):
    """Least-squares cosine fit followed by a sampled two-layer network.

    The target is projected onto the modes with entries up to ``max_freq``;
    the network of width ``m`` is then drawn from the series' Barron
    representation.

    Attributes
    ----------
    series_ : CosineSeries
        Fitted cosine expansion.
    net_ : TwoLayerNet
    barron_norm_ : float
    """

    def __init__(self, m=64, max_freq=4, activation="relu", scheme="units", random_state=None):
        self.m = m
        self.max_freq = max_freq
        self.activation = activation
        self.scheme = scheme
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        _check_cube(X)
        d = X.shape[1]
        if (self.max_freq + 1) ** d > MAX_LATTICE:
            raise ValueError("too many modes for the requested max_freq and dimension")
        keys = np.array(list(itertools.product(range(self.max_freq + 1), repeat=d)))
        design = np.prod(np.cos(np.pi * X[:, None, :] * keys[None, :, :]), axis=2)
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        self.n_features_in_ = d
        self.series_ = CosineSeries(d, {tuple(k): c for k, c in zip(keys.tolist(), coef)})
        self.barron_norm_ = norm(self.series_, "barron", 2.0)
        rng = check_random_state(self.random_state)
        self.net_ = build_approximant(self.series_, self.m, self.activation,
                                      rng.randint(2 ** 31 - 1), scheme=self.scheme)
        return self

    def predict(self, X):
        check_is_fitted(self, "net_")
        X = _check_cube(check_array(X))
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self.net_(X)
