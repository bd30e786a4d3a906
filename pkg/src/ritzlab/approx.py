"""Constructive two-layer approximation of cosine series.

The pipeline mirrors the classical Barron argument:

1. ``u - u(0-mode)`` is an expectation of ridge cosines ``g(w . x)`` under a
   probability measure on (frequency, sign pattern) pairs; sampling it gives
   a Maurey average.
2. Each ridge profile ``g`` on ``[-1, 1]`` is replaced by its piecewise-linear
   interpolant written as a ReLU combination.
3. ReLU units may be swapped for the rescaled Softplus at a controlled cost.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .net import Activation, TwoLayerNet, activation_eval
from .quadrature import QuadratureRule, composite_gauss, sobol_rule
from .spectral import CosineSeries, as_points, norm

__all__ = [
    "RidgeProfile",
    "MaureySample",
    "ReluCombination",
    "SwapResult",
    "maurey_sample",
    "maurey_measure",
    "relu_interpolate",
    "w1inf_error",
    "delta_tau",
    "softplus_swap",
    "build_approximant",
    "split_width",
    "h1_error",
    "h1_error_spread",
    "error_rules",
    "existence_bound",
]

GRID_POINTS = 10_001


@dataclass(frozen=True)
class RidgeProfile:
    """``g(z) = amplitude / (1 + pi^2 kappa^2) * cos(pi (kappa z + phase))``.

    ``g'(0) = 0`` and ``|g|, |g'|, |g''|`` are all bounded by ``|amplitude|``.
    """

    amplitude: float
    kappa: int
    phase: int = 0
    direction: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if self.kappa < 1:
            raise ValueError("kappa must be a positive integer")
        if self.phase not in (0, 1):
            raise ValueError("phase must be 0 or 1")

    def __call__(self, z, order: int = 0):
        z = np.asarray(z, dtype=float)
        scale = self.amplitude / (1.0 + (np.pi * self.kappa) ** 2)
        arg = np.pi * (self.kappa * z + self.phase)
        freq = np.pi * self.kappa
        if order == 0:
            return scale * np.cos(arg)
        if order == 1:
            return -scale * freq * np.sin(arg)
        if order == 2:
            return -scale * freq ** 2 * np.cos(arg)
        raise ValueError("order must be 0, 1 or 2")

    @property
    def bound(self) -> float:
        return abs(self.amplitude)


@dataclass(frozen=True, eq=False)
class MaureySample:
    """``base + mean_j g_j(w_j . x)`` for sampled ridge profiles ``g_j``."""

    dim: int
    base: float
    features: tuple[RidgeProfile, ...]
    normalizer: float

    def __len__(self) -> int:
        return len(self.features)

    def evaluate(self, x):
        pts, single = as_points(x, self.dim)
        values = np.full(pts.shape[0], self.base)
        grads = np.zeros_like(pts)
        if self.features:
            amp = np.array([f.amplitude / (1 + (np.pi * f.kappa) ** 2) for f in self.features])
            freq = np.pi * np.array([f.kappa for f in self.features], dtype=float)
            phase = np.pi * np.array([f.phase for f in self.features], dtype=float)
            dirs = np.array([f.direction for f in self.features])
            arg = (pts @ dirs.T) * freq + phase
            m1 = len(self.features)
            values = values + np.cos(arg) @ amp / m1
            grads = (-np.sin(arg) * (amp * freq)) @ dirs / m1
        if single:
            return float(values[0]), grads[0]
        return values, grads

    def __call__(self, x):
        return self.evaluate(x)[0]


def maurey_measure(u: CosineSeries):
    """Nonzero modes of ``u`` with their sampling probabilities.

    Returns ``(keys, probabilities, Z)`` where
    ``Z = sum_{k != 0} |u_k| (1 + pi^2 |k|_1^2)``.
    """
    keys = u.keys_array
    vals = u.values_array
    nz = np.any(keys != 0, axis=1)
    keys, vals = keys[nz], vals[nz]
    weights = np.abs(vals) * (1.0 + (np.pi * keys.sum(axis=1)) ** 2)
    Z = float(weights.sum())
    probs = weights / Z if Z > 0 else weights
    return keys, probs, np.sign(vals), Z


def _draw_ridges(u: CosineSeries, count: int, rng):
    """Sample ``count`` (frequency, sign pattern) pairs from the ridge measure.

    Returns signed amplitudes, kappas and unit-l1 directions.
    """
    keys, probs, signs, Z = maurey_measure(u)
    idx = rng.choice(len(keys), size=count, p=probs)
    flips = rng.choice((-1, 1), size=(count, u.dim))
    k = keys[idx]
    kappa = k.sum(axis=1)
    directions = k * flips / kappa[:, None]
    return Z * signs[idx], kappa, directions


def maurey_sample(u: CosineSeries, m1: int, seed) -> MaureySample:
    """Average of ``m1`` i.i.d. ridge features whose expectation is ``u``.

    Each draw picks a mode ``k`` with probability proportional to
    ``|u_k| (1 + pi^2 |k|_1^2)`` and a uniform sign pattern ``xi`` on the
    nonzero entries of ``k``; the feature is
    ``sign(u_k) Z cos(pi k_xi . x) / (1 + pi^2 |k|_1^2)``.
    """
    keys, _, _, Z = maurey_measure(u)
    if len(keys) == 0:
        return MaureySample(u.dim, u.mean, (), 0.0)
    if m1 < 1:
        raise ValueError("m1 must be positive for a nonconstant series")
    rng = np.random.default_rng(seed)
    amps, kappas, dirs = _draw_ridges(u, m1, rng)
    feats = tuple(RidgeProfile(float(a), int(k), 0, tuple(d.tolist()))
                  for a, k, d in zip(amps, kappas, dirs))
    return MaureySample(u.dim, u.mean, feats, Z)


@dataclass(frozen=True, eq=False)
class ReluCombination:
    """One-dimensional ``c + sum_i a_i phi(eps_i z - b_i)``."""

    c: float
    a: np.ndarray
    eps: np.ndarray
    b: np.ndarray
    bound: float
    activation: Activation = Activation.relu()

    def __call__(self, z, order: int = 0):
        z = np.asarray(z, dtype=float)
        arg = z[..., None] * self.eps - self.b
        if order == 0:
            return self.c + activation_eval(self.activation, arg, 0) @ self.a
        if order == 1:
            return activation_eval(self.activation, arg, 1) @ (self.a * self.eps)
        raise ValueError("order must be 0 or 1")

    @property
    def units(self) -> int:
        return self.a.shape[0]


def _nodes(m2: int) -> np.ndarray:
    return -1.0 + np.arange(2 * m2 + 1) / m2


def relu_interpolate(g: Callable, m2: int, bound: float | None = None) -> ReluCombination:
    """ReLU form of the piecewise-linear interpolant of ``g`` on ``[-1, 1]``.

    Nodes are ``z_j = -1 + j / m2``, ``j = 0..2 m2``.  Units left of the
    origin are ``ReLU(z_i - z)`` and units right of it ``ReLU(z - z_{i-1})``;
    their coefficients are first and second divided differences of ``g``.

    Parameters
    ----------
    g : callable
        Profile evaluated on arrays.
    m2 : int
        Grid resolution; the combination has ``2 m2`` units.
    bound : float, optional
        Sup bound of ``g, g', g''``.  Defaults to the measured maximum of
        ``|g|`` at the nodes (informational only).
    """
    if m2 < 1:
        raise ValueError("m2 must be at least 1")
    z = _nodes(m2)
    G = np.asarray(g(z), dtype=float)
    if not np.all(np.isfinite(G)):
        raise ValueError("profile values must be finite")
    h = 1.0 / m2
    m = m2
    a = np.empty(2 * m)
    # units i = 1..m, kink at z_i for i < m and at z_m = 0 for i = m
    i = np.arange(1, m)
    a[: m - 1] = (G[i - 1] - 2 * G[i] + G[i + 1]) / h
    a[m - 1] = (G[m - 1] - G[m]) / h
    # units i = m+1..2m, kink at z_{i-1}
    a[m] = (G[m + 1] - G[m]) / h
    i = np.arange(m + 2, 2 * m + 1)
    a[m + 1:] = (G[i] - 2 * G[i - 1] + G[i - 2]) / h
    eps = np.concatenate([-np.ones(m), np.ones(m)])
    b = np.concatenate([-z[1:m + 1], z[m:2 * m]])
    B = float(np.max(np.abs(G))) if bound is None else float(bound)
    return ReluCombination(float(G[m]), a, eps, b, B)


def w1inf_error(g: Callable, dg: Callable, comb: ReluCombination,
                n_grid: int = GRID_POINTS) -> tuple[float, float]:
    """Grid sup of value and derivative errors of ``comb`` against ``g``."""
    z = np.linspace(-1.0, 1.0, n_grid)
    return (float(np.max(np.abs(np.asarray(g(z)) - comb(z)))),
            float(np.max(np.abs(np.asarray(dg(z)) - comb(z, 1)))))


def delta_tau(tau: float) -> float | None:
    """Swap budget factor ``(1/tau)(1 + 1/tau)(log(tau/3) + 1)``; ``None`` for
    ``tau <= 3`` where the logarithm is not positive."""
    if tau <= 3:
        return None
    return (1.0 / tau) * (1.0 + 1.0 / tau) * (math.log(tau / 3.0) + 1.0)


class SwapResult(NamedTuple):
    combination: ReluCombination
    delta: float | None
    budget: float
    deviation: float
    within_budget: bool


class BudgetExceeded(AssertionError):
    """Measured swap deviation above the analytic budget."""


def softplus_swap(comb: ReluCombination, tau: float, *, check: bool = True,
                  n_grid: int = GRID_POINTS) -> SwapResult:
    """Replace ReLU by Softplus(tau) and measure the ``W^{1,inf}`` deviation.

    The budget is ``6 B delta_tau`` for ``tau > 3``.  Otherwise the trivial
    bound ``sum |a_i| max(ln 2 / tau, 1/2)`` is reported.

    Raises
    ------
    BudgetExceeded
        When ``check`` is set and the measured deviation exceeds the budget.
    """
    swapped = ReluCombination(comb.c, comb.a, comb.eps, comb.b, comb.bound,
                              Activation.softplus(tau))
    delta = delta_tau(tau)
    if delta is None:
        budget = float(np.sum(np.abs(comb.a))) * max(math.log(2) / tau, 0.5)
    else:
        budget = 6.0 * comb.bound * delta
    z = np.linspace(-1.0, 1.0, n_grid)
    deviation = max(float(np.max(np.abs(comb(z) - swapped(z)))),
                    float(np.max(np.abs(comb(z, 1) - swapped(z, 1)))))
    ok = deviation <= budget + 1e-12
    if check and not ok:
        raise BudgetExceeded(f"swap deviation {deviation:.3e} exceeds budget {budget:.3e}")
    return SwapResult(swapped, delta, budget, deviation, ok)


def split_width(m: int) -> tuple[int, int]:
    """Two-stage split ``m1 = ceil(sqrt(m / 2))``, ``m2 = floor(m / (2 m1))``
    so that ``2 m1 m2 <= m``."""
    m1 = math.ceil(math.sqrt(m / 2))
    return m1, max(1, m // (2 * m1))


def _resolve_activation(activation, m: int) -> Activation:
    if isinstance(activation, Activation):
        return activation
    if activation == "relu":
        return Activation.relu()
    if activation == "softplus":
        return Activation.softplus(math.sqrt(m))
    raise ValueError(f"unknown activation {activation!r}")


def _profile_grid_coefficients(kappa: int, m2: int):
    """Interpolation coefficients of the unit-amplitude profile of frequency
    ``kappa``; returns ``(c, a, eps, b)``."""
    comb = relu_interpolate(RidgeProfile(1.0, int(kappa)), m2, 1.0)
    return comb.c, comb.a, comb.eps, comb.b


def build_approximant(u: CosineSeries, m: int, activation="relu", seed=0, *,
                      scheme: str = "units", m2: int | None = None) -> TwoLayerNet:
    """Width-``m`` network approximating ``u`` in ``H^1``.

    Parameters
    ----------
    u : CosineSeries
    m : int
        Number of hidden units (at least 2).
    activation : {"relu", "softplus"} or Activation
        ``softplus`` uses ``tau = sqrt(m)``.
    seed : int or Generator
    scheme : {"units", "two-stage"}
        ``units`` samples ``m`` single units from the mixture obtained by
        interpolating every ridge profile on a grid of ``m2`` (default ``m``)
        cells per side; the constant is computed exactly.  ``two-stage``
        samples ``m1`` ridge features and interpolates each with ``m2``
        cells, see :func:`split_width`.

    Returns
    -------
    TwoLayerNet
        Member of the width-``m`` class with budget ``B = |u|_B``.
    """
    if m < 2:
        raise ValueError("m must be at least 2")
    act = _resolve_activation(activation, m)
    B = norm(u, "barron", 2.0)
    keys, _, _, Z = maurey_measure(u)
    d = u.dim
    if len(keys) == 0:
        return TwoLayerNet(u.mean, np.zeros(0), np.zeros((0, d)), np.zeros(0), act, B)
    rng = np.random.default_rng(seed)
    if scheme == "units":
        grid = m if m2 is None else m2
        amps, kappas, dirs = _draw_ridges(u, m, rng)
        tables = {int(k): _profile_grid_coefficients(k, grid) for k in np.unique(kappas)}
        gamma = np.empty(m)
        w = np.empty((m, d))
        t = np.empty(m)
        for j in range(m):
            _, a, eps, b = tables[int(kappas[j])]
            scale = abs(amps[j])
            mass = np.abs(a)
            total = mass.sum()
            i = rng.choice(a.shape[0], p=mass / total)
            gamma[j] = np.sign(amps[j]) * np.sign(a[i]) * scale * total / m
            w[j] = eps[i] * dirs[j]
            t[j] = b[i]
        # profile value at 0 is amplitude / (1 + pi^2 kappa^2); its mean is sum_k u_k
        c = float(u.values_array.sum())
    elif scheme == "two-stage":
        m1, grid = split_width(m) if m2 is None else (math.ceil(math.sqrt(m / 2)), m2)
        amps, kappas, dirs = _draw_ridges(u, m1, rng)
        gam, ws, ts, consts = [], [], [], []
        for j in range(m1):
            c0, a, eps, b = _profile_grid_coefficients(kappas[j], grid)
            gam.append(amps[j] * a / m1)
            ws.append(eps[:, None] * dirs[j][None, :])
            ts.append(b)
            consts.append(amps[j] * c0)
        gamma, w, t = np.concatenate(gam), np.vstack(ws), np.concatenate(ts)
        c = u.mean + float(np.mean(consts))
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return TwoLayerNet(c, gamma, w, t, act, B)


def existence_bound(u: CosineSeries, m: int, activation: str = "relu") -> float:
    """Existence bounds ``sqrt(116) B / sqrt(m)`` (ReLU) and
    ``B (6 log m + 30) / sqrt(m)`` (Softplus with ``tau = sqrt(m)``)."""
    B = norm(u, "barron", 2.0)
    if activation == "relu":
        return math.sqrt(116.0) * B / math.sqrt(m)
    return B * (6.0 * math.log(m) + 30.0) / math.sqrt(m)


def error_rules(dim: int, seed=0, randomizations: int = 2) -> list[QuadratureRule]:
    """Rules for measuring ``H^1`` errors of networks with many kinks."""
    panels = {1: 512, 2: 48, 3: 12}
    if dim in panels:
        return [composite_gauss(dim, panels[dim], 4)]
    seeds = np.random.SeedSequence(seed).spawn(randomizations)
    return [sobol_rule(dim, 14, np.random.default_rng(s)) for s in seeds]


def _h1_single(a, b, rule: QuadratureRule) -> float:
    va, ga = a.evaluate(rule.nodes)
    vb, gb = b.evaluate(rule.nodes)
    integrand = (va - vb) ** 2 + np.sum((ga - gb) ** 2, axis=1)
    return math.sqrt(max(rule.integrate(integrand), 0.0))


def h1_error_spread(a, b, rules: Sequence[QuadratureRule]) -> tuple[float, float]:
    """Mean and standard deviation of the ``H^1`` distance over several rules."""
    vals = np.array([_h1_single(a, b, r) for r in rules])
    return float(vals.mean()), float(vals.std(ddof=1)) if len(vals) > 1 else 0.0


def h1_error(net, u, rule) -> float:
    """``H^1`` distance between two functions exposing ``evaluate``.

    ``rule`` is a :class:`QuadratureRule` or a sequence of them (the mean is
    returned).
    """
    if isinstance(rule, QuadratureRule):
        return _h1_single(net, u, rule)
    return h1_error_spread(net, u, rule)[0]
