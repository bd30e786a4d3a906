"""Ritz energies, their Monte Carlo surrogates and projected training.

Poisson (Neumann, zero-mean data)::

    E(u) = int 1/2 |grad u|^2 - f u  +  1/2 (int u)^2

Schrodinger::

    E(u) = int 1/2 |grad u|^2 + 1/2 V u^2 - f u

The empirical versions replace integrals over the unit cube with averages
over i.i.d. uniform points.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .approx import build_approximant
from .exact import _default_bound, poisson_solve, schrodinger_solve
from .net import (Activation, Params, TwoLayerNet, _param_grad_from, forward, init_random,
                  project_params)
from .quadrature import QuadratureRule, SampleSet, integration_rules, make_samples
from .spectral import CosineSeries, alpha, norm, series_product

__all__ = [
    "POINCARE_CONSTANT",
    "ExcessReport",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "empirical_loss",
    "population_loss",
    "exact_energy",
    "energy_excess",
    "loss_gradient",
    "train",
    "minimize_ritz",
    "exact_solution",
    "write_training_log",
]

log = logging.getLogger(__name__)

# reciprocal of the first nonzero Neumann eigenvalue of the unit cube
POINCARE_CONSTANT = 1.0 / math.pi ** 2
DIVERGENCE_LIMIT = 1e6


def _points(samples) -> np.ndarray:
    pts = samples.points if isinstance(samples, SampleSet) else np.asarray(samples, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] == 0:
        raise ValueError("empty sample set")
    return pts


def _rules(rule, dim: int) -> list[QuadratureRule]:
    if rule is None:
        return integration_rules(dim)
    if isinstance(rule, QuadratureRule):
        return [rule]
    return list(rule)


def _energy_terms(u_val, u_grad, f_val, v_val):
    """Pointwise energy density without the Poisson mean term."""
    dens = 0.5 * np.sum(u_grad ** 2, axis=1) - f_val * u_val
    if v_val is not None:
        dens = dens + 0.5 * v_val * u_val ** 2
    return dens


def empirical_loss(net, samples, f: CosineSeries, V: CosineSeries | None = None) -> float:
    """Monte Carlo Ritz loss at the sample points.

    Parameters
    ----------
    net : object with ``evaluate``
        Network or cosine series.
    samples : SampleSet or array of shape (n, d)
    f, V : CosineSeries
        ``V is None`` selects the Poisson energy with its squared-mean term.
    """
    pts = _points(samples)
    u_val, u_grad = net.evaluate(pts)
    dens = _energy_terms(u_val, u_grad, f(pts), None if V is None else V(pts))
    loss = float(np.mean(dens))
    if V is None:
        loss += 0.5 * float(np.mean(u_val)) ** 2
    return loss


def population_loss(net, f: CosineSeries, V: CosineSeries | None = None, rule=None) -> float:
    """Quadrature value of the Ritz energy.

    ``rule`` is a rule, a sequence of rules (mean is returned) or ``None``
    for the default tensor Gauss rule (``d <= 3``) or randomized Sobol rules.
    """
    vals = []
    for r in _rules(rule, f.dim):
        u_val, u_grad = net.evaluate(r.nodes)
        dens = _energy_terms(u_val, u_grad, f(r.nodes), None if V is None else V(r.nodes))
        e = r.integrate(dens)
        if V is None:
            e += 0.5 * r.integrate(u_val) ** 2
        vals.append(e)
    return float(np.mean(vals))


def exact_energy(u_star: CosineSeries, V: CosineSeries | None = None, tol: float = 1e-12) -> float:
    """Energy of the exact solution from its coefficients.

    Poisson: ``-1/2 sum alpha_k pi^2 |k|^2 u_k^2``; Schrodinger adds
    ``-1/2 <V u, u>``.
    """
    if V is None and abs(u_star.mean) > tol:
        raise ValueError("Poisson solution must have zero mean")
    grad_sq = sum(alpha(k) * math.pi ** 2 * sum(ki * ki for ki in k) * v * v for k, v in u_star)
    if V is None:
        return -0.5 * grad_sq
    vu = series_product(V, u_star)
    pairing = sum(alpha(k) * v * u_star.coeffs.get(k, 0.0) for k, v in vu)
    return -0.5 * (grad_sq + pairing)


@dataclass(frozen=True)
class ExcessReport:
    """Energy excess computed two ways and the resulting sandwich check."""

    excess: float
    excess_direct: float
    h1_sq: float
    lower: float
    upper: float
    agreement: float
    sandwich_ok: bool
    agree_ok: bool

    def __iter__(self):
        yield self.excess
        yield self.h1_sq
        yield self.sandwich_ok


def energy_excess(u, u_star: CosineSeries, f: CosineSeries, V: CosineSeries | None = None,
                  rule=None, *, slack: float = 1e-6, agree_tol: float = 1e-8) -> ExcessReport:
    """Energy excess ``E(u) - E(u*)`` and its equivalence to ``|u - u*|_{H^1}^2``.

    The excess is evaluated as the loss difference and through the identity
    ``1/2 |grad(u - u*)|^2 + 1/2 (int (u* - u))^2`` (Poisson) or
    ``1/2 |grad(u - u*)|^2 + 1/2 int V (u - u*)^2`` (Schrodinger).  The
    sandwich uses the Poincare constant ``1 / pi^2`` or the sampled range of
    ``V`` on the quadrature nodes.

    Returns
    -------
    ExcessReport
        Unpacks as ``(excess, h1_sq, sandwich_ok)``.
    """
    rules = _rules(rule, u_star.dim)
    ident, h1, direct, vmin, vmax = [], [], [], math.inf, -math.inf
    for r in rules:
        uv, ug = u.evaluate(r.nodes)
        sv, sg = u_star.evaluate(r.nodes)
        dv, dg = uv - sv, ug - sg
        grad_sq = r.integrate(np.sum(dg ** 2, axis=1))
        l2_sq = r.integrate(dv ** 2)
        if V is None:
            ident.append(0.5 * grad_sq + 0.5 * r.integrate(dv) ** 2)
        else:
            vv = V(r.nodes)
            vmin, vmax = min(vmin, float(vv.min())), max(vmax, float(vv.max()))
            ident.append(0.5 * grad_sq + 0.5 * r.integrate(vv * dv ** 2))
        h1.append(grad_sq + l2_sq)
        direct.append(population_loss(u, f, V, r) - exact_energy(u_star, V))
    excess, h1_sq, excess_direct = (float(np.mean(x)) for x in (ident, h1, direct))
    if V is None:
        lower = 2.0 * excess
        upper = 2.0 * max(2.0 * POINCARE_CONSTANT + 1.0, 2.0) * excess
    else:
        lower = 2.0 / max(1.0, vmax) * excess
        upper = 2.0 / min(1.0, vmin) * excess
    tol = slack * max(1.0, h1_sq)
    agreement = abs(excess - excess_direct)
    return ExcessReport(excess, excess_direct, h1_sq, lower, upper, agreement,
                        bool(lower <= h1_sq + tol and h1_sq <= upper + tol),
                        bool(agreement <= agree_tol * max(1.0, abs(excess))))


def _loss_and_grad(net: TwoLayerNet, pts, f_val, v_val):
    u_val, u_grad, triplet = forward(net, pts)
    n = pts.shape[0]
    dens = _energy_terms(u_val, u_grad, f_val, v_val)
    loss = float(np.mean(dens))
    if v_val is None:
        mean_u = float(np.mean(u_val))
        loss += 0.5 * mean_u ** 2
        seed_value = (mean_u - f_val) / n
    else:
        seed_value = (v_val * u_val - f_val) / n
    grad = _param_grad_from(net, pts, triplet, seed_value, u_grad / n)
    return loss, grad


def loss_gradient(net: TwoLayerNet, samples, f: CosineSeries,
                  V: CosineSeries | None = None) -> Params:
    """Exact parameter gradient of :func:`empirical_loss`."""
    pts = _points(samples)
    return _loss_and_grad(net, pts, f(pts), None if V is None else V(pts))[1]


def exact_solution(f: CosineSeries, V: CosineSeries | None = None, K: int | None = None):
    """Spectral ground truth for either problem."""
    if V is None:
        return poisson_solve(f)
    return schrodinger_solve(f, V, _default_bound(f, V) if K is None else K)


class TrainingDiverged(RuntimeError):
    """Raised when the empirical loss exceeds the divergence limit."""

    def __init__(self, message: str, report: dict):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class TrainConfig:
    """Settings for one projected training run.

    ``budget`` defaults to the Barron norm of the exact solution, ``tau`` to
    ``sqrt(m)`` and ``lr`` to ``1e-2 * budget``.  ``schedule="cosine"``
    anneals the step size to zero over the run.
    """

    f: CosineSeries
    V: CosineSeries | None = None
    m: int = 16
    budget: float | None = None
    tau: float | None = None
    activation: str = "softplus"
    n: int = 4096
    optimizer: str = "momentum"
    lr: float | None = None
    iterations: int = 20_000
    projection_every: int = 1
    momentum: float = 0.9
    schedule: str = "constant"
    init_seed: int = 0
    sample_seed: int = 1
    sample_tag: str = "iid-uniform"
    K: int | None = None
    log_every: int = 0
    diagnostics: bool = True
    approx_proxy: bool = False

    @property
    def kind(self) -> str:
        return "poisson" if self.V is None else "schrodinger"

    def resolved_tau(self) -> float:
        return math.sqrt(self.m) if self.tau is None else float(self.tau)


@dataclass
class TrainResult:
    net: TwoLayerNet
    losses: np.ndarray
    best_iteration: int
    diagnostics: dict = field(default_factory=dict)
    log: list = field(default_factory=list)


class _Optimizer:
    def __init__(self, kind: str, lr: float, momentum: float, size: int,
                 schedule: str = "constant", horizon: int = 1):
        if kind not in ("sgd", "momentum", "adam"):
            raise ValueError(f"unknown optimizer {kind!r}")
        if schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {schedule!r}")
        self.kind, self.base_lr, self.beta = kind, lr, momentum
        self.schedule, self.horizon, self.count = schedule, max(horizon, 1), 0
        self.v = np.zeros(size)
        self.s = np.zeros(size)
        self.t = 0

    @property
    def lr(self) -> float:
        if self.schedule == "constant":
            return self.base_lr
        return 0.5 * self.base_lr * (1 + math.cos(math.pi * min(self.count / self.horizon, 1.0)))

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        theta = self._step(theta, grad)
        self.count += 1
        return theta

    def _step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.kind == "sgd":
            return theta - self.lr * grad
        if self.kind == "momentum":
            self.v = self.beta * self.v + grad
            return theta - self.lr * self.v
        self.t += 1
        b1, b2 = self.beta, 0.999
        self.v = b1 * self.v + (1 - b1) * grad
        self.s = b2 * self.s + (1 - b2) * grad ** 2
        vhat = self.v / (1 - b1 ** self.t)
        shat = self.s / (1 - b2 ** self.t)
        return theta - self.lr * vhat / (np.sqrt(shat) + 1e-12)


def minimize_ritz(net: TwoLayerNet, pts: np.ndarray, f_val: np.ndarray,
                  v_val: np.ndarray | None = None, *, optimizer: str = "adam", lr: float = 1e-2,
                  momentum: float = 0.9, schedule: str = "constant", iterations: int = 1000,
                  projection_every: int = 1, callback=None):
    """Projected first-order minimization of the empirical Ritz loss.

    Works on raw arrays: ``f_val`` (and ``v_val`` for the Schrodinger loss)
    hold the data at the sample points ``pts``.  Only projected iterates
    compete for the best iterate; the earliest wins ties.

    Returns
    -------
    best_net : TwoLayerNet
    losses : ndarray of shape (iterations + 1,)
    best_iteration : int

    Raises
    ------
    TrainingDiverged
        If the loss exceeds ``1e6`` or becomes non-finite.
    """
    m, d = net.width, net.dim
    opt = _Optimizer(optimizer, lr, momentum, 1 + m + m * d + m, schedule, iterations)
    losses = np.empty(iterations + 1)
    best_loss, best_net, best_it = math.inf, net, 0
    feasible = True
    for it in range(iterations + 1):
        loss, grad = _loss_and_grad(net, pts, f_val, v_val)
        losses[it] = loss
        if not math.isfinite(loss) or abs(loss) > DIVERGENCE_LIMIT:
            raise TrainingDiverged(
                f"empirical loss {loss:.3e} at iteration {it} exceeds the divergence limit",
                {"iteration": it, "loss": loss, "best_loss": best_loss, "lr": lr})
        if feasible and loss < best_loss:
            best_loss, best_net, best_it = loss, net, it
        if callback is not None:
            callback(it, loss, net)
        if it == iterations:
            break
        theta = opt.step(net.params.ravel(), grad.ravel())
        net = net.with_params(Params.from_flat(theta, m, d))
        feasible = (it + 1) % projection_every == 0
        if feasible:
            net = project_params(net)
    return best_net, losses, best_it


def train(config: TrainConfig, *, u_star: CosineSeries | None = None,
          samples: SampleSet | None = None) -> TrainResult:
    """Minimize the empirical Ritz loss over the budgeted network class.

    Every step is followed by projection onto the class on the configured
    cadence; only projected iterates compete for the returned best iterate
    (earliest wins ties).

    Raises
    ------
    TrainingDiverged
        If the loss exceeds ``1e6`` or becomes non-finite.
    """
    cfg = config
    d = cfg.f.dim
    if u_star is None and (cfg.budget is None or cfg.diagnostics):
        u_star = exact_solution(cfg.f, cfg.V, cfg.K)
    B = norm(u_star, "barron", 2.0) if cfg.budget is None else float(cfg.budget)
    act = (Activation.softplus(cfg.resolved_tau()) if cfg.activation == "softplus"
           else Activation.relu())
    lr = 1e-2 * B if cfg.lr is None else float(cfg.lr)
    if samples is None:
        samples = make_samples(cfg.n, d, cfg.sample_seed, cfg.sample_tag)
    pts = samples.points
    f_val = cfg.f(pts)
    v_val = None if cfg.V is None else cfg.V(pts)

    net = init_random(d, cfg.m, B, act, cfg.init_seed)
    rows = []
    rules = integration_rules(d) if cfg.log_every else None

    def record(it, loss, current):
        if cfg.log_every and it % cfg.log_every == 0:
            row = {"iter": it, "empirical_loss": loss}
            if u_star is not None:
                row["population_loss"] = population_loss(current, cfg.f, cfg.V, rules)
                row["excess"] = row["population_loss"] - exact_energy(u_star, cfg.V)
            rows.append(row)

    best_net, losses, best_it = minimize_ritz(
        net, pts, f_val, v_val, optimizer=cfg.optimizer, lr=lr, momentum=cfg.momentum,
        schedule=cfg.schedule, iterations=cfg.iterations,
        projection_every=cfg.projection_every, callback=record)
    best_loss = float(losses[best_it])

    diagnostics = {"best_loss": best_loss, "budget": B, "tau": act.tau, "lr": lr}
    if cfg.diagnostics and u_star is not None:
        rules = rules or integration_rules(d)
        rep = energy_excess(best_net, u_star, cfg.f, cfg.V, rules, agree_tol=1e-3)
        pop = population_loss(best_net, cfg.f, cfg.V, rules)
        diagnostics.update({
            "population_loss": pop,
            "exact_energy": exact_energy(u_star, cfg.V),
            "excess": rep.excess,
            "excess_direct": rep.excess_direct,
            "h1_sq": rep.h1_sq,
            "relative_h1": math.sqrt(rep.h1_sq) / max(norm(u_star, "H1"), 1e-300),
            "sandwich_ok": rep.sandwich_ok,
            "gen_proxy": pop - best_loss,
        })
        if cfg.approx_proxy and len(u_star) and cfg.m >= 2:
            approx = build_approximant(u_star, cfg.m, act, cfg.init_seed)
            diagnostics["approx_proxy"] = energy_excess(approx, u_star, cfg.f, cfg.V, rules,
                                                        agree_tol=1e-3).excess
    log.debug("training finished: best loss %.6e at iteration %d", best_loss, best_it)
    return TrainResult(best_net, losses, best_it, diagnostics, rows)


def write_training_log(result: TrainResult, path) -> None:
    """CSV with columns ``iter,empirical_loss[,population_loss,excess]``."""
    path = Path(path)
    logged = {row["iter"]: row for row in result.log}
    extra = bool(result.log) and "population_loss" in result.log[0]
    header = ["iter", "empirical_loss"] + (["population_loss", "excess"] if extra else [])
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for it, loss in enumerate(result.losses):
            row = [it, f"{loss:.12e}"]
            if extra:
                rec = logged.get(it)
                row += ([f"{rec['population_loss']:.12e}", f"{rec['excess']:.12e}"]
                        if rec else ["", ""])
            writer.writerow(row)
