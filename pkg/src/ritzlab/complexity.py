"""Covering numbers, entropy integrals and Rademacher bounds for network classes.

The class ``F_m`` holds networks ``c + sum_i gamma_i phi(w_i . x - t_i)`` with
``|c| <= C``, ``sum |gamma_i| <= Gamma``, ``|w_i|_1 <= W`` and ``|t_i| <= T``.
The loss classes ``G^1, G^2, G^3`` collect ``|grad u|^2 / 2``, ``f u`` and
``V u^2 / 2`` over ``u`` in ``F_m``.  Everything here is pure arithmetic
except :func:`rademacher_mc`, which searches for large Rademacher
correlations and so returns lower estimates of the complexity.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import integrate, special

from .net import Activation, Params, TwoLayerNet, _param_grad_from, forward, project_l1_ball
from .reports import BoundReport
from .spectral import CosineSeries

__all__ = [
    "ClassSpec",
    "CoveringBound",
    "MCEstimate",
    "activation_constants",
    "class_constants",
    "covering_bound",
    "entropy_integral",
    "entropy_bound",
    "net_class_bound",
    "net_class_report",
    "gsp_bounds",
    "rademacher_mc",
    "rademacher_enumerate",
]

LOG_REPRESENTABLE = math.log(1e300)


@dataclass(frozen=True)
class ClassSpec:
    """Parameter box of a two-layer network class.

    ``F`` bounds ``|f|`` and ``V_max`` bounds ``V``; both are only needed
    for the loss classes.  ``budget`` records ``B`` when the box came from
    :meth:`for_budget`.
    """

    C: float
    gamma: float
    W: float
    T: float
    activation: Activation
    m: int
    d: int
    F: float | None = None
    V_max: float | None = None
    budget: float | None = None

    def __post_init__(self):
        for name in ("C", "gamma", "W", "T", "F", "V_max", "budget"):
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and non-negative, got {v}")
        if self.m < 1 or self.d < 1:
            raise ValueError("m and d must be positive")

    @classmethod
    def for_budget(cls, B: float, m: int, d: int, F: float | None = None,
                   V_max: float | None = None, activation: str | Activation = "softplus"):
        """Box ``C = 2B, Gamma = 4B, W = T = 1``; Softplus uses ``tau = sqrt(m)``."""
        if isinstance(activation, str):
            activation = (Activation.relu() if activation == "relu"
                          else Activation.softplus(math.sqrt(m)))
        return cls(2.0 * B, 4.0 * B, 1.0, 1.0, activation, m, d, F, V_max, float(B))


def activation_constants(spec: ClassSpec) -> dict:
    """Lipschitz and sup constants of the activation on the parameter box.

    ``L2`` (the Lipschitz constant of ``phi'``) is ``None`` for ReLU.
    """
    act = spec.activation
    if act.tag == "relu":
        return {"L": 1.0, "L2": None, "phi_max": spec.W + spec.T, "dphi_max": 1.0, "phi0": 0.0}
    tau = act.tau
    phi0 = math.log(2.0) / tau
    return {"L": 1.0, "L2": tau, "phi_max": max(3.0 + 1.0 / tau, spec.W + spec.T + phi0),
            "dphi_max": 1.0, "phi0": phi0}


def _require(spec: ClassSpec, *names):
    missing = [n for n in names if getattr(spec, n) is None]
    if missing:
        raise ValueError(f"class spec lacks {', '.join(missing)}")


def class_constants(spec: ClassSpec, which=("1", "2", "3")) -> BoundReport:
    """Sup bounds ``M_i`` and Lipschitz constants ``Lambda_i`` of the loss classes.

    Parameters
    ----------
    spec : ClassSpec
    which : iterable of {"1", "2", "3"}
        Gradient energy, source term, potential term.

    Raises
    ------
    ValueError
        If ``F`` (for 2) or ``V_max`` (for 3) is missing, or if 1 is requested
        for an activation without a Lipschitz derivative.

    Examples
    --------
    >>> spec = ClassSpec.for_budget(1.0, 16, 2, F=1.0)
    >>> class_constants(spec, "1")["M1"]
    8.0
    """
    k = activation_constants(spec)
    G, W, C = spec.gamma, spec.W, spec.C
    values, formulas = {}, {}
    if "1" in which:
        if k["L2"] is None:
            raise ValueError("the gradient class needs a C^2 activation")
        values["M1"] = 0.5 * G ** 2 * W ** 2 * k["dphi_max"] ** 2
        values["Lambda1"] = ((W + G) * k["dphi_max"] + 2 * G * W * k["L2"]) * G * W * k["dphi_max"]
        formulas["M1"] = "Gamma^2 W^2 dphi_max^2 / 2"
        formulas["Lambda1"] = "((W + Gamma) dphi_max + 2 Gamma W L') Gamma W dphi_max"
    if "2" in which:
        _require(spec, "F")
        values["M2"] = spec.F * (C + G * k["phi_max"])
        values["Lambda2"] = spec.F * (1 + k["phi_max"] + 2 * k["L"] * G)
        formulas["M2"] = "F (C + Gamma phi_max)"
        formulas["Lambda2"] = "F (1 + phi_max + 2 L Gamma)"
    if "3" in which:
        _require(spec, "V_max")
        values["M3"] = 0.5 * spec.V_max * (C + G * k["phi_max"]) ** 2
        values["Lambda3"] = spec.V_max * (C + G * k["phi_max"]) * (1 + k["phi_max"] + 2 * k["L"] * G)
        formulas["M3"] = "V_max (C + Gamma phi_max)^2 / 2"
        formulas["Lambda3"] = "V_max (C + Gamma phi_max)(1 + phi_max + 2 L Gamma)"
    inputs = _spec_inputs(spec)
    inputs.update({n: v for n, v in k.items() if v is not None})
    return BoundReport(values, inputs, formulas)


def _spec_inputs(spec: ClassSpec) -> dict:
    out = {"C": spec.C, "Gamma": spec.gamma, "W": spec.W, "T": spec.T, "m": spec.m,
           "d": spec.d, "activation": spec.activation.tag}
    if spec.activation.tag == "softplus":
        out["tau"] = spec.activation.tau
    for name in ("F", "V_max", "budget"):
        if getattr(spec, name) is not None:
            out[name] = getattr(spec, name)
    return out


def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


class CoveringBound(NamedTuple):
    """``log_value`` always; ``value`` only when below ``1e300``."""

    log_value: float
    value: float | None


def covering_bound(delta: float, Lam: float, spec: ClassSpec) -> CoveringBound:
    """Covering number bound of a ``Lam``-Lipschitz image of the parameter box.

    The product ``(2C Lam/delta) (3 Gamma Lam/delta)^m (3 W Lam/delta)^(dm)
    (3 T Lam/delta)^m``, computed in log domain.

    Examples
    --------
    >>> one = ClassSpec(1, 1, 1, 1, Activation.relu(), m=1, d=1)
    >>> covering_bound(1.0, 1.0, one).value
    54.0
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    m, d = spec.m, spec.d
    logs = (_log(2 * spec.C * Lam / delta), m * _log(3 * spec.gamma * Lam / delta),
            d * m * _log(3 * spec.W * Lam / delta), m * _log(3 * spec.T * Lam / delta))
    total = math.fsum(logs) if all(math.isfinite(v) for v in logs) else -math.inf
    if total > LOG_REPRESENTABLE:
        return CoveringBound(total, None)
    value = math.prod((2 * spec.C * Lam / delta, (3 * spec.gamma * Lam / delta) ** m,
                       (3 * spec.W * Lam / delta) ** (d * m), (3 * spec.T * Lam / delta) ** m))
    return CoveringBound(total, value)


def entropy_integral(M: float, method: str = "quad") -> float:
    """``int_0^M sqrt((log 1/eps)_+) d eps``.

    ``method="closed"`` uses ``eps = exp(-t^2)``, which gives
    ``M sqrt(log 1/M) + sqrt(pi)/2 erfc(sqrt(log 1/M))`` for ``M < 1``.

    Examples
    --------
    >>> round(entropy_integral(1.0), 10) == round(math.sqrt(math.pi) / 2, 10)
    True
    """
    if M < 0:
        raise ValueError("M must be non-negative")
    top = min(M, 1.0)
    if top == 0:
        return 0.0
    if method == "closed":
        if top == 1.0:
            return math.sqrt(math.pi) / 2
        s = math.sqrt(-math.log(top))
        return top * s + math.sqrt(math.pi) / 2 * special.erfc(s)
    if method != "quad":
        raise ValueError(f"unknown method {method!r}")
    val, _ = integrate.quad(lambda e: math.sqrt(-math.log(e)), 0.0, top,
                            epsabs=1e-13, epsrel=1e-13, limit=200)
    return val


def _sqrt_pos(x: float) -> float:
    return math.sqrt(x) if x > 0 else 0.0


def entropy_bound(M: float, Lam: float, spec: ClassSpec, n: int | None = None,
                  method: str = "quad") -> BoundReport:
    """Chaining bound for a class with sup bound ``M`` and Lipschitz constant ``Lam``.

    ``Z = M (sqrt(log 2C Lam)_+ + sqrt(log 3 Gamma Lam + d log 3 W Lam
    + log 3 T Lam)_+) + sqrt(d + 3) int_0^M sqrt(log 1/eps)_+ d eps``.

    With ``n`` given, the report also carries ``Z sqrt(m/n)`` and the same
    value times the chaining constant 12, which the shorter form omits.
    """
    if not (M > 0 and Lam > 0):
        raise ValueError("M and Lam must be positive")
    d = spec.d
    head = _sqrt_pos(_log(2 * spec.C * Lam))
    inner = (_log(3 * spec.gamma * Lam) + d * _log(3 * spec.W * Lam)
             + _log(3 * spec.T * Lam))
    body = _sqrt_pos(inner) if math.isfinite(inner) else 0.0
    ent = entropy_integral(M, method)
    Z = M * (head + body) + math.sqrt(d + 3) * ent
    values = {"Z": Z, "entropy_integral": ent}
    formulas = {"Z": "M(sqrt(log 2C Lam)+ + sqrt(log 3G Lam + d log 3W Lam + log 3T Lam)+)"
                     " + sqrt(d+3) int_0^M sqrt(log 1/eps)+"}
    inputs = _spec_inputs(spec) | {"M": M, "Lambda": Lam}
    if n is not None:
        scale = math.sqrt(spec.m / n)
        values["bound"] = Z * scale
        values["bound_chaining12"] = 12 * Z * scale
        formulas["bound"] = "Z sqrt(m/n)"
        formulas["bound_chaining12"] = "12 Z sqrt(m/n)"
        inputs["n"] = n
    return BoundReport(values, inputs, formulas)


def net_class_report(spec: ClassSpec, n: int) -> BoundReport:
    """Rademacher bounds for the network class itself.

    ``lipschitz_printed`` carries ``2 Gamma^2 |phi(0)|`` and ``lipschitz_derived``
    the linear ``2 Gamma |phi(0)|`` the contraction argument produces.
    ``with_offset`` adds ``2C/sqrt(n)`` for the output bias, which the
    contraction argument drops.  ``budget_form`` is the budget-instantiated
    closed form, present only for specs built by :meth:`ClassSpec.for_budget`.
    """
    if n < 1:
        raise ValueError("n must be positive")
    k = activation_constants(spec)
    G = spec.gamma
    lip = 4 * G * k["L"] * (spec.W * math.sqrt(spec.d) + spec.T)
    rn = math.sqrt(n)
    values = {
        "lipschitz_printed": (lip + 2 * G ** 2 * abs(k["phi0"])) / rn,
        "lipschitz_derived": (lip + 2 * G * abs(k["phi0"])) / rn,
    }
    values["with_offset"] = values["lipschitz_derived"] + 2 * spec.C / rn
    formulas = {
        "lipschitz_printed": "(4 Gamma L (W sqrt d + T) + 2 Gamma^2 |phi(0)|)/sqrt n",
        "lipschitz_derived": "(4 Gamma L (W sqrt d + T) + 2 Gamma |phi(0)|)/sqrt n",
        "with_offset": "lipschitz_derived + 2C/sqrt n",
    }
    if spec.budget is not None:
        extra = 0.0 if spec.activation.tag == "relu" else 2 * math.log(2) / spec.activation.tau
        values["budget_form"] = 16 * (math.sqrt(spec.d) + 1 + extra) * spec.budget / rn
        formulas["budget_form"] = "16 (sqrt d + 1 + 2 ln2/tau) B / sqrt n"
    return BoundReport(values, _spec_inputs(spec) | {"n": n}, formulas)


def net_class_bound(spec: ClassSpec, n: int) -> float:
    """Rademacher complexity bound of the network class.

    Budget-instantiated specs get the closed budget form; other specs the
    larger of the two Lipschitz variants.

    Examples
    --------
    >>> spec = ClassSpec.for_budget(1.0, 8, 4, activation="relu")
    >>> round(net_class_bound(spec, 10_000), 12)
    0.48
    """
    rep = net_class_report(spec, n)
    if "budget_form" in rep.values:
        return rep["budget_form"]
    return max(rep["lipschitz_printed"], rep["lipschitz_derived"])


def gsp_bounds(spec: ClassSpec, n: int, method: str = "quad") -> BoundReport:
    """Rademacher bounds for the Poisson and Schrodinger loss classes.

    The Poisson value is ``(Z(M1, Lambda1) + Z(M2, Lambda2)) sqrt(m/n)``; the
    Schrodinger value adds ``Z(M3, Lambda3)`` and needs ``V_max``.  Terms with
    a zero sup bound contribute nothing.
    """
    _require(spec, "F")
    which = ("1", "2", "3") if spec.V_max is not None else ("1", "2")
    consts = class_constants(spec, which)
    values = dict(consts.values)
    Zs = {}
    for i in which:
        M, Lam = consts[f"M{i}"], consts[f"Lambda{i}"]
        Zs[i] = entropy_bound(M, Lam, spec, method=method)["Z"] if M > 0 and Lam > 0 else 0.0
        values[f"Z{i}"] = Zs[i]
    scale = math.sqrt(spec.m / n)
    values["poisson"] = (Zs["1"] + Zs["2"]) * scale
    values["poisson_chaining12"] = 12 * values["poisson"]
    formulas = dict(consts.formulas)
    formulas["poisson"] = "(Z(M1, Lambda1) + Z(M2, Lambda2)) sqrt(m/n)"
    growth = math.sqrt(spec.m) * (math.sqrt(math.log(spec.m)) + 1) / math.sqrt(n)
    values["poisson_over_rate"] = values["poisson"] / growth
    if "3" in which:
        values["schrodinger"] = values["poisson"] + Zs["3"] * scale
        values["schrodinger_chaining12"] = 12 * values["schrodinger"]
        values["schrodinger_over_rate"] = values["schrodinger"] / growth
        formulas["schrodinger"] = "(Z1 + Z2 + Z3) sqrt(m/n)"
    formulas["poisson_over_rate"] = "poisson / (sqrt m (sqrt(log m) + 1) / sqrt n)"
    return BoundReport(values, dict(consts.inputs) | {"n": n}, formulas)


# Monte Carlo lower estimates ------------------------------------------------


class MCEstimate(NamedTuple):
    """Mean over draws of the searched supremum, with its standard error."""

    estimate: float
    stderr: float
    draws: int


def rademacher_enumerate(values: np.ndarray) -> float:
    """Exact empirical Rademacher complexity of a finite class.

    Parameters
    ----------
    values : array of shape (k, n)
        Row ``i`` holds function ``i`` at the ``n`` sample points.

    Examples
    --------
    The class ``{x -> g x : |g| <= 1}`` at ``{0.5, 1}`` attains its sup at
    ``g = +-1``:

    >>> rademacher_enumerate(np.array([[0.5, 1.0], [-0.5, -1.0]]))
    0.5
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    n = values.shape[1]
    if n > 20:
        raise ValueError("enumeration is limited to n <= 20")
    signs = np.array(list(itertools.product((-1.0, 1.0), repeat=n)))
    sup = np.max(np.abs(signs @ values.T), axis=1) / n
    return float(np.mean(sup))


def _box_params(spec: ClassSpec, rng, m: int) -> Params:
    d = spec.d
    gamma = rng.standard_normal(m)
    gamma *= spec.gamma / max(np.abs(gamma).sum(), 1e-300)
    w = rng.standard_normal((m, d))
    w *= spec.W / np.maximum(np.abs(w).sum(axis=1, keepdims=True), 1e-300)
    t = rng.uniform(-spec.T, spec.T, m)
    c = rng.uniform(-spec.C, spec.C)
    return Params(c, gamma, w, t)


def _project_box(p: Params, spec: ClassSpec) -> Params:
    w = np.vstack([project_l1_ball(row, spec.W) for row in p.w]) if len(p.w) else p.w
    return Params(float(np.clip(p.c, -spec.C, spec.C)), project_l1_ball(p.gamma, spec.gamma),
                  w, np.clip(p.t, -spec.T, spec.T))


def _net(p: Params, spec: ClassSpec) -> TwoLayerNet:
    return TwoLayerNet(p.c, p.gamma, p.w, p.t, spec.activation, 0.0)


def _loss_values(kind, vals, grads, f_val, v_val):
    if kind == "F":
        return vals
    g = 0.5 * np.sum(grads ** 2, axis=1) - f_val * vals
    if kind == "G_S":
        g = g + 0.5 * v_val * vals ** 2
    return g


def _ascent(kind, spec, pts, sigma, f_val, v_val, rng, restarts, steps, lr):
    """Largest ``|sigma . g| / n`` found by projected gradient ascent."""
    n = len(pts)
    best = 0.0
    flat_scale = np.concatenate([[max(spec.C, 1e-12)], np.full(spec.m, max(spec.gamma, 1e-12)),
                                 np.full(spec.m * spec.d, max(spec.W, 1e-12)),
                                 np.full(spec.m, max(spec.T, 1e-12))])
    for _ in range(restarts):
        for sgn in (1.0, -1.0):
            p = _box_params(spec, rng, spec.m)
            for it in range(steps + 1):
                net = _net(p, spec)
                vals, grads, trip = forward(net, pts)
                obj = sgn * float(sigma @ _loss_values(kind, vals, grads, f_val, v_val)) / n
                best = max(best, obj)
                if it == steps:
                    break
                if kind == "F":
                    a, b = sgn * sigma / n, np.zeros_like(pts)
                else:
                    res = -f_val if kind == "G_P" else v_val * vals - f_val
                    a, b = sgn * sigma * res / n, sgn * sigma[:, None] * grads / n
                g = _param_grad_from(net, pts, trip, a, b).ravel()
                norm = np.max(np.abs(g) / flat_scale)
                if norm == 0:
                    break
                theta = p.ravel() + lr * flat_scale * g / norm
                p = _project_box(Params.from_flat(theta, spec.m, spec.d), spec)
    return best


def _grid_sup(kind, spec, pts, sigma, f_val, v_val, levels):
    n = len(pts)
    if kind == "F":
        # the sup over (c, gamma) is linear, hence attained at the extremes
        axes = [np.linspace(-spec.W, spec.W, levels)] * spec.d + [np.linspace(-spec.T, spec.T, levels)]
        grid = np.array([g for g in itertools.product(*axes)
                         if np.abs(g[:-1]).sum() <= spec.W * (1 + 1e-12)])
        z = pts @ grid[:, :-1].T - grid[:, -1]
        corr = sigma @ spec.activation(z) / n
        return spec.C * abs(sigma.mean()) + spec.gamma * float(np.max(np.abs(corr)))
    size = levels ** (1 + 2 * spec.m + spec.m * spec.d)
    if spec.m > 2 or size > 200_000:
        raise ValueError("grid search is limited to m <= 2 and 200000 grid nodes")
    lin = lambda r: np.linspace(-r, r, levels)  # noqa: E731
    axes = ([lin(spec.C)] + [lin(spec.gamma)] * spec.m + [lin(spec.W)] * (spec.m * spec.d)
            + [lin(spec.T)] * spec.m)
    best = 0.0
    for theta in itertools.product(*axes):
        p = Params.from_flat(np.array(theta), spec.m, spec.d)
        if (np.abs(p.gamma).sum() > spec.gamma * (1 + 1e-12)
                or np.any(np.abs(p.w).sum(axis=1) > spec.W * (1 + 1e-12))):
            continue
        vals, grads, _ = forward(_net(p, spec), pts)
        best = max(best, abs(float(sigma @ _loss_values(kind, vals, grads, f_val, v_val))) / n)
    return best


def rademacher_mc(kind: str, spec: ClassSpec, n: int, draws: int = 16, *,
                  search: str = "multistart-ascent", seed=0, restarts: int = 2,
                  steps: int = 60, lr: float = 0.1, levels: int = 5,
                  f: CosineSeries | None = None, V: CosineSeries | None = None) -> MCEstimate:
    """Lower Monte Carlo estimate of the Rademacher complexity of a class.

    Each draw samples ``n`` uniform points and a sign vector, then searches
    for the largest ``|sum_j sigma_j g(x_j)| / n``.  Every search returns a
    value attained by some member, so the mean underestimates the true
    complexity up to sampling error.

    Parameters
    ----------
    kind : {"F", "G_P", "G_S"}
        Networks, Poisson loss class, Schrodinger loss class.
    spec : ClassSpec
    n, draws : int
    search : {"grid", "multistart-ascent"}
    seed : int or numpy Generator
    f, V : CosineSeries, optional
        Data of the loss classes; default to the constants ``F`` and ``V_max``.
    """
    if kind not in ("F", "G_P", "G_S"):
        raise ValueError(f"unknown class {kind!r}")
    if search not in ("grid", "multistart-ascent"):
        raise ValueError(f"unknown search {search!r}")
    if draws < 1:
        raise ValueError("draws must be positive")
    if kind != "F":
        _require(spec, "F")
        f = CosineSeries.constant(spec.d, spec.F) if f is None else f
    if kind == "G_S":
        _require(spec, "V_max")
        V = CosineSeries.constant(spec.d, spec.V_max) if V is None else V
    if spec.gamma == 0 and spec.C == 0 and (kind == "F" or spec.F == 0):
        return MCEstimate(0.0, 0.0, draws)
    streams = np.random.SeedSequence(seed if isinstance(seed, int) else int(seed.integers(2**63)))
    sups = np.empty(draws)
    for i, child in enumerate(streams.spawn(draws)):
        rng = np.random.default_rng(child)
        pts = rng.random((n, spec.d))
        sigma = rng.choice((-1.0, 1.0), size=n)
        f_val = None if f is None else f(pts)
        v_val = None if V is None else V(pts)
        if search == "grid":
            sups[i] = _grid_sup(kind, spec, pts, sigma, f_val, v_val, levels)
        else:
            sups[i] = _ascent(kind, spec, pts, sigma, f_val, v_val, rng, restarts, steps, lr)
    se = float(np.std(sups, ddof=1) / math.sqrt(draws)) if draws > 1 else 0.0
    return MCEstimate(float(np.mean(sups)), se, draws)
