"""Two-layer networks ``c + sum_i gamma_i phi(w_i . x - t_i)`` on the unit cube.

The hypothesis classes bound the parameters by a budget ``B``::

    |c| <= 2B,  sum |gamma_i| <= 4B,  |w_i|_1 = 1,  |t_i| <= 1.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .spectral import as_points

__all__ = [
    "Activation",
    "TwoLayerNet",
    "Params",
    "activation_eval",
    "net_eval_grad",
    "param_grad",
    "forward",
    "activation_triplet",
    "project_l1_ball",
    "project_params",
    "init_random",
]

FEAS_TOL = 1e-12
_CHUNK_ENTRIES = 1 << 22


@dataclass(frozen=True)
class Activation:
    """ReLU or the rescaled Softplus ``log(1 + exp(tau z)) / tau``."""

    tag: str = "softplus"
    tau: float | None = None

    def __post_init__(self):
        tag = self.tag.lower()
        if tag not in ("relu", "softplus"):
            raise ValueError(f"unknown activation {self.tag!r}")
        object.__setattr__(self, "tag", tag)
        if tag == "softplus":
            if self.tau is None or not self.tau > 0 or not math.isfinite(self.tau):
                raise ValueError("softplus needs a positive finite tau")
            object.__setattr__(self, "tau", float(self.tau))
        else:
            object.__setattr__(self, "tau", None)

    @classmethod
    def relu(cls) -> "Activation":
        return cls("relu")

    @classmethod
    def softplus(cls, tau: float) -> "Activation":
        return cls("softplus", tau)

    def __call__(self, z, order: int = 0):
        return activation_eval(self, z, order)

    def to_dict(self) -> dict:
        return {"tag": self.tag} if self.tau is None else {"tag": self.tag, "tau": self.tau}

    @classmethod
    def from_dict(cls, data) -> "Activation":
        return cls(data["tag"], data.get("tau"))


def activation_eval(a: Activation, z, order: int = 0):
    """Activation value or derivative of ``order`` 0, 1 or 2.

    The ReLU derivative at 0 is taken as 0 and its second derivative is 0
    everywhere.  Softplus uses ``max(z, 0) + log1p(exp(-tau |z|)) / tau``,
    which stays finite for any ``tau z``.
    """
    z = np.asarray(z, dtype=float)
    if a.tag == "relu":
        if order == 0:
            out = np.maximum(z, 0.0)
        elif order == 1:
            out = (z > 0).astype(float)
        elif order == 2:
            out = np.zeros_like(z)
        else:
            raise ValueError("order must be 0, 1 or 2")
    else:
        tau = a.tau
        if order == 0:
            out = np.maximum(z, 0.0) + np.log1p(np.exp(-tau * np.abs(z))) / tau
        elif order == 1:
            out = expit(tau * z)
        elif order == 2:
            sig = expit(tau * z)
            out = tau * sig * expit(-tau * z)
        else:
            raise ValueError("order must be 0, 1 or 2")
    return out[()] if out.ndim == 0 else out


def activation_triplet(a: Activation, z: np.ndarray):
    """Value, first and second derivative in one pass over ``z``."""
    if a.tag == "relu":
        pos = z > 0
        return np.where(pos, z, 0.0), pos.astype(float), np.zeros_like(z)
    tau = a.tau
    e = np.exp(-tau * np.abs(z))
    phi = np.maximum(z, 0.0) + np.log1p(e) / tau
    inv = 1.0 / (1.0 + e)
    dphi = np.where(z >= 0, inv, e * inv)
    ddphi = tau * e * inv * inv
    return phi, dphi, ddphi


class Params(NamedTuple):
    """Parameter-shaped container, also used for gradients."""

    c: float
    gamma: np.ndarray
    w: np.ndarray
    t: np.ndarray

    def ravel(self) -> np.ndarray:
        return np.concatenate([[self.c], self.gamma, self.w.ravel(), self.t])

    @classmethod
    def from_flat(cls, vec: np.ndarray, m: int, d: int) -> "Params":
        vec = np.asarray(vec, dtype=float)
        return cls(float(vec[0]), vec[1:1 + m].copy(),
                   vec[1 + m:1 + m + m * d].reshape(m, d).copy(), vec[1 + m + m * d:].copy())


def _frozen(arr, shape=None) -> np.ndarray:
    out = np.array(arr, dtype=float)
    if shape is not None:
        out = out.reshape(shape)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class TwoLayerNet:
    """Immutable two-layer network.

    Construction does not enforce the class constraints so that optimizers
    can form intermediate iterates; :func:`project_params` maps any net into
    the class and :meth:`is_feasible` tests membership.
    """

    c: float
    gamma: np.ndarray
    w: np.ndarray
    t: np.ndarray
    activation: Activation
    budget: float

    def __post_init__(self):
        gamma = _frozen(self.gamma).ravel()
        m = gamma.shape[0]
        w = _frozen(self.w)
        if w.ndim == 1:
            w = _frozen(w, (m, -1)) if m else _frozen(w, (0, 1))
        t = _frozen(self.t).ravel()
        if w.shape[0] != m or t.shape != (m,) or w.shape[1] < 1:
            raise ValueError("gamma, w and t have inconsistent shapes")
        if not self.budget >= 0:
            raise ValueError("budget must be non-negative")
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "budget", float(self.budget))

    @property
    def dim(self) -> int:
        return self.w.shape[1]

    @property
    def width(self) -> int:
        return self.gamma.shape[0]

    @property
    def params(self) -> Params:
        return Params(self.c, self.gamma.copy(), self.w.copy(), self.t.copy())

    def with_params(self, p: Params) -> "TwoLayerNet":
        return TwoLayerNet(p.c, p.gamma, p.w, p.t, self.activation, self.budget)

    def is_feasible(self, tol: float = FEAS_TOL) -> bool:
        B = self.budget
        slack = 1.0 + tol
        return bool(abs(self.c) <= 2 * B * slack
                    and np.sum(np.abs(self.gamma)) <= 4 * B * slack
                    and np.all(np.abs(np.abs(self.w).sum(axis=1) - 1.0) <= tol)
                    and np.all(np.abs(self.t) <= 1.0))

    def evaluate(self, x):
        return net_eval_grad(self, x)

    def __call__(self, x):
        return net_eval_grad(self, x)[0]

    def to_dict(self) -> dict:
        return {"dim": self.dim, "m": self.width, "B": self.budget,
                "activation": self.activation.to_dict(), "c": self.c,
                "gamma": self.gamma.tolist(), "w": self.w.tolist(), "t": self.t.tolist()}

    @classmethod
    def from_dict(cls, data) -> "TwoLayerNet":
        m, d = int(data["m"]), int(data["dim"])
        return cls(data["c"], np.reshape(data["gamma"], m),
                   np.reshape(np.asarray(data["w"], dtype=float), (m, d)),
                   np.reshape(data["t"], m), Activation.from_dict(data["activation"]),
                   data["B"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TwoLayerNet":
        return cls.from_dict(json.loads(text))


def net_eval_grad(net: TwoLayerNet, x):
    """Network value and spatial gradient at a point or an ``(n, d)`` batch."""
    pts, single = as_points(x, net.dim)
    n = pts.shape[0]
    values = np.empty(n)
    grads = np.empty((n, net.dim))
    step = max(1, _CHUNK_ENTRIES // max(net.width, 1))
    for lo in range(0, n, step):
        values[lo:lo + step], grads[lo:lo + step], _ = forward(net, pts[lo:lo + step])
    if single:
        return float(values[0]), grads[0]
    return values, grads


def param_grad(net: TwoLayerNet, x, seed_value, seed_gradient) -> Params:
    """Gradient in the parameters of ``sum_j a_j u(x_j) + b_j . grad u(x_j)``.

    Parameters
    ----------
    net : TwoLayerNet
    x : array_like, shape (d,) or (n, d)
    seed_value : float or array of shape (n,)
        The weights ``a_j``.
    seed_gradient : array of shape (d,) or (n, d)
        The weights ``b_j``.

    Returns
    -------
    Params
        Contributions summed over all points.
    """
    pts, _ = as_points(x, net.dim)
    n = pts.shape[0]
    a = np.broadcast_to(np.asarray(seed_value, dtype=float), (n,))
    b = np.broadcast_to(np.asarray(seed_gradient, dtype=float), (n, net.dim))
    triplet = activation_triplet(net.activation, pts @ net.w.T - net.t)
    return _param_grad_from(net, pts, triplet, a, b)


def forward(net: TwoLayerNet, pts: np.ndarray):
    """Values, gradients and the activation triplet at an ``(n, d)`` batch."""
    triplet = activation_triplet(net.activation, pts @ net.w.T - net.t)
    values = net.c + triplet[0] @ net.gamma
    grads = (triplet[1] * net.gamma) @ net.w
    return values, grads, triplet


def _param_grad_from(net, pts, triplet, a, b) -> Params:
    phi, dphi, ddphi = triplet
    bw = b @ net.w.T
    q = a[:, None] * dphi + ddphi * bw
    g_c = float(a.sum())
    g_gamma = a @ phi + np.sum(dphi * bw, axis=0)
    g_w = net.gamma[:, None] * (q.T @ pts + dphi.T @ b)
    g_t = -net.gamma * q.sum(axis=0)
    return Params(g_c, g_gamma, g_w, g_t)


def project_l1_ball(v: np.ndarray, radius: float, tol: float = FEAS_TOL) -> np.ndarray:
    """Euclidean projection onto ``{x : |x|_1 <= radius}`` by sort and threshold.

    Vectors already inside the ball (up to relative ``tol``) are returned
    unchanged so the projection is exactly idempotent.
    """
    v = np.asarray(v, dtype=float)
    mag = np.abs(v)
    if radius <= 0:
        return np.zeros_like(v)
    if mag.sum() <= radius * (1.0 + tol):
        return v.copy()
    u = np.sort(mag)[::-1]
    css = np.cumsum(u)
    ranks = np.arange(1, u.size + 1)
    rho = np.nonzero(u * ranks > css - radius)[0][-1]
    theta = (css[rho] - radius) / (rho + 1.0)
    return np.sign(v) * np.maximum(mag - theta, 0.0)


def _normalize_rows(w: np.ndarray, tol: float = FEAS_TOL) -> np.ndarray:
    w = w.copy()
    m, d = w.shape
    norms = np.abs(w).sum(axis=1)
    for i in range(m):
        if norms[i] < 1e-12:
            # deterministic re-draw from the signed coordinate directions
            rng = np.random.default_rng(i)
            w[i] = 0.0
            w[i, rng.integers(d)] = rng.choice((-1.0, 1.0))
        elif abs(norms[i] - 1.0) > tol:
            w[i] /= norms[i]
    return w


def project_params(net: TwoLayerNet) -> TwoLayerNet:
    """Map ``net`` into its budget class.

    ``c`` and ``t`` are clamped, ``gamma`` is projected onto the l1 ball of
    radius ``4B`` and each ``w_i`` is rescaled to unit l1 norm.  Feasible
    nets are returned unchanged.
    """
    B = net.budget
    c = float(np.clip(net.c, -2 * B, 2 * B)) if abs(net.c) > 2 * B * (1 + FEAS_TOL) else net.c
    gamma = project_l1_ball(net.gamma, 4 * B)
    w = _normalize_rows(np.asarray(net.w))
    t = np.clip(net.t, -1.0, 1.0)
    return TwoLayerNet(c, gamma, w, t, net.activation, B)


def init_random(d: int, m: int, B: float, activation: Activation, seed) -> TwoLayerNet:
    """Feasible random net: ``c = 0``, ``gamma_i ~ U[-4B/m, 4B/m]``, ``w_i``
    uniform on the l1 sphere, ``t_i ~ U[-1, 1]``."""
    rng = np.random.default_rng(seed)
    gamma = rng.uniform(-4 * B / m, 4 * B / m, size=m) if m else np.zeros(0)
    w = rng.dirichlet(np.ones(d), size=m) * rng.choice((-1.0, 1.0), size=(m, d))
    t = rng.uniform(-1.0, 1.0, size=m)
    return TwoLayerNet(0.0, gamma, _normalize_rows(w.reshape(m, d)), t, activation, B)
