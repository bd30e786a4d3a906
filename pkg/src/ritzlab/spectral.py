"""Sparse cosine series on the unit cube.

A series ``u = sum_k u_k Phi_k`` uses the Neumann eigenbasis
``Phi_k(x) = prod_i cos(pi k_i x_i)`` with ``k`` a multi-index of
non-negative integers.  Products of series are computed exactly through the
even extension to ``[-1, 1]^d``, where cosine series become Fourier series
and multiplication becomes a discrete convolution.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from types import MappingProxyType
from typing import Callable, Mapping

import numpy as np

from .quadrature import QuadratureRule

__all__ = [
    "CosineSeries",
    "phi_eval",
    "series_eval_grad",
    "norm",
    "barron_weight",
    "alpha",
    "to_signed",
    "fold_signed",
    "series_product",
    "project_coefficient",
    "as_points",
]

DOMAIN_TOL = 1e-12
_CHUNK = 8192


def as_points(x, dim: int) -> tuple[np.ndarray, bool]:
    """Coerce ``x`` to an ``(n, dim)`` array of points in the unit cube.

    A scalar or a 1-D array is read as a single point.  Returns the array and
    a flag telling whether the input was a single point.
    """
    arr = np.asarray(x, dtype=float)
    single = arr.ndim <= 1
    arr = arr.reshape(1, -1) if single else arr
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {np.shape(x)}")
    if arr.size and (arr.min() < -DOMAIN_TOL or arr.max() > 1.0 + DOMAIN_TOL):
        raise ValueError("point outside [0, 1]^d")
    return arr, single


def _canonical_key(k, dim: int) -> tuple[int, ...]:
    key = tuple(int(v) for v in np.atleast_1d(k))
    if len(key) != dim:
        raise ValueError(f"multi-index {key} does not have length {dim}")
    if any(v < 0 for v in key):
        raise ValueError(f"multi-index {key} has negative entries")
    return key


def alpha(k) -> float:
    """Squared L2 norm of ``Phi_k``: ``2 ** -(number of nonzero entries)``."""
    return 2.0 ** -int(np.count_nonzero(k))


def barron_weight(k_l1, s: float):
    """Weight ``1 + pi^s |k|_1^s`` with ``0^0 := 0`` so the zero mode weighs 1."""
    k_l1 = np.asarray(k_l1, dtype=float)
    with np.errstate(divide="ignore"):
        powered = np.where(k_l1 > 0, np.power(np.pi * k_l1, s), 0.0)
    return 1.0 + powered


@dataclass(frozen=True, eq=False)
class CosineSeries:
    """Finite cosine series in dimension ``dim``.

    Parameters
    ----------
    dim : int
        Ambient dimension.
    coeffs : mapping from multi-index tuples to float
        Absent keys are zero.  Exact zeros are dropped and keys are stored in
        lexicographic order.

    Examples
    --------
    >>> u = CosineSeries(1, {(1,): 2.0})
    >>> float(u([0.0]))
    2.0
    """

    dim: int
    coeffs: Mapping[tuple[int, ...], float]

    def __post_init__(self):
        dim = int(self.dim)
        if dim < 1:
            raise ValueError("dim must be positive")
        clean = {}
        for k, v in dict(self.coeffs).items():
            key = _canonical_key(k, dim)
            val = float(v)
            if not math.isfinite(val):
                raise ValueError(f"non-finite coefficient at {key}")
            if val != 0.0:
                clean[key] = clean.get(key, 0.0) + val
        clean = {k: clean[k] for k in sorted(clean) if clean[k] != 0.0}
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "coeffs", MappingProxyType(clean))

    def __eq__(self, other):
        if not isinstance(other, CosineSeries):
            return NotImplemented
        return self.dim == other.dim and dict(self.coeffs) == dict(other.coeffs)

    def __hash__(self):
        return hash((self.dim, tuple(self.coeffs.items())))

    @classmethod
    def zero(cls, dim: int) -> "CosineSeries":
        return cls(dim, {})

    @classmethod
    def basis(cls, k, value: float = 1.0) -> "CosineSeries":
        """The single mode ``value * Phi_k``."""
        key = tuple(int(v) for v in np.atleast_1d(k))
        return cls(len(key), {key: value})

    @classmethod
    def constant(cls, dim: int, value: float) -> "CosineSeries":
        return cls(dim, {(0,) * dim: value})

    def __getitem__(self, k) -> float:
        return self.coeffs.get(_canonical_key(k, self.dim), 0.0)

    def __len__(self) -> int:
        return len(self.coeffs)

    def __iter__(self):
        return iter(self.coeffs.items())

    def __repr__(self) -> str:
        return f"CosineSeries(dim={self.dim}, coeffs={dict(self.coeffs)})"

    @cached_property
    def keys_array(self) -> np.ndarray:
        """``(M, dim)`` integer array of stored multi-indices."""
        arr = np.array(list(self.coeffs), dtype=np.int64).reshape(-1, self.dim)
        arr.setflags(write=False)
        return arr

    @cached_property
    def values_array(self) -> np.ndarray:
        arr = np.fromiter(self.coeffs.values(), dtype=float, count=len(self.coeffs))
        arr.setflags(write=False)
        return arr

    @property
    def max_frequency(self) -> int:
        """Largest single entry over all stored multi-indices (0 if empty)."""
        return int(self.keys_array.max()) if len(self) else 0

    @property
    def mean(self) -> float:
        """Integral over the unit cube, i.e. the zero coefficient."""
        return self.coeffs.get((0,) * self.dim, 0.0)

    def _check_dim(self, other: "CosineSeries"):
        if other.dim != self.dim:
            raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")

    def __add__(self, other):
        if not isinstance(other, CosineSeries):
            return NotImplemented
        self._check_dim(other)
        out = dict(self.coeffs)
        for k, v in other.coeffs.items():
            out[k] = out.get(k, 0.0) + v
        return CosineSeries(self.dim, out)

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        if not isinstance(other, CosineSeries):
            return NotImplemented
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, CosineSeries):
            return series_product(self, other)
        return self.scale(float(other))

    __rmul__ = __mul__

    def scale(self, factor: float) -> "CosineSeries":
        return CosineSeries(self.dim, {k: factor * v for k, v in self.coeffs.items()})

    def map_coefficients(self, fn: Callable[[tuple[int, ...], float], float]) -> "CosineSeries":
        """New series with coefficients ``fn(k, u_k)``."""
        return CosineSeries(self.dim, {k: fn(k, v) for k, v in self.coeffs.items()})

    def allclose(self, other: "CosineSeries", atol: float = 1e-12) -> bool:
        """Coefficientwise comparison over the union of both supports."""
        self._check_dim(other)
        keys = set(self.coeffs) | set(other.coeffs)
        return all(abs(self.coeffs.get(k, 0.0) - other.coeffs.get(k, 0.0)) <= atol
                   for k in keys)

    def max_abs_difference(self, other: "CosineSeries") -> float:
        self._check_dim(other)
        keys = set(self.coeffs) | set(other.coeffs)
        return max((abs(self.coeffs.get(k, 0.0) - other.coeffs.get(k, 0.0)) for k in keys),
                   default=0.0)

    def evaluate(self, x):
        """Values and gradients at ``x``; see :func:`series_eval_grad`."""
        return series_eval_grad(self, x)

    def __call__(self, x):
        return self.evaluate(x)[0]

    def to_dict(self) -> dict:
        return {"dim": self.dim,
                "coeffs": [{"k": list(k), "v": v} for k, v in self.coeffs.items()]}

    @classmethod
    def from_dict(cls, data: Mapping) -> "CosineSeries":
        dim = int(data["dim"])
        return cls(dim, {tuple(item["k"]): item["v"] for item in data.get("coeffs", [])})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CosineSeries":
        return cls.from_dict(json.loads(text))


def phi_eval(k, x) -> float:
    """Evaluate the basis function ``Phi_k`` at a single point ``x``.

    >>> round(phi_eval((1, 1), (1 / 3, 1 / 3)), 12)
    0.25
    """
    k = np.atleast_1d(np.asarray(k, dtype=np.int64))
    pts, _ = as_points(np.atleast_1d(x), k.shape[0])
    return float(np.prod(np.cos(np.pi * k * pts[0])))


def _eval_block(keys, vals, pts):
    theta = np.pi * pts[:, None, :] * keys[None, :, :]
    cos = np.cos(theta)
    values = np.prod(cos, axis=2) @ vals
    dim = pts.shape[1]
    grads = np.empty((pts.shape[0], dim))
    dsin = -np.pi * keys[None, :, :] * np.sin(theta)
    for i in range(dim):
        factors = cos.copy()
        factors[:, :, i] = dsin[:, :, i]
        grads[:, i] = np.prod(factors, axis=2) @ vals
    return values, grads


def series_eval_grad(u: CosineSeries, x):
    """Value and exact spatial gradient of ``u``.

    Parameters
    ----------
    u : CosineSeries
    x : array_like
        A single point of length ``d`` or an ``(n, d)`` batch.

    Returns
    -------
    value : float or ndarray of shape (n,)
    gradient : ndarray of shape (d,) or (n, d)
    """
    pts, single = as_points(x, u.dim)
    n = pts.shape[0]
    if len(u) == 0:
        values, grads = np.zeros(n), np.zeros((n, u.dim))
    else:
        keys = u.keys_array.astype(float)
        vals = u.values_array
        parts = [_eval_block(keys, vals, pts[i:i + _CHUNK]) for i in range(0, n, _CHUNK)]
        values = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0)
        grads = np.concatenate([p[1] for p in parts]) if parts else np.zeros((0, u.dim))
    if single:
        return float(values[0]), grads[0]
    return values, grads


def norm(u: CosineSeries, kind: str = "barron", s: float = 2.0) -> float:
    """Norms computed from the coefficients.

    Parameters
    ----------
    kind : {"L2", "H1", "barron", "Linf_bound"}
        ``barron`` is the spectral Barron norm ``sum (1 + pi^s |k|_1^s)|u_k|``;
        ``Linf_bound`` is ``sum |u_k|``, an upper bound for the sup norm.
    s : float
        Smoothness index for ``barron``.
    """
    if len(u) == 0:
        if kind == "barron" and s < 0:
            raise ValueError("s must be non-negative")
        return 0.0
    keys = u.keys_array
    vals = u.values_array
    kind_l = kind.lower()
    if kind_l == "l2":
        weights = 2.0 ** -np.count_nonzero(keys, axis=1)
        return float(np.sqrt(np.sum(weights * vals ** 2)))
    if kind_l == "h1":
        weights = 2.0 ** -np.count_nonzero(keys, axis=1)
        lap = np.pi ** 2 * np.sum(keys.astype(float) ** 2, axis=1)
        return float(np.sqrt(np.sum(weights * (1.0 + lap) * vals ** 2)))
    if kind_l == "barron":
        if s < 0:
            raise ValueError("s must be non-negative")
        return float(np.sum(barron_weight(keys.sum(axis=1), s) * np.abs(vals)))
    if kind_l == "linf_bound":
        return float(np.sum(np.abs(vals)))
    raise ValueError(f"unknown norm kind {kind!r}")


def to_signed(u: CosineSeries) -> dict[tuple[int, ...], float]:
    """Fourier table of the even extension of ``u`` to ``[-1, 1]^d``.

    Entry ``m`` equals ``2 ** -j(m) * u_{|m|}`` where ``j(m)`` counts nonzero
    entries, so that ``u(x) = sum_m table[m] cos(pi m . x)``.
    """
    table = {}
    for k, v in u.coeffs.items():
        nz = [i for i, ki in enumerate(k) if ki]
        weight = v * 2.0 ** -len(nz)
        for mask in range(1 << len(nz)):
            m = list(k)
            for bit, i in enumerate(nz):
                if mask >> bit & 1:
                    m[i] = -m[i]
            table[tuple(m)] = weight
    return table


def fold_signed(table: Mapping[tuple[int, ...], float], dim: int,
                tol: float = 1e-12) -> CosineSeries:
    """Inverse of :func:`to_signed`.

    Raises
    ------
    ValueError
        If entries sharing the same ``|m|`` disagree by more than ``tol``.
    """
    folded: dict[tuple[int, ...], float] = {}
    for m, v in table.items():
        if len(m) != dim:
            raise ValueError(f"signed index {m} does not have length {dim}")
        k = tuple(abs(int(mi)) for mi in m)
        scaled = v * 2.0 ** sum(1 for mi in m if mi)
        if k in folded:
            if abs(folded[k] - scaled) > tol * max(1.0, abs(scaled)):
                raise ValueError(f"inconsistent sign-pattern entries for {k}")
        else:
            folded[k] = scaled
    return CosineSeries(dim, folded)


def _signed_arrays(u: CosineSeries) -> tuple[np.ndarray, np.ndarray]:
    table = to_signed(u)
    keys = np.array(list(table), dtype=np.int64).reshape(-1, u.dim)
    vals = np.fromiter(table.values(), dtype=float, count=len(table))
    return keys, vals


def series_product(u: CosineSeries, v: CosineSeries) -> CosineSeries:
    """Exact cosine series of the pointwise product ``u * v``.

    The signed tables of both factors are convolved and only the
    non-negative representatives are folded back.
    """
    if u.dim != v.dim:
        raise ValueError(f"dimension mismatch: {u.dim} vs {v.dim}")
    if len(u) == 0 or len(v) == 0:
        return CosineSeries.zero(u.dim)
    ku, vu = _signed_arrays(u)
    kv, vv = _signed_arrays(v)
    keys = (ku[:, None, :] + kv[None, :, :]).reshape(-1, u.dim)
    vals = (vu[:, None] * vv[None, :]).ravel()
    keep = np.all(keys >= 0, axis=1)
    keys, vals = keys[keep], vals[keep]
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    sums = np.zeros(uniq.shape[0])
    np.add.at(sums, inverse.ravel(), vals)
    sums *= 2.0 ** np.count_nonzero(uniq, axis=1)
    return CosineSeries(u.dim, {tuple(k): s for k, s in zip(uniq.tolist(), sums)})


def project_coefficient(f: Callable[[np.ndarray], np.ndarray], k, rule: QuadratureRule) -> float:
    """Quadrature estimate of the cosine coefficient ``<f, Phi_k> / alpha_k``.

    ``f`` receives an ``(n, d)`` array of nodes and returns ``n`` values.
    """
    k = np.atleast_1d(np.asarray(k, dtype=np.int64))
    if k.shape[0] != rule.dim:
        raise ValueError("multi-index and rule dimensions differ")
    basis = np.prod(np.cos(np.pi * rule.nodes * k), axis=1)
    values = np.asarray(f(rule.nodes), dtype=float)
    return rule.integrate(values * basis) / alpha(k)
