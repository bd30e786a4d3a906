"""Integration rules and sample sets on the unit cube."""
from __future__ import annotations

import math
import warnings
from functools import lru_cache
from dataclasses import dataclass

import numpy as np
from scipy.special import roots_legendre
from scipy.stats import qmc

__all__ = [
    "QuadratureRule",
    "SampleSet",
    "gauss_legendre",
    "composite_gauss",
    "default_rule",
    "sobol_rule",
    "integration_rules",
    "make_samples",
]


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes in ``[0, 1]^d`` with weights summing to one."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        weights = np.ascontiguousarray(self.weights, dtype=float)
        if nodes.ndim != 2 or weights.shape != (nodes.shape[0],):
            raise ValueError("nodes must be (n, d) and weights (n,)")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    def integrate(self, values: np.ndarray) -> float:
        """Weighted sum of ``values`` sampled at the nodes (first axis)."""
        return float(np.tensordot(self.weights, values, axes=(0, 0)))


@lru_cache(maxsize=32)
def _gauss_1d(n: int, panels: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = roots_legendre(n)
    edges = np.arange(panels) / panels
    nodes = (edges[:, None] + 0.5 * (x + 1.0) / panels).ravel()
    weights = np.tile(0.5 * w / panels, panels)
    return nodes, weights


def _tensor(x, w, dim):
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*([w] * dim), indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return QuadratureRule(nodes, weights)


def gauss_legendre(dim: int, n_per_axis: int) -> QuadratureRule:
    """Tensor Gauss-Legendre rule with ``n_per_axis`` nodes along every axis.

    Exact for polynomials of degree ``2 * n_per_axis - 1`` in each variable.
    """
    if dim < 1 or n_per_axis < 1:
        raise ValueError("dim and n_per_axis must be positive")
    return _tensor(*_gauss_1d(n_per_axis, 1), dim)


def composite_gauss(dim: int, panels: int, order: int = 4) -> QuadratureRule:
    """Tensor rule from ``panels`` equal cells per axis with ``order`` Gauss
    nodes each; suited to integrands with kinks."""
    if dim < 1 or panels < 1 or order < 1:
        raise ValueError("dim, panels and order must be positive")
    return _tensor(*_gauss_1d(order, panels), dim)


def default_rule(dim: int, max_frequency: int = 0) -> QuadratureRule:
    """Gauss rule resolving cosine modes up to ``max_frequency``.

    Uses ``ceil(4 * max_frequency + 8)`` nodes per axis.
    """
    return gauss_legendre(dim, int(math.ceil(4 * max_frequency + 8)))


def sobol_rule(dim: int, log2_points: int, seed) -> QuadratureRule:
    """Equal-weight scrambled Sobol rule with ``2**log2_points`` nodes."""
    sampler = qmc.Sobol(d=dim, scramble=True, seed=seed)
    nodes = sampler.random_base2(log2_points)
    n = nodes.shape[0]
    return QuadratureRule(nodes, np.full(n, 1.0 / n))


def integration_rules(dim: int, *, gauss_nodes: int = 48, log2_points: int = 16,
                      randomizations: int = 4, seed=0) -> list[QuadratureRule]:
    """Population-integral rules: one Gauss rule for ``dim <= 3``, else
    ``randomizations`` independently scrambled Sobol rules."""
    if dim <= 3:
        return [gauss_legendre(dim, gauss_nodes)]
    seeds = np.random.SeedSequence(seed).spawn(randomizations)
    return [sobol_rule(dim, log2_points, np.random.default_rng(s)) for s in seeds]


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Points in the closed unit cube, reproducible from ``(seed, n, tag)``."""

    points: np.ndarray
    seed: int | None = None
    tag: str = "iid-uniform"

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise ValueError("points must be an (n, d) array")
        if pts.size and (pts.min() < 0.0 or pts.max() > 1.0):
            raise ValueError("sample points must lie in [0, 1]^d")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def make_samples(n: int, dim: int, seed, tag: str = "iid-uniform") -> SampleSet:
    """Draw ``n`` points in ``[0, 1]^dim``.

    Parameters
    ----------
    tag : {"iid-uniform", "low-discrepancy"}
        ``low-discrepancy`` uses a scrambled Sobol sequence.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if tag == "iid-uniform":
        pts = np.random.default_rng(seed).random((n, dim))
    elif tag == "low-discrepancy":
        with warnings.catch_warnings():
            # balance warnings for non powers of two are irrelevant here
            warnings.simplefilter("ignore", UserWarning)
            pts = qmc.Sobol(d=dim, scramble=True, seed=seed).random(n)
    else:
        raise ValueError(f"unknown sample tag {tag!r}")
    return SampleSet(pts, seed, tag)
