"""Spectral ground truth for the Neumann Poisson and Schrodinger problems.

With ``-Delta Phi_k = pi^2 |k|^2 Phi_k`` the Poisson problem is diagonal in
the cosine basis.  The Schrodinger problem ``-Delta u + V u = f`` couples
modes through multiplication by ``V`` and is solved as a dense Galerkin
system on a box of multi-indices.
"""
from __future__ import annotations

import itertools
import json
import logging
import warnings
from dataclasses import dataclass
from functools import cached_property, reduce
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy.stats import qmc

from .reports import BoundReport
from .spectral import CosineSeries, norm, series_product

__all__ = [
    "TruncatedLattice",
    "SchrodingerSystem",
    "SolverError",
    "Problem",
    "poisson_solve",
    "schrodinger_system",
    "schrodinger_solve",
    "manufacture_rhs",
    "residual_check",
    "lattice_residual",
    "regularity_report",
    "check_potential",
    "potential_operator_bound",
    "load_problem",
    "save_problem",
    "solve_problem",
]

log = logging.getLogger(__name__)

MAX_LATTICE = 20_000
MAX_CONDITION = 1e12
POTENTIAL_MARGIN = 1e-9


class SolverError(RuntimeError):
    """Raised when the truncated system is singular or ill-conditioned."""


def _laplace_eigenvalue(k) -> float:
    return float(np.pi ** 2 * np.sum(np.square(k, dtype=float)))


@dataclass(frozen=True, eq=False)
class TruncatedLattice:
    """All multi-indices with entries in ``0..bound``, in lexicographic order."""

    dim: int
    bound: int

    def __post_init__(self):
        if self.dim < 1 or self.bound < 0:
            raise ValueError("dim must be positive and bound non-negative")

    @cached_property
    def indices(self) -> np.ndarray:
        grid = np.array(list(itertools.product(range(self.bound + 1), repeat=self.dim)),
                        dtype=np.int64)
        grid.setflags(write=False)
        return grid

    def __len__(self) -> int:
        return (self.bound + 1) ** self.dim

    def position(self, k) -> int:
        """Row of multi-index ``k`` (row-major with the last axis fastest)."""
        pos = 0
        for ki in k:
            if not 0 <= ki <= self.bound:
                raise KeyError(f"{tuple(k)} is outside the lattice")
            pos = pos * (self.bound + 1) + int(ki)
        return pos

    def contains(self, u: CosineSeries) -> bool:
        return u.dim == self.dim and u.max_frequency <= self.bound

    def vector(self, u: CosineSeries) -> np.ndarray:
        """Coefficients of ``u`` as a dense lattice vector."""
        if not self.contains(u):
            raise ValueError("series support exceeds the lattice")
        out = np.zeros(len(self))
        for k, v in u:
            out[self.position(k)] = v
        return out

    def series(self, vec: np.ndarray) -> CosineSeries:
        nz = np.flatnonzero(vec)
        return CosineSeries(self.dim, {tuple(self.indices[i]): vec[i] for i in nz})


def _coupling_1d(shift: int, bound: int) -> np.ndarray:
    """Matrix of ``a -> cos(pi shift z) cos(pi a z)`` in 1-D cosine modes."""
    size = bound + 1
    mat = np.zeros((size, size))
    a = np.arange(size)
    up = a + shift
    ok = up < size
    mat[up[ok], a[ok]] += 0.5
    mat[np.abs(a - shift), a] += 0.5
    return mat


@dataclass(frozen=True, eq=False)
class SchrodingerSystem:
    """Dense Galerkin system ``(M + V) u = f`` on a truncated lattice."""

    lattice: TruncatedLattice
    matrix: np.ndarray
    rhs: np.ndarray


def check_potential(V: CosineSeries, bound: int) -> float:
    """Sample ``V`` on ``2^d (bound + 1)`` Halton points; return the minimum.

    Raises
    ------
    ValueError
        If the sampled minimum is below ``1e-9`` or the mean is not positive.
    """
    n = (2 ** V.dim) * (bound + 1)
    pts = qmc.Halton(d=V.dim, scramble=False).random(n)
    corners = np.array(list(itertools.product((0.0, 1.0), repeat=V.dim)))
    vmin = float(np.min(V(np.vstack([pts, corners]))))
    if vmin < POTENTIAL_MARGIN or V.mean <= 0:
        raise ValueError(f"potential is not bounded below by a positive constant (min {vmin:.3e})")
    return vmin


def schrodinger_system(f: CosineSeries, V: CosineSeries, K: int) -> SchrodingerSystem:
    """Assemble the truncated operator on the box ``{0..K}^d``.

    The multiplication operator is a sum over the modes ``j`` of ``V`` of
    Kronecker products of 1-D coupling matrices.
    """
    if f.dim != V.dim:
        raise ValueError(f"dimension mismatch: {f.dim} vs {V.dim}")
    lattice = TruncatedLattice(f.dim, K)
    if len(lattice) > MAX_LATTICE:
        raise ValueError(f"lattice of size {len(lattice)} exceeds {MAX_LATTICE}")
    if not lattice.contains(f) or not lattice.contains(V):
        raise ValueError("supports of f and V must lie inside the lattice")
    if f.max_frequency + V.max_frequency > K:
        warnings.warn("lattice headroom is smaller than the potential's frequency; "
                      "the truncation error is not controlled", stacklevel=2)
    mat = np.diag([_laplace_eigenvalue(k) for k in lattice.indices])
    for j, vj in V:
        blocks = [_coupling_1d(ji, K) for ji in j]
        mat += vj * reduce(np.kron, blocks)
    return SchrodingerSystem(lattice, mat, lattice.vector(f))


def poisson_solve(f: CosineSeries, tol: float = 1e-12) -> CosineSeries:
    """Mean-zero solution of ``-Delta u = f`` with Neumann conditions.

    Examples
    --------
    >>> u = poisson_solve(CosineSeries.basis((1, 2), 3.0))
    >>> round(u[(1, 2)] * 5 * np.pi ** 2, 12)
    3.0
    """
    if abs(f.mean) > tol:
        raise ValueError("right-hand side must have zero mean")
    return CosineSeries(f.dim, {k: v / _laplace_eigenvalue(k) for k, v in f if any(k)})


def schrodinger_solve(f: CosineSeries, V: CosineSeries, K: int, *,
                      return_residual: bool = False):
    """Solve ``-Delta u + V u = f`` on the lattice ``{0..K}^d``.

    Parameters
    ----------
    f, V : CosineSeries
        Right-hand side and potential; ``V`` must be positive.
    K : int
        Per-axis truncation.
    return_residual : bool
        Also return the in-lattice residual.

    Raises
    ------
    SolverError
        If the condition estimate exceeds ``1e12``.
    """
    check_potential(V, K)
    system = schrodinger_system(f, V, K)
    lu, piv = scipy.linalg.lu_factor(system.matrix, check_finite=False)
    anorm = np.linalg.norm(system.matrix, 1)
    rcond, info = scipy.linalg.lapack.dgecon(lu, anorm, norm="1")
    if info != 0 or rcond * MAX_CONDITION < 1.0:
        raise SolverError(f"ill-conditioned system (condition estimate {1 / max(rcond, 1e-300):.3e})")
    coef = scipy.linalg.lu_solve((lu, piv), system.rhs, check_finite=False)
    u = system.lattice.series(coef)
    residual = lattice_residual(u, f, V, K)
    log.debug("schrodinger solve: K=%d size=%d residual=%.3e", K, len(system.lattice), residual)
    return (u, residual) if return_residual else u


def manufacture_rhs(u: CosineSeries, V: CosineSeries | None = None) -> CosineSeries:
    """Right-hand side ``-Delta u`` or ``-Delta u + V u`` of a chosen solution."""
    lap = CosineSeries(u.dim, {k: _laplace_eigenvalue(k) * v for k, v in u})
    return lap if V is None else lap + series_product(V, u)


def _equation_defect(u, f, V):
    lhs = manufacture_rhs(u, V)
    keys = set(lhs.coeffs) | set(f.coeffs)
    return {k: lhs.coeffs.get(k, 0.0) - f.coeffs.get(k, 0.0) for k in keys}


def residual_check(u: CosineSeries, f: CosineSeries, V: CosineSeries | None = None) -> float:
    """Largest coefficientwise defect of the equation over all modes."""
    return max((abs(v) for v in _equation_defect(u, f, V).values()), default=0.0)


def lattice_residual(u: CosineSeries, f: CosineSeries, V: CosineSeries | None, K: int) -> float:
    """Largest coefficientwise defect restricted to modes with entries ``<= K``."""
    defect = _equation_defect(u, f, V)
    return max((abs(v) for k, v in defect.items() if max(k) <= K), default=0.0)


def _default_bound(f: CosineSeries, V: CosineSeries) -> int:
    K = max(f.max_frequency + 2 * V.max_frequency, 1)
    while K > 1 and (K + 1) ** f.dim > MAX_LATTICE:
        K -= 1
    return K


def regularity_report(f: CosineSeries, s: float, V: CosineSeries | None = None,
                      K: int | None = None) -> BoundReport:
    """Ratio of the solution's smoothness-``s + 2`` Barron norm to the data's
    smoothness-``s`` norm.

    For the Poisson problem the ratio never exceeds ``d``; the report carries
    that check.  For the Schrodinger problem only the ratio is recorded.
    """
    if V is None:
        u = poisson_solve(f)
    else:
        K = _default_bound(f, V) if K is None else K
        u = schrodinger_solve(f, V, K)
    nu = norm(u, "barron", s + 2)
    nf = norm(f, "barron", s)
    ratio = 0.0 if nf == 0 else nu / nf
    inputs = {"dim": f.dim, "s": float(s), "kind": "poisson" if V is None else "schrodinger"}
    checks = {}
    values = {"ratio": ratio, "barron_u": nu, "barron_f": nf}
    if V is None:
        values["bound"] = float(f.dim)
        checks["ratio_le_d"] = ratio <= f.dim
    else:
        inputs["K"] = K
    return BoundReport(values, inputs,
                       {"ratio": "|u|_B^{s+2} / |f|_B^s", "bound": "d (Poisson regularity)"},
                       checks)


def potential_operator_bound(V: CosineSeries, s: int) -> float:
    """Bound on the norm of ``u -> V u`` as an operator on the Barron space of order ``s``.

    Equals ``2^(2d + 3) max(1, C_s) |V|_{B^s}`` with ``C_s = max(1, 2^(s-1))``,
    the constant in ``|a + b|^s <= C_s (|a|^s + |b|^s)``; only integer
    ``s`` in ``{0, 1, 2}`` is supported.
    """
    if s not in (0, 1, 2):
        raise ValueError("the operator bound is only provided for s in {0, 1, 2}")
    c_s = max(1.0, 2.0 ** (s - 1))
    return 2.0 ** (2 * V.dim + 3) * c_s * norm(V, "barron", s)


@dataclass(frozen=True)
class Problem:
    """A PDE instance as stored in a problem file."""

    kind: str
    f: CosineSeries
    V: CosineSeries | None = None
    K: int | None = None

    def __post_init__(self):
        if self.kind not in ("poisson", "schrodinger"):
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.kind == "schrodinger" and self.V is None:
            raise ValueError("a Schrodinger problem needs a potential V")

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "f": self.f.to_dict()}
        if self.V is not None:
            out["V"] = self.V.to_dict()
        if self.K is not None:
            out["K"] = self.K
        return out

    @classmethod
    def from_dict(cls, data) -> "Problem":
        V = data.get("V")
        return cls(data["kind"], CosineSeries.from_dict(data["f"]),
                   None if V is None else CosineSeries.from_dict(V),
                   None if data.get("K") is None else int(data["K"]))


def load_problem(path) -> Problem:
    return Problem.from_dict(json.loads(Path(path).read_text()))


def save_problem(problem: Problem, path) -> None:
    Path(path).write_text(json.dumps(problem.to_dict(), sort_keys=True, indent=2) + "\n")


def solve_problem(problem: Problem) -> tuple[CosineSeries, float]:
    """Solve a stored problem; return the solution and its residual."""
    if problem.kind == "poisson":
        u = poisson_solve(problem.f)
        return u, residual_check(u, problem.f)
    K = _default_bound(problem.f, problem.V) if problem.K is None else problem.K
    return schrodinger_solve(problem.f, problem.V, K, return_residual=True)
