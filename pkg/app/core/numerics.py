"""
app/core/numerics.py - Factorizations and small combinatorial helpers shared by the fitting code
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Iterator, List, Sequence, Tuple

import numpy as np
from scipy.linalg import lapack, solve_triangular

logger = logging.getLogger(__name__)

RANK_TOL = 1e-10


@dataclass
class PivotedCholesky:
    """Upper factor R with A[piv][:, piv] = R^T R"""

    factor: np.ndarray
    piv: np.ndarray
    rank: int

    @property
    def n(self) -> int:
        return self.factor.shape[0]

    @property
    def full_rank(self) -> bool:
        return self.rank == self.n

    def solve(self, b: np.ndarray) -> np.ndarray:
        if not self.full_rank:
            raise np.linalg.LinAlgError("cannot solve with a rank deficient factor")
        b = np.asarray(b, dtype=float)
        z = solve_triangular(self.factor, b[self.piv], trans="T", check_finite=False)
        z = solve_triangular(self.factor, z, check_finite=False)
        x = np.empty_like(z)
        x[self.piv] = z
        return x

    def inverse(self) -> np.ndarray:
        inv = self.solve(np.eye(self.n))
        return 0.5 * (inv + inv.T)

    def logdet(self) -> float:
        return float(2.0 * np.sum(np.log(np.diag(self.factor)[: self.rank])))


def pivoted_cholesky(a: np.ndarray, tol: float = -1.0) -> PivotedCholesky:
    """LAPACK dpstrf with complete pivoting; stops at the numerical rank"""
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if n == 0:
        return PivotedCholesky(np.zeros((0, 0)), np.zeros(0, dtype=int), 0)
    c, piv, rank, info = lapack.dpstrf(a, tol=tol, lower=0)
    if info < 0:
        raise np.linalg.LinAlgError(f"dpstrf argument {-info} invalid")
    r = np.triu(c)
    r[rank:, rank:] = 0.0
    return PivotedCholesky(r, piv.astype(int) - 1, int(rank))


def perturbed_cholesky(a: np.ndarray, max_tries: int = 40) -> Tuple[PivotedCholesky, float]:
    """
    Factor a + eps*I for the smallest eps in {0, |a|_F*1e-12*10^j} that succeeds.

    Returns the factor and the eps used.
    """
    fac = pivoted_cholesky(a)
    if fac.full_rank:
        return fac, 0.0
    norm = float(np.linalg.norm(a))
    eps = (norm if norm > 0.0 else 1.0) * 1e-12
    eye = np.eye(a.shape[0])
    for _ in range(max_tries):
        fac = pivoted_cholesky(a + eps * eye)
        if fac.full_rank:
            return fac, eps
        eps *= 10.0
    raise np.linalg.LinAlgError("perturbation schedule exhausted")


def numerical_rank(a: np.ndarray, tol: float = RANK_TOL) -> int:
    """Rank of a symmetric PSD matrix by eigenvalue count above tol*max"""
    if a.size == 0:
        return 0
    ev = np.linalg.eigvalsh(0.5 * (a + a.T))
    top = np.max(np.abs(ev))
    if top == 0.0:
        return 0
    return int(np.sum(ev > tol * top))


def set_partitions(items: Sequence) -> Iterator[List[List]]:
    """All partitions of items into non-empty blocks"""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1 :]
        yield [[first]] + part


def array_to_json(a: np.ndarray) -> Dict[str, Any]:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "values": a.ravel().tolist()}


def array_from_json(raw: Dict[str, Any]) -> np.ndarray:
    return np.asarray(raw["values"], dtype=float).reshape(raw["shape"])
