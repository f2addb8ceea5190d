"""
app/core/penalty_algebra.py - Block diagonal penalty matrices, stable log pseudo-determinants and reparameterizations
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from app.core.exceptions import BasisError
from app.core.numerics import RANK_TOL, numerical_rank

logger = logging.getLogger(__name__)

RHO_BOUND = 35.0
DOMINANCE_TOL = np.finfo(float).eps ** (1.0 / 3.0)


class BlockType(Enum):
    DIAG_SINGLE = "diag_single"
    DENSE_SINGLE = "dense_single"
    MULTI_LAMBDA = "multi_lambda"


def clamp_rho(rho: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(rho, dtype=float), -RHO_BOUND, RHO_BOUND)


def _log_pdet(matrix: np.ndarray) -> Tuple[float, int]:
    ev = np.linalg.eigvalsh(0.5 * (matrix + matrix.T))
    if ev.size == 0:
        return 0.0, 0
    top = np.max(np.abs(ev))
    pos = ev[ev > RANK_TOL * top] if top > 0 else ev[:0]
    return float(np.sum(np.log(pos))), len(pos)


@dataclass
class PenaltyBlock:
    offset: int
    dim: int
    matrices: List[np.ndarray]
    sp_indices: List[int]
    rank: int
    block_type: BlockType
    log_pdet: float = 0.0
    transform: Optional[np.ndarray] = None
    log_scale: Optional[np.ndarray] = None

    @classmethod
    def single(cls, offset: int, matrix: np.ndarray, sp_index: int, rank: Optional[int] = None) -> "PenaltyBlock":
        matrix = 0.5 * (matrix + matrix.T)
        off_diag = matrix - np.diag(np.diag(matrix))
        kind = BlockType.DIAG_SINGLE if not np.any(off_diag) else BlockType.DENSE_SINGLE
        log_pdet, num_rank = _log_pdet(matrix)
        if rank is not None and rank != num_rank:
            logger.debug("stated rank %d differs from numerical rank %d; using numerical", rank, num_rank)
        return cls(offset, matrix.shape[0], [matrix], [sp_index], num_rank, kind, log_pdet)

    @classmethod
    def multi(cls, offset: int, matrices: List[np.ndarray], sp_indices: List[int]) -> "PenaltyBlock":
        mats = [0.5 * (m + m.T) for m in matrices]
        balanced = sum(m / np.linalg.norm(m) for m in mats)
        return cls(offset, mats[0].shape[0], mats, list(sp_indices), numerical_rank(balanced), BlockType.MULTI_LAMBDA)

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + self.dim)

    def validate(self) -> None:
        for mat in self.matrices:
            ev = np.linalg.eigvalsh(mat)
            if ev.size and ev[0] < -1e-10 * max(np.max(np.abs(ev)), 1e-300):
                raise BasisError(f"penalty block at offset {self.offset} is indefinite")


@dataclass
class PenaltyStructure:
    P: int
    blocks: List[PenaltyBlock] = field(default_factory=list)
    preprocessed: bool = False

    @property
    def M(self) -> int:
        idx = [j for b in self.blocks for j in b.sp_indices]
        return max(idx) + 1 if idx else 0

    @property
    def M_p(self) -> int:
        return self.P - sum(b.rank for b in self.blocks)

    def penalty(self, k: int) -> np.ndarray:
        """S^k embedded in a P x P matrix"""
        out = np.zeros((self.P, self.P))
        for b in self.blocks:
            for mat, j in zip(b.matrices, b.sp_indices):
                if j == k:
                    sl = slice(b.offset, b.offset + b.dim)
                    out[sl, sl] += mat
        return out

    def assemble(self, rho: np.ndarray) -> np.ndarray:
        return assemble_S_lambda(self, rho)

    def apply(self, k: int, v: np.ndarray) -> np.ndarray:
        """S^k v touching only the owning block"""
        out = np.zeros(self.P)
        for b in self.blocks:
            for mat, j in zip(b.matrices, b.sp_indices):
                if j == k:
                    sl = slice(b.offset, b.offset + b.dim)
                    out[sl] += mat @ v[sl]
        return out

    def balanced(self) -> np.ndarray:
        out = np.zeros((self.P, self.P))
        for b in self.blocks:
            sl = slice(b.offset, b.offset + b.dim)
            for mat in b.matrices:
                nrm = np.linalg.norm(mat)
                if nrm > 0:
                    out[sl, sl] += mat / nrm
        return out

    def transform_matrix(self) -> np.ndarray:
        """T with beta_original = T beta_working"""
        t = np.eye(self.P)
        for b in self.blocks:
            if b.transform is not None:
                sl = slice(b.offset, b.offset + b.dim)
                t[sl, sl] = b.transform
        return t

    def log_scale_vector(self) -> np.ndarray:
        out = np.zeros(self.P)
        for b in self.blocks:
            if b.log_scale is not None:
                out[b.offset : b.offset + b.dim] = b.log_scale
        return out

    def logdet(self, rho: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
        return logdet_splus(self, rho)

    def restrict(self, keep: np.ndarray) -> "PenaltyStructure":
        """Penalties on the retained coefficients only; log determinants recomputed"""
        keep = np.sort(np.asarray(keep, dtype=int))
        position = -np.ones(self.P, dtype=int)
        position[keep] = np.arange(len(keep))
        blocks = []
        for b in self.blocks:
            local = [i for i in range(b.dim) if position[b.offset + i] >= 0]
            if not local:
                continue
            offset = int(position[b.offset + local[0]])
            mats = [m[np.ix_(local, local)] for m in b.matrices]
            if len(mats) == 1:
                nb = PenaltyBlock.single(offset, mats[0], b.sp_indices[0])
            else:
                nb = PenaltyBlock.multi(offset, mats, b.sp_indices)
            if b.log_scale is not None:
                nb.log_scale = b.log_scale[local]
                nb.log_pdet -= 2.0 * float(np.sum(nb.log_scale))
            blocks.append(nb)
        return PenaltyStructure(len(keep), blocks, self.preprocessed)


def preprocess_blocks(structure: PenaltyStructure) -> PenaltyStructure:
    """
    Reparameterize every block for stable log-determinant evaluation.

    Diagonal blocks are scaled to 0/1 diagonals, dense single blocks are
    rotated onto their eigenvectors and multi-lambda blocks are split into
    penalized and unpenalized subspaces of their balanced penalty.
    """
    blocks = []
    for b in structure.blocks:
        b.validate()
        if b.block_type is BlockType.DIAG_SINGLE:
            d = np.diag(b.matrices[0]).copy()
            top = np.max(d) if d.size else 0.0
            pen = d > RANK_TOL * top
            scale = np.ones(b.dim)
            scale[pen] = 1.0 / np.sqrt(d[pen])
            new = np.diag(pen.astype(float))
            blocks.append(
                replace(
                    b,
                    matrices=[new],
                    rank=int(pen.sum()),
                    log_pdet=float(np.sum(np.log(d[pen]))),
                    transform=np.diag(scale),
                    log_scale=np.log(scale),
                )
            )
        elif b.block_type is BlockType.DENSE_SINGLE:
            ev, u = np.linalg.eigh(b.matrices[0])
            order = np.argsort(ev)[::-1]
            ev, u = ev[order], u[:, order]
            top = np.max(np.abs(ev))
            ev = np.where(ev > RANK_TOL * top, ev, 0.0)
            rank = int(np.sum(ev > 0))
            blocks.append(
                replace(
                    b,
                    matrices=[np.diag(ev)],
                    rank=rank,
                    log_pdet=float(np.sum(np.log(ev[:rank]))),
                    transform=u,
                )
            )
        else:
            balanced = sum(m / np.linalg.norm(m) for m in b.matrices)
            ev, u = np.linalg.eigh(balanced)
            order = np.argsort(ev)[::-1]
            ev, u = ev[order], u[:, order]
            rank = int(np.sum(ev > RANK_TOL * np.max(np.abs(ev))))
            mats = []
            for m in b.matrices:
                mt = u.T @ m @ u
                mt[rank:, :] = 0.0
                mt[:, rank:] = 0.0
                mats.append(0.5 * (mt + mt.T))
            blocks.append(replace(b, matrices=mats, rank=rank, transform=u))
    return PenaltyStructure(structure.P, blocks, preprocessed=True)


def reparameterize_type3(
    block: PenaltyBlock, rho: np.ndarray
) -> Tuple[List[np.ndarray], np.ndarray, int]:
    """
    Similarity transform separating dominant from subdominant penalty terms.

    Returns the transformed block matrices (penalized sub-block only), the
    orthogonal transform Q with S_transformed = Q' S Q restricted to the
    penalized subspace, and the penalized dimension.
    """
    rho = clamp_rho(rho)
    balanced = sum(m / np.linalg.norm(m) for m in block.matrices)
    ev, u = np.linalg.eigh(balanced)
    order = np.argsort(ev)[::-1]
    u = u[:, order]
    r = int(np.sum(ev > RANK_TOL * np.max(np.abs(ev))))
    q = u[:, :r].copy()
    mats = [q.T @ m @ q for m in block.matrices]
    mats = [0.5 * (m + m.T) for m in mats]

    lam = np.exp(rho[block.sp_indices])
    remaining = list(range(len(mats)))
    start = 0
    while remaining and start < r:
        sub = [mats[j][start:, start:] for j in remaining]
        norms = np.array([lam[j] * np.linalg.norm(s) for j, s in zip(remaining, sub)])
        top = np.max(norms)
        if top == 0.0:
            break
        dominant = [j for j, nrm in zip(remaining, norms) if nrm > DOMINANCE_TOL * top]
        bal = sum(mats[j][start:, start:] / np.linalg.norm(mats[j][start:, start:]) for j in dominant)
        sev, su = np.linalg.eigh(0.5 * (bal + bal.T))
        sorder = np.argsort(sev)[::-1]
        sev, su = sev[sorder], su[:, sorder]
        r_dom = int(np.sum(sev > RANK_TOL * np.max(np.abs(sev))))
        rot = np.eye(r)
        rot[start:, start:] = su
        mats = [rot.T @ m @ rot for m in mats]
        q = q @ rot
        cut = start + r_dom
        for j in dominant:
            mats[j][cut:, :] = 0.0
            mats[j][:, cut:] = 0.0
        mats = [0.5 * (m + m.T) for m in mats]
        remaining = [j for j in remaining if j not in dominant]
        if cut >= r:
            break
        start = cut
    return mats, q, r


def _type3_logdet(block: PenaltyBlock, rho: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    mats, _, r = reparameterize_type3(block, rho)
    lam = np.exp(clamp_rho(rho)[block.sp_indices])
    nb = len(mats)
    if r == 0:
        return 0.0, np.zeros(nb), np.zeros((nb, nb))
    total = sum(l * m for l, m in zip(lam, mats))
    c, lower = cho_factor(total, lower=False)
    value = 2.0 * float(np.sum(np.log(np.diag(c))))
    solved = [cho_solve((c, lower), l * m) for l, m in zip(lam, mats)]
    grad = np.array([np.trace(s) for s in solved])
    hess = np.diag(grad)
    for i in range(nb):
        for j in range(i, nb):
            t = np.sum(solved[i] * solved[j].T)
            hess[i, j] -= t
            if i != j:
                hess[j, i] -= t
    return value, grad, hess


def logdet_splus(structure: PenaltyStructure, rho: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """log|S^lambda|_+ with its gradient and Hessian in rho"""
    rho = clamp_rho(rho)
    M = len(rho)
    value = 0.0
    grad = np.zeros(M)
    hess = np.zeros((M, M))
    for b in structure.blocks:
        if b.block_type is BlockType.MULTI_LAMBDA:
            v, g, h = _type3_logdet(b, rho)
            value += v
            idx = np.asarray(b.sp_indices)
            grad[idx] += g
            hess[np.ix_(idx, idx)] += h
        else:
            j = b.sp_indices[0]
            value += b.rank * rho[j] + b.log_pdet
            grad[j] += b.rank
    return value, grad, hess


def assemble_S_lambda(structure: PenaltyStructure, rho: np.ndarray) -> np.ndarray:
    rho = clamp_rho(rho)
    out = np.zeros((structure.P, structure.P))
    for b in structure.blocks:
        sl = slice(b.offset, b.offset + b.dim)
        for mat, j in zip(b.matrices, b.sp_indices):
            out[sl, sl] += np.exp(rho[j]) * mat
    return out
