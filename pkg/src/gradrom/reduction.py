"""POD bases and DEIM operators from snapshot matrices.

Truncation ranks follow the relative information content
``RIC(k) = sum_{i<=k} s_i^2 / sum_i s_i^2``. When the spectrum comes from a
randomized SVD the denominator is the squared Frobenius norm of the matrix,
i.e. the energy of the full spectrum, not just of the computed part.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import InputError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SnapshotMatrix:
    data: np.ndarray
    tag: str = ""

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2 or data.shape[1] < 1:
            raise InputError(f"snapshot matrix must be 2D with at least one column, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InputError("snapshot matrix has non-finite entries")
        object.__setattr__(self, "data", data)


@dataclass(frozen=True)
class SVDResult:
    U: np.ndarray
    s: np.ndarray
    Vt: np.ndarray
    method: str = "rsvd"
    total_energy: float = float("nan")

    @property
    def rank(self) -> int:
        return len(self.s)

    @property
    def V(self) -> np.ndarray:
        return self.Vt.T


def _orth(Y):
    Q, _ = np.linalg.qr(Y, mode="reduced")
    return Q


def rsvd(matrix, k: int, p: int | None = None, power_iters: int = 1, seed=None) -> SVDResult:
    """Rank-``k`` randomized SVD with oversampling ``p`` (default ``p = k``).

    Falls back to a deterministic SVD when ``k + p`` exceeds the smaller
    matrix dimension.
    """
    A = np.asarray(matrix, dtype=float)
    n_rows, n_cols = A.shape
    p = k if p is None else p
    if k < 1:
        raise InputError("target rank must be at least 1")
    width = k + p
    if width > min(n_rows, n_cols):
        log.info("rsvd: k + p = %d exceeds min(%d, %d); using deterministic SVD", width, n_rows, n_cols)
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
        return SVDResult(U[:, :k], s[:k], Vt[:k], "svd", float(np.sum(s**2)))
    rng = np.random.default_rng(seed)
    Omega = rng.standard_normal((n_cols, width))
    Q = _orth(A @ Omega)
    for _ in range(power_iters):
        Q = _orth(A.T @ Q)
        Q = _orth(A @ Q)
    Ub, s, Vt = np.linalg.svd(Q.T @ A, full_matrices=False)
    U = Q @ Ub
    return SVDResult(U[:, :k], s[:k], Vt[:k], "rsvd", float(np.sum(A * A)))


def ric(s, total_energy: float | None = None) -> np.ndarray:
    """Cumulative relative information content of singular values ``s``."""
    e = np.asarray(s, dtype=float) ** 2
    total = float(e.sum()) if total_energy is None else float(total_energy)
    if not total > 0:
        raise InputError("singular values are all zero")
    return np.cumsum(e) / total


def select_modes_by_ric(s, eps: float, total_energy: float | None = None) -> int:
    """Smallest ``k`` with ``RIC(k) >= 1 - eps``.

    If round-off keeps the RIC just below the target (``eps = 0`` against
    an externally supplied total), every non-zero value is kept.
    """
    s = np.asarray(s, dtype=float)
    if s.ndim != 1 or len(s) == 0:
        raise InputError("need a non-empty vector of singular values")
    if np.any(s < 0) or np.any(np.diff(s) > 1e-12 * max(s[0], 1.0)):
        raise InputError("singular values must be non-negative and non-increasing")
    if eps < 0:
        raise InputError("threshold must be non-negative")
    r = ric(s, total_energy)
    hit = np.flatnonzero(r >= 1.0 - eps)
    if len(hit):
        return int(hit[0]) + 1
    return int(np.count_nonzero(s))


def truncated_svd(matrix, eps: float, seed=None, power_iters: int = 1,
                  start_rank: int = 4) -> tuple[SVDResult, int]:
    """SVD truncated by RIC(eps), growing the rSVD target rank by doubling.

    Returns the (possibly longer) computed decomposition and the selected
    mode count.
    """
    A = np.asarray(matrix, dtype=float)
    n_min = min(A.shape)
    rank_tol = max(A.shape) * np.finfo(float).eps
    k = max(1, min(start_rank, n_min))
    while True:
        if 2 * k > n_min:
            U, s, Vt = np.linalg.svd(A, full_matrices=False)
            res = SVDResult(U, s, Vt, "svd", float(np.sum(s**2)))
        else:
            res = rsvd(A, k, k, power_iters, seed)
        if res.s[0] == 0:
            raise InputError("snapshot matrix is zero")
        nz = int(np.count_nonzero(res.s > rank_tol * res.s[0]))
        s_eff = res.s[:nz]
        r = ric(s_eff, res.total_energy)
        if res.method == "svd" or r[-1] >= 1.0 - eps:
            return res, min(select_modes_by_ric(s_eff, eps, res.total_energy), nz)
        k *= 2


class MassFactor:
    """Cholesky factor ``R`` (``M = R^T R``) of a block-diagonal mass matrix."""

    def __init__(self, M, block_size: int | None = None):
        if sp.issparse(M):
            M = sp.csr_matrix(M)
            n = M.shape[0]
            if block_size is None:
                block_size = int(M.indptr[1] - M.indptr[0]) or 1
            if n % block_size:
                raise InputError("matrix size is not a multiple of the block size")
            nb = n // block_size
            coo = M.tocoo()
            if np.any(coo.row // block_size != coo.col // block_size):
                blocks = None
            else:
                blocks = np.zeros((nb, block_size, block_size))
                blocks[coo.row // block_size, coo.row % block_size, coo.col % block_size] = coo.data
        else:
            blocks = None
            M = np.asarray(M, dtype=float)
        if blocks is None:
            dense = M.toarray() if sp.issparse(M) else M
            blocks = dense[None]
            block_size = dense.shape[0]
        try:
            L = np.linalg.cholesky(blocks)
        except np.linalg.LinAlgError as exc:
            raise RuntimeError(f"mass matrix is not symmetric positive definite: {exc}") from exc
        self.R_blocks = np.transpose(L, (0, 2, 1))
        self.block_size = block_size
        self.n = blocks.shape[0] * block_size

    def _apply(self, blocks, X, solve=False, transpose=False):
        X = np.asarray(X, dtype=float)
        vec = X.ndim == 1
        Xb = X.reshape(len(blocks), self.block_size, -1)
        if solve:
            out = np.empty_like(Xb)
            for i, Rb in enumerate(blocks):
                out[i] = sla.solve_triangular(Rb, Xb[i], lower=False, trans="T" if transpose else "N")
        else:
            B = np.transpose(blocks, (0, 2, 1)) if transpose else blocks
            out = np.matmul(B, Xb)
        out = out.reshape(X.shape[0], -1)
        return out[:, 0] if vec else out

    def R(self, X):
        return self._apply(self.R_blocks, X)

    def R_inv(self, X):
        if len(self.R_blocks) > 1:
            # small triangular blocks: a batched inverse beats a Python loop
            inv = np.linalg.inv(self.R_blocks)
            X = np.asarray(X, dtype=float)
            Xb = X.reshape(len(inv), self.block_size, -1)
            out = np.matmul(inv, Xb).reshape(X.shape[0], -1)
            return out[:, 0] if X.ndim == 1 else out
        return self._apply(self.R_blocks, X, solve=True)

    def inverse_norm(self, tol: float = 1e-6, max_iter: int = 10000, seed: int = 0) -> float:
        """``||R^-1||_2`` by power iteration on ``R^-T R^-1 = M^-1``."""
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(self.n)
        x /= np.linalg.norm(x)
        inv = np.linalg.inv(self.R_blocks)
        invT = np.transpose(inv, (0, 2, 1))
        nb, b = len(inv), self.block_size
        lam = 0.0
        for _ in range(max_iter):
            y = np.matmul(inv, np.matmul(invT, x.reshape(nb, b, 1))).ravel()
            lam_new = float(x @ y)
            x = y / np.linalg.norm(y)
            if abs(lam_new - lam) <= tol * abs(lam_new):
                lam = lam_new
                break
            lam = lam_new
        return float(np.sqrt(lam))


@dataclass(frozen=True)
class PODBasis:
    Psi: np.ndarray
    ric: float = 1.0
    tag: str = ""
    singular_values: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    tail_energy: float = 0.0

    @property
    def k(self) -> int:
        return self.Psi.shape[1]

    def project(self, M, w):
        """Reduced coordinates ``Psi^T M w``."""
        return self.Psi.T @ (M @ w)


def compute_pod_basis(snapshots, M, eps: float, seed=None, power_iters: int = 1,
                      block_size: int | None = None, factor: MassFactor | None = None) -> PODBasis:
    """Mass-orthonormal POD basis of the snapshot columns.

    The SVD is taken of ``R W`` with ``M = R^T R``; the modes are
    ``R^-1 U_k`` so that ``Psi^T M Psi = I``.
    """
    snaps = snapshots if isinstance(snapshots, SnapshotMatrix) else SnapshotMatrix(snapshots)
    factor = factor or MassFactor(M, block_size)
    RW = factor.R(snaps.data)
    res, k = truncated_svd(RW, eps, seed=seed, power_iters=power_iters)
    Psi = factor.R_inv(res.U[:, :k])
    captured = float(np.sum(res.s[:k] ** 2))
    achieved = captured / res.total_energy
    return PODBasis(Psi, achieved, snaps.tag, res.s.copy(), max(res.total_energy - captured, 0.0))


def lift(pod: PODBasis, reduced) -> np.ndarray:
    reduced = np.asarray(reduced, dtype=float)
    if reduced.shape[0] != pod.k:
        raise InputError(f"reduced vector has length {reduced.shape[0]}, basis has {pod.k} modes")
    return pod.Psi @ reduced


@dataclass(frozen=True)
class DEIMOperator:
    Q: np.ndarray
    indices: np.ndarray
    B: np.ndarray
    inv_norm: float
    singular_values: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    ric: float = 1.0
    tag: str = ""

    @property
    def m(self) -> int:
        return len(self.indices)

    def interpolate(self, b):
        """Full-space DEIM approximation ``Q (P^T Q)^-1 P^T b``."""
        coeff = np.linalg.solve(self.Q[self.indices], np.asarray(b)[self.indices])
        return self.Q @ coeff


def deim_indices(Q) -> np.ndarray:
    """Greedy DEIM interpolation indices for the columns of ``Q``.

    Stops early, with a logged note, if a residual vanishes.
    """
    Q = np.asarray(Q, dtype=float)
    scale = np.abs(Q).max() if Q.size else 0.0
    idx = [int(np.argmax(np.abs(Q[:, 0])))]
    for l in range(1, Q.shape[1]):
        c = np.linalg.solve(Q[idx, :l], Q[idx, l])
        r = Q[:, l] - Q[:, :l] @ c
        j = int(np.argmax(np.abs(r)))
        if abs(r[j]) <= 1e-14 * scale:
            log.info("deim: residual vanished after %d indices", l)
            break
        idx.append(j)
    return np.asarray(idx, dtype=np.int64)


def deim_build(nonlinear_snapshots, eps: float, pod: PODBasis, seed=None,
               power_iters: int = 1, m: int | None = None) -> DEIMOperator:
    """DEIM basis (Euclidean POD of the nonlinear snapshots) and projector ``B``.

    ``m`` overrides the RIC-selected dimension.
    """
    snaps = nonlinear_snapshots if isinstance(nonlinear_snapshots, SnapshotMatrix) \
        else SnapshotMatrix(nonlinear_snapshots)
    if not np.any(snaps.data):
        raise InputError("nonlinear snapshots are identically zero")
    res, k = truncated_svd(snaps.data, eps, seed=seed, power_iters=power_iters)
    if m is not None:
        if m > res.rank and res.method != "svd":
            res = rsvd(snaps.data, int(m), int(m), power_iters, seed)
        k = min(int(m), res.rank)
    Q = res.U[:, :k]
    idx = deim_indices(Q)
    if len(idx) < k:
        log.info("deim: reducing m from %d to %d", k, len(idx))
        Q = Q[:, : len(idx)]
    PQ = Q[idx]
    PQ_inv = np.linalg.inv(PQ)
    B = (pod.Psi.T @ Q) @ PQ_inv
    inv_norm = float(np.linalg.norm(PQ_inv, 2))
    achieved = float(np.sum(res.s[: len(idx)] ** 2) / res.total_energy)
    return DEIMOperator(Q, idx, B, inv_norm, res.s.copy(), achieved, snaps.tag)


def deim_apply(op: DEIMOperator, rows) -> np.ndarray:
    """Reduced nonlinear vector ``B @ rows`` from the values at the DEIM indices."""
    rows = np.asarray(rows, dtype=float)
    if rows.shape[0] != op.m:
        raise InputError(f"expected {op.m} DEIM rows, got {rows.shape[0]}")
    return op.B @ rows


def deim_from_basis(Q, indices, pod: PODBasis, tag: str = "") -> DEIMOperator:
    """Rebuild a DEIM operator from a stored basis and index set."""
    Q = np.asarray(Q, dtype=float)
    idx = np.asarray(indices, dtype=np.int64)
    if Q.shape[0] != pod.Psi.shape[0] or Q.shape[1] != len(idx):
        raise InputError("DEIM basis, indices and POD basis have inconsistent dimensions")
    if len(np.unique(idx)) != len(idx) or idx.min(initial=0) < 0 or idx.max(initial=0) >= Q.shape[0]:
        raise InputError("DEIM indices must be distinct valid row numbers")
    PQ_inv = np.linalg.inv(Q[idx])
    return DEIMOperator(Q, idx, (pod.Psi.T @ Q) @ PQ_inv, float(np.linalg.norm(PQ_inv, 2)), tag=tag)
