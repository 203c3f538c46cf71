"""Smallest eigenpairs of graph Laplacians and spectral node coordinates."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import ConvergenceFailure, DimensionMismatch
from .tensor import make_rng

DENSE_LIMIT = 256
DENSE_FALLBACK_LIMIT = 4096
ZERO_EIG_TOL = 1e-10


class CoordinateMode(str, enum.Enum):
    EIGENVECTOR_ROWS = "eigenvector_rows"
    PSEUDOINVERSE_ROWS = "pseudoinverse_rows"


@dataclass(frozen=True)
class EigenPairs:
    values: np.ndarray   # (k,) ascending
    vectors: np.ndarray  # (N, k) orthonormal columns
    method: str = "dense"

    @property
    def k(self) -> int:
        return len(self.values)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    out = vectors.copy()
    for j in range(out.shape[1]):
        nz = np.flatnonzero(np.abs(out[:, j]) > 1e-10)
        if len(nz) and out[nz[0], j] < 0:
            out[:, j] *= -1.0
    return out


def _as_dense(matrix) -> np.ndarray:
    return matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix, dtype=float)


def _dense_pairs(matrix, k):
    vals, vecs = np.linalg.eigh(_as_dense(matrix))
    return vals[:k], vecs[:, :k]


def _orthogonalize(v, bases):
    # two passes of classical Gram-Schmidt
    for _ in range(2):
        for b in bases:
            if b is not None and b.shape[1]:
                v = v - b @ (b.T @ v)
    return v


def _lanczos(apply, n, nev, locked, rng, tol, max_dim, largest):
    """Lanczos with full reorthogonalization in the complement of ``locked``.

    Returns Ritz values/vectors of ``apply`` for the ``nev`` extreme values.
    On an invariant subspace (breakdown) the iteration restarts from a fresh
    random vector so repeated eigenvalues are not lost.
    """
    avail = n - (0 if locked is None else locked.shape[1])
    max_dim = min(max_dim, avail)
    nev = min(nev, avail)
    if nev <= 0:
        return np.zeros(0), np.zeros((n, 0)), True
    Q = np.zeros((n, max_dim))
    alphas, betas = [], []

    def fresh(basis):
        for _ in range(5):
            v = _orthogonalize(rng.standard_normal(n), [locked, basis])
            nrm = np.linalg.norm(v)
            if nrm > 1e-8:
                return v / nrm
        return None

    q = fresh(None)
    q_prev, b_prev = np.zeros(n), 0.0
    converged = False
    theta = S = None
    m = 0
    for j in range(max_dim):
        Q[:, j] = q
        m = j + 1
        w = apply(q)
        a = float(q @ w)
        w = w - a * q - b_prev * q_prev
        w = _orthogonalize(w, [locked, Q[:, :m]])
        b = float(np.linalg.norm(w))
        alphas.append(a)
        scale = max(1.0, abs(a))
        breakdown = b < 1e-10 * scale
        if m >= nev and (m % 4 == 0 or breakdown or m == max_dim):
            Tm = np.diag(alphas) + np.diag(betas, 1) + np.diag(betas, -1)
            theta, S = np.linalg.eigh(Tm)
            idx = np.arange(m - nev, m) if largest else np.arange(nev)
            bound = 0.0 if breakdown else b
            resid = np.abs(bound * S[-1, idx])
            if np.all(resid <= tol * np.maximum(1.0, np.abs(theta[idx]))):
                converged = True
                break
        if m == max_dim:
            break
        if breakdown:
            q_new = fresh(Q[:, :m])
            if q_new is None:
                converged = True
                break
            q_prev, b_prev, q = q, 0.0, q_new
            betas.append(0.0)
        else:
            q_prev, b_prev, q = q, b, w / b
            betas.append(b)
    Tm = np.diag(alphas) + np.diag(betas[: m - 1], 1) + np.diag(betas[: m - 1], -1)
    theta, S = np.linalg.eigh(Tm)
    idx = np.arange(m - nev, m) if largest else np.arange(nev)
    return theta[idx], Q[:, :m] @ S[:, idx], converged


def _rayleigh_ritz(matrix, basis):
    q, _ = np.linalg.qr(basis)
    h = q.T @ (matrix @ q)
    h = 0.5 * (h + h.T)
    vals, s = np.linalg.eigh(h)
    return vals, q @ s


def _lanczos_pairs(matrix, k, seed, tol, max_iter, shift_invert):
    n = matrix.shape[0]
    rng = make_rng(seed)
    mat = sp.csr_matrix(matrix)
    if shift_invert:
        sigma = 1e-3
        lu = splu(sp.csc_matrix(mat + sigma * sp.identity(n)))
        apply, largest = lu.solve, True
    else:
        apply, largest = (lambda x: mat @ x), False

    def run(nev, locked):
        _, vecs, ok = _lanczos(apply, n, nev, locked, rng, tol, max_iter, largest)
        return vecs, ok

    vecs, ok = run(k, None)
    if not ok:
        raise ConvergenceFailure(f"Lanczos did not converge within {max_iter} iterations")
    vals, vecs = _rayleigh_ritz(mat, vecs)
    # locking pass: search the complement for anything a single Krylov space missed
    for _ in range(4 * k + 4):
        if vecs.shape[1] >= n:
            break
        extra, ok = run(1, vecs)
        if not ok:
            raise ConvergenceFailure("Lanczos locking pass did not converge")
        lam = float(extra[:, 0] @ (mat @ extra[:, 0]))
        if lam >= vals[-1] - 1e-9 * max(1.0, abs(vals[-1])):
            break
        vals, vecs = _rayleigh_ritz(mat, np.hstack([vecs, extra]))
        vals, vecs = vals[:k], vecs[:, :k]
    return vals, vecs


def topk_smallest_eigenpairs(laplacian, k: int, method: str = "auto", seed: int = 0,
                             tol: float = 1e-12, max_iter: int = 400, shift_invert: bool = True) -> EigenPairs:
    """The ``k`` smallest eigenpairs of a symmetric matrix.

    ``method`` is ``"dense"``, ``"lanczos"`` or ``"auto"`` (dense when
    N <= 256, otherwise Lanczos with a dense fallback for moderate N).
    """
    n = laplacian.shape[0]
    if laplacian.shape != (n, n):
        raise DimensionMismatch(f"matrix must be square, got {laplacian.shape}")
    if not 1 <= k <= n:
        raise DimensionMismatch(f"k={k} outside [1, {n}]")
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "lanczos"
    if method == "dense":
        vals, vecs = _dense_pairs(laplacian, k)
    elif method == "lanczos":
        try:
            vals, vecs = _lanczos_pairs(laplacian, k, seed, tol, max_iter, shift_invert)
        except ConvergenceFailure:
            if n > DENSE_FALLBACK_LIMIT:
                raise
            vals, vecs = _dense_pairs(laplacian, k)
            method = "dense-fallback"
    else:
        raise ValueError(f"unknown method {method!r}")
    return EigenPairs(np.asarray(vals, dtype=float), _fix_signs(vecs), method)


def residuals(matrix, pairs: EigenPairs) -> np.ndarray:
    r = matrix @ pairs.vectors - pairs.vectors * pairs.values
    return np.linalg.norm(r, axis=0)


def spectral_coordinates(pairs: EigenPairs, mode=CoordinateMode.EIGENVECTOR_ROWS,
                         zero_tol: float = ZERO_EIG_TOL) -> np.ndarray:
    """Node coordinates from eigenpairs.

    ``eigenvector_rows``: row i is ``[phi_1(i), ..., phi_k(i)]``.
    ``pseudoinverse_rows``: row i holds the first k entries of ``L^+ e_i``
    where ``L^+`` is assembled from the available pairs, skipping
    eigenvalues below ``zero_tol``.
    """
    mode = CoordinateMode(mode)
    if mode is CoordinateMode.EIGENVECTOR_ROWS:
        return pairs.vectors.copy()
    keep = pairs.values > zero_tol
    v = pairs.vectors[:, keep]
    pinv = (v / pairs.values[keep]) @ v.T
    return pinv[:, : pairs.k].copy()


def eigengap(pairs: EigenPairs, split_index: int) -> float:
    if not 1 <= split_index < pairs.k:
        raise IndexError(f"split index {split_index} outside [1, {pairs.k - 1}]")
    return float(pairs.values[split_index] - pairs.values[split_index - 1])
