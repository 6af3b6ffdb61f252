"""Small dense kernels shared by the estimators."""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import RankTooLarge

COND_MAX = 1e10


def batched_cond(G: np.ndarray) -> np.ndarray:
    s = np.linalg.svd(G, compute_uv=False)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = s[..., 0] / s[..., -1]
    return np.where(np.isfinite(c), c, np.inf)


def gram_solve(G: np.ndarray, b: np.ndarray, ridge_eps: float = 1e-8, cond_max: float = COND_MAX):
    """Solve the stack ``G[k] x[k] = b[k]`` of small symmetric PSD systems.

    Systems whose condition number exceeds ``cond_max`` get a ridge of
    ``ridge_eps * mean(diag(G[k]))`` (or ``ridge_eps`` when the diagonal is
    zero). Returns ``(x, ridged)`` with ``ridged`` a boolean mask of the
    systems that needed it.
    """
    G = np.asarray(G, dtype=float)
    b = np.asarray(b, dtype=float)
    p = G.shape[-1]
    bad = batched_cond(G) > cond_max
    if bad.any():
        G = G.copy()
        md = np.trace(G[bad], axis1=-2, axis2=-1) / p
        lam = ridge_eps * np.where(md > 0, md, 1.0)
        G[bad] += lam[:, None, None] * np.eye(p)
    x = np.linalg.solve(G, b[..., None])[..., 0]
    return x, bad


def masked_grams(mask_f: np.ndarray, A: np.ndarray, axis: int) -> np.ndarray:
    """Gathered Gram matrices ``sum_k mask[k, j] A_k A_k'`` for each j.

    ``axis=0`` gathers down columns of the mask (one Gram per column, rows of
    ``A`` indexed by mask rows); ``axis=1`` gathers across rows.
    """
    p = A.shape[1]
    outer = (A[:, :, None] * A[:, None, :]).reshape(A.shape[0], p * p)
    if axis == 0:
        G = mask_f.T @ outer
    else:
        G = mask_f @ outer
    return G.reshape(-1, p, p)


def _normalise_signs(U, V):
    # largest-|entry| of each left vector made positive; argmax takes the lowest index on ties
    idx = np.argmax(np.abs(U), axis=0)
    s = np.sign(U[idx, np.arange(U.shape[1])])
    s[s == 0] = 1.0
    return U * s, V * s


def top_svd(W: np.ndarray, k: int):
    """Leading ``k`` singular triplets ``(U_k, d_k, V_k)`` of ``W``.

    Small ``k`` uses a partial symmetric eigensolve on the smaller Gram
    side; otherwise a full LAPACK SVD. Output is deterministic and sign
    normalised.
    """
    W = np.asarray(W, dtype=float)
    n, m = W.shape
    q = min(n, m)
    if not 1 <= k <= q:
        raise RankTooLarge(f"rank {k} must lie in 1..{q}")
    if 4 * k <= q and q >= 40:
        if m <= n:
            G = W.T @ W
            w, V = scipy.linalg.eigh(G, subset_by_index=[m - k, m - 1])
            w, V = w[::-1], V[:, ::-1]
            d = np.sqrt(np.clip(w, 0.0, None))
            U = W @ V
            nz = d > 0
            U[:, nz] /= d[nz]
            # one Gram-Schmidt pass keeps U orthonormal when d is tiny
            U, R = np.linalg.qr(U)
            sgn = np.sign(np.diag(R))
            sgn[sgn == 0] = 1.0
            U = U * sgn
        else:
            G = W @ W.T
            w, U = scipy.linalg.eigh(G, subset_by_index=[n - k, n - 1])
            w, U = w[::-1], U[:, ::-1]
            d = np.sqrt(np.clip(w, 0.0, None))
            V = W.T @ U
            nz = d > 0
            V[:, nz] /= d[nz]
            V, R = np.linalg.qr(V)
            sgn = np.sign(np.diag(R))
            sgn[sgn == 0] = 1.0
            V = V * sgn
    else:
        U, d, Vt = scipy.linalg.svd(W, full_matrices=False, lapack_driver="gesdd")
        U, d, V = U[:, :k], d[:k], Vt[:k].T
    U, V = _normalise_signs(U, V)
    return U, d, V
