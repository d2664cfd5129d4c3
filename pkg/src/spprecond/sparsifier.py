"""Least-squares stencils and assembly of the sparse operators Q, C and P.

For a skeleton set ``S`` with neighborhood ``gamma = S + beta`` the stencil
``T`` reproduces the far-field rows of the Green's function from the boundary
rows, ``G(S, gamma^c) ~= T G(beta, gamma^c)``. Row block ``S`` of ``Q`` is then
``[I, -T]`` on columns ``(S, beta)``, ``C(S, gamma) = Q(S, gamma) G(gamma, gamma)``
and ``P = Q + C diag(q)``. All three share one sparsity pattern.
"""

from dataclasses import dataclass
import logging

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateGram

log = logging.getLogger(__name__)

PINV_CUTOFF = 1e-10
_EXPLICIT_RESIDUAL_LIMIT = 20_000_000


@dataclass
class Stencil:
    key: tuple
    T: np.ndarray
    Ggamma: np.ndarray  # G(gamma, gamma), columns ordered (points, beta)
    ls_residual: float
    rank: int


def _representative(item):
    """Global point and boundary indices of one member of a set or class."""
    if hasattr(item, "set_ids"):
        return (item.kind, item.key[1]), item.points[0], item.beta[0]
    return (item.kind, item.orientation), item.points, item.beta


def _truncated_pinv(M, cutoff):
    lam, V = np.linalg.eigh(M)
    keep = lam > cutoff * lam[-1]
    Vk = V[:, keep]
    return (Vk / lam[keep]) @ Vk.T, int(keep.sum())


def compute_stencil(kernel, item, cutoff=PINV_CUTOFF):
    """Fit ``T`` for a skeleton set (or any member of a set class).

    The Gram products over ``gamma^c`` are formed as full-torus correlations
    (read off the kernel of ``G^2``) minus the contribution of the columns in
    ``gamma``, so the ``N - |gamma|`` far-field columns are never materialized.
    """
    key, pts, beta = _representative(item)
    gam = np.concatenate([pts, beta])
    G_pg = kernel.block(pts, gam)
    G_bg = kernel.block(beta, gam)
    M = kernel.gram_block(beta, beta) - G_bg @ G_bg.T
    B = kernel.gram_block(pts, beta) - G_pg @ G_bg.T
    M = 0.5 * (M + M.T)
    scale = np.trace(kernel.gram_block(beta, beta))
    lam_max = np.linalg.eigvalsh(M)[-1] if M.size else 0.0
    if not lam_max > 1e-13 * scale:
        raise DegenerateGram(f"Gram matrix for {key} is numerically zero (lambda_max={lam_max:.3e})")
    Minv, rank = _truncated_pinv(M, cutoff)
    T = B @ Minv
    Ggamma = kernel.block(gam, gam)
    res = _ls_residual(kernel, pts, beta, gam, T, M, B)
    log.info("stencil %s: |S|=%d |beta|=%d rank=%d ls_residual=%.3e", key, len(pts), len(beta), rank, res)
    return Stencil(key, T, Ggamma, res, rank)


def _ls_residual(kernel, pts, beta, gam, T, M, B):
    """Relative Frobenius residual of the fit over ``gamma^c``."""
    N = kernel.grid.N
    if len(gam) * N <= _EXPLICIT_RESIDUAL_LIMIT:
        far = np.ones(N, dtype=bool)
        far[gam] = False
        cols = np.flatnonzero(far)
        A = kernel.block(pts, cols)
        X = kernel.block(beta, cols)
        return float(np.linalg.norm(A - T @ X) / np.linalg.norm(A))
    G_pg = kernel.block(pts, gam)
    a2 = np.trace(kernel.gram_block(pts, pts)) - np.sum(G_pg**2)
    r2 = a2 - 2.0 * np.sum(T * B) + np.sum((T @ M) * T)
    return float(np.sqrt(max(r2, 0.0) / a2))


def compute_stencils(kernel, partition, cutoff=PINV_CUTOFF):
    """One stencil per (kind, orientation) class."""
    return {key: compute_stencil(kernel, cls, cutoff) for key, cls in partition.classes.items()}


# --- assembly -------------------------------------------------------------


def _pattern(partition):
    """Row/column layout shared by Q, C and P.

    Returns ``(indptr, indices, perm)`` where ``perm`` maps the
    concatenation of per-class dense value blocks (class order, set order,
    row-major inside a block) to CSR order.
    """
    N = partition.grid.N
    rows, cols = [], []
    for cls in partition.classes.values():
        ns, npts = cls.points.shape
        gam = np.concatenate([cls.points, cls.beta], axis=1)
        ng = gam.shape[1]
        rows.append(np.repeat(cls.points.reshape(-1), ng))
        cols.append(np.broadcast_to(gam[:, None, :], (ns, npts, ng)).reshape(-1))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    perm = np.lexsort((cols, rows))
    indptr = np.zeros(N + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=N), out=indptr[1:])
    return indptr, cols[perm], perm


def _assemble(partition, blocks, pattern=None):
    indptr, indices, perm = pattern if pattern is not None else _pattern(partition)
    vals = []
    for key, cls in partition.classes.items():
        ns = cls.points.shape[0]
        vals.append(np.broadcast_to(blocks[key], (ns,) + blocks[key].shape).reshape(-1))
    data = np.concatenate(vals)[perm]
    N = partition.grid.N
    return sp.csr_matrix((data, indices.copy(), indptr.copy()), shape=(N, N))


def q_block(stencil):
    npts = stencil.T.shape[0]
    return np.hstack([np.eye(npts), -stencil.T])


def assemble_Q(partition, stencils, pattern=None):
    return _assemble(partition, {k: q_block(st) for k, st in stencils.items()}, pattern)


def assemble_C(partition, stencils, kernel=None, pattern=None):
    """``C(S, gamma) = [I, -T] G(gamma, gamma)`` for every set ``S``.

    ``G(gamma, gamma)`` is translation invariant, so each class uses the block
    cached on its stencil; ``kernel`` is accepted to rebuild it when absent.
    """
    blocks = {}
    for key, st in stencils.items():
        Gg = st.Ggamma
        if Gg is None:
            cls = partition.classes[key]
            gam = np.concatenate([cls.points[0], cls.beta[0]])
            Gg = kernel.block(gam, gam)
        blocks[key] = q_block(st) @ Gg
    return _assemble(partition, blocks, pattern)


def same_pattern(A, B):
    return (
        A.shape == B.shape
        and np.array_equal(A.indptr, B.indptr)
        and np.array_equal(A.indices, B.indices)
    )


def assemble_P(Q, C, q):
    """``P = Q + C diag(q)`` on the common pattern of ``Q`` and ``C``."""
    if not same_pattern(Q, C):
        raise ValueError("Q and C must share one sparsity pattern")
    q = np.asarray(q, dtype=float)
    if q.shape != (Q.shape[1],):
        raise ValueError(f"q must have length {Q.shape[1]}")
    data = Q.data + C.data * q[C.indices]
    return sp.csr_matrix((data, Q.indices.copy(), Q.indptr.copy()), shape=Q.shape)


@dataclass
class Sparsified:
    """Everything the preconditioner needs for one ``(grid, s, q)``."""

    stencils: dict
    Q: sp.csr_matrix
    C: sp.csr_matrix
    P: sp.csr_matrix


def sparsify(kernel, partition, q, cutoff=PINV_CUTOFF):
    stencils = compute_stencils(kernel, partition, cutoff)
    pattern = _pattern(partition)
    Q = assemble_Q(partition, stencils, pattern)
    C = assemble_C(partition, stencils, pattern=pattern)
    return Sparsified(stencils, Q, C, assemble_P(Q, C, q))


def dump_coo(matrix, path):
    """Write ``row col value`` lines (0-based) for debugging."""
    coo = matrix.tocoo()
    with open(path, "w") as fh:
        fh.write(f"# {matrix.shape[0]} {matrix.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v:.17g}\n")
