"""Multifrontal LU over a separator tree.

Groups of the tree are eliminated in order. The front of group ``g`` holds
``g`` plus its update set ``U(g)``, the not-yet-eliminated indices that ``g``
couples to after the fill from its descendants. Each front is factored densely
(partial pivoting confined to the ``g x g`` pivot block) and its Schur
complement on ``U(g)`` is added into the parent front. Unsymmetric patterns
are analysed through the symmetrized structure ``P + P^T``.

Solves run level by level: groups at the same distance from the root never
update one another, so their substitutions are stacked into batched products
with precomputed pivot-block inverses.
"""

from dataclasses import dataclass, field
import logging
import warnings

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import SingularMatrix

log = logging.getLogger(__name__)

PIVOT_TOL = 1e-14
REFINE_TOL = 1e-12
MAX_REFINE = 3


@dataclass
class SymbolicPlan:
    N: int
    groups: list
    parent: np.ndarray
    update: list  # U(g) per group, sorted global indices
    children: list

    @property
    def front_sizes(self):
        return [len(g) + len(u) for g, u in zip(self.groups, self.update)]

    @property
    def factor_nnz(self):
        """Entries stored by the dense front factors (L and U parts)."""
        return int(sum(len(g) ** 2 + 2 * len(g) * len(u) for g, u in zip(self.groups, self.update)))

    @property
    def permutation(self):
        return np.concatenate(self.groups)


def _structure(P):
    A = sp.csr_matrix(P, copy=True)
    A.data = np.ones_like(A.data)
    return (A + A.T).tocsr()


def symbolic_factor(pattern, tree):
    """Fronts of the multifrontal elimination of ``pattern`` along ``tree``.

    ``pattern`` is any sparse matrix whose stored entries define the structure.
    Raises ``ValueError`` if some group couples to an index outside its
    ancestor chain (the tree is then not a valid elimination tree).
    """
    S = _structure(pattern)
    N = S.shape[0]
    groups = [np.asarray(g, dtype=np.intp) for g in tree.groups]
    parent = np.asarray(tree.parent, dtype=np.intp)
    gid = np.full(N, -1, dtype=np.intp)
    for i, g in enumerate(groups):
        gid[g] = i
    if np.any(gid < 0):
        raise ValueError("separator tree does not cover every index")
    children = [[] for _ in groups]
    for i, p in enumerate(parent):
        if p >= 0:
            if p <= i:
                raise ValueError("groups must precede their parents")
            children[p].append(i)

    update = []
    for i, g in enumerate(groups):
        cand = [S.indices[S.indptr[r]:S.indptr[r + 1]] for r in g]
        cand.extend(update[c] for c in children[i])
        cand = np.unique(np.concatenate(cand)) if cand else np.empty(0, dtype=np.intp)
        U = cand[gid[cand] > i]
        owners = np.unique(gid[U])
        if len(owners):
            anc = set()
            p = parent[i]
            while p >= 0:
                anc.add(int(p))
                p = parent[p]
            bad = [o for o in owners if int(o) not in anc]
            if bad:
                raise ValueError(f"group {i} couples to non-ancestor groups {bad[:5]}")
        update.append(U)
    plan = SymbolicPlan(N, groups, parent, update, children)
    log.info("symbolic: %d groups, peak front %d, factor nnz %d",
             len(groups), max(plan.front_sizes, default=0), plan.factor_nnz)
    return plan


@dataclass
class _Batch:
    """Groups of one tree depth sharing front shape, stacked for batched solves."""

    g: np.ndarray      # (k, ng) global indices
    U: np.ndarray      # (k, nu)
    inv: np.ndarray    # (k, ng, ng) inverse pivot blocks
    F21: np.ndarray    # (k, nu, ng)
    X12: np.ndarray    # (k, ng, nu)


@dataclass
class Factorization:
    plan: SymbolicPlan
    lu: list = field(repr=False)       # (lu, piv) of each pivot block
    F21: list = field(repr=False)      # rows U(g), columns g
    X12: list = field(repr=False)      # F11^-1 F12
    peak_front: int = 0
    matrix: sp.csr_matrix = field(default=None, repr=False)  # for iterative refinement
    batches: list = field(default=None, repr=False)

    @property
    def permutation(self):
        return self.plan.permutation

    @property
    def factor_nnz(self):
        return self.plan.factor_nnz

    def solve(self, y):
        return solve(self, y)


def numeric_factor(P, plan):
    """Dense partial-pivoted elimination group by group.

    Raises ``SingularMatrix`` when a pivot falls below ``1e-14`` times the
    largest entry of its front.
    """
    A = sp.csr_matrix(P)
    Acsc = A.tocsc()
    N = plan.N
    gid = np.empty(N, dtype=np.intp)
    for i, g in enumerate(plan.groups):
        gid[g] = i
    loc = np.zeros(N, dtype=np.intp)
    pending = {}
    lus, F21s, X12s = [], [], []
    peak = 0
    for i, (g, U) in enumerate(zip(plan.groups, plan.update)):
        ng, nu = len(g), len(U)
        idx = np.concatenate([g, U])
        loc[idx] = np.arange(ng + nu)
        F = np.zeros((ng + nu, ng + nu))
        peak = max(peak, ng + nu)

        # original entries in rows g (columns in g or U)
        rows = A[g]
        r = np.repeat(np.arange(ng), np.diff(rows.indptr))
        c = rows.indices
        keep = gid[c] >= i
        np.add.at(F, (r[keep], loc[c[keep]]), rows.data[keep])
        # original entries in columns g with rows in U
        cols = Acsc[:, g]
        cc = np.repeat(np.arange(ng), np.diff(cols.indptr))
        rr = cols.indices
        keep = gid[rr] > i
        np.add.at(F, (loc[rr[keep]], cc[keep]), cols.data[keep])

        for ch in plan.children[i]:
            Sc = pending.pop(ch)
            if Sc.size:
                li = loc[plan.update[ch]]
                F[np.ix_(li, li)] += Sc

        fmax = np.max(np.abs(F)) if F.size else 0.0
        with warnings.catch_warnings():
            # exact zeros are reported through the pivot test below
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu, piv = sla.lu_factor(F[:ng, :ng], check_finite=False)
        pivots = np.abs(np.diag(lu))
        if ng and pivots.min() < PIVOT_TOL * fmax:
            raise SingularMatrix(
                f"pivot {pivots.min():.3e} below {PIVOT_TOL:g} x front max {fmax:.3e} in group {i}"
            )
        F21 = F[ng:, :ng].copy()
        X12 = sla.lu_solve((lu, piv), F[:ng, ng:], check_finite=False)
        pending[i] = F[ng:, ng:] - F21 @ X12
        lus.append((lu, piv))
        F21s.append(F21)
        X12s.append(X12)
    return Factorization(plan, lus, F21s, X12s, peak, A, _batches(plan, lus, F21s, X12s))


def _batches(plan, lus, F21s, X12s):
    # same-depth groups never update one another, so each run of groups with
    # equal depth can be substituted at once; split further by front shape
    depth = _group_depth(plan)
    out = []
    start = 0
    for i in range(1, len(plan.groups) + 1):
        if i < len(plan.groups) and depth[i] == depth[start]:
            continue
        by_shape = {}
        for j in range(start, i):
            by_shape.setdefault((len(plan.groups[j]), len(plan.update[j])), []).append(j)
        for (ng, nu), ids in by_shape.items():
            eye = np.eye(ng)
            out.append(_Batch(
                np.stack([plan.groups[j] for j in ids]),
                np.stack([plan.update[j] for j in ids]).reshape(len(ids), nu),
                np.stack([sla.lu_solve(lus[j], eye, check_finite=False) for j in ids]),
                np.stack([F21s[j] for j in ids]).reshape(len(ids), nu, ng),
                np.stack([X12s[j] for j in ids]).reshape(len(ids), ng, nu),
            ))
        start = i
    return out


def _group_depth(plan):
    """Distance of each group from the root of the elimination tree."""
    depth = np.zeros(len(plan.groups), dtype=np.intp)
    for i in range(len(plan.groups) - 1, -1, -1):
        p = plan.parent[i]
        depth[i] = depth[p] + 1 if p >= 0 else 0
    return depth


def solve(fact, y, refine=True):
    """Solve ``P x = y`` for a vector or an ``(N, k)`` block of right-hand sides.

    With ``refine`` the residual is checked against the stored matrix and up to
    three refinement steps are taken while it exceeds ``1e-12 ||y||``; this
    absorbs the element growth allowed by front-local pivoting.
    """
    y = np.asarray(y, dtype=float)
    x = _substitute(fact, y)
    if not refine or fact.matrix is None:
        return x
    ynorm = np.linalg.norm(y, axis=0)
    for _ in range(MAX_REFINE):
        r = y - fact.matrix @ x
        if np.all(np.linalg.norm(r, axis=0) <= REFINE_TOL * ynorm):
            break
        x += _substitute(fact, r)
    return x


def _substitute(fact, y):
    plan = fact.plan
    shape = np.shape(y)
    if shape[0] != plan.N:
        raise ValueError(f"expected leading dimension {plan.N}, got {shape}")
    y = np.array(y, dtype=float, copy=True).reshape(plan.N, -1)
    x = np.empty_like(y)
    for bt in fact.batches:
        w = bt.inv @ y[bt.g]
        x[bt.g] = w
        if bt.U.shape[1]:
            np.subtract.at(y, bt.U, bt.F21 @ w)
    for bt in reversed(fact.batches):
        if bt.U.shape[1]:
            x[bt.g] -= bt.X12 @ x[bt.U]
    return x.reshape(shape)


def backward_error(P, x, y):
    return float(np.linalg.norm(P @ x - y) / np.linalg.norm(y))
