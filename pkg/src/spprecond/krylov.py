"""GMRES on the integral form ``(I + G q) u = G f`` with left preconditioner ``P^-1 Q``."""

from dataclasses import dataclass, field
import time

import numpy as np

from .errors import MaxIterExceeded
from .spectral import apply_green
from .sparse_solver import solve

REORTH_TOL = 1e-8


@dataclass
class IterationReport:
    n_p: int = 0
    history: list = field(default_factory=list)  # relative residual after each iteration
    converged: bool = False
    true_residual: float = None
    T_a: float = None
    T_p: float = None


def gmres(apply_op, rhs, tol=1e-6, max_iter=200):
    """Full (unrestarted) GMRES from a zero initial guess.

    Arnoldi uses modified Gram-Schmidt with a second pass whenever the new
    direction keeps a component above ``1e-8`` along the existing basis.
    Stops when ``||rhs - A x|| <= tol ||rhs||``; raises ``MaxIterExceeded``
    with the last iterate otherwise.
    """
    rhs = np.asarray(rhs, dtype=float)
    report = IterationReport()
    beta = np.linalg.norm(rhs)
    if beta == 0.0:
        report.converged = True
        return np.zeros_like(rhs), report

    m = max_iter
    V = np.zeros((m + 1, rhs.size))
    H = np.zeros((m + 1, m))
    cs = np.zeros(m)
    sn = np.zeros(m)
    e = np.zeros(m + 1)
    e[0] = beta
    V[0] = rhs / beta

    k = 0
    for k in range(m):
        w = np.asarray(apply_op(V[k]), dtype=float).copy()
        wnorm0 = np.linalg.norm(w)
        for i in range(k + 1):
            H[i, k] = V[i] @ w
            w -= H[i, k] * V[i]
        hnext = np.linalg.norm(w)
        if hnext > 0:
            overlap = V[: k + 1] @ (w / hnext)
            if np.max(np.abs(overlap)) > REORTH_TOL:
                corr = V[: k + 1] @ w
                w -= V[: k + 1].T @ corr
                H[: k + 1, k] += corr
                hnext = np.linalg.norm(w)
        H[k + 1, k] = hnext

        for i in range(k):
            a, b = H[i, k], H[i + 1, k]
            H[i, k] = cs[i] * a + sn[i] * b
            H[i + 1, k] = -sn[i] * a + cs[i] * b
        r = np.hypot(H[k, k], H[k + 1, k])
        cs[k], sn[k] = H[k, k] / r, H[k + 1, k] / r
        H[k, k] = r
        H[k + 1, k] = 0.0
        e[k + 1] = -sn[k] * e[k]
        e[k] = cs[k] * e[k]

        res = abs(e[k + 1]) / beta
        breakdown = hnext <= 1e-14 * max(wnorm0, np.finfo(float).tiny)
        report.history.append(0.0 if breakdown else float(res))
        report.n_p = k + 1
        if res <= tol or breakdown:
            report.converged = True
            break
        V[k + 1] = w / hnext

    n = report.n_p
    y = np.linalg.solve(np.triu(H[:n, :n]), e[:n]) if n else np.zeros(0)
    x = V[:n].T @ y
    if not report.converged:
        raise MaxIterExceeded(
            f"GMRES did not reach tol={tol:g} in {max_iter} iterations "
            f"(residual {report.history[-1]:.3e})",
            x,
            report,
        )
    return x, report


def apply_A(problem, v):
    """``(I + G q) v`` with one forward and one inverse FFT."""
    return v + apply_green(problem.grid, problem.s, problem.q * v)


def apply_M(fact, Q, v):
    """Preconditioner ``P^-1 Q v``."""
    return solve(fact, Q @ v)


@dataclass
class Preconditioner:
    Q: object
    fact: object

    def __call__(self, v):
        return apply_M(self.fact, self.Q, v)


def solve_system(problem, precond, tol=1e-6, max_iter=200, n_timing=5):
    """Solve ``(L - s + q) u = f`` through the preconditioned integral form.

    Returns ``u`` and the report; the true residual is measured on the
    pseudospectral operator itself. ``MaxIterExceeded`` propagates with the
    true residual filled in.
    """
    t0 = time.perf_counter()
    g = apply_green(problem.grid, problem.s, problem.f)
    rhs = precond(g)
    try:
        u, report = gmres(lambda v: precond(apply_A(problem, v)), rhs, tol, max_iter)
    except MaxIterExceeded as exc:
        exc.report.T_p = time.perf_counter() - t0
        exc.report.true_residual = problem.residual(exc.x)
        raise
    report.T_p = time.perf_counter() - t0
    report.true_residual = problem.residual(u)
    if n_timing:
        report.T_a = time_application(precond, g, n_timing)
    return u, report


def time_application(precond, v, repeats=5):
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        precond(v)
        times.append(time.perf_counter() - t)
    return float(np.median(times))
