"""Convergence-rate accounting and the two-grid smoothing experiment."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

__all__ = ['RateEstimate', 'asymptotic_rate', 'ErrorSplit', 'SmoothingProjectors',
           'smoothing_projectors', 'run_smoothing_experiment', 'condition_number', 'fd5_laplacian',
           'RATE_WINDOW']

RATE_WINDOW = 5


@dataclass(frozen=True)
class RateEstimate:
    errors: tuple
    formula: float      # (e_last / e_first) ** (1 / (len - 1))
    rate: float         # geometric mean of the last <= RATE_WINDOW ratios

    def __float__(self):
        return self.rate


def asymptotic_rate(errors, window=RATE_WINDOW):
    '''Rate estimate from an error history (at least three entries).

    ``formula`` is the geometric mean reduction over the whole history; the
    reported ``rate`` averages (geometrically) the final ``window`` ratios.
    '''
    e = np.asarray(errors, dtype=float)
    if e.size < 3:
        raise ValueError('need at least 3 errors for a rate, got %d' % e.size)
    if e[0] <= 0:
        raise ValueError('first error must be positive')
    formula = (e[-1] / e[0]) ** (1.0 / (e.size - 1))
    w = min(window, e.size - 1)
    rate = (e[-1] / e[-1 - w]) ** (1.0 / w) if e[-1 - w] > 0 else 0.0
    return RateEstimate(tuple(e), float(formula), float(rate))


@dataclass(frozen=True)
class ErrorSplit:
    low: float     # |S e|_Q
    high: float    # |T e|_Q
    total: float   # |e|_Q


class SmoothingProjectors:
    '''Q-orthogonal projector ``S = P (P'QP)^{-1} P'Q`` onto range(P) and its
    complement ``T = I - S``.'''

    def __init__(self, Q, P):
        self.Q = sp.csr_matrix(Q)
        self.P = sp.csr_matrix(P)
        gram = (self.P.T @ self.Q @ self.P).toarray()
        try:
            self._chol = sla.cho_factor(gram)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError('coarse Gram matrix is singular') from exc

    def S(self, e):
        rhs = self.P.T @ (self.Q @ e)
        return self.P @ sla.cho_solve(self._chol, rhs)

    def T(self, e):
        return e - self.S(e)

    def energy(self, e):
        return float(np.sqrt(max(e @ (self.Q @ e), 0.0)))

    def split(self, e):
        s = self.S(e)
        return ErrorSplit(self.energy(s), self.energy(e - s), self.energy(e))


def smoothing_projectors(Q_fine, hier, k):
    if k > 5:
        raise ValueError('dense coarse factorisation limited to levels <= 5')
    return SmoothingProjectors(Q_fine, hier.P(k))


def condition_number(Q):
    w = np.linalg.eigvalsh(Q.toarray() if sp.issparse(Q) else Q)
    return float(w[-1] / w[0])


def fd5_laplacian(m):
    '''Five-point finite-difference Laplacian (times h^2) on m x m nodes.'''
    T = sp.diags([-np.ones(m - 1), 2 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1])
    I = sp.identity(m)
    return (sp.kron(I, T) + sp.kron(T, I)).tocsr()


def _exact_sd_step(Q, r):
    Qr = Q @ r
    return (r @ r) / (r @ Qr)


def run_smoothing_experiment(iters=10, smoother='sd-inexact', seed=0, level=4):
    '''Track the low/high-frequency energy split of the error while
    smoothing the bilinear Poisson problem on ``level`` (31x31 interior
    nodes for level 4) against its next-coarser level.

    ``smoother`` is ``'sd-exact'``, ``'sd-inexact'`` (gradient-based line
    search, warm-started step) or ``'gs'`` (lexicographic Gauss-Seidel).
    Returns the list of :class:`ErrorSplit` for iterations ``0..iters``.
    '''
    from .hierarchy import build_hierarchy
    from .problems import assemble_laplacian
    from .smoothers import StepState, line_search_unconstrained, pgs_sweep

    hier = build_hierarchy(level)
    lev = hier[level]
    Q, _ = assemble_laplacian(lev)
    x1, x2 = lev.coordinates()
    # lumped load for the solution sin(pi x1) sin(pi x2)
    q = 2 * np.pi ** 2 * lev.h ** 2 * np.sin(np.pi * x1) * np.sin(np.pi * x2)
    xstar = sp.linalg.spsolve(Q.tocsc(), q)
    proj = smoothing_projectors(Q, hier, level)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(lev.n)

    class _Quad:
        def grad(self, z):
            return Q @ z - q

    fun = _Quad()
    state = StepState()
    inf = np.full(lev.n, np.inf)
    out = [proj.split(xstar - x)]
    for _ in range(iters):
        if smoother == 'gs':
            pgs_sweep(Q, q, -inf, inf, x)
        else:
            g = fun.grad(x)
            if smoother == 'sd-exact':
                x = x - _exact_sd_step(Q, g) * g
            elif smoother == 'sd-inexact':
                res = line_search_unconstrained(fun, x, g, state.s, state.c)
                state.s = res.step
                x = res.x
            else:
                raise ValueError('unknown smoother %r' % smoother)
        out.append(proj.split(xstar - x))
    return out
