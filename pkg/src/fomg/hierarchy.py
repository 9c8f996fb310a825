"""Nested uniform quadrilateral meshes on the unit square and the transfer
operators between consecutive levels.

Level ``k`` has ``m = 2**(k+1) - 1`` interior nodes per side, ``n = m*m``
unknowns and mesh size ``h = 1/2**(k+1)``.  Unknowns are numbered row-major
over interior nodes, ``idx = i2*m + i1`` where ``i1`` runs along ``x1``.

Coarse node ``(a, b)`` (0-based) sits on fine node ``(2a+1, 2b+1)``; its
neighbourhood is the 3x3 fine block ``2a..2a+2 x 2b..2b+2``.  Because
``m_fine = 2*m_coarse + 1`` this block never leaves the interior.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = ['GridLevel', 'GridHierarchy', 'build_hierarchy',
           'prolongation_matrix', 'prolongate', 'restrict',
           'restrict_bounds_max', 'restrict_bounds_min',
           'restrict_bounds_guarded_lower', 'restrict_bounds_guarded_upper',
           'coarse_neighborhood']

MAX_LEVEL = 12

STENCIL = np.array([[0.25, 0.5, 0.25],
                    [0.5, 1.0, 0.5],
                    [0.25, 0.5, 0.25]])


@dataclass(frozen=True)
class GridLevel:
    k: int

    @property
    def m(self):
        return 2 ** (self.k + 1) - 1

    @property
    def n(self):
        return self.m * self.m

    @property
    def h(self):
        return 1.0 / 2 ** (self.k + 1)

    def coordinates(self):
        '''Return ``(x1, x2)`` arrays of interior node coordinates, each of
        length ``n`` in unknown order.'''
        t = self.h * np.arange(1, self.m + 1)
        x2, x1 = np.meshgrid(t, t, indexing='ij')
        return x1.ravel(), x2.ravel()

    def as_grid(self, v):
        return np.asarray(v).reshape(self.m, self.m)


def _interp_1d(mc):
    # (2*mc+1) x mc linear interpolation with zero Dirichlet ends
    mf = 2 * mc + 1
    rows, cols, vals = [], [], []
    for a in range(mc):
        c = 2 * a + 1
        rows += [c - 1, c, c + 1]
        cols += [a, a, a]
        vals += [0.5, 1.0, 0.5]
    return sp.csr_matrix((vals, (rows, cols)), shape=(mf, mc))


def prolongation_matrix(k):
    '''Sparse nine-point prolongation from level ``k-1`` to level ``k``.'''
    if k < 1:
        raise ValueError('prolongation needs a target level k >= 1')
    p1 = _interp_1d(2 ** k - 1)
    return sp.kron(p1, p1, format='csr')


@dataclass(frozen=True)
class GridHierarchy:
    levels: tuple
    _P: tuple = field(repr=False)

    @property
    def j(self):
        return len(self.levels) - 1

    def __getitem__(self, k):
        return self.levels[k]

    def P(self, k):
        '''Prolongation matrix into level ``k`` (from ``k-1``).'''
        return self._P[k]

    def R(self, k):
        '''Full-weighting restriction matrix from level ``k`` to ``k-1``.'''
        return 0.25 * self._P[k].T.tocsr()


def build_hierarchy(j):
    if j < 0:
        raise ValueError('finest level index must be non-negative, got %d' % j)
    if j > MAX_LEVEL:
        raise ValueError('finest level index %d exceeds %d' % (j, MAX_LEVEL))
    levels = tuple(GridLevel(k) for k in range(j + 1))
    P = (None,) + tuple(prolongation_matrix(k) for k in range(1, j + 1))
    return GridHierarchy(levels, P)


def _check(hier, k, v, which):
    if not 1 <= k <= hier.j:
        raise ValueError('level %d has no coarser neighbour in a hierarchy '
                         'with finest level %d' % (k, hier.j))
    n = hier[k if which == 'fine' else k - 1].n
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise ValueError('expected a %s vector of length %d, got shape %s'
                         % (which, n, v.shape))
    return v


def prolongate(hier, k, v_coarse):
    v = _check(hier, k, v_coarse, 'coarse')
    return hier.P(k) @ v


def restrict(hier, k, v_fine):
    v = _check(hier, k, v_fine, 'fine')
    return 0.25 * (hier.P(k).T @ v)


def coarse_neighborhood(hier, k, i):
    '''Fine indices of the 3x3 block around coarse node ``i`` of level k-1.'''
    mc, mf = hier[k - 1].m, hier[k].m
    b, a = divmod(i, mc)
    return [(2 * b + db) * mf + 2 * a + da
            for db in range(3) for da in range(3)]


def _blocks(hier, k, y):
    '''Stack the nine neighbourhood samples: shape (9, m_coarse, m_coarse).'''
    mc = hier[k - 1].m
    Y = y.reshape(hier[k].m, hier[k].m)
    return np.stack([Y[d2:d2 + 2 * mc:2, d1:d1 + 2 * mc:2]
                     for d2 in range(3) for d1 in range(3)])


def restrict_bounds_max(hier, k, y):
    y = _check(hier, k, y, 'fine')
    return _blocks(hier, k, y).max(axis=0).ravel()


def restrict_bounds_min(hier, k, y):
    y = _check(hier, k, y, 'fine')
    return _blocks(hier, k, y).min(axis=0).ravel()


def _touched(hier, k, active):
    active = _check(hier, k, np.asarray(active, dtype=float), 'fine')
    return _blocks(hier, k, active).max(axis=0).ravel() > 0


def restrict_bounds_guarded_lower(hier, k, y, active):
    '''Max-restriction of shifted lower bounds, pinned to zero on coarse
    nodes whose neighbourhood contains a lower-active fine node.'''
    out = restrict_bounds_max(hier, k, y)
    out[_touched(hier, k, active)] = 0.0
    return out


def restrict_bounds_guarded_upper(hier, k, y, active):
    out = restrict_bounds_min(hier, k, y)
    out[_touched(hier, k, active)] = 0.0
    return out
