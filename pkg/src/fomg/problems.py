"""Benchmark problem families on the nested square meshes.

Every level ``k`` of a hierarchy with finest level ``j`` carries the
finite-element discretisation ``J_k`` of the same functional, multiplied by
``4**(k-j)``.  With full-weighting restriction ``R = P^T/4`` this scaling
makes the rediscretised coarse objective agree with the Galerkin product
``R f_k P`` (exactly so for the Dirichlet energy), which keeps the FAS
coarse problems consistent with the fine ones.
"""

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .hierarchy import GridLevel

__all__ = ['ELEMENT_STIFFNESS', 'assemble_laplacian', 'assemble_laplacian_elementwise',
           'NodalProblem', 'MinimalSurfaceProblem', 'ComposedProblem', 'ProblemSet',
           'make_spiral', 'make_nonquadratic', 'make_minsurf', 'make_equality',
           'make_problem', 'PROBLEMS', 'spiral_obstacle', 'nonquad_load',
           'minsurf_boundary', 'truncate', 'galerkin_coarse',
           'ActiveSetMask', 'detect_active', 'FREE', 'LOWER', 'UPPER']

# bilinear element stiffness for -Laplace, corners ordered (0,0),(1,0),(1,1),(0,1)
ELEMENT_STIFFNESS = np.array([[4, -1, -2, -1],
                              [-1, 4, -1, -2],
                              [-2, -1, 4, -1],
                              [-1, -2, -1, 4]]) / 6.0


def assemble_laplacian(level):
    '''Interior-node stiffness matrix of the bilinear Dirichlet energy.

    The assembled stencil is 8/3 on the diagonal and -1/3 for all eight
    neighbours; it does not depend on ``h`` in two dimensions.
    Returns ``(Q, ELEMENT_STIFFNESS)``.
    '''
    m = level.m
    ones3 = sp.diags([np.ones(m - 1), np.ones(m), np.ones(m - 1)], [-1, 0, 1])
    Q = 3.0 * sp.identity(m * m) - sp.kron(ones3, ones3) / 3.0
    return Q.tocsr(), ELEMENT_STIFFNESS


def assemble_laplacian_elementwise(level):
    '''Same matrix as :func:`assemble_laplacian` built by an explicit loop
    over elements (used to cross-check the stencil form).'''
    m = level.m
    mm = m + 2
    rows, cols, vals = [], [], []
    for e2 in range(mm - 1):
        for e1 in range(mm - 1):
            corners = [(e1, e2), (e1 + 1, e2), (e1 + 1, e2 + 1), (e1, e2 + 1)]
            for a, (p1, p2) in enumerate(corners):
                for b, (r1, r2) in enumerate(corners):
                    if 0 < p1 <= m and 0 < p2 <= m and 0 < r1 <= m and 0 < r2 <= m:
                        rows.append((p2 - 1) * m + p1 - 1)
                        cols.append((r2 - 1) * m + r1 - 1)
                        vals.append(ELEMENT_STIFFNESS[a, b])
    return sp.csr_matrix((vals, (rows, cols)), shape=(m * m, m * m))


# nodal nonlinearities G, G', G'' entering  f = 1/2 x'Qx - sum w G(x) - q'x
_NONLINEARITIES = {
    None: (lambda u: np.zeros_like(u), lambda u: np.zeros_like(u), lambda u: np.zeros_like(u)),
    'exp': (lambda u: u * np.exp(u) - np.exp(u), lambda u: u * np.exp(u),
            lambda u: (u + 1.0) * np.exp(u)),
    'cubic': (lambda u: u ** 3 / 6.0, lambda u: 0.5 * u ** 2, lambda u: u),
}


def _check_x(x, n):
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise ValueError('expected a vector of length %d, got shape %s' % (n, x.shape))
    if not np.all(np.isfinite(x)):
        raise ValueError('objective evaluated at a non-finite point')
    return x


@dataclass(frozen=True)
class NodalProblem:
    '''``f(x) = 1/2 x'Qx - sum_i w_i G(x_i) - q'x`` with box bounds and an
    optional equality ``sum(x) = gamma``.  ``G`` is selected by
    ``nonlinearity`` (``None``, ``'exp'`` or ``'cubic'``).'''
    kind: str
    Q: sp.csr_matrix
    q: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    weights: np.ndarray = None
    nonlinearity: str = None
    gamma: float = None
    scale: float = 1.0

    @property
    def n(self):
        return self.Q.shape[0]

    def value(self, x):
        x = _check_x(x, self.n)
        f = 0.5 * x @ (self.Q @ x) - self.q @ x
        if self.nonlinearity is not None:
            f -= self.weights @ _NONLINEARITIES[self.nonlinearity][0](x)
        return float(f)

    def grad(self, x):
        x = _check_x(x, self.n)
        g = self.Q @ x - self.q
        if self.nonlinearity is not None:
            g -= self.weights * _NONLINEARITIES[self.nonlinearity][1](x)
        return g

    def hessian(self, x):
        '''Sparse Hessian (used only for reference solutions).'''
        x = _check_x(x, self.n)
        if self.nonlinearity is None:
            return self.Q
        return (self.Q - sp.diags(self.weights * _NONLINEARITIES[self.nonlinearity][2](x))).tocsr()


@dataclass(frozen=True)
class MinimalSurfaceProblem:
    '''Area functional ``sum_e h^2 sqrt(1 + u_e'K u_e / h^2)`` over all
    elements, where ``u_e`` holds the four corner values (boundary values
    fixed) and ``K`` is the bilinear element stiffness matrix, so the
    radicand is the element mean of ``|grad u|^2``.

    ``quadrature='centroid'`` uses the gradient at the element centre
    instead; that rule does not see the checkerboard mode.

    Nodes in ``frozen`` are held at ``frozen_values``: their entries of
    ``x`` are ignored and their gradient components are zero.
    '''
    level: GridLevel
    boundary: np.ndarray          # (m+2, m+2) grid with boundary values, zero inside
    lower: np.ndarray
    upper: np.ndarray
    scale: float = 1.0
    quadrature: str = 'stiffness'
    frozen: np.ndarray = None
    frozen_values: np.ndarray = None
    kind: str = field(default='minimal-surface')
    gamma: float = None

    @property
    def n(self):
        return self.level.n

    def _grid(self, x):
        x = _check_x(x, self.n)
        if self.frozen is not None:
            x = np.where(self.frozen, self.frozen_values, x)
        m = self.level.m
        U = self.boundary.copy()
        U[1:m + 1, 1:m + 1] = x.reshape(m, m)
        return U

    @staticmethod
    def _corners(U):
        # arrays indexed [x2, x1]; corners (0,0),(1,0),(1,1),(0,1)
        return (U[:-1, :-1], U[:-1, 1:], U[1:, 1:], U[1:, :-1])

    def _element_terms(self, U):
        h = self.level.h
        c = self._corners(U)
        if self.quadrature == 'centroid':
            d1 = 0.5 * ((c[1] - c[0]) + (c[2] - c[3])) / h
            d2 = 0.5 * ((c[3] - c[0]) + (c[2] - c[1])) / h
            return c, (d1, d2), np.sqrt(1.0 + d1 * d1 + d2 * d2)
        Ku = [sum(ELEMENT_STIFFNESS[a, b] * c[b] for b in range(4)) for a in range(4)]
        energy = sum(c[a] * Ku[a] for a in range(4))
        return c, Ku, np.sqrt(1.0 + energy / (h * h))

    def value(self, x):
        h = self.level.h
        _, _, root = self._element_terms(self._grid(x))
        return float(self.scale * h * h * root.sum())

    def grad(self, x):
        h = self.level.h
        m = self.level.m
        U = self._grid(x)
        c, aux, root = self._element_terms(U)
        if self.quadrature == 'centroid':
            d1, d2 = aux
            t1, t2 = h * d1 / root, h * d2 / root
            # d(d1)/dc = (-1, 1, 1, -1)/(2h), d(d2)/dc = (-1, -1, 1, 1)/(2h)
            dc = [0.5 * (-t1 - t2), 0.5 * (t1 - t2), 0.5 * (t1 + t2), 0.5 * (-t1 + t2)]
        else:
            dc = [aux[a] / root for a in range(4)]
        G = np.zeros_like(U)
        G[:-1, :-1] += dc[0]
        G[:-1, 1:] += dc[1]
        G[1:, 1:] += dc[2]
        G[1:, :-1] += dc[3]
        g = self.scale * G[1:m + 1, 1:m + 1].ravel()
        if self.frozen is not None:
            g[self.frozen] = 0.0
        return g


@dataclass(frozen=True)
class ComposedProblem:
    '''Coarse objective ``scale * base(offset + M y)``: the finest functional
    restricted to an affine subspace spanned by prolongated coarse vectors.'''
    base: object
    offset: np.ndarray
    M: sp.csr_matrix
    scale: float
    lower: np.ndarray = None
    upper: np.ndarray = None
    gamma: float = None

    @property
    def kind(self):
        return self.base.kind

    @property
    def n(self):
        return self.M.shape[1]

    def value(self, y):
        y = _check_x(y, self.n)
        return self.scale * self.base.value(self.offset + self.M @ y)

    def grad(self, y):
        y = _check_x(y, self.n)
        return self.scale * (self.M.T @ self.base.grad(self.offset + self.M @ y))


@dataclass
class ProblemSet:
    '''One problem per level of ``hier``; ``levels[k]`` is level k.'''
    name: str
    hier: object
    levels: list

    @property
    def finest(self):
        return self.levels[-1]

    @property
    def has_equality(self):
        return self.finest.gamma is not None


def _scales(hier):
    return [4.0 ** (k - hier.j) for k in range(hier.j + 1)]


def spiral_obstacle(x1, x2):
    '''Spiral obstacle on the unit square, via ``xhat = 2x - 1`` and polar
    coordinates about the centre of the square.'''
    X, Y = 2.0 * np.asarray(x1) - 1.0, 2.0 * np.asarray(x2) - 1.0
    r = np.hypot(X, Y)
    theta = np.arctan2(Y, X)
    with np.errstate(divide='ignore', invalid='ignore'):
        val = (np.sin(2 * np.pi / r + np.pi / 2 - theta)
               + r * (r + 1) / (r - 2) - 3 * r + 3.6)
    return np.where(r == 0, 3.6, val)


def make_spiral(hier):
    levels = []
    for lev, s in zip(hier.levels, _scales(hier)):
        Q, _ = assemble_laplacian(lev)
        x1, x2 = lev.coordinates()
        levels.append(NodalProblem('quadratic', (s * Q).tocsr(), np.zeros(lev.n),
                                   spiral_obstacle(x1, x2), np.full(lev.n, np.inf),
                                   scale=s))
    return ProblemSet('spiral', hier, levels)


def nonquad_load(x1, x2):
    u = x1 ** 2 - x1 ** 3
    return ((9 * np.pi ** 2 + np.exp(u * np.sin(3 * np.pi * x2)) * u + 6 * x1 - 2)
            * np.sin(3 * np.pi * x1))


def make_nonquadratic(hier):
    levels = []
    for lev, s in zip(hier.levels, _scales(hier)):
        Q, _ = assemble_laplacian(lev)
        x1, x2 = lev.coordinates()
        w = np.full(lev.n, s * lev.h ** 2)
        lower = -8 * (x1 - 7 / 16) ** 2 - 8 * (x2 - 7 / 16) ** 2 + 0.2
        levels.append(NodalProblem('nodal-nonlinear', (s * Q).tocsr(),
                                   s * lev.h ** 2 * nonquad_load(x1, x2),
                                   lower, np.full(lev.n, 0.5),
                                   weights=w, nonlinearity='exp', scale=s))
    return ProblemSet('nonquad', hier, levels)


def minsurf_boundary(level):
    '''Grid of shape (m+2, m+2) holding the Dirichlet data, indexed [x2, x1].'''
    t = level.h * np.arange(level.m + 2)
    B = np.zeros((level.m + 2, level.m + 2))
    B[0, :] = -np.sin(2 * np.pi * t)      # x2 = 0
    B[-1, :] = np.sin(2 * np.pi * t)      # x2 = 1
    B[:, 0] = -np.sin(2 * np.pi * t)      # x1 = 0
    B[:, -1] = np.sin(2 * np.pi * t)      # x1 = 1
    B[[0, 0, -1, -1], [0, -1, 0, -1]] = 0.0
    return B


def make_minsurf(hier, quadrature='stiffness'):
    levels = []
    for lev, s in zip(hier.levels, _scales(hier)):
        x1, x2 = lev.coordinates()
        lower = -8 * (x1 - 0.5) ** 2 - 8 * (x2 - 0.5) ** 2 + 0.55
        levels.append(MinimalSurfaceProblem(lev, minsurf_boundary(lev), lower,
                                            np.full(lev.n, np.inf), scale=s,
                                            quadrature=quadrature))
    return ProblemSet('minsurf', hier, levels)


def make_equality(hier):
    levels = []
    for lev, s in zip(hier.levels, _scales(hier)):
        Q, _ = assemble_laplacian(lev)
        x1, x2 = lev.coordinates()
        lower = -32 * (x1 - 0.5) ** 2 - 32 * (x2 - 0.5) ** 2 + 2.5
        levels.append(NodalProblem('nodal-nonlinear', (s * Q).tocsr(), np.zeros(lev.n),
                                   lower, np.full(lev.n, np.inf),
                                   weights=np.full(lev.n, s * lev.h ** 2),
                                   nonlinearity='cubic', gamma=1.0 / lev.h ** 2,
                                   scale=s))
    return ProblemSet('equality', hier, levels)


PROBLEMS = {
    'spiral': make_spiral,
    'nonquad': make_nonquadratic,
    'minsurf': make_minsurf,
    'equality': make_equality,
}


def make_problem(name, hier):
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise ValueError('unknown problem %r; choose from %s'
                         % (name, ', '.join(sorted(PROBLEMS)))) from None
    return factory(hier)


FREE, LOWER, UPPER = 0, 1, 2


@dataclass(frozen=True)
class ActiveSetMask:
    '''Per-node tags FREE / LOWER / UPPER.'''
    tags: np.ndarray

    @property
    def lower(self):
        return self.tags == LOWER

    @property
    def upper(self):
        return self.tags == UPPER

    @property
    def active(self):
        return self.tags != FREE

    def __len__(self):
        return len(self.tags)

    @classmethod
    def from_bool(cls, active):
        '''Mask with every ``True`` node tagged lower-active.'''
        return cls(np.where(np.asarray(active, dtype=bool), LOWER, FREE))


def detect_active(x, lower, upper):
    x = np.asarray(x, dtype=float)
    if np.any(x < lower) or np.any(x > upper):
        raise ValueError('active set requested for an infeasible point')
    tags = np.full(x.shape, FREE, dtype=np.int8)
    tags[x == lower] = LOWER
    tags[x == upper] = UPPER
    return ActiveSetMask(tags)


def _zero_rows_cols(Q, active):
    keep = sp.diags((~active).astype(float))
    return (keep @ Q @ keep).tocsr()


def truncate(problem, mask, x=None):
    '''Truncated view of ``problem`` for the active nodes of ``mask``.

    Matrix-defined problems get the active rows/columns of ``Q`` and entries
    of ``q`` and the nodal weights zeroed.  The minimal-surface problem
    freezes active nodes at their values in ``x`` (zero when omitted).
    '''
    active = mask.active if isinstance(mask, ActiveSetMask) else np.asarray(mask, bool)
    if active.shape != (problem.n,):
        raise ValueError('mask of length %d does not match problem size %d'
                         % (active.size, problem.n))
    if isinstance(problem, NodalProblem):
        w = problem.weights
        return replace(problem, Q=_zero_rows_cols(problem.Q, active),
                       q=np.where(active, 0.0, problem.q),
                       weights=None if w is None else np.where(active, 0.0, w))
    frozen = active.copy()
    vals = np.zeros(problem.n) if x is None else np.asarray(x, dtype=float)
    if problem.frozen is not None:
        # nodes frozen earlier keep their values
        vals = np.where(problem.frozen, problem.frozen_values, vals)
        frozen |= problem.frozen
    return replace(problem, frozen=frozen, frozen_values=np.where(frozen, vals, 0.0))


def galerkin_coarse(Q_fine, hier, k):
    '''``R Q P`` with ``R = P^T/4``, returned symmetric in CSR form.'''
    P = hier.P(k)
    if Q_fine.shape != (P.shape[0], P.shape[0]):
        raise ValueError('matrix of shape %s does not match level %d (n=%d)'
                         % (Q_fine.shape, k, P.shape[0]))
    Qc = 0.25 * (P.T @ (Q_fine @ P))
    return (0.5 * (Qc + Qc.T)).tocsr()
