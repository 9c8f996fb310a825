"""First-order smoothers.

The objective arguments are any objects with ``value(x)`` and ``grad(x)``;
:class:`ShiftedObjective` adds the multigrid shift and evaluation counting.
"""

import logging
from dataclasses import dataclass

import numpy as np

__all__ = ['StepState', 'ShiftedObjective', 'EvalCounter', 'LineSearchError',
           'LineSearchResult', 'line_search_unconstrained', 'line_search_projected',
           'sd_solve', 'project_box', 'kkt_residual', 'gp_solve', 'pgs_sweep',
           'pgs_solve', 'project_box_hyperplane', 'InfeasibleError',
           'armijo_pg_solve', 'MAX_BRACKET']

log = logging.getLogger(__name__)

MAX_BRACKET = 60
ARMIJO_SIGMA = 1e-4
# growth of the warm-started Armijo trial step; deliberately not a power of
# two, so the accepted steps do not lock onto 2/lambda_max of the stiffness
# matrix (an undamped oscillatory mode)
ARMIJO_GROWTH = 1.5


class LineSearchError(RuntimeError):
    pass


class InfeasibleError(ValueError):
    pass


@dataclass
class StepState:
    '''Trial step carried between smoother calls (warm start).'''
    s: float = 1.0
    c: float = 2.0
    warm: bool = True

    def __post_init__(self):
        if not self.c > 1 or not self.s > 0:
            raise ValueError('step state needs s > 0 and c > 1')


class EvalCounter:
    '''Function and gradient call counts per level.'''

    def __init__(self, nlevels):
        self.fun = [0] * nlevels
        self.grad = [0] * nlevels

    def total(self, k):
        return self.fun[k] + self.grad[k]

    def as_dict(self):
        return {'fun': list(self.fun), 'grad': list(self.grad)}


class ShiftedObjective:
    '''``f(x) - shift'x`` for a level problem, counting evaluations.'''

    def __init__(self, problem, shift=None, counter=None, level=0):
        self.problem = problem
        self.shift = shift
        self.counter = counter
        self.level = level

    @property
    def scale(self):
        return getattr(self.problem, 'scale', 1.0)

    def value(self, x):
        if self.counter is not None:
            self.counter.fun[self.level] += 1
        f = self.problem.value(x)
        if self.shift is not None:
            f -= float(self.shift @ x)
        return f

    def grad(self, x):
        if self.counter is not None:
            self.counter.grad[self.level] += 1
        g = self.problem.grad(x)
        if self.shift is not None:
            g = g - self.shift
        return g


@dataclass
class LineSearchResult:
    step: float
    x: np.ndarray          # accepted trial point
    grad: np.ndarray       # gradient at the accepted trial point
    evals: int
    converged: bool = True


def _bracket(trial, g, s, c, certified=None):
    '''Gradient-based bracketing shared by both line searches.  ``trial(s)``
    returns ``(x_plus, masked_grad, grad)``.

    ``certified(x_plus, grad)``, if given, must also hold for a trial to count
    as a descent step.  When the certificate rejects a trial whose masked
    slope is still negative, there is no sign change above the accepted step;
    the search then keeps halving for a certified step with one, and falls
    back to the largest certified step if the next halving shows none.
    '''
    def slope(mg):
        return -(g @ mg)

    def descending(xp, mg, gp):
        return slope(mg) < 0 and (certified is None or certified(xp, gp))

    xp, mg, gp = trial(s)
    evals = 1
    if descending(xp, mg, gp):
        prev = (s, xp, gp)
        for _ in range(MAX_BRACKET):
            s *= c
            xp, mg, gp = trial(s)
            evals += 1
            if not descending(xp, mg, gp):
                break
            prev = (s, xp, gp)
        else:
            raise LineSearchError('unbounded descent direction: step grew to %g' % s)
        if slope(mg) >= 0:
            return LineSearchResult(*prev, evals)
        # certificate-only rejection: refine below the last accepted step
        s = prev[0] * c
    first = None
    sign_change = slope(mg) >= 0
    for _ in range(MAX_BRACKET):
        s /= c
        xp, mg, gp = trial(s)
        evals += 1
        if descending(xp, mg, gp):
            if sign_change:
                return LineSearchResult(s, xp, gp, evals)
            if first is not None:
                break
            first = (s, xp, gp)
        sign_change = slope(mg) >= 0
    if first is not None:
        return LineSearchResult(*first, evals)
    log.warning('line search halved %d times without a descent bracket', MAX_BRACKET)
    return LineSearchResult(s, xp, gp, evals, converged=False)


def line_search_unconstrained(fun, x, g, s=1.0, c=2.0):
    def trial(t):
        xp = x - t * g
        gp = fun.grad(xp)
        return xp, gp, gp
    return _bracket(trial, g, s, c)


def project_box(x, lower, upper):
    '''Componentwise median of (lower, x, upper); bounds copied bit-exactly.'''
    return np.minimum(np.maximum(x, lower), upper)


def _free(x, lower, upper):
    return (x != lower) & (x != upper)


def line_search_projected(fun, x, g, lower, upper, s=1.0, c=2.0):
    def trial(t):
        xp = project_box(x - t * g, lower, upper)
        gp = fun.grad(xp)
        return xp, np.where(_free(xp, lower, upper), gp, 0.0), gp

    # The projected path is only piecewise smooth and can climb before a
    # kink and fall after it, so a negative masked slope alone does not
    # imply descent.  For convex f, grad(x+)'(x - x+) > 0 does; when that
    # test is inconclusive the objective value decides.
    fx = []

    def certified(xp, gp):
        if gp @ (x - xp) > 0:
            return True
        if not fx:
            fx.append(fun.value(x))
        return fun.value(xp) < fx[0]
    return _bracket(trial, g, s, c, certified)


def sd_solve(fun, x0, eps=1e-9, nu=1000, state=None):
    '''Steepest descent with the gradient-based line search.'''
    state = state or StepState()
    x = np.array(x0, dtype=float)
    g = fun.grad(x)
    for _ in range(nu):
        if np.linalg.norm(g) <= eps:
            break
        res = line_search_unconstrained(fun, x, g, state.s, state.c)
        if state.warm:
            state.s = res.step
        if not res.converged:
            break
        x, g = res.x, res.grad
    return x


def kkt_residual(g, x, lower, upper):
    '''Projected-gradient fixed-point residual ``|x - P(x - g)|``.'''
    return float(np.linalg.norm(x - project_box(x - g, lower, upper)))


def gp_solve(fun, lower, upper, x0, eps=1e-9, nu=1, state=None, callback=None):
    '''Gradient projection with the gradient-based projected line search.

    Stops after ``nu`` steps or when the projected-gradient residual of the
    gradient divided by the objective's ``scale`` is at most ``eps``.
    ``callback(x)`` returning True stops the iteration as well.
    '''
    state = state or StepState()
    x = project_box(np.asarray(x0, dtype=float), lower, upper)
    if nu <= 0:
        return x
    scale = getattr(fun, 'scale', 1.0)
    g = fun.grad(x)
    for _ in range(nu):
        if kkt_residual(g / scale, x, lower, upper) <= eps:
            break
        res = line_search_projected(fun, x, g, lower, upper, state.s, state.c)
        if state.warm:
            state.s = res.step
        if not res.converged:
            break
        x, g = res.x, res.grad
        if callback is not None and callback(x):
            break
    return x


def _pgs_kernel(indptr, indices, data, q, lower, upper, x):
    for i in range(len(x)):
        diag = 0.0
        acc = q[i]
        coupled = False
        for p in range(indptr[i], indptr[i + 1]):
            col = indices[p]
            if col == i:
                diag += data[p]
            elif data[p] != 0.0:
                acc -= data[p] * x[col]
                coupled = True
        if diag == 0.0:
            # rows removed by truncation carry no unknown
            if coupled or q[i] != 0.0:
                return i
            continue
        x[i] = min(max(acc / diag, lower[i]), upper[i])
    return -1


try:
    import numba
    _pgs_kernel = numba.njit(cache=True)(_pgs_kernel)
except ImportError:  # pragma: no cover
    pass


def pgs_sweep(Q, q, lower, upper, x):
    '''One ascending projected Gauss-Seidel sweep on ``Qx = q``; updates
    ``x`` in place and returns it.'''
    Q = Q.tocsr()
    bad = _pgs_kernel(Q.indptr, Q.indices, Q.data.astype(float),
                      np.asarray(q, dtype=float), np.asarray(lower, dtype=float),
                      np.asarray(upper, dtype=float), x)
    if bad >= 0:
        raise ZeroDivisionError('zero diagonal entry in row %d' % bad)
    return x


def pgs_solve(Q, q, lower, upper, x0, eps=1e-9, nu=1, return_sweeps=False):
    '''``nu`` PGS sweeps, stopping early once a sweep moves x by <= eps.'''
    Q = Q.tocsr()
    x = project_box(np.array(x0, dtype=float), lower, upper)
    q = np.asarray(q, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    sweeps = 0
    for _ in range(nu):
        old = x.copy()
        pgs_sweep(Q, q, lower, upper, x)
        sweeps += 1
        if np.linalg.norm(x - old) <= eps:
            break
    return (x, sweeps) if return_sweeps else x


def project_box_hyperplane(x, lower, upper, gamma):
    '''Euclidean projection onto ``{lower <= z <= upper, sum(z) = gamma}``.

    The projection is ``clip(x - lam)`` where ``lam`` solves the monotone
    scalar equation ``sum(clip(x - lam)) = gamma``; the root is located on
    the sorted breakpoints and then solved exactly on its linear piece.
    '''
    x = np.asarray(x, dtype=float)
    lower = np.broadcast_to(np.asarray(lower, dtype=float), x.shape)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), x.shape)
    lo_sum, hi_sum = lower.sum(), upper.sum()
    tol = 1e-12 * max(1.0, abs(gamma))
    if lo_sum > gamma + tol or hi_sum < gamma - tol:
        raise InfeasibleError('box and hyperplane sum=%g do not intersect '
                              '(bound sums %g, %g)' % (gamma, lo_sum, hi_sum))

    def total(lam):
        return project_box(x - lam, lower, upper).sum()

    bps = np.unique(np.concatenate([(x - upper)[np.isfinite(upper)],
                                    (x - lower)[np.isfinite(lower)]]))
    if bps.size == 0:
        return x - (x.sum() - gamma) / x.size
    # total() is non-increasing; bracket the root between sorted breakpoints
    if total(bps[0]) < gamma:
        a, b = None, bps[0]
    elif total(bps[-1]) > gamma:
        a, b = bps[-1], None
    else:
        lo, hi = 0, bps.size - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if total(bps[mid]) >= gamma:
                lo = mid
            else:
                hi = mid
        a, b = bps[lo], bps[hi]
    if a is None:
        probe = b - 1.0
    elif b is None:
        probe = a + 1.0
    else:
        probe = 0.5 * (a + b)
    # between breakpoints the free set is fixed and total() is affine
    y = x - probe
    free = (y > lower) & (y < upper)
    nfree = int(free.sum())
    if nfree == 0:
        lam = a if a is not None else b
    else:
        fixed = project_box(y, lower, upper)[~free].sum()
        lam = (x[free].sum() - (gamma - fixed)) / nfree
    z = project_box(x - lam, lower, upper)
    inside = (z > lower) & (z < upper)
    if inside.any():
        # absorb rounding in the free coordinates
        z[inside] += (gamma - z.sum()) / inside.sum()
        z = project_box(z, lower, upper)
    return z


def armijo_pg_solve(fun, lower, upper, gamma, x0, eps=1e-9, nu=1, state=None,
                    callback=None):
    '''Projected gradient with Armijo backtracking on the box+hyperplane set.

    Each iteration starts from ``ARMIJO_GROWTH`` times the last accepted
    step (warm start through ``state``) and halves until sufficient decrease.  Stops
    after ``nu`` iterations or once the accepted step moves x by <= eps.
    '''
    state = state or StepState()
    x = project_box_hyperplane(x0, lower, upper, gamma)
    if nu <= 0:
        return x
    f = fun.value(x)
    g = fun.grad(x)
    for _ in range(nu):
        s = state.s * ARMIJO_GROWTH if state.warm else 1.0
        stalled = False
        for _ in range(MAX_BRACKET):
            xp = project_box_hyperplane(x - s * g, lower, upper, gamma)
            if np.linalg.norm(xp - x) <= eps:
                # the trial points no longer move: x is stationary to eps
                stalled = True
                break
            fp = fun.value(xp)
            if fp <= f + ARMIJO_SIGMA * (g @ (xp - x)):
                break
            s *= 0.5
        else:
            log.warning('Armijo backtracking failed after %d halvings', MAX_BRACKET)
            break
        if stalled:
            break
        if state.warm:
            state.s = s
        step = np.linalg.norm(xp - x)
        x, f = xp, fp
        if step <= eps:
            break
        if callback is not None and callback(x):
            break
        g = fun.grad(x)
    return x
