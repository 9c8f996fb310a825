"""V-cycle drivers for bound-constrained problems.

Three variants share one recursion skeleton:

``cs-truncated``
    correction scheme for quadratic problems; coarse matrices are Galerkin
    products of the finest matrix truncated at the current active set.
``fas-truncated``
    full approximation scheme with the same finest-level truncation.
``fas-plain``
    full approximation scheme without truncation, coarse bounds from the
    guarded restrictions; supports the single equality ``sum(x) = gamma``.

At the finest level the truncated variants also truncate the prolongation,
so the coarse correction never moves a node that is active there.
"""

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import hierarchy as H
from .analysis import RateEstimate, asymptotic_rate
from .problems import ComposedProblem, NodalProblem, galerkin_coarse, truncate
from .smoothers import (EvalCounter, ShiftedObjective, StepState,
                        armijo_pg_solve, gp_solve, pgs_solve, project_box,
                        project_box_hyperplane)

__all__ = ['VARIANTS', 'VCycleConfig', 'SolveReport', 'Multigrid', 'solve',
           'restrict_equality_target', 'VariantError']

log = logging.getLogger(__name__)

VARIANTS = ('cs-truncated', 'fas-truncated', 'fas-plain')
SMOOTHERS = ('gp', 'gsp')


class VariantError(ValueError):
    pass


@dataclass
class VCycleConfig:
    variant: str = 'fas-plain'
    nu1: int = 1
    nu2: int = 1
    eps: float = 1e-9
    eps0: float = 1e-9
    nu0: int = 10000
    niter: int = 100
    smoother: str = 'gp'
    # stop when |x_t - x_{t-1}| <= tol_outer, or |x - x*| <= tol_error |x*|
    tol_outer: float = 0.0
    tol_error: float = 1e-8

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError('unknown variant %r; choose from %s'
                             % (self.variant, ', '.join(VARIANTS)))
        if self.smoother not in SMOOTHERS:
            raise ValueError('unknown smoother %r' % self.smoother)
        if self.nu1 < 0 or self.nu2 < 0 or self.nu1 + self.nu2 < 1:
            raise ValueError('need nu1, nu2 >= 0 and nu1 + nu2 >= 1')
        if self.eps0 > self.eps:
            raise ValueError('coarsest tolerance eps0 must not exceed eps')


@dataclass
class SolveReport:
    x: np.ndarray
    iterations: int
    errors: list = field(default_factory=list)       # |x_t - x*|, t = 0..iterations
    objective: list = field(default_factory=list)    # finest f(x_t), t = 0..iterations
    steps: list = field(default_factory=list)        # |x_t - x_{t-1}|
    counts: dict = field(default_factory=dict)
    rate: RateEstimate = None
    seconds: float = 0.0
    coarse_bound_violation: float = 0.0
    equality_residuals: list = field(default_factory=list)

    @property
    def feval_top(self):
        return self.counts['fun'][-1] + self.counts['grad'][-1]

    @property
    def feval_all(self):
        return sum(self.counts['fun']) + sum(self.counts['grad'])


def restrict_equality_target(x_fine, hier, k):
    '''Right-hand side of the coarse equality: sum of the restricted iterate.'''
    return float(H.restrict(hier, k, x_fine).sum())


def _galerkin_problem(prob, hier, k):
    '''Coarse NodalProblem inherited from ``prob`` on level k.'''
    w = prob.weights
    nc = hier[k - 1].n
    return NodalProblem(prob.kind, galerkin_coarse(prob.Q, hier, k), np.zeros(nc),
                        np.full(nc, -np.inf), np.full(nc, np.inf),
                        weights=None if w is None else H.restrict(hier, k, w),
                        nonlinearity=prob.nonlinearity, scale=prob.scale / 4.0)


class Multigrid:
    '''One solve context: iterate-independent data plus the per-level step
    states and evaluation counters.  Not shared between threads.'''

    def __init__(self, problems, config=None):
        self.problems = problems
        self.hier = problems.hier
        self.cfg = config or VCycleConfig()
        nlev = self.hier.j + 1
        self.counter = EvalCounter(nlev)
        self.steps = [StepState() for _ in range(nlev)]
        self.trace = []
        self.max_coarse_violation = 0.0
        finest = problems.finest
        if self.cfg.variant == 'cs-truncated' and finest.kind != 'quadratic':
            raise VariantError('cs-truncated needs a quadratic problem, got %s'
                               % finest.kind)
        if self.cfg.smoother == 'gsp' and finest.kind != 'quadratic':
            raise VariantError('projected Gauss-Seidel smoothing needs a quadratic problem')
        if self.cfg.variant != 'fas-plain' and problems.has_equality:
            raise VariantError('truncated multigrid is incompatible with the '
                               'equality constraint; use fas-plain')

    # -- smoothing -----------------------------------------------------------

    def _smooth(self, k, prob, shift, lower, upper, x, gamma, eps, nu):
        if gamma is not None:
            fun = ShiftedObjective(prob, shift, self.counter, k)
            return armijo_pg_solve(fun, lower, upper, gamma, x, eps, nu, self.steps[k])
        if self.cfg.smoother == 'gsp':
            q = prob.q if shift is None else prob.q + shift
            # one sweep costs about one gradient evaluation
            x, sweeps = pgs_solve(prob.Q, q, lower, upper, x, eps, nu, return_sweeps=True)
            self.counter.grad[k] += sweeps
            return x
        fun = ShiftedObjective(prob, shift, self.counter, k)
        return gp_solve(fun, lower, upper, x, eps, nu, self.steps[k])

    def _presmooth(self, k, *args):
        if k == 0:
            return self._smooth(0, *args, self.cfg.eps0, self.cfg.nu0)
        return self._smooth(k, *args, self.cfg.eps, self.cfg.nu1)

    # -- Algorithm: truncated correction scheme ------------------------------

    def vcycle_cs_truncated(self, x):
        j = self.hier.j
        fin = self.problems.finest
        return self._cs(j, x, fin, fin.lower, fin.upper)

    def _cs(self, k, x, prob, lower, upper):
        x = self._presmooth(k, prob, None, lower, upper, x, None)
        if k == 0:
            return x
        hier = self.hier
        r = prob.q - prob.Q @ x
        phat, shat = lower - x, upper - x
        active = None
        if k == hier.j:
            lo_act, up_act = x == lower, x == upper
            active = lo_act | up_act
            self.trace.append(('truncate', k))
            prob = truncate(prob, active)
            r = np.where(active, 0.0, r)
            phat = np.where(lo_act, -np.inf, phat)
            shat = np.where(up_act, np.inf, shat)
        self.trace.append(('galerkin', k))
        coarse = _galerkin_problem(prob, hier, k)
        coarse = replace(coarse, q=H.restrict(hier, k, r))
        v = self._cs(k - 1, np.zeros(hier[k - 1].n), coarse,
                     H.restrict_bounds_max(hier, k, phat),
                     H.restrict_bounds_min(hier, k, shat))
        corr = H.prolongate(hier, k, v)
        if active is not None:
            corr[active] = 0.0
        x = x + corr
        return self._smooth(k, self._level_problem(k, prob), None, lower, upper, x,
                            None, self.cfg.eps, self.cfg.nu2)

    def _level_problem(self, k, prob):
        # the finest level smooths with the original, untruncated data
        return self.problems.finest if k == self.hier.j else prob

    # -- full approximation scheme (both variants) ---------------------------

    def vcycle_fas_truncated(self, x):
        if self.cfg.variant != 'fas-truncated':
            raise VariantError('configured variant is %s' % self.cfg.variant)
        return self._fas_top(x)

    def vcycle_fas(self, x):
        if self.cfg.variant != 'fas-plain':
            raise VariantError('configured variant is %s' % self.cfg.variant)
        return self._fas_top(x)

    def _fas_top(self, x):
        fin = self.problems.finest
        return self._fas(self.hier.j, x, fin, None, fin.lower, fin.upper, fin.gamma)

    def _coarse_problem(self, k, prob, x, xc, active):
        '''Objective used on level k-1.

        Without truncation this is the rediscretised level problem.  With
        truncation, matrix-defined problems use the Galerkin product of the
        truncated matrix and restricted nodal weights; element-defined ones
        compose the current level objective with ``x + T P (y - xc)``, so
        frozen nodes stay frozen on every coarse level.
        '''
        hier = self.hier
        if self.cfg.variant != 'fas-truncated':
            return self.problems.levels[k - 1]
        if isinstance(prob, NodalProblem):
            if active is not None:
                self.trace.append(('truncate', k))
                prob = truncate(prob, active)
            self.trace.append(('galerkin', k))
            return _galerkin_problem(prob, hier, k)
        P = hier.P(k)
        if active is not None:
            self.trace.append(('truncate', k))
            P = (sp.diags((~active).astype(float)) @ P).tocsr()
        self.trace.append(('galerkin', k))
        if isinstance(prob, ComposedProblem):
            base, offset, M = prob.base, prob.offset + prob.M @ (x - P @ xc), prob.M @ P
        else:
            base, offset, M = prob, x - P @ xc, P
        return ComposedProblem(base, offset, M.tocsr(), prob.scale / 4.0 / base.scale)

    def _fas(self, k, x, prob, shift, lower, upper, gamma):
        x = self._presmooth(k, prob, shift, lower, upper, x, gamma)
        if k == 0:
            return x
        hier = self.hier
        truncated = self.cfg.variant == 'fas-truncated'
        xc = H.restrict(hier, k, x)
        self.counter.grad[k] += 1
        g = prob.grad(x)
        if shift is not None:
            g = g - shift
        lo_act, up_act = x == lower, x == upper
        phat, shat = lower - x, upper - x
        active = None
        if k == hier.j:
            active = lo_act | up_act
            phat = np.where(lo_act, -np.inf, phat)
            shat = np.where(up_act, np.inf, shat)
            if truncated:
                g = np.where(active, 0.0, g)
        cprob = self._coarse_problem(k, prob, x, xc, active if truncated else None)
        self.counter.grad[k - 1] += 1
        cshift = cprob.grad(xc) - H.restrict(hier, k, g)
        if truncated:
            clo = H.restrict_bounds_max(hier, k, phat) + xc
            cup = H.restrict_bounds_min(hier, k, shat) + xc
        else:
            clo = H.restrict_bounds_guarded_lower(hier, k, phat, lo_act) + xc
            cup = H.restrict_bounds_guarded_upper(hier, k, shat, up_act) + xc
        viol = max(float(np.max(clo - xc, initial=0.0)), float(np.max(xc - cup, initial=0.0)))
        self.max_coarse_violation = max(self.max_coarse_violation, viol)
        cgamma = None if gamma is None else float(xc.sum())
        y = self._fas(k - 1, xc, cprob, cshift, clo, cup, cgamma)
        corr = H.prolongate(hier, k, y - xc)
        if truncated and k == hier.j:
            corr[active] = 0.0
        x = x + corr
        return self._smooth(k, prob, shift, lower, upper, x, gamma,
                            self.cfg.eps, self.cfg.nu2)

    # -- outer loop ----------------------------------------------------------

    def vcycle(self, x):
        if self.cfg.variant == 'cs-truncated':
            return self.vcycle_cs_truncated(x)
        return self._fas_top(x)

    def solve(self, x0=None, reference=None):
        fin = self.problems.finest
        cfg = self.cfg
        x = np.zeros(fin.n) if x0 is None else np.array(x0, dtype=float)
        if fin.gamma is None:
            x = project_box(x, fin.lower, fin.upper)
        else:
            x = project_box_hyperplane(x, fin.lower, fin.upper, fin.gamma)
        start = time.perf_counter()
        ref_norm = None if reference is None else np.linalg.norm(reference)
        errors, objective, steps, eqres = [], [], [], []

        def record(x):
            if reference is not None:
                errors.append(float(np.linalg.norm(x - reference)))
            if np.all(np.isfinite(x)) and np.all(x >= fin.lower) and np.all(x <= fin.upper):
                objective.append(fin.value(x))
            else:
                objective.append(float('nan'))
            if fin.gamma is not None:
                eqres.append(abs(x.sum() - fin.gamma) / abs(fin.gamma))

        record(x)
        it = 0
        for it in range(1, cfg.niter + 1):
            x_old = x
            x = self.vcycle(x)
            steps.append(float(np.linalg.norm(x - x_old)))
            record(x)
            if reference is not None and errors[-1] <= cfg.tol_error * ref_norm:
                break
            if steps[-1] <= cfg.tol_outer:
                break
        rate = None
        if len(errors) >= 3 and errors[1] > 0:
            try:
                rate = asymptotic_rate(errors[1:])
            except ValueError:
                rate = None
        return SolveReport(x, it, errors, objective, steps, self.counter.as_dict(),
                           rate, time.perf_counter() - start,
                           self.max_coarse_violation, eqres)


def solve(problems, config=None, x0=None, reference=None):
    return Multigrid(problems, config).solve(x0, reference)
