"""Command-line experiment runner: rate tables, convergence curves, the
smoothing experiment and single solves.

Configuration is a flat ``key = value`` file (``#`` starts a comment) plus
command-line overrides::

    fomg table --problem spiral --levels 4..5 --nu 1..5 --out results
    fomg table --config runs/spiral.cfg --nu 2
    fomg curves --levels 5 --nu 5
    fomg smoothing --seed 3
    fomg solve --problem nonquad --levels 4 --nu 1

Exit status is 0 on success, 1 on a configuration error and 2 if any table
row failed (the remaining rows are still written).
"""

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spl

from . import __version__
from .analysis import run_smoothing_experiment
from .hierarchy import MAX_LEVEL, build_hierarchy
from .multigrid import Multigrid, VCycleConfig
from .problems import PROBLEMS, make_problem
from .smoothers import (EvalCounter, ShiftedObjective, StepState, armijo_pg_solve,
                        gp_solve, kkt_residual, project_box, project_box_hyperplane)

__all__ = ['ExperimentConfig', 'ResultRow', 'ConfigError', 'parse_range', 'load_config',
           'reference_solution', 'kkt_error', 'run_row', 'run_baseline', 'run_table',
           'run_truncation_comparison', 'emit_outputs', 'read_table', 'main']

log = logging.getLogger(__name__)

CSV_HEADER = ['level', 'nvars', 'smoother', 'rate', 'feval_top', 'feval_all_levels', 'seconds']
BASELINE_CAP = 500000


class ConfigError(ValueError):
    pass


def parse_range(text):
    '''``'4..6'`` -> [4, 5, 6]; ``'1,3'`` -> [1, 3]; ``'2'`` -> [2]; ``''`` -> [].'''
    text = str(text).strip()
    if not text:
        return []
    out = []
    try:
        for part in text.split(','):
            part = part.strip()
            if '..' in part:
                a, b = part.split('..')
                a, b = int(a), int(b)
                if b < a:
                    raise ConfigError('empty range %r' % part)
                out.extend(range(a, b + 1))
            else:
                out.append(int(part))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError('cannot parse integer range %r' % text) from None
    return out


@dataclass
class ExperimentConfig:
    problem: str = 'spiral'
    levels: list = field(default_factory=lambda: [4, 5])
    variant: str = 'auto'          # auto: fas-plain with an equality, else fas-truncated
    nu: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    smoother: str = 'gp'
    seed: int = 0
    out: str = 'results'
    ref_tol: float = 1e-11
    tol_error: float = 1e-8
    niter: int = 100
    baseline: bool = True
    timing: bool = True

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ConfigError('unknown problem %r; choose from %s'
                              % (self.problem, ', '.join(sorted(PROBLEMS))))
        for k in self.levels:
            if not 1 <= k <= MAX_LEVEL:
                raise ConfigError('level %d outside 1..%d' % (k, MAX_LEVEL))
        if any(v < 1 for v in self.nu):
            raise ConfigError('smoothing counts must be >= 1')
        if self.variant not in ('auto', 'cs-truncated', 'fas-truncated', 'fas-plain'):
            raise ConfigError('unknown variant %r' % self.variant)
        if self.smoother not in ('gp', 'gsp'):
            raise ConfigError('unknown smoother %r' % self.smoother)
        if not self.ref_tol > 0 or not self.tol_error > 0 or self.niter < 1:
            raise ConfigError('tolerances must be positive and niter >= 1')
        return self

    def variant_for(self, problems):
        if self.variant != 'auto':
            return self.variant
        return 'fas-plain' if problems.has_equality else 'fas-truncated'


def _bool(text):
    t = str(text).strip().lower()
    if t in ('1', 'true', 'yes', 'on'):
        return True
    if t in ('0', 'false', 'no', 'off'):
        return False
    raise ConfigError('not a boolean: %r' % text)


_CONVERT = {
    'problem': str, 'variant': str, 'smoother': str, 'out': str,
    'levels': parse_range, 'nu': parse_range,
    'seed': int, 'niter': int, 'ref_tol': float, 'tol_error': float,
    'baseline': _bool, 'timing': _bool,
}


def _apply(cfg, key, value):
    key = key.strip().replace('-', '_')
    if key not in _CONVERT:
        raise ConfigError('unknown config key %r' % key)
    try:
        setattr(cfg, key, _CONVERT[key](value))
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError('bad value for %s: %r' % (key, value)) from None


def load_config(path=None, overrides=None):
    '''Defaults, then the key=value file, then ``overrides`` (a dict).'''
    cfg = ExperimentConfig()
    if path is not None:
        try:
            lines = Path(path).read_text().splitlines()
        except OSError as exc:
            raise ConfigError('cannot read config %s: %s' % (path, exc)) from None
        for no, line in enumerate(lines, 1):
            line = line.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ConfigError('%s:%d: expected key = value' % (path, no))
            key, value = line.split('=', 1)
            _apply(cfg, key, value.strip())
    for key, value in (overrides or {}).items():
        if value is not None:
            _apply(cfg, key, value)
    return cfg.validate()


# -- reference solutions ------------------------------------------------------

def kkt_error(prob, x):
    '''Fixed-point residual of the projected (scaled) gradient step.'''
    g = prob.grad(x) / getattr(prob, 'scale', 1.0)
    if prob.gamma is None:
        return kkt_residual(g, x, prob.lower, prob.upper)
    return float(np.linalg.norm(x - project_box_hyperplane(x - g, prob.lower, prob.upper,
                                                           prob.gamma)))


def _project(prob, x):
    if prob.gamma is None:
        return project_box(x, prob.lower, prob.upper)
    return project_box_hyperplane(x, prob.lower, prob.upper, prob.gamma)


def _newton_step(prob, x):
    '''Newton step on the free nodes (with the equality as a bordered
    system), projected back onto the feasible set.'''
    free = (x != prob.lower) & (x != prob.upper)
    nf = int(free.sum())
    if nf == 0:
        return x
    g = prob.grad(x)
    H = prob.hessian(x)[free][:, free]
    if prob.gamma is None:
        d = spl.spsolve(H.tocsc(), -g[free])
    else:
        ones = np.ones((nf, 1))
        K = sp.bmat([[H, ones], [ones.T, None]], format='csc')
        rhs = np.concatenate([-g[free], [prob.gamma - x.sum()]])
        d = spl.spsolve(K, rhs)[:nf]
    if not np.all(np.isfinite(d)):
        return x
    y = x.copy()
    y[free] += d
    return _project(prob, y)


def reference_solution(problems, tol=1e-11, max_newton=30):
    '''High-accuracy finest-level solution with KKT residual <= tol.

    A multigrid warm start is polished by projected Newton steps for
    matrix-defined problems (each followed by one projected-gradient step
    that corrects the active set) and by gradient projection otherwise.
    '''
    fin = problems.finest
    cfg = VCycleConfig('fas-plain' if problems.has_equality else 'fas-truncated',
                       nu1=3, nu2=3, niter=300, tol_outer=1e-13)
    x = Multigrid(problems, cfg).solve().x
    if hasattr(fin, 'hessian'):
        state = StepState()
        for _ in range(max_newton):
            if kkt_error(fin, x) <= tol:
                return x
            y = _newton_step(fin, x)
            if fin.value(y) <= fin.value(x) + 1e-14 * (1.0 + abs(fin.value(x))):
                x = y
            fun = ShiftedObjective(fin)
            if fin.gamma is None:
                x = gp_solve(fun, fin.lower, fin.upper, x, 0.0, 1, state)
            else:
                x = armijo_pg_solve(fun, fin.lower, fin.upper, fin.gamma, x, 0.0, 1, state)
    if kkt_error(fin, x) > tol:
        fun = ShiftedObjective(fin)
        if fin.gamma is None:
            x = gp_solve(fun, fin.lower, fin.upper, x, tol, 10 ** 6)
        else:
            x = armijo_pg_solve(fun, fin.lower, fin.upper, fin.gamma, x, 1e-15, 10 ** 6)
    res = kkt_error(fin, x)
    if res > tol:
        log.warning('reference KKT residual %.2e above requested %.1e', res, tol)
    return x


# -- table rows -----------------------------------------------------------------

@dataclass
class ResultRow:
    level: int
    nvars: int
    smoother: str
    rate: float
    feval_top: int
    feval_levels: list
    seconds: float
    iterations: int = 0
    error: str = ''

    @property
    def feval_all(self):
        return int(sum(self.feval_levels))

    def csv_fields(self, timing=True):
        rate = '' if self.rate is None or not np.isfinite(self.rate) else '%.4f' % self.rate
        secs = '%.3f' % self.seconds if timing else ''
        return [str(self.level), str(self.nvars), self.smoother, rate,
                str(self.feval_top), str(self.feval_all), secs]


def _tag(smoother, nu):
    return '%s-%d' % (smoother.upper(), nu)


def run_row(problems, level, nu, cfg, reference):
    variant = cfg.variant_for(problems)
    vc = VCycleConfig(variant, nu1=nu, nu2=nu, smoother=cfg.smoother,
                      niter=cfg.niter, tol_error=cfg.tol_error)
    start = time.perf_counter()
    rep = Multigrid(problems, vc).solve(reference=reference)
    counts = [f + g for f, g in zip(rep.counts['fun'], rep.counts['grad'])]
    rate = rep.rate.rate if rep.rate is not None else float('nan')
    return ResultRow(level, problems.finest.n, _tag(cfg.smoother, nu), rate, counts[-1],
                     counts, time.perf_counter() - start, rep.iterations)


def run_baseline(problems, level, cfg, reference):
    '''Finest-level smoother alone, run to the same error threshold.'''
    fin = problems.finest
    counter = EvalCounter(1)
    fun = ShiftedObjective(fin, None, counter, 0)
    target = cfg.tol_error * np.linalg.norm(reference)
    iters = [0]

    def done(x):
        iters[0] += 1
        return np.linalg.norm(x - reference) <= target

    start = time.perf_counter()
    x0 = np.zeros(fin.n)
    if fin.gamma is None:
        gp_solve(fun, fin.lower, fin.upper, x0, 0.0, BASELINE_CAP, StepState(), done)
    else:
        armijo_pg_solve(fun, fin.lower, fin.upper, fin.gamma, x0, 0.0, BASELINE_CAP,
                        StepState(), done)
    total = counter.total(0)
    return ResultRow(level, fin.n, 'GP only', float('nan'), total, [total],
                     time.perf_counter() - start, iters[0])


def run_table(cfg, progress=None):
    '''Rows in config order; a failing row is kept with its error text.'''
    rows = []
    for level in cfg.levels:
        try:
            problems = make_problem(cfg.problem, build_hierarchy(level))
            ref = reference_solution(problems, cfg.ref_tol)
        except Exception as exc:  # reported per row, the run continues
            log.error('level %d setup failed: %s', level, exc)
            rows.append(ResultRow(level, (2 ** (level + 1) - 1) ** 2, 'setup', float('nan'),
                                  0, [], 0.0, error=str(exc)))
            continue
        jobs = [('mg', nu) for nu in cfg.nu] + ([('base', None)] if cfg.baseline else [])
        for kind, nu in jobs:
            try:
                if kind == 'mg':
                    row = run_row(problems, level, nu, cfg, ref)
                else:
                    row = run_baseline(problems, level, cfg, ref)
            except Exception as exc:
                log.error('level %d %s failed: %s', level, kind, exc)
                row = ResultRow(level, problems.finest.n,
                                'GP only' if nu is None else _tag(cfg.smoother, nu),
                                float('nan'), 0, [], 0.0, error=str(exc))
            rows.append(row)
            if progress is not None:
                progress(row)
    return rows


def run_truncation_comparison(cfg, level=None, nu=None):
    '''Error curves of the truncated and the plain FAS cycle on the spiral
    problem from the same (zero) start; returns ``{variant: [(t, log10 e_t)]}``
    together with the two solve reports.'''
    level = level if level is not None else min(cfg.levels[-1], 6)
    nu = nu if nu is not None else cfg.nu[-1]
    problems = make_problem('spiral', build_hierarchy(level))
    ref = reference_solution(problems, cfg.ref_tol)
    curves, reports = {}, {}
    for variant in ('fas-truncated', 'fas-plain'):
        vc = VCycleConfig(variant, nu1=nu, nu2=nu, niter=cfg.niter, tol_error=cfg.tol_error)
        rep = Multigrid(problems, vc).solve(reference=ref)
        curves[variant] = [(t, float(np.log10(max(e, 1e-300)))) for t, e in enumerate(rep.errors)]
        reports[variant] = rep
    return curves, reports


# -- output -------------------------------------------------------------------

def _write(path, text):
    try:
        with open(path, 'w', newline='') as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError('cannot write %s: %s' % (path, exc)) from exc


def emit_outputs(rows, curves, out, cfg, problem=None, extra=None):
    '''Write ``table_<problem>.csv``, ``curve_<tag>.dat`` and ``run.json``.'''
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError('cannot create %s: %s' % (out, exc)) from exc
    written = []
    if rows is not None:
        lines = [','.join(CSV_HEADER)] + [','.join(r.csv_fields(cfg.timing)) for r in rows]
        path = out / ('table_%s.csv' % (problem or cfg.problem))
        _write(path, '\n'.join(lines) + '\n')
        written.append(path)
    for tag, series in (curves or {}).items():
        path = out / ('curve_%s.dat' % tag)
        _write(path, ''.join('%d %.10g\n' % (t, v) for t, v in series))
        written.append(path)
    manifest = {'version': __version__, 'config': asdict(cfg),
                'files': [p.name for p in written]}
    if rows is not None:
        manifest['rows'] = [{'level': r.level, 'smoother': r.smoother,
                             'feval_per_level': list(map(int, r.feval_levels)),
                             'iterations': r.iterations, 'error': r.error} for r in rows]
    if extra:
        manifest.update(extra)
    path = out / 'run.json'
    _write(path, json.dumps(manifest, indent=2, sort_keys=True) + '\n')
    written.append(path)
    return written


def read_table(path):
    with open(path, newline='') as fh:
        return list(csv.DictReader(fh))


# -- CLI ----------------------------------------------------------------------

def _parser():
    p = argparse.ArgumentParser(prog='fomg', description=__doc__.split('\n\n')[0])
    p.add_argument('--version', action='version', version=__version__)
    sub = p.add_subparsers(dest='command', required=True)

    def common(sp_):
        sp_.add_argument('--config', help='key = value configuration file')
        sp_.add_argument('--problem', choices=sorted(PROBLEMS))
        sp_.add_argument('--levels', help="finest levels, e.g. '4..6' or '4,5'")
        sp_.add_argument('--nu', help="smoothing steps per side, e.g. '1..5'")
        sp_.add_argument('--variant')
        sp_.add_argument('--smoother', choices=['gp', 'gsp'])
        sp_.add_argument('--seed', type=int)
        sp_.add_argument('--niter', type=int)
        sp_.add_argument('--ref-tol', type=float)
        sp_.add_argument('--tol-error', type=float)
        sp_.add_argument('--no-baseline', action='store_true')
        sp_.add_argument('--no-timing', action='store_true',
                         help='leave the seconds column empty (byte-reproducible tables)')
        sp_.add_argument('--out')
        sp_.add_argument('-v', '--verbose', action='store_true')

    common(sub.add_parser('table', help='rate / evaluation-count table'))
    common(sub.add_parser('curves', help='truncated vs plain FAS error curves (spiral)'))
    sm = sub.add_parser('smoothing', help='low/high-frequency error split under smoothing')
    common(sm)
    sm.add_argument('--iters', type=int, default=10)
    common(sub.add_parser('solve', help='one solve, report printed'))
    return p


def _config_from_args(args):
    over = {k: getattr(args, k) for k in ('problem', 'levels', 'nu', 'variant', 'smoother',
                                          'seed', 'niter', 'ref_tol', 'tol_error', 'out')}
    if args.no_baseline:
        over['baseline'] = 'false'
    if args.no_timing:
        over['timing'] = 'false'
    return load_config(args.config, over)


def _cmd_table(cfg):
    def progress(row):
        msg = row.error or 'rate %s feval_top %d' % (row.csv_fields()[3] or '-', row.feval_top)
        print('level %d %-8s %s' % (row.level, row.smoother, msg), flush=True)

    rows = run_table(cfg, progress)
    for path in emit_outputs(rows, None, cfg.out, cfg):
        print('wrote', path)
    return 2 if any(r.error for r in rows) else 0


def _cmd_curves(cfg):
    curves, reports = run_truncation_comparison(cfg)
    extra = {'curves': {v: {'iterations': r.iterations,
                            'rate': None if r.rate is None else r.rate.rate}
                        for v, r in reports.items()}}
    for v, r in reports.items():
        print('%-14s iterations %3d  rate %s  error@3 %s'
              % (v, r.iterations, '-' if r.rate is None else '%.3f' % r.rate.rate,
                 '%.3e' % r.errors[3] if len(r.errors) > 3 else '-'))
    for path in emit_outputs(None, curves, cfg.out, cfg, extra=extra):
        print('wrote', path)
    return 0


def _cmd_smoothing(cfg, iters):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ['iter,smoother,low,high,total']
    for name in ('sd-exact', 'sd-inexact', 'gs'):
        trace = run_smoothing_experiment(iters, name, cfg.seed)
        lines += ['%d,%s,%.10g,%.10g,%.10g' % (t, name, s.low, s.high, s.total)
                  for t, s in enumerate(trace)]
        print('%-10s high %.3e -> %.3e   low %.3e -> %.3e'
              % (name, trace[0].high, trace[-1].high, trace[0].low, trace[-1].low))
    _write(out / 'smoothing.csv', '\n'.join(lines) + '\n')
    emit_outputs(None, None, out, cfg)
    print('wrote', out / 'smoothing.csv')
    return 0


def _cmd_solve(cfg):
    level, nu = cfg.levels[-1], cfg.nu[0]
    problems = make_problem(cfg.problem, build_hierarchy(level))
    ref = reference_solution(problems, cfg.ref_tol)
    row = run_row(problems, level, nu, cfg, ref)
    print('problem %s level %d (%d vars) variant %s %s'
          % (cfg.problem, level, row.nvars, cfg.variant_for(problems), row.smoother))
    print('iterations %d  rate %.4f  feval_top %d  feval_all %d  %.2fs'
          % (row.iterations, row.rate, row.feval_top, row.feval_all, row.seconds))
    return 0


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format='%(levelname)s %(name)s: %(message)s')
    try:
        cfg = _config_from_args(args)
        if args.command in ('curves', 'solve') and not (cfg.levels and cfg.nu):
            raise ConfigError('%s needs at least one level and one nu' % args.command)
    except ConfigError as exc:
        print('config error: %s' % exc, file=sys.stderr)
        return 1
    if args.command == 'table':
        return _cmd_table(cfg)
    if args.command == 'curves':
        return _cmd_curves(cfg)
    if args.command == 'smoothing':
        return _cmd_smoothing(cfg, args.iters)
    return _cmd_solve(cfg)


if __name__ == '__main__':
    sys.exit(main())
