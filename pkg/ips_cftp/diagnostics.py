"""Monte Carlo estimates of the quantities controlling the sampler.

Every estimator runs on the seed schedule `mix(seed, k)`, so the same
arguments always give the same report. Replicates that hit a budget are
censored: excluded from the means and counted separately.
"""
import functools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from dataclasses import dataclass
from dataclasses import field as dc_field
from typing import Any
from typing import Callable
from typing import Dict
from typing import Iterable
from typing import List
from typing import NamedTuple
from typing import Optional
from typing import Sequence
from typing import Tuple
from typing import TypeVar

import numpy as np
from scipy import stats

from ips_cftp.assembler import sample_site
from ips_cftp.event_field import Event
from ips_cftp.event_field import EventField
from ips_cftp.event_field import mix_seed
from ips_cftp.exception import BudgetExceeded
from ips_cftp.exception import ValidationError
from ips_cftp.exploration import run_exploration
from ips_cftp.exploration import ThetaMap
from ips_cftp.locking import explore_with_locking
from ips_cftp.locking import h_mass
from ips_cftp.models import Model
from ips_cftp.settings import Caps
from ips_cftp.settings import DEFAULT_FAILURE_THRESHOLD


log = logging.getLogger(__name__)

LAMBDA_GRID = (0.0, -0.05, 0.05, -0.1, 0.1, -0.2, 0.2)

MIN_TAIL_REPLICATES = 1000

SAMPLE_KEY = 1

T = TypeVar('T')


@dataclass
class EstimateReport:
    name: str
    estimate: float
    stderr: float
    n: int
    censored: int = 0
    params: Dict[str, Any] = dc_field(default_factory=dict)
    failure_threshold: float = DEFAULT_FAILURE_THRESHOLD

    @property
    def censoring_rate(self) -> float:
        total = self.n + self.censored
        return self.censored / total if total else 0.0

    @property
    def biased(self) -> bool:
        return self.censoring_rate > self.failure_threshold

    def to_dict(self) -> Dict[str, Any]:
        report = asdict(self)
        report['censoring_rate'] = self.censoring_rate
        report['biased'] = self.biased
        return report


class OutcomeSummary(NamedTuple):
    """What the estimators need from one locking tree."""
    T: float
    H: Tuple[Event, ...]
    L: int
    node_count: int


def _locking_summary(
    model: Model,
    theta: ThetaMap,
    caps: Caps,
    seed: int,
) -> Optional[OutcomeSummary]:
    field = EventField(model, seed)
    try:
        outcome = explore_with_locking(model, theta, field, caps=caps)
    except BudgetExceeded:
        return None
    return OutcomeSummary(outcome.T, outcome.H, outcome.L, outcome.node_count)


def _run(
    fn: Callable[[int], T],
    seeds: Sequence[int],
    workers: int,
) -> List[T]:
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunksize = max(1, len(seeds) // (4 * workers))
            return list(pool.map(fn, seeds, chunksize=chunksize))
    return [fn(seed) for seed in seeds]


def _check_n(n: int) -> None:
    if n < 1:
        raise ValidationError('needs at least one replicate', field='n')


def locking_summaries(
    model: Model,
    theta: ThetaMap,
    n: int,
    seed: int,
    caps: Caps = Caps(),
    workers: int = 1,
) -> Tuple[List[OutcomeSummary], int]:
    """Locking trees of the realizations `mix(seed, k)`, k < n.

    :returns: the successful summaries and the number of censored ones
    """
    _check_n(n)
    fn = functools.partial(_locking_summary, model, theta, caps)
    summaries = _run(fn, [mix_seed(seed, k) for k in range(n)], workers)
    kept = [s for s in summaries if s is not None]
    censored = n - len(kept)
    if censored:
        log.warning('%d of %d locking trees hit the caps', censored, n)
    return kept, censored


def _report(
    name: str,
    values: Iterable[float],
    censored: int,
    params: Optional[Dict[str, Any]] = None,
    failure_threshold: float = DEFAULT_FAILURE_THRESHOLD,
) -> EstimateReport:
    array = np.fromiter(values, dtype=float)
    n = len(array)
    if n == 0:
        estimate, stderr = math.nan, math.nan
    else:
        estimate = float(array.mean())
        stderr = float(array.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    report = EstimateReport(
        name, estimate, stderr, n, censored, dict(params or {}),
        failure_threshold,
    )
    if report.biased:
        log.warning(
            '%s: censoring rate %.4f above %.4f, estimate is biased',
            name, report.censoring_rate, failure_threshold,
        )
    return report


def g_values(model: Model, summaries: Sequence[OutcomeSummary]) -> List[float]:
    return [float(h_mass(model, s.H)) for s in summaries]


def lambda_values(
    model: Model,
    summaries: Sequence[OutcomeSummary],
    which: str,
    lam: float,
    q: int = 0,
) -> List[float]:
    """Per-replicate value of the functional whose mean is Λ_which(λ)."""
    if which == 'T':
        return [math.exp(lam * s.T) for s in summaries]
    if which == 'H_time':
        return [
            sum(
                len(model.rules[a.rule].offsets) * math.exp(lam * a.time)
                for a in s.H
            )
            for s in summaries
        ]
    if which == 'L':
        return [math.exp(lam * s.L) for s in summaries]
    if which == 'H_space':
        if not 0 <= q < model.dim:
            raise ValidationError(f'no coordinate {q}', field='q')
        return [
            sum(
                math.exp(lam * (a.site[q] + z[q]))
                for a in s.H for z in model.rules[a.rule].offsets
            )
            for s in summaries
        ]
    raise ValidationError(f'unknown quantity {which!r}', field='which')


def estimate_g(
    model: Model,
    theta: ThetaMap,
    n: int,
    seed: int,
    caps: Caps = Caps(),
    workers: int = 1,
    failure_threshold: float = DEFAULT_FAILURE_THRESHOLD,
) -> EstimateReport:
    """𝔤 = E(Σ_{α in H} |A_α|)"""
    summaries, censored = locking_summaries(
        model, theta, n, seed, caps, workers,
    )
    return _report(
        'g', g_values(model, summaries), censored,
        failure_threshold=failure_threshold,
    )


def _check_lambda(which: str, lam: float) -> None:
    if which in ('T', 'H_time') and lam > 0:
        raise ValidationError(
            f'λ must be non-positive for {which}', field='lambda',
        )


def estimate_lambda(
    model: Model,
    theta: ThetaMap,
    which: str,
    lam: float,
    n: int,
    seed: int,
    q: int = 0,
    caps: Caps = Caps(),
    workers: int = 1,
    failure_threshold: float = DEFAULT_FAILURE_THRESHOLD,
) -> EstimateReport:
    """Λ_T(λ), Λ_{H,time}(λ), Λ_L(λ) or Λ_{H,space}(λ, q).

    :param which: one of `T`, `H_time`, `L`, `H_space`
    """
    _check_lambda(which, lam)
    summaries, censored = locking_summaries(
        model, theta, n, seed, caps, workers,
    )
    params: Dict[str, Any] = {'lambda': lam}
    if which == 'H_space':
        params['q'] = q
    return _report(
        f'Lambda_{which}', lambda_values(model, summaries, which, lam, q),
        censored, params, failure_threshold,
    )


@dataclass
class BoundCheck:
    """One inequality E(exp(...)) <= bound, compared with a 3σ margin."""
    name: str
    verdict: str
    empirical: float = math.nan
    empirical_stderr: float = math.nan
    bound: float = math.nan
    bound_stderr: float = math.nan

    @property
    def holds(self) -> bool:
        return self.verdict == 'pass'


def _compare(
    name: str,
    empirical: Sequence[float],
    bound: float,
    bound_stderr: float,
) -> BoundCheck:
    report = _report(name, empirical, 0)
    margin = 3 * math.hypot(report.stderr, bound_stderr)
    verdict = 'pass' if report.estimate - margin <= bound else 'fail'
    return BoundCheck(
        name, verdict, report.estimate, report.stderr, bound, bound_stderr,
    )


def _geometric_bound(
    numerator: EstimateReport,
    ratio: EstimateReport,
) -> Tuple[float, float]:
    """numerator / (1 - ratio) and its delta-method standard error."""
    gap = 1.0 - ratio.estimate
    bound = numerator.estimate / gap
    stderr = math.hypot(
        numerator.stderr / gap, numerator.estimate * ratio.stderr / gap ** 2,
    )
    return bound, stderr


@dataclass
class BoundsReport:
    lam: float
    n: int
    samples: int
    censored: int
    failure_threshold: float
    estimates: List[EstimateReport]
    checks: List[BoundCheck]

    @property
    def biased(self) -> bool:
        total = self.samples + self.censored
        rate = self.censored / total if total else 0.0
        return rate > self.failure_threshold or any(
            e.biased for e in self.estimates
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            'lambda': self.lam,
            'n': self.n,
            'samples': self.samples,
            'censored': self.censored,
            'biased': self.biased,
            'estimates': [e.to_dict() for e in self.estimates],
            'checks': [asdict(c) for c in self.checks],
        }


def _sample_summary(
    model: Model,
    theta: ThetaMap,
    caps: Caps,
    seed: int,
) -> Optional[Tuple[float, int, int]]:
    result = sample_site(model, theta, seed, caps)
    if result.failed:
        return None
    return result.t_star, result.l_star_plus, result.l_star_minus


def check_bounds(
    model: Model,
    theta: ThetaMap,
    lam: float,
    n: int,
    seed: int,
    caps: Caps = Caps(),
    workers: int = 1,
    failure_threshold: float = DEFAULT_FAILURE_THRESHOLD,
) -> BoundsReport:
    """Checks the bounds on E(exp(λT*)) and E(exp(±|λ| L*_±)).

    The Λ's are estimated on the locking trees of `mix(seed, k)`, the
    empirical sides on full samples of the independent seeds
    `mix(seed, 1, k)`. A check whose denominator estimate is not below 1 is
    not applicable.
    """
    _check_n(n)
    lam_time = -abs(lam)
    lam_space = abs(lam)
    summaries, censored = locking_summaries(
        model, theta, n, seed, caps, workers,
    )

    def estimate(which: str, value: float, q: int = 0) -> EstimateReport:
        params: Dict[str, Any] = {'lambda': value}
        if which == 'H_space':
            params['q'] = q
        return _report(
            f'Lambda_{which}',
            lambda_values(model, summaries, which, value, q),
            censored, params, failure_threshold,
        )

    fn = functools.partial(_sample_summary, model, theta, caps)
    samples = _run(
        fn, [mix_seed(seed, SAMPLE_KEY, k) for k in range(n)], workers,
    )
    kept = [s for s in samples if s is not None]
    sample_censored = n - len(kept)

    lambda_t = estimate('T', lam_time)
    lambda_h = estimate('H_time', lam_time)
    lambda_l = estimate('L', lam_space)
    estimates = [lambda_t, lambda_h, lambda_l]
    checks = []
    if lambda_h.estimate < 1:
        bound, stderr = _geometric_bound(lambda_t, lambda_h)
        checks.append(_compare(
            'time', [math.exp(lam_time * t) for t, _, _ in kept],
            bound, stderr,
        ))
    else:
        checks.append(BoundCheck('time', 'not-applicable'))

    for sign, name in ((1.0, 'space_plus'), (-1.0, 'space_minus')):
        per_q = [
            estimate('H_space', sign * lam_space, q) for q in range(model.dim)
        ]
        estimates.extend(per_q)
        if any(e.estimate >= 1 for e in per_q):
            checks.append(BoundCheck(name, 'not-applicable'))
            continue
        # sup over q of 1 / (1 - Λ_{H,space})
        worst = max(per_q, key=lambda e: e.estimate)
        bound, stderr = _geometric_bound(lambda_l, worst)
        index = 1 if sign > 0 else 2
        checks.append(_compare(
            name,
            [math.exp(sign * lam_space * s[index]) for s in kept],
            bound, stderr,
        ))
    report = BoundsReport(
        lam, n, len(kept), sample_censored, failure_threshold, estimates,
        checks,
    )
    log.info(
        'bounds at λ=%s: %s',
        lam, ', '.join(f'{c.name}={c.verdict}' for c in checks),
    )
    return report


TAIL_QUANTITIES = ('explored', 'tree_nodes', 'amb_points', 'minus_t_star')


def _tail_value(
    model: Model,
    theta: ThetaMap,
    quantity: str,
    caps: Caps,
    seed: int,
) -> Optional[float]:
    field = EventField(model, seed)
    try:
        if quantity == 'explored':
            unperturbed = model.unperturbed()
            trace = run_exploration(
                unperturbed, theta, EventField(unperturbed, seed),
                cap=caps.max_steps,
            )
            return float(trace.size)
        if quantity == 'tree_nodes':
            outcome = explore_with_locking(model, theta, field, caps=caps)
            return float(outcome.node_count)
    except BudgetExceeded:
        return None
    result = sample_site(model, theta, seed, caps)
    if result.failed:
        return None
    if quantity == 'amb_points':
        return float(result.points)
    return -result.t_star


def tail_curve(
    model: Model,
    theta: ThetaMap,
    quantity: str,
    n: int,
    seed: int,
    caps: Caps = Caps(),
    workers: int = 1,
) -> List[Tuple[int, float]]:
    """Empirical survival P(Q >= ℓ) at the integers ℓ from 0 to max Q + 1.

    :param quantity: `explored` (|X_∞| of the unperturbed exploration),
        `tree_nodes`, `amb_points` or `minus_t_star`
    """
    if quantity not in TAIL_QUANTITIES:
        raise ValidationError(f'unknown quantity {quantity!r}', field='quantity')
    if n < MIN_TAIL_REPLICATES:
        raise ValidationError(
            f'needs at least {MIN_TAIL_REPLICATES} replicates', field='n',
        )
    fn = functools.partial(_tail_value, model, theta, quantity, caps)
    values = [
        v for v in _run(fn, [mix_seed(seed, k) for k in range(n)], workers)
        if v is not None
    ]
    if not values:
        return []
    array = np.sort(np.asarray(values))
    top = int(math.floor(array[-1])) + 1
    return [
        (ell, float(len(array) - np.searchsorted(array, ell)) / len(array))
        for ell in range(top + 1)
    ]


class SurvivalFit(NamedTuple):
    slope: float
    intercept: float
    r_squared: float
    points: int


def fit_log_survival(
    curve: Sequence[Tuple[int, float]],
    lo: int,
    hi: int,
) -> SurvivalFit:
    """Least squares line through log P(Q >= ℓ) for lo <= ℓ <= hi, skipping
    empty survival values."""
    xs = [ell for ell, p in curve if lo <= ell <= hi and p > 0]
    ys = [math.log(p) for ell, p in curve if lo <= ell <= hi and p > 0]
    if len(xs) < 3:
        raise ValidationError(
            f'only {len(xs)} positive points in [{lo}, {hi}]', field='curve',
        )
    fit = stats.linregress(xs, ys)
    return SurvivalFit(
        float(fit.slope), float(fit.intercept), float(fit.rvalue ** 2),
        len(xs),
    )


def lambda_grid(which: str = 'time') -> List[float]:
    """Default λ values valid for the time (λ <= 0) or space (λ >= 0)
    bounds."""
    if which == 'time':
        return [lam for lam in LAMBDA_GRID if lam <= 0]
    if which == 'space':
        return [lam for lam in LAMBDA_GRID if lam >= 0]
    raise ValidationError(f'unknown grid {which!r}', field='which')


def diagnose(
    model: Model,
    theta: ThetaMap,
    n: int,
    seed: int,
    lam: float,
    caps: Caps = Caps(),
    workers: int = 1,
    failure_threshold: float = DEFAULT_FAILURE_THRESHOLD,
) -> Dict[str, Any]:
    """Every estimate at λ plus the bound checks, as a JSON-ready dict."""
    g = estimate_g(
        model, theta, n, seed, caps, workers, failure_threshold,
    )
    bounds = check_bounds(
        model, theta, lam, n, seed, caps, workers, failure_threshold,
    )
    return {
        'g': g.to_dict(),
        'bounds': bounds.to_dict(),
        'biased': g.biased or bounds.biased,
    }
