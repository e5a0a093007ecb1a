"""Ambiguity closure and resolution: from locking trees to exact samples.

Starting from the origin point, every branching event (z, i, s) of a point's
locking tree needs the states just before s on z + A_i, which are new points
with their own trees. Once the closure is finite the points are resolved from
the most ancient one forward, each branching value being f_i of the values of
its child points.
"""
import functools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from dataclasses import field as dc_field
from typing import Any
from typing import Callable
from typing import Dict
from typing import List
from typing import Mapping
from typing import NamedTuple
from typing import Optional
from typing import Sequence
from typing import Tuple

from ips_cftp.event_field import box_sites
from ips_cftp.event_field import Event
from ips_cftp.event_field import EventField
from ips_cftp.event_field import format_site
from ips_cftp.event_field import mix_seed
from ips_cftp.event_field import origin
from ips_cftp.event_field import shift
from ips_cftp.event_field import Site
from ips_cftp.exception import BudgetExceeded
from ips_cftp.exception import CftpError
from ips_cftp.exception import ScheduleIncomplete
from ips_cftp.exploration import consensus_configs
from ips_cftp.exploration import ThetaMap
from ips_cftp.locking import CftpAmbOutcome
from ips_cftp.locking import explore_with_locking
from ips_cftp.locking import resolve_readout
from ips_cftp.models import flow_replay
from ips_cftp.models import Model
from ips_cftp.settings import Caps
from ips_cftp.settings import DEFAULT_CHUNK_SIZE
from ips_cftp.settings import DEFAULT_CONSENSUS_K
from ips_cftp.settings import DEFAULT_READOUT
from ips_cftp.tracing import child_span
from ips_cftp.tracing import sampling_tween


log = logging.getLogger(__name__)

Point = Tuple[Site, float]


@dataclass(eq=False)
class AmbPoint:
    site: Site
    time: float
    outcome: CftpAmbOutcome
    children: Dict[Event, Tuple[Point, ...]] = dc_field(default_factory=dict)
    value: Optional[int] = None

    @property
    def key(self) -> Point:
        return self.site, self.time


@dataclass
class AmbClosure:
    origin_site: Site
    origin_time: float
    points: Dict[Point, AmbPoint] = dc_field(default_factory=dict)
    layers: List[List[Point]] = dc_field(default_factory=list)
    T_star: float = 0.0
    L_star_plus: int = 0
    L_star_minus: int = 0

    @property
    def L_star(self) -> int:
        return max(self.L_star_plus, -self.L_star_minus)

    @property
    def root(self) -> AmbPoint:
        return self.points[self.origin_site, self.origin_time]

    @property
    def schedule(self) -> List[AmbPoint]:
        """Points by increasing time, ties broken by site."""
        return sorted(self.points.values(), key=lambda p: (p.time, p.site))

    @property
    def tree_nodes(self) -> int:
        return sum(p.outcome.node_count for p in self.points.values())


def child_points(model: Model, alpha: Event) -> Tuple[Point, ...]:
    return tuple(
        (shift(alpha.site, y), alpha.time)
        for y in model.rules[alpha.rule].offsets
    )


def _bounds(closure: AmbClosure) -> None:
    center = closure.origin_site
    t_star = closure.origin_time
    plus = minus = 0
    first = True
    for point in closure.points.values():
        t_star = min(t_star, point.outcome.T)
        ell = point.outcome.L
        for q, x in enumerate(point.site):
            x -= center[q]
            if first:
                plus, minus, first = x + ell, x - ell, False
            plus = max(plus, x + ell)
            minus = min(minus, x - ell)
    closure.T_star = t_star
    closure.L_star_plus = plus
    closure.L_star_minus = minus


def build_amb_closure(
    model: Model,
    theta: ThetaMap,
    field: EventField,
    caps: Caps = Caps(),
    origin_point: Optional[Point] = None,
) -> AmbClosure:
    """Breadth-first closure of the ambiguity points, one locking tree per
    distinct point, all on the same realization.

    :raises BudgetExceeded: past `caps.max_points` points or
        `caps.max_layers` layers, or when a locking tree hits its caps;
        `partial` is the closure built so far
    """
    model.require_iota()
    site0, time0 = origin_point or (origin(model.dim), 0.0)
    closure = AmbClosure(site0, time0)
    layer: List[Point] = [(site0, time0)]
    seen = set(layer)
    while layer:
        if len(closure.layers) >= caps.max_layers:
            raise BudgetExceeded(
                f'closure has more than {caps.max_layers} layers',
                partial=closure,
            )
        closure.layers.append(layer)
        next_layer: List[Point] = []
        for site, time in layer:
            try:
                outcome = explore_with_locking(
                    model, theta, field, (site, time), caps,
                )
            except BudgetExceeded as e:
                raise BudgetExceeded(str(e), partial=closure) from e
            point = AmbPoint(site, time, outcome)
            closure.points[site, time] = point
            for alpha in outcome.H:
                kids = point.children[alpha] = child_points(model, alpha)
                for kid in kids:
                    if kid not in seen:
                        seen.add(kid)
                        next_layer.append(kid)
            if len(closure.points) + len(next_layer) > caps.max_points:
                raise BudgetExceeded(
                    f'closure has more than {caps.max_points} points',
                    partial=closure,
                )
        log.debug(
            'closure layer %d: %d points, %d new',
            len(closure.layers) - 1, len(layer), len(next_layer),
        )
        layer = next_layer
    _bounds(closure)
    for point in closure.points.values():
        assert closure.T_star <= point.outcome.T
    return closure


def resolve_all(
    model: Model,
    closure: AmbClosure,
    theta: Optional[ThetaMap] = None,
    mode: str = DEFAULT_READOUT,
    k: int = DEFAULT_CONSENSUS_K,
    seed: int = 0,
) -> int:
    """Resolves every point from the most ancient one and returns the value
    at the origin point.

    :raises ScheduleIncomplete: if a child point is still unresolved when
        its parent needs it
    """
    for point in closure.schedule:
        evalues: Dict[Event, int] = {}
        for alpha, kids in point.children.items():
            inputs = []
            for kid in kids:
                value = closure.points[kid].value
                if value is None:
                    raise ScheduleIncomplete(
                        f'point {kid} is needed by {point.key} before being '
                        'resolved',
                    )
                inputs.append(value)
            evalues[alpha] = model.rules[alpha.rule].apply(inputs)
        point.value = resolve_readout(
            model, point.outcome, evalues, theta, mode=mode, k=k, seed=seed,
        )
    value = closure.root.value
    assert value is not None
    return value


@dataclass
class SampleResult:
    seed: int
    site: Site
    value: Optional[int] = None
    t_star: float = float('nan')
    l_star: int = -1
    l_star_plus: int = 0
    l_star_minus: int = 0
    points: int = 0
    layers: int = 0
    tree_nodes: int = 0
    failed: bool = False
    error: str = ''

    @property
    def budget_failure(self) -> bool:
        return self.failed and self.error == BudgetExceeded.__name__

    def binary_annotations(self) -> Dict[str, str]:
        annotations = {
            'cftp.site': format_site(self.site),
            'cftp.failed': str(self.failed).lower(),
            'cftp.points': str(self.points),
            'cftp.tree_nodes': str(self.tree_nodes),
        }
        if not self.failed:
            annotations.update({
                'cftp.value': str(self.value),
                'cftp.t_star': repr(self.t_star),
                'cftp.l_star': str(self.l_star),
            })
        else:
            annotations['error.type'] = self.error
        return annotations


def _fill(result: SampleResult, closure: Optional[AmbClosure]) -> None:
    if closure is None or not closure.points:
        return
    result.points = len(closure.points)
    result.layers = len(closure.layers)
    result.tree_nodes = closure.tree_nodes


def sample_site(
    model: Model,
    theta: ThetaMap,
    seed: int,
    caps: Caps = Caps(),
    site: Optional[Site] = None,
    readout: str = DEFAULT_READOUT,
    consensus_k: int = DEFAULT_CONSENSUS_K,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> SampleResult:
    """One exact sample of the stationary marginal at `site`.

    Budget failures and internal errors are reported through `failed` and
    `error`, never raised.
    """
    site = site if site is not None else origin(model.dim)
    result = SampleResult(seed, site)
    field = EventField(model, seed, chunk_size)
    closure: Optional[AmbClosure] = None
    try:
        with child_span('build_amb_closure'):
            closure = build_amb_closure(model, theta, field, caps, (site, 0.0))
        with child_span('resolve_all'):
            result.value = resolve_all(
                model, closure, theta, mode=readout, k=consensus_k, seed=seed,
            )
    except BudgetExceeded as e:
        partial = e.partial if isinstance(e.partial, AmbClosure) else None
        _fill(result, partial)
        result.failed = True
        result.error = type(e).__name__
        log.info('seed %d failed: %s', seed, e)
        return result
    except CftpError as e:
        _fill(result, closure)
        result.failed = True
        result.error = type(e).__name__
        log.error('seed %d: %s: %s', seed, type(e).__name__, e)
        return result
    _fill(result, closure)
    result.t_star = closure.T_star
    result.l_star = closure.L_star
    result.l_star_plus = closure.L_star_plus
    result.l_star_minus = closure.L_star_minus
    return result


def sample_marginal(
    model: Model,
    theta: ThetaMap,
    sites: Sequence[Site],
    seeds: Sequence[int],
    caps: Caps = Caps(),
    **kwargs: Any,
) -> List[List[SampleResult]]:
    """Per-site marginal samples, one list per site.

    The j-th site runs on the realizations of seeds `mix(seed, j)` (the first
    site uses the seeds themselves), translated to that site.
    """
    results = []
    for j, site in enumerate(sites):
        results.append([
            sample_site(
                model, theta, seed if j == 0 else mix_seed(seed, j), caps,
                site=site, **kwargs,
            )
            for seed in seeds
        ])
    return results


class BatchResult(NamedTuple):
    results: List[SampleResult]
    failures: int

    @property
    def failure_rate(self) -> float:
        return self.failures / len(self.results) if self.results else 0.0

    @property
    def internal_errors(self) -> int:
        return sum(
            1 for r in self.results if r.failed and not r.budget_failure
        )


def batch_seeds(base_seed: int, n: int) -> List[int]:
    return [mix_seed(base_seed, k) for k in range(n)]


def sample_batch(
    model: Model,
    theta: ThetaMap,
    base_seed: int,
    n: int,
    caps: Caps = Caps(),
    site: Optional[Site] = None,
    workers: int = 1,
    strict: bool = False,
    settings: Optional[Mapping[str, Any]] = None,
    **kwargs: Any,
) -> BatchResult:
    """Samples seeds `mix(base_seed, k)` for k < n, in seed order.

    :param workers: processes; 1 samples in this process
    :param strict: raise on the first failed sample instead of counting it
    :param settings: tracing settings of the per-seed spans
    :raises BudgetExceeded: in strict mode
    """
    handler: Callable[[int], SampleResult] = functools.partial(
        sample_site, model, theta, caps=caps, site=site, **kwargs,
    )
    sampler = sampling_tween(handler, settings or {})
    seeds = batch_seeds(base_seed, n)
    if workers > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunksize = max(1, n // (4 * workers))
            results = list(pool.map(sampler, seeds, chunksize=chunksize))
    else:
        results = [sampler(seed) for seed in seeds]
    failures = 0
    for result in results:
        if result.failed:
            failures += 1
            if strict:
                raise BudgetExceeded(
                    f'seed {result.seed} failed ({result.error})',
                    partial=result,
                )
    if failures:
        log.warning('%d of %d samples failed', failures, n)
    return BatchResult(results, failures)


def global_consensus(
    model: Model,
    field: EventField,
    l_star: int,
    t_star: float,
    k: int = 8,
    seed: int = 0,
    site: Optional[Site] = None,
) -> Tuple[int, ...]:
    """Replays every event of the box of radius `l_star` around `site` over
    [t_star, 0) from k initial configurations.

    :returns: the value at `site` for each configuration
    """
    site = site if site is not None else origin(model.dim)
    events = field.events_in_window(
        box_sites(l_star, model.dim, site), t_star, 0.0,
    )
    return tuple(
        flow_replay(model, events, xi)[site]
        for xi in consensus_configs(len(model.states), k, seed)
    )
