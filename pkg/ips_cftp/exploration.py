"""Exploration processes of the unperturbed dynamics.

An exploration starts from an empty event set at a space-time origin. At each
step the θ map turns the explored set X into a frontier of sites B = θ(X),
and the most recent event of the field on B strictly before the current time
floor γ is added to X. It stops when the frontier is empty; the least time
reached is the coupling time T^u and the value at the origin is a function of
the explored events alone.

θ maps see sites relative to the origin; events in traces keep absolute
coordinates.
"""
import abc
import bisect
import itertools
import logging
import re
from dataclasses import dataclass
from dataclasses import field as dc_field
from typing import Dict
from typing import FrozenSet
from typing import Iterable
from typing import Iterator
from typing import List
from typing import Mapping
from typing import Optional
from typing import Sequence
from typing import Tuple
from typing import Union

from ips_cftp.event_field import box_sites
from ips_cftp.event_field import Event
from ips_cftp.event_field import EventField
from ips_cftp.event_field import mix_seed
from ips_cftp.event_field import origin
from ips_cftp.event_field import shift
from ips_cftp.event_field import Site
from ips_cftp.event_field import sup_norm
from ips_cftp.exception import BudgetExceeded
from ips_cftp.exception import CouplingViolation
from ips_cftp.exception import ModelShapeMismatch
from ips_cftp.exception import ThetaContainmentError
from ips_cftp.exception import ValidationError
from ips_cftp.models import Model
from ips_cftp.models import PatchConfig
from ips_cftp.models import substitute_events
from ips_cftp.settings import DEFAULT_CONSENSUS_K
from ips_cftp.settings import DEFAULT_MAX_STEPS


log = logging.getLogger(__name__)

Frontier = FrozenSet[Site]
EMPTY: Frontier = frozenset()


def relative(ev: Event, center: Site) -> Event:
    return ev._replace(site=tuple(a - b for a, b in zip(ev.site, center)))


class ThetaMap(abc.ABC):
    """A frontier map θ on finite event sets, with its size bound β.

    Subclasses implement `update`, which computes θ(X) from θ(X') where X'
    is X without its least-time element. Events handed to a θ map have sites
    relative to the exploration origin.
    """
    name = 'theta'

    def initial(self, dim: int) -> Frontier:
        return frozenset([origin(dim)])

    @abc.abstractmethod
    def update(
        self,
        model: Model,
        frontier: Frontier,
        newest_first: Iterator[Event],
        size: int,
    ) -> Frontier:
        """θ(X) for the explored set X, given θ of X minus its newest event.

        :param frontier: θ of X without its least-time element
        :param newest_first: the events of X in reverse exploration order,
            the least-time one first
        :param size: |X|
        """

    @abc.abstractmethod
    def beta(self, model: Model, ell: int) -> int:
        """β(ℓ): θ(X_ℓ) lies in {-β(ℓ), ..., β(ℓ)}^d."""

    def check_model(self, model: Model) -> None:
        """Raises ModelShapeMismatch if the unperturbed rules do not fit."""

    def readout(self, model: Model, events: Sequence[Event]) -> Optional[int]:
        """Exact value at the origin from a terminated explored set, if this
        θ map knows one."""
        return None

    def __call__(self, model: Model, events: Iterable[Event]) -> Frontier:
        """θ(X) computed from scratch."""
        ordered = sorted(events, reverse=True)
        frontier = self.initial(model.dim)
        for n in range(1, len(ordered) + 1):
            if not frontier:
                break
            frontier = self.update(
                model, frontier, reversed(ordered[:n]), n,
            )
        return frontier

    def __repr__(self) -> str:
        return self.name


class FiniteFactorTheta(ThetaMap):
    """Box exploration for models with the finite factor property.

    The frontier is the box {-b, ..., b}^d until the h = (2b+1)^d most
    recently explored events are unconditional and cover the box.
    """

    def __init__(self, b: int) -> None:
        if b < 0:
            raise ValidationError('b must be non-negative', field='theta')
        self.b = b
        self.name = f'finite_factor(b={b})'
        self._boxes: Dict[int, Frontier] = {}

    def box(self, dim: int) -> Frontier:
        box = self._boxes.get(dim)
        if box is None:
            box = self._boxes[dim] = frozenset(box_sites(self.b, dim))
        return box

    def initial(self, dim: int) -> Frontier:
        return self.box(dim)

    def update(
        self,
        model: Model,
        frontier: Frontier,
        newest_first: Iterator[Event],
        size: int,
    ) -> Frontier:
        box = self.box(model.dim)
        h = len(box)
        if size < h:
            return box
        covered = set()
        for _ in range(h):
            ev = next(newest_first)
            if not model.rules[ev.rule].is_unconditional:
                return box
            covered.add(ev.site)
        return EMPTY if covered == box else box

    def beta(self, model: Model, ell: int) -> int:
        return self.b


def _is_copy_rule(model: Model, k: int) -> bool:
    rule = model.rules[k]
    if len(rule.offsets) != 2 or rule.offsets[0] != origin(model.dim):
        return False
    n = len(model.states)
    return all(
        rule.apply((w0, wx)) == wx for w0 in range(n) for wx in range(n)
    )


class VoterTheta(ThetaMap):
    """Follows the copy lineage of the origin until a noise event."""
    name = 'voter'

    def check_model(self, model: Model) -> None:
        for k in model.unperturbed_indices:
            rule = model.rules[k]
            if not rule.is_unconditional and not _is_copy_rule(model, k):
                raise ModelShapeMismatch(
                    f'rule {rule.name or k} is neither a copy rule nor '
                    'unconditional',
                )

    def update(
        self,
        model: Model,
        frontier: Frontier,
        newest_first: Iterator[Event],
        size: int,
    ) -> Frontier:
        y, j = _newest(newest_first)
        rule = model.rules[j]
        if rule.is_unconditional:
            return EMPTY
        return frozenset([shift(y, rule.offsets[1])])

    def beta(self, model: Model, ell: int) -> int:
        return _reach(model) * ell

    def readout(self, model: Model, events: Sequence[Event]) -> Optional[int]:
        return readout_voter(model, events)


def _is_polling_rule(model: Model, k: int) -> bool:
    rule = model.rules[k]
    if not rule.offsets or model.states.labels != ('+', '-'):
        return False
    plus = model.states.index('+')
    minus = model.states.index('-')
    return all(
        rule.apply(w) == (plus if plus in w else minus)
        for w in itertools.product((plus, minus), repeat=len(rule.offsets))
    )


class PollingTheta(ThetaMap):
    """Exploration of the asymmetric polling voter model.

    Frontier sites are the sites whose state is still needed. A + noise event
    settles the origin to +; a - noise event settles its own site only; a
    polling event at y replaces y by the polled sites y + A.
    """
    name = 'polling'

    def check_model(self, model: Model) -> None:
        if model.states.labels != ('+', '-'):
            raise ModelShapeMismatch('polling needs the states (+, -)')
        for k in model.unperturbed_indices:
            rule = model.rules[k]
            if not rule.is_unconditional and not _is_polling_rule(model, k):
                raise ModelShapeMismatch(
                    f'rule {rule.name or k} is neither a polling rule nor '
                    'unconditional',
                )

    def update(
        self,
        model: Model,
        frontier: Frontier,
        newest_first: Iterator[Event],
        size: int,
    ) -> Frontier:
        y, j = _newest(newest_first)
        rule = model.rules[j]
        remaining = frontier - {y}
        if rule.is_unconditional:
            if rule.constant == model.states.index('+'):
                return EMPTY
            return remaining
        return remaining | {shift(y, a) for a in rule.offsets}

    def beta(self, model: Model, ell: int) -> int:
        return _reach(model) * ell

    def readout(self, model: Model, events: Sequence[Event]) -> Optional[int]:
        return readout_polling(model, events)


def _newest(newest_first: Iterator[Event]) -> Tuple[Site, int]:
    ev = next(newest_first)
    return ev.site, ev.rule


def _reach(model: Model) -> int:
    return max(
        (sup_norm(y) for k in model.unperturbed_indices
         for y in model.rules[k].offsets),
        default=0,
    )


def theta_finite_factor(b: int) -> ThetaMap:
    return FiniteFactorTheta(b)


def theta_voter() -> ThetaMap:
    return VoterTheta()


def theta_polling() -> ThetaMap:
    return PollingTheta()


_FINITE_FACTOR = re.compile(r'^finite_factor\(\s*(?:b\s*=\s*)?(\d+)\s*\)$')


def parse_theta(name: str) -> ThetaMap:
    """`finite_factor(b=1)`, `voter` or `polling`."""
    name = name.strip()
    match = _FINITE_FACTOR.match(name)
    if match:
        return theta_finite_factor(int(match.group(1)))
    if name == 'voter':
        return theta_voter()
    if name == 'polling':
        return theta_polling()
    raise ValidationError(f'unknown θ map {name!r}', field='theta')


@dataclass
class ExplorationTrace:
    """Steps of one exploration.

    `explored[n]` is the event added at step n, `frontiers[n]` is
    θ(X_n) and `gammas[n]` is γ_n; X_n is `explored[:n]`.
    """
    origin_site: Site
    origin_time: float
    explored: List[Event] = dc_field(default_factory=list)
    frontiers: List[Frontier] = dc_field(default_factory=list)
    gammas: List[float] = dc_field(default_factory=list)
    terminated: bool = False

    @property
    def events(self) -> List[Event]:
        return self.explored

    @property
    def size(self) -> int:
        return len(self.explored)

    @property
    def T_u(self) -> float:
        return self.gammas[-1] if self.gammas else self.origin_time


def check_containment(
    model: Model,
    theta: ThetaMap,
    frontier: Frontier,
    ell: int,
) -> None:
    bound = theta.beta(model, ell)
    for site in frontier:
        if sup_norm(site) > bound:
            raise ThetaContainmentError(
                f'{theta}: frontier site {site} outside the box of radius '
                f'{bound} at step {ell}',
            )


def run_exploration(
    model: Model,
    theta: ThetaMap,
    field: EventField,
    origin_point: Optional[Tuple[Site, float]] = None,
    cap: int = DEFAULT_MAX_STEPS,
) -> ExplorationTrace:
    """Runs the exploration process of `theta` on the unperturbed `model`.

    :param origin_point: (site, time) the exploration is relative to
    :param cap: maximum number of explored events
    :raises BudgetExceeded: when `cap` events were explored without
        termination; the exception carries the partial trace
    """
    if model.perturbative_indices:
        raise ModelShapeMismatch(
            'run_exploration takes the unperturbed restriction of a model',
        )
    if cap < 1:
        raise ValidationError('cap must be at least 1', field='cap')
    theta.check_model(model)
    site0, time0 = origin_point or (origin(model.dim), 0.0)
    trace = ExplorationTrace(site0, time0)
    relative_events: List[Event] = []
    frontier = theta.initial(model.dim)
    gamma = time0
    bound: Union[float, Event] = time0
    trace.frontiers.append(frontier)
    trace.gammas.append(gamma)
    check_containment(model, theta, frontier, 0)
    while frontier:
        if len(trace.explored) >= cap:
            raise BudgetExceeded(
                f'exploration from {site0}@{time0} exceeded {cap} steps',
                partial=trace,
            )
        ev = field.latest_event_before(
            [shift(site0, b) for b in frontier], bound,
        )
        if ev is None:
            raise BudgetExceeded(
                f'event field exhausted below {gamma}', partial=trace,
            )
        trace.explored.append(ev)
        relative_events.append(relative(ev, site0))
        gamma = ev.time
        bound = ev
        frontier = theta.update(
            model, frontier, reversed(relative_events), len(relative_events),
        )
        trace.frontiers.append(frontier)
        trace.gammas.append(gamma)
        check_containment(model, theta, frontier, len(relative_events))
    trace.terminated = True
    log.debug(
        '%s exploration from %s@%s: %d events, T^u=%s',
        theta, site0, time0, trace.size, trace.T_u,
    )
    return trace


def consensus_configs(n_states: int, k: int, seed: int) -> List[PatchConfig]:
    """Initial configurations of the consensus readout: the constant ones
    (at most 4) then seeded uniform random ones, k in total."""
    if k < 2:
        raise ValidationError('needs at least 2 configurations', field='k')
    configs = [
        PatchConfig(n_states, constant=v) for v in range(min(n_states, 4, k))
    ]
    j = 0
    while len(configs) < k:
        configs.append(PatchConfig(n_states, seed=mix_seed(seed, j)))
        j += 1
    return configs


_BEFORE = -1


class EventSetEvaluator:
    """Evaluates states at space-time points using only a finite event set.

    The state at (x, t-) is the output of the latest event of the set at x
    before t, applied to the recursively evaluated states of its neighbors;
    sites without such an event read the initial configuration.
    """

    def __init__(
        self,
        model: Model,
        events: Iterable[Event],
        substitutions: Optional[Mapping[Event, int]] = None,
    ) -> None:
        self.model = model
        self.substitutions = substitutions or {}
        self.by_site: Dict[Site, List[Event]] = {}
        for ev in events:
            self.by_site.setdefault(ev.site, []).append(ev)
        for column in self.by_site.values():
            column.sort()

    def latest(self, site: Site, before: Event) -> Optional[Event]:
        column = self.by_site.get(site)
        if not column:
            return None
        index = bisect.bisect_left(column, before)
        return column[index - 1] if index else None

    def value(self, xi: PatchConfig, site: Site, time: float) -> int:
        target = self.latest(site, Event(time, (), _BEFORE))
        if target is None:
            return xi[site]
        memo: Dict[Event, int] = {}
        stack = [target]
        while stack:
            ev = stack[-1]
            if ev in memo:
                stack.pop()
                continue
            if ev in self.substitutions:
                memo[ev] = self.substitutions[ev]
                stack.pop()
                continue
            rule = self.model.rules[ev.rule]
            inputs = []
            missing = []
            for y in rule.offsets:
                nb = shift(ev.site, y)
                prev = self.latest(nb, ev)
                if prev is None:
                    inputs.append(xi[nb])
                elif prev in memo:
                    inputs.append(memo[prev])
                else:
                    missing.append(prev)
            if missing:
                stack.extend(missing)
                continue
            memo[ev] = rule.apply(inputs)
            stack.pop()
        return memo[target]


def readout_consensus(
    model: Model,
    events: Iterable[Event],
    substitutions: Optional[Mapping[Event, int]] = None,
    k: int = DEFAULT_CONSENSUS_K,
    seed: int = 0,
    site: Optional[Site] = None,
    time: float = 0.0,
) -> int:
    """Value at (site, time-) replayed from k initial configurations.

    :raises CouplingViolation: if the configurations disagree, i.e. the event
        set does not determine the value
    """
    evaluator = EventSetEvaluator(model, events, substitutions)
    site = site if site is not None else origin(model.dim)
    values = [
        evaluator.value(xi, site, time)
        for xi in consensus_configs(len(model.states), k, seed)
    ]
    if len(set(values)) != 1:
        raise CouplingViolation(
            f'initial configurations disagree at {site}@{time}: '
            f'{[model.label(v) for v in values]}',
            values,
        )
    return values[0]


def _least_time(events: Sequence[Event]) -> Event:
    if not events:
        raise ModelShapeMismatch('readout of an empty event set')
    return min(events)


def readout_voter(model: Model, events: Sequence[Event]) -> int:
    """The value written by the least-time event, which must be a noise
    event."""
    rule = model.rules[_least_time(events).rule]
    if not rule.is_unconditional:
        raise ModelShapeMismatch('voter trace does not end on a noise event')
    assert rule.constant is not None
    return rule.constant


def readout_polling(model: Model, events: Sequence[Event]) -> int:
    if model.states.labels != ('+', '-'):
        raise ModelShapeMismatch('polling needs the states (+, -)')
    return readout_voter(model, events)


def readout(
    model: Model,
    theta: ThetaMap,
    events: Sequence[Event],
    substitutions: Optional[Mapping[Event, int]] = None,
    mode: str = 'consensus',
    k: int = DEFAULT_CONSENSUS_K,
    seed: int = 0,
    site: Optional[Site] = None,
    time: float = 0.0,
) -> int:
    """Value at the origin of a terminated explored set.

    `exact` mode uses θ's own readout on the substituted events and falls
    back to the consensus replay when θ has none.
    """
    if mode == 'exact':
        replaced = substitute_events(model, events, substitutions or {})
        value = theta.readout(model, replaced)
        if value is not None:
            return value
    return readout_consensus(
        model, events, substitutions, k=k, seed=seed, site=site, time=time,
    )
