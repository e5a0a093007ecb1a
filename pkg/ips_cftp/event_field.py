"""Lazy, memoized realization of the space-time Poisson process of events.

Every site of Z^d owns a column: the backward sequence of its events, each
carrying a rule index. Columns are generated on demand in chunks, from a gap
stream and a rule stream seeded by the global seed and the site coordinates
only, so a column depends neither on the order in which sites were visited
nor on the chunk size. All queries use
absolute coordinates; shifting to another space-time origin is left to the
caller.
"""
import bisect
import itertools
import logging
import math
from typing import Dict
from typing import Iterable
from typing import Iterator
from typing import List
from typing import Mapping
from typing import NamedTuple
from typing import Optional
from typing import Sequence
from typing import Tuple
from typing import TYPE_CHECKING
from typing import Union

import numpy as np
from scipy import stats

from ips_cftp.exception import InvalidQuery
from ips_cftp.settings import DEFAULT_CHUNK_SIZE

if TYPE_CHECKING:  # pragma: no cover
    from ips_cftp.models import Model


log = logging.getLogger(__name__)

Site = Tuple[int, ...]

MASK64 = (1 << 64) - 1

Streams = Tuple[np.random.Generator, np.random.Generator]


class Event(NamedTuple):
    """A point (site, rule, time) of the process.

    Fields are ordered so that tuple comparison sorts by time first, then
    site coordinates, then rule index: the total order used to break exact
    time collisions.
    """
    time: float
    site: Site
    rule: int


def _zigzag(value: int) -> int:
    return 2 * value if value >= 0 else -2 * value - 1


def seed_sequence(seed: int, *keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(
        entropy=seed & MASK64,
        spawn_key=tuple(_zigzag(k) for k in keys),
    )


def mix_seed(seed: int, *keys: int) -> int:
    """Stateless 64-bit mix of a seed with integer keys."""
    state = seed_sequence(seed, *keys).generate_state(1, dtype=np.uint64)
    return int(state[0])


def origin(dim: int) -> Site:
    return (0,) * dim


def shift(site: Site, offset: Site) -> Site:
    return tuple(a + b for a, b in zip(site, offset))


def box_sites(radius: int, dim: int, center: Optional[Site] = None) -> List[Site]:
    """All sites of {-radius, ..., radius}^d around `center`."""
    if radius < 0:
        return []
    span = range(-radius, radius + 1)
    sites = [tuple(p) for p in itertools.product(span, repeat=dim)]
    if center is not None:
        sites = [shift(center, s) for s in sites]
    return sites


def sup_norm(site: Site) -> int:
    return max((abs(c) for c in site), default=0)


class _Column:
    """Backward event list of one site.

    Times are stored negated so that the list is increasing and `bisect`
    applies directly.
    """
    __slots__ = ('site', 'streams', 'neg_times', 'rules', 'last')

    def __init__(
        self,
        site: Site,
        streams: Optional[Streams],
        start: float = 0.0,
        prefix: Sequence[Tuple[float, int]] = (),
    ) -> None:
        self.site = site
        self.streams = streams
        self.neg_times: List[float] = [-t for t, _ in prefix]
        self.rules: List[int] = [i for _, i in prefix]
        self.last = start

    @property
    def exhausted(self) -> bool:
        return self.streams is None

    def oldest(self) -> float:
        return -self.neg_times[-1] if self.neg_times else self.last

    def event(self, index: int) -> Event:
        return Event(-self.neg_times[index], self.site, self.rules[index])


class EventField:
    """One fixed realization of the process, indexed by a 64-bit seed.

    :param model: model providing the rule rates
    :param seed: seed of the realization
    :param chunk_size: events generated each time a column grows backward
    """

    def __init__(
        self,
        model: 'Model',
        seed: int,
        chunk_size: int = DEFAULT_CHUNK_SIZE,
    ) -> None:
        self.model = model
        self.seed = seed & MASK64
        self.dim = model.dim
        self.chunk_size = chunk_size
        self.total_rate = model.total_rate
        rates = np.asarray(model.rates, dtype=float)
        self._probs = rates / self.total_rate if self.total_rate > 0 else rates
        self._columns: Dict[Site, _Column] = {}
        self.generated = 0

    def _new_column(self, site: Site) -> _Column:
        if self.total_rate <= 0:
            return _Column(site, None)
        # gaps and rules come from separate streams, so a realization does
        # not depend on how many events each chunk draws
        gaps, rules = seed_sequence(self.seed, *site).spawn(2)
        streams = (np.random.default_rng(gaps), np.random.default_rng(rules))
        return _Column(site, streams)

    def column(self, site: Site) -> _Column:
        col = self._columns.get(site)
        if col is None:
            if len(site) != self.dim:
                raise InvalidQuery(
                    f'site {site} does not have dimension {self.dim}',
                )
            col = self._columns[site] = self._new_column(site)
        return col

    def _grow(self, col: _Column) -> None:
        assert col.streams is not None
        gap_rng, rule_rng = col.streams
        gaps = gap_rng.exponential(1.0 / self.total_rate, self.chunk_size)
        rules = rule_rng.choice(
            len(self._probs), size=self.chunk_size, p=self._probs,
        )
        previous = col.last
        neg_times = col.neg_times
        for gap in gaps.tolist():
            t = previous - gap
            # a zero gap would give two events the same time
            if t >= previous:
                t = math.nextafter(previous, -math.inf)
            neg_times.append(-t)
            previous = t
        col.rules.extend(rules.tolist())
        col.last = previous
        self.generated += self.chunk_size
        log.debug(
            'column %s grown to %d events (oldest %.6g)',
            col.site, len(neg_times), previous,
        )

    def _index_before(
        self,
        col: _Column,
        t: float,
        inclusive: bool = False,
    ) -> int:
        """Index of the most recent event of `col` strictly before `t`, or at
        `t` too when `inclusive`.

        Grows the column until it reaches below `t`. Returns len(column)
        when the column is exhausted without such an event.
        """
        while not col.exhausted and col.oldest() >= t:
            self._grow(col)
        if inclusive:
            return bisect.bisect_left(col.neg_times, -t)
        return bisect.bisect_right(col.neg_times, -t)

    def latest_event_before(
        self,
        sites: Iterable[Site],
        bound: Union[float, Event],
    ) -> Optional[Event]:
        """The latest event with site in `sites` that comes before `bound`.

        A time bound keeps the events strictly below it. An event bound keeps
        the events below it in the (time, site, rule) order, so another
        column's event at exactly the bound's time is still found.

        :returns: the event, or None when `sites` is empty or no column has
            an event before `bound`
        """
        t = bound.time if isinstance(bound, Event) else bound
        _check_time(t)
        best: Optional[Event] = None
        for site in sites:
            col = self.column(site)
            # one column never repeats a time
            tied = isinstance(bound, Event) and site < bound.site
            index = self._index_before(col, t, inclusive=tied)
            if index < len(col.neg_times):
                candidate = col.event(index)
                if best is None or candidate > best:
                    best = candidate
        return best

    def events_in_window(
        self,
        sites: Iterable[Site],
        t_lo: float,
        t_hi: float,
    ) -> List[Event]:
        """All events with site in `sites` and time in [t_lo, t_hi), sorted by
        increasing time."""
        _check_time(t_lo)
        _check_time(t_hi)
        if t_lo > t_hi:
            raise InvalidQuery(f'reversed interval [{t_lo}, {t_hi})')
        events: List[Event] = []
        if t_lo == t_hi:
            return events
        for site in sites:
            col = self.column(site)
            # times are >= t_lo below `stop` and < t_hi from `start` on
            stop = self._index_before(col, t_lo)
            start = bisect.bisect_right(col.neg_times, -t_hi)
            events.extend(col.event(k) for k in range(start, stop))
        events.sort()
        return events

    def column_events(self, site: Site, t_lo: float) -> List[Event]:
        """Events of one column with time in [t_lo, 0), most recent first."""
        return self.events_in_window([site], t_lo, 0.0)[::-1]


def _check_time(t: float) -> None:
    if not math.isfinite(t):
        raise InvalidQuery(f'time must be finite, got {t}')
    if t > 0:
        raise InvalidQuery(f'only the past is sampled, got time {t}')


class FixedEventField(EventField):
    """An event field made of explicitly given columns.

    Sites without a given column have no events; given columns end with their
    last listed event.

    :param columns: per site, (time, rule) pairs with negative times
    """

    def __init__(
        self,
        model: 'Model',
        columns: Mapping[Site, Sequence[Tuple[float, int]]],
    ) -> None:
        super().__init__(model, seed=0)
        self._given = {
            site: sorted(events, reverse=True)
            for site, events in columns.items()
        }
        for site, events in self._given.items():
            if any(t >= 0 for t, _ in events):
                raise InvalidQuery(f'column {site} has non-negative times')
            if len({t for t, _ in events}) != len(events):
                raise InvalidQuery(f'column {site} repeats a time')

    def _new_column(self, site: Site) -> _Column:
        return _Column(site, None, prefix=self._given.get(site, ()))


class SplicedEventField(EventField):
    """A realization that agrees with `base` except on chosen columns.

    Columns of sites farther than `radius` from `center` (sup norm) are drawn
    from `fresh_seed` instead. If `cut` is given, every column keeps the base
    events at times >= cut and continues below `cut` with a fresh stream.
    """

    def __init__(
        self,
        base: EventField,
        fresh_seed: int,
        radius: Optional[int] = None,
        center: Optional[Site] = None,
        cut: Optional[float] = None,
    ) -> None:
        super().__init__(base.model, fresh_seed, base.chunk_size)
        self.base = base
        self.radius = radius
        self.center = center if center is not None else origin(base.dim)
        self.cut = cut

    def _outside(self, site: Site) -> bool:
        if self.radius is None:
            return False
        return sup_norm(shift(site, tuple(-c for c in self.center))) > self.radius

    def _new_column(self, site: Site) -> _Column:
        if self._outside(site):
            return super()._new_column(site)
        if self.cut is None:
            return self.base.column(site)
        kept = [
            (ev.time, ev.rule)
            for ev in self.base.column_events(site, self.cut)
        ]
        fresh = super()._new_column(site)
        return _Column(site, fresh.streams, start=self.cut, prefix=kept)

    def _grow(self, col: _Column) -> None:
        if col is self.base._columns.get(col.site):
            self.base._grow(col)
        else:
            super()._grow(col)


class ColumnStats(NamedTuple):
    mean_count: float
    variance_count: float
    rule_frequencies: Tuple[float, ...]
    ks_pvalue: float
    n_gaps: int


def column_count_rate_check(
    field: EventField,
    site: Site,
    horizon: float,
    n_trials: int,
) -> ColumnStats:
    """Statistical self-test of the generator.

    Counts the events of `site` in [-horizon, 0) over `n_trials` realizations
    seeded from `field.seed`, and tests the first `chunk_size` backward gaps
    of each against the exponential law of rate 𝔯.
    """
    if horizon <= 0:
        raise InvalidQuery('horizon must be positive')
    counts = np.zeros(n_trials)
    rule_counts = np.zeros(len(field.model.rates))
    gaps: List[float] = []
    for k in range(n_trials):
        trial = EventField(
            field.model, mix_seed(field.seed, k), field.chunk_size,
        )
        events = trial.events_in_window([site], -horizon, 0.0)
        counts[k] = len(events)
        for ev in events:
            rule_counts[ev.rule] += 1
        # a fixed count of gaps per column, independent of the window
        col = trial.column(site)
        times = [0.0] + [-t for t in col.neg_times[:trial.chunk_size]]
        gaps.extend(a - b for a, b in zip(times, times[1:]))
    total = rule_counts.sum()
    frequencies = rule_counts / total if total else rule_counts
    if gaps and field.total_rate > 0:
        pvalue = float(
            stats.kstest(gaps, 'expon', args=(0, 1.0 / field.total_rate)).pvalue,
        )
    else:
        pvalue = float('nan')
    return ColumnStats(
        mean_count=float(counts.mean()) if n_trials else 0.0,
        variance_count=float(counts.var(ddof=1)) if n_trials > 1 else 0.0,
        rule_frequencies=tuple(float(f) for f in frequencies),
        ks_pvalue=pvalue,
        n_gaps=len(gaps),
    )


def format_site(site: Site) -> str:
    return ','.join(str(c) for c in site)


def dump_column(field: EventField, site: Site, t_lo: float) -> Iterator[str]:
    """CSV debug lines `site;rule_index;time` of one column, newest first."""
    for ev in field.column_events(site, t_lo):
        yield f'{format_site(ev.site)};{ev.rule};{ev.time!r}'
