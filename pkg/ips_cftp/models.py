"""Rule-based particle system models.

A model is a finite state space, a dimension d and a list of rules
(f, A, r): at rate r per site x, the state at x is rewritten as f of the
states on x + A. Rules are either unperturbed or perturbative.
"""
import itertools
import math
import string
from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace
from typing import Callable
from typing import Dict
from typing import FrozenSet
from typing import Iterable
from typing import List
from typing import Mapping
from typing import Optional
from typing import Sequence
from typing import Tuple
from typing import Union

from ips_cftp.event_field import Event
from ips_cftp.event_field import mix_seed
from ips_cftp.event_field import origin
from ips_cftp.event_field import shift
from ips_cftp.event_field import Site
from ips_cftp.exception import PositiveRatesMissing
from ips_cftp.exception import UnsortedEvents
from ips_cftp.exception import ValidationError
from ips_cftp.exception import ZeroTotalRate


UNPERTURBED = 'unperturbed'
PERTURBATIVE = 'perturbative'


@dataclass(frozen=True)
class StateSpace:
    labels: Tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.labels:
            raise ValidationError('state space is empty', field='states')
        if len(set(self.labels)) != len(self.labels):
            raise ValidationError('state labels repeat', field='states')

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ValidationError(f'unknown state {label!r}', field='states')


@dataclass(frozen=True)
class Rule:
    """A transition rule (f, A, r).

    `table` lists f on every input tuple, the tuple (w_y)_{y in offsets} being
    read as a base-|S| number with the first offset as the most significant
    digit. With no offsets the table holds the single constant value.
    """
    offsets: Tuple[Site, ...]
    table: Tuple[int, ...]
    rate: float
    kind: str = UNPERTURBED
    name: str = ''
    n_states: int = 0

    def __post_init__(self) -> None:
        where = f'rules[{self.name}]' if self.name else 'rules'
        if not (math.isfinite(self.rate) and self.rate >= 0):
            raise ValidationError(
                f'rate must be finite and non-negative, got {self.rate}',
                field=f'{where}.rate',
            )
        if self.kind not in (UNPERTURBED, PERTURBATIVE):
            raise ValidationError(
                f'unknown kind {self.kind!r}', field=f'{where}.kind',
            )
        if len(set(self.offsets)) != len(self.offsets):
            raise ValidationError('offsets repeat', field=f'{where}.offsets')
        if len(self.table) != self.n_states ** len(self.offsets):
            raise ValidationError(
                f'table has {len(self.table)} entries, expected '
                f'{self.n_states ** len(self.offsets)}',
                field=f'{where}.table',
            )
        if any(not 0 <= v < self.n_states for v in self.table):
            raise ValidationError(
                'table output out of range', field=f'{where}.table',
            )

    @property
    def is_unconditional(self) -> bool:
        return not self.offsets

    @property
    def constant(self) -> Optional[int]:
        return self.table[0] if not self.offsets else None

    @property
    def image(self) -> FrozenSet[int]:
        return frozenset(self.table)

    def apply(self, inputs: Sequence[int]) -> int:
        index = 0
        for value in inputs:
            index = index * self.n_states + value
        return self.table[index]


def make_rule(
    n_states: int,
    offsets: Sequence[Site],
    fn: Callable[[Tuple[int, ...]], int],
    rate: float,
    kind: str = UNPERTURBED,
    name: str = '',
) -> Rule:
    """Tabulates `fn` over every input tuple."""
    offsets = tuple(tuple(o) for o in offsets)
    table = tuple(
        fn(inputs)
        for inputs in itertools.product(range(n_states), repeat=len(offsets))
    )
    return Rule(offsets, table, float(rate), kind, name, n_states)


def unconditional_rule(
    n_states: int,
    value: int,
    rate: float,
    kind: str = UNPERTURBED,
    name: str = '',
) -> Rule:
    return Rule((), (value,), float(rate), kind, name, n_states)


@dataclass(frozen=True)
class Model:
    dim: int
    states: StateSpace
    rules: Tuple[Rule, ...]
    rates: Tuple[float, ...] = field(init=False)
    total_rate: float = field(init=False)
    unperturbed_rate: float = field(init=False)
    unperturbed_indices: Tuple[int, ...] = field(init=False)
    perturbative_indices: Tuple[int, ...] = field(init=False)
    iota: Optional[Tuple[int, ...]] = field(init=False)

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValidationError('dimension must be at least 1', field='dim')
        for k, rule in enumerate(self.rules):
            if rule.n_states != len(self.states):
                raise ValidationError(
                    'rule built for another state space', field=f'rules[{k}]',
                )
            if any(len(o) != self.dim for o in rule.offsets):
                raise ValidationError(
                    f'offsets must have dimension {self.dim}',
                    field=f'rules[{k}].offsets',
                )
        rates = tuple(r.rate for r in self.rules)
        unperturbed = tuple(
            k for k, r in enumerate(self.rules) if r.kind == UNPERTURBED
        )
        set_ = object.__setattr__
        set_(self, 'rates', rates)
        set_(self, 'total_rate', math.fsum(rates))
        set_(self, 'unperturbed_rate', math.fsum(rates[k] for k in unperturbed))
        set_(self, 'unperturbed_indices', unperturbed)
        set_(self, 'perturbative_indices', tuple(
            k for k, r in enumerate(self.rules) if r.kind == PERTURBATIVE
        ))
        set_(self, 'iota', self._find_iota(unperturbed))

    def _find_iota(self, unperturbed: Sequence[int]) -> Optional[Tuple[int, ...]]:
        iota: Dict[int, int] = {}
        for k in unperturbed:
            rule = self.rules[k]
            if rule.is_unconditional and rule.rate > 0:
                iota.setdefault(rule.table[0], k)
        if len(iota) < len(self.states):
            return None
        return tuple(iota[v] for v in range(len(self.states)))

    @property
    def has_positive_rates(self) -> bool:
        return self.iota is not None

    def require_iota(self) -> Tuple[int, ...]:
        if self.iota is None:
            raise PositiveRatesMissing(
                'some state has no unperturbed unconditional rule with '
                'positive rate',
            )
        return self.iota

    def is_perturbative(self, rule: int) -> bool:
        return self.rules[rule].kind == PERTURBATIVE

    def label(self, value: int) -> str:
        return self.states.labels[value]

    def unperturbed(self) -> 'Model':
        """The restriction to the unperturbed rules, re-indexed."""
        return Model(
            self.dim,
            self.states,
            tuple(self.rules[k] for k in self.unperturbed_indices),
        )

    def merged(self) -> 'Model':
        """Merges rules that only differ by their rate."""
        merged: Dict[Tuple, Rule] = {}
        for rule in self.rules:
            key = (rule.offsets, rule.table, rule.kind)
            if key in merged:
                kept = merged[key]
                merged[key] = replace(kept, rate=kept.rate + rule.rate)
            else:
                merged[key] = rule
        return Model(self.dim, self.states, tuple(merged.values()))


class PatchConfig:
    """A configuration of S^{Z^d}: a sparse patch over a default.

    The default is either a constant state or, when `seed` is given, an i.i.d.
    uniform field keyed by (seed, site).
    """

    def __init__(
        self,
        n_states: int,
        constant: int = 0,
        seed: Optional[int] = None,
        patch: Optional[Mapping[Site, int]] = None,
    ) -> None:
        self.n_states = n_states
        self.constant = constant
        self.seed = seed
        self.patch: Dict[Site, int] = dict(patch or {})
        self._defaults: Dict[Site, int] = {}

    def default(self, site: Site) -> int:
        if self.seed is None:
            return self.constant
        value = self._defaults.get(site)
        if value is None:
            value = self._defaults[site] = (
                mix_seed(self.seed, *site) % self.n_states
            )
        return value

    def __getitem__(self, site: Site) -> int:
        value = self.patch.get(site)
        return self.default(site) if value is None else value

    def __setitem__(self, site: Site, value: int) -> None:
        self.patch[site] = value

    def copy(self) -> 'PatchConfig':
        clone = PatchConfig(self.n_states, self.constant, self.seed, self.patch)
        clone._defaults = self._defaults
        return clone

    def snapshot(self, sites: Iterable[Site]) -> Tuple[int, ...]:
        return tuple(self[s] for s in sites)

    def __repr__(self) -> str:
        default = f'seed={self.seed}' if self.seed is not None else (
            f'constant={self.constant}'
        )
        return f'PatchConfig({default}, patch={self.patch!r})'


def neighborhood_states(
    rule: Rule,
    cfg: PatchConfig,
    site: Site,
) -> Tuple[int, ...]:
    return tuple(cfg[shift(site, y)] for y in rule.offsets)


def apply_rule(model: Model, cfg: PatchConfig, ev: Event) -> PatchConfig:
    """Applies the rule of `ev` at its site, in place.

    :returns: `cfg`, changed at most at `ev.site`
    """
    rule = model.rules[ev.rule]
    cfg[ev.site] = rule.apply(neighborhood_states(rule, cfg, ev.site))
    return cfg


def flow_replay(
    model: Model,
    events: Sequence[Event],
    xi: PatchConfig,
    substitutions: Optional[Mapping[Event, int]] = None,
) -> PatchConfig:
    """Runs the flow over `events` (increasing time) starting from `xi`.

    A substituted event writes its given state instead of evaluating its
    rule. `xi` is left untouched.
    """
    substitutions = substitutions or {}
    cfg = xi.copy()
    previous: Optional[Event] = None
    for ev in events:
        if previous is not None and not previous < ev:
            raise UnsortedEvents(f'{ev} does not follow {previous}')
        previous = ev
        if ev in substitutions:
            cfg[ev.site] = substitutions[ev]
        else:
            apply_rule(model, cfg, ev)
    return cfg


def substitute_events(
    model: Model,
    events: Iterable[Event],
    substitutions: Mapping[Event, int],
) -> List[Event]:
    """Replaces the rule of every substituted event by ι_v."""
    if not substitutions:
        return list(events)
    iota = model.require_iota()
    return [
        ev._replace(rule=iota[substitutions[ev]]) if ev in substitutions else ev
        for ev in events
    ]


def epsilon(model: Model) -> float:
    """sup_v (Σ_{j perturbative, v in image f_j} r_j) / r_{ι_v}"""
    iota = model.require_iota()
    worst = 0.0
    for v, i in enumerate(iota):
        mass = math.fsum(
            model.rates[j] for j in model.perturbative_indices
            if v in model.rules[j].image
        )
        worst = max(worst, mass / model.rates[i])
    return worst


def kappa(model: Model) -> float:
    """(Σ_{i perturbative} |A_i| r_i) / 𝔯"""
    if model.total_rate <= 0:
        raise ZeroTotalRate('kappa needs a positive total rate')
    return math.fsum(
        len(model.rules[i].offsets) * model.rates[i]
        for i in model.perturbative_indices
    ) / model.total_rate


def _labels(n: int, labels: Optional[Sequence[str]]) -> StateSpace:
    if labels is None:
        labels = string.ascii_uppercase[:n]
    if len(labels) != n:
        raise ValidationError(
            f'expected {n} state labels, got {len(labels)}', field='states',
        )
    return StateSpace(tuple(labels))


def independent_sites(
    rates: Sequence[float],
    labels: Optional[Sequence[str]] = None,
    dim: int = 1,
) -> Model:
    """Non-interacting sites: one unconditional rule per state."""
    states = _labels(len(rates), labels)
    n = len(states)
    rules = tuple(
        unconditional_rule(n, v, r, name=f'uncond:{states.labels[v]}')
        for v, r in enumerate(rates)
    )
    return Model(dim, states, rules)


OffsetLike = Union[int, Sequence[int]]


def _as_site(offset: OffsetLike, dim: Optional[int] = None) -> Site:
    site = (offset,) if isinstance(offset, int) else tuple(offset)
    if dim is not None and len(site) != dim:
        raise ValidationError(
            f'offset {offset!r} does not have dimension {dim}', field='offsets',
        )
    return site


def nearest_neighbor_kernel(
    dim: int = 1,
    total: float = 1.0,
) -> Dict[Site, float]:
    kernel: Dict[Site, float] = {}
    for q in range(dim):
        for sign in (-1, 1):
            site = [0] * dim
            site[q] = sign
            kernel[tuple(site)] = total / (2 * dim)
    return kernel


def noisy_voter(
    kernel: Optional[Mapping[OffsetLike, float]] = None,
    noise: Sequence[float] = (0.5, 0.5),
    labels: Optional[Sequence[str]] = ('+', '-'),
    dim: Optional[int] = None,
) -> Model:
    """Linear voter model with one unconditional noise rule per state.

    :param kernel: copy probabilities p(x) on a finite support avoiding the
        origin; defaults to nearest neighbors with total rate 1
    :param noise: rate of the unconditional rule of each state
    """
    if kernel is None:
        kernel = nearest_neighbor_kernel(dim or 1)
    support = {_as_site(x): float(p) for x, p in kernel.items()}
    dims = {len(x) for x in support}
    if len(dims) != 1:
        raise ValidationError(
            'kernel offsets have mixed dimensions', field='kernel',
        )
    d = dims.pop()
    if dim is not None and d != dim:
        raise ValidationError(f'kernel is {d}-dimensional', field='kernel')
    if origin(d) in support:
        raise ValidationError('kernel must avoid the origin', field='kernel')
    states = _labels(len(noise), labels)
    n = len(states)
    rules: List[Rule] = [
        make_rule(
            n, (origin(d), x), lambda w: w[1], p,
            name=f'copy:{",".join(map(str, x))}',
        )
        for x, p in sorted(support.items())
    ]
    rules.extend(
        unconditional_rule(n, v, r, name=f'uncond:{states.labels[v]}')
        for v, r in enumerate(noise)
    )
    return Model(d, states, tuple(rules))


PLUS = 0
MINUS = 1


def asymmetric_polling(
    poll_sets: Sequence[Sequence[OffsetLike]],
    rates: Sequence[float],
    noise: Sequence[float] = (0.5, 0.5),
) -> Model:
    """Voter model with asymmetric polling on {+, -}.

    A polling rule writes + if any polled site is +, and - on a unanimous -
    poll. `noise` gives the rates of the unconditional + and - rules.
    """
    if len(poll_sets) != len(rates):
        raise ValidationError('one rate per poll set', field='rates')
    if len(noise) != 2:
        raise ValidationError('noise needs the + and - rates', field='noise')
    states = StateSpace(('+', '-'))
    polls = [tuple(_as_site(y) for y in A) for A in poll_sets]
    dims = {len(y) for A in polls for y in A}
    if not polls or any(not A for A in polls) or len(dims) != 1:
        raise ValidationError(
            'poll sets must be non-empty and of one dimension', field='poll_sets',
        )
    rules: List[Rule] = [
        make_rule(
            2, A, lambda w: PLUS if PLUS in w else MINUS, r,
            name=f'poll:{k}',
        )
        for k, (A, r) in enumerate(zip(polls, rates))
    ]
    rules.append(unconditional_rule(2, PLUS, noise[0], name='uncond:+'))
    rules.append(unconditional_rule(2, MINUS, noise[1], name='uncond:-'))
    return Model(dims.pop(), states, tuple(rules))


NUCLEOTIDES = ('A', 'C', 'G', 'T')
PYRIMIDINES = frozenset('CT')
PURINES = frozenset('AG')


def rn_ypr(
    unconditional: float = 1.0,
    transversion: float = 0.5,
    transition: float = 1.0,
    left: float = 0.2,
    right: float = 0.2,
    cpg_factor: float = 1.0,
    overrides: Optional[Mapping[str, float]] = None,
) -> Model:
    """RN+YpR nucleotide substitution model on Z.

    Rule names: `uncond:v`, `transversion:v`, `transition:v`,
    `left:uv>v'` (u in Y, v and v' in R, reading (w_{-1}, w_0)) and
    `right:uv>u'` (u and u' in Y, v in R, reading (w_0, w_1)). The CpG rules
    `left:CG>A` and `right:CG>T` get their family rate times `cpg_factor`.
    `overrides` maps rule names to rates.
    """
    states = StateSpace(NUCLEOTIDES)
    idx = {s: k for k, s in enumerate(NUCLEOTIDES)}
    overrides = dict(overrides or {})

    def kind_of(s: str) -> FrozenSet[str]:
        return PYRIMIDINES if s in PYRIMIDINES else PURINES

    def rate(name: str, base: float) -> float:
        return float(overrides.pop(name, base))

    rules: List[Rule] = []
    for v in NUCLEOTIDES:
        rules.append(unconditional_rule(
            4, idx[v], rate(f'uncond:{v}', unconditional), name=f'uncond:{v}',
        ))
    for v in NUCLEOTIDES:
        rules.append(make_rule(
            4, [(0,)],
            lambda w, v=v: (
                idx[v] if NUCLEOTIDES[w[0]] not in kind_of(v) else w[0]
            ),
            rate(f'transversion:{v}', transversion),
            name=f'transversion:{v}',
        ))
    for v in NUCLEOTIDES:
        rules.append(make_rule(
            4, [(0,)],
            lambda w, v=v: idx[v] if NUCLEOTIDES[w[0]] in kind_of(v) else w[0],
            rate(f'transition:{v}', transition),
            name=f'transition:{v}',
        ))
    for u in sorted(PYRIMIDINES):
        for v in sorted(PURINES):
            for v2 in sorted(PURINES):
                name = f'left:{u}{v}>{v2}'
                cpg = (u, v, v2) == ('C', 'G', 'A')
                base = left * (cpg_factor if cpg else 1.0)
                rules.append(make_rule(
                    4, [(-1,), (0,)],
                    lambda w, u=u, v=v, v2=v2: (
                        idx[v2] if (w[0], w[1]) == (idx[u], idx[v]) else w[1]
                    ),
                    rate(name, base),
                    name=name,
                ))
    for u in sorted(PYRIMIDINES):
        for v in sorted(PURINES):
            for u2 in sorted(PYRIMIDINES):
                name = f'right:{u}{v}>{u2}'
                cpg = (u, v, u2) == ('C', 'G', 'T')
                base = right * (cpg_factor if cpg else 1.0)
                rules.append(make_rule(
                    4, [(0,), (1,)],
                    lambda w, u=u, v=v, u2=u2: (
                        idx[u2] if (w[0], w[1]) == (idx[u], idx[v]) else w[0]
                    ),
                    rate(name, base),
                    name=name,
                ))
    if overrides:
        raise ValidationError(
            f'unknown rules {sorted(overrides)}', field='overrides',
        )
    return Model(1, states, tuple(rules))


def with_perturbation(base: Model, extra: Iterable[Rule]) -> Model:
    """Appends `extra` to the rules of `base` as perturbative rules."""
    added = tuple(replace(rule, kind=PERTURBATIVE) for rule in extra)
    return Model(base.dim, base.states, base.rules + added)
