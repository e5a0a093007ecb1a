"""Exploration with locking of perturbative ambiguities.

The exploration of the unperturbed dynamics is run on the full realization.
Whenever the next event is perturbative, the process splits into one branch
per value v in the image of its rule, each branch continuing with the event
replaced by the noise event ι_v at the same place and time. The resulting
tree yields the time T, the set H of branching events and the width bound L.
"""
import logging
from dataclasses import dataclass
from dataclasses import field as dc_field
from typing import Dict
from typing import Iterator
from typing import List
from typing import Mapping
from typing import Optional
from typing import Sequence
from typing import Set
from typing import Tuple
from typing import Union

from ips_cftp.event_field import Event
from ips_cftp.event_field import EventField
from ips_cftp.event_field import format_site
from ips_cftp.event_field import origin
from ips_cftp.event_field import shift
from ips_cftp.event_field import Site
from ips_cftp.exception import BudgetExceeded
from ips_cftp.exception import MissingEValue
from ips_cftp.exploration import check_containment
from ips_cftp.exploration import Frontier
from ips_cftp.exploration import readout
from ips_cftp.exploration import readout_consensus
from ips_cftp.exploration import relative
from ips_cftp.exploration import ThetaMap
from ips_cftp.models import Model
from ips_cftp.settings import Caps
from ips_cftp.settings import DEFAULT_CONSENSUS_K


log = logging.getLogger(__name__)


@dataclass(eq=False)
class LockNode:
    """A node of the locking tree.

    `event` is the event this node added to its parent's set, in replaced
    form (ι_v for a branch child); `raw_event` is the event of the field it
    came from. The root has neither. `next_event` is the field event queried
    from this node when its frontier is not empty.
    """
    parent: Optional['LockNode']
    event: Optional[Event]
    raw_event: Optional[Event]
    gamma: float
    depth: int
    frontier: Frontier = frozenset()
    label: Optional[int] = None
    next_event: Optional[Event] = None
    branching: bool = False
    children: List['LockNode'] = dc_field(default_factory=list)

    def path(self) -> List['LockNode']:
        """Nodes from the root down to this one."""
        nodes = []
        node: Optional[LockNode] = self
        while node is not None:
            nodes.append(node)
            node = node.parent
        return nodes[::-1]

    def newest_first(self, center: Site) -> Iterator[Event]:
        node: Optional[LockNode] = self
        while node is not None and node.event is not None:
            yield relative(node.event, center)
            node = node.parent

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class CftpAmbOutcome:
    origin_site: Site
    origin_time: float
    root: LockNode
    T: float
    H: Tuple[Event, ...]
    R: int
    L: int
    node_count: int

    @property
    def depth(self) -> int:
        return self.R

    @property
    def event_count(self) -> int:
        return self.node_count - 1

    def leaves(self) -> Iterator[LockNode]:
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                yield node
            stack.extend(reversed(node.children))


def explore_with_locking(
    model: Model,
    theta: ThetaMap,
    field: EventField,
    origin_point: Optional[Tuple[Site, float]] = None,
    caps: Caps = Caps(),
) -> CftpAmbOutcome:
    """Builds the locking tree depth first, children in state order.

    :param origin_point: (site, time) of the exploration, defaults to the
        space-time origin
    :raises BudgetExceeded: when the tree exceeds `caps.max_nodes` nodes or
        `caps.max_depth` depth; `partial` holds the root of the partial tree
    :raises PositiveRatesMissing: if some state has no noise rule
    """
    iota = model.require_iota()
    theta.check_model(model)
    site0, time0 = origin_point or (origin(model.dim), 0.0)
    root = LockNode(None, None, None, time0, 0, theta.initial(model.dim))
    check_containment(model, theta, root.frontier, 0)
    node_count = 1
    t_min = time0
    max_depth = 0
    branching: Set[Event] = set()
    stack = [root]
    while stack:
        node = stack.pop()
        max_depth = max(max_depth, node.depth)
        if not node.frontier:
            continue
        if node.depth >= caps.max_depth:
            raise BudgetExceeded(
                f'locking tree from {site0}@{time0} deeper than '
                f'{caps.max_depth}',
                partial=root,
            )
        bound: Union[float, Event] = node.gamma
        if node.raw_event is not None:
            bound = node.raw_event
        ev = field.latest_event_before(
            [shift(site0, b) for b in node.frontier], bound,
        )
        if ev is None:
            raise BudgetExceeded(
                f'event field exhausted below {node.gamma}', partial=root,
            )
        node.next_event = ev
        t_min = min(t_min, ev.time)
        added: List[Tuple[Event, Optional[int]]]
        if model.is_perturbative(ev.rule):
            node.branching = True
            branching.add(ev)
            added = [
                (ev._replace(rule=iota[v]), v)
                for v in sorted(model.rules[ev.rule].image)
            ]
        else:
            added = [(ev, None)]
        for event, label in added:
            child = LockNode(
                node, event, ev, ev.time, node.depth + 1, label=label,
            )
            child.frontier = theta.update(
                model,
                node.frontier,
                child.newest_first(site0),
                child.depth,
            )
            check_containment(model, theta, child.frontier, child.depth)
            node.children.append(child)
        node_count += len(added)
        if node_count > caps.max_nodes:
            raise BudgetExceeded(
                f'locking tree from {site0}@{time0} has more than '
                f'{caps.max_nodes} nodes',
                partial=root,
            )
        stack.extend(reversed(node.children))
    outcome = CftpAmbOutcome(
        origin_site=site0,
        origin_time=time0,
        root=root,
        T=t_min,
        H=tuple(sorted(branching)),
        R=max_depth,
        L=theta.beta(model, max_depth),
        node_count=node_count,
    )
    log.debug(
        'locking tree at %s@%s: %d nodes, depth %d, |H|=%d, T=%s',
        site0, time0, node_count, max_depth, len(outcome.H), outcome.T,
    )
    return outcome


def leaf_for(
    outcome: CftpAmbOutcome,
    evalues: Mapping[Event, int],
) -> Tuple[LockNode, Dict[Event, int]]:
    """Walks from the root to the leaf selected by `evalues`.

    :returns: the leaf and the substitutions met on the way
    :raises MissingEValue: if a branching event on the path has no value or
        a value outside the image of its rule
    """
    substitutions: Dict[Event, int] = {}
    node = outcome.root
    while node.children:
        if node.branching:
            assert node.next_event is not None
            alpha = node.next_event
            if alpha not in evalues:
                raise MissingEValue(f'no value for branching event {alpha}')
            value = evalues[alpha]
            chosen = [c for c in node.children if c.label == value]
            if not chosen:
                raise MissingEValue(
                    f'value {value} of {alpha} is outside the image of its '
                    'rule',
                )
            substitutions[alpha] = value
            node = chosen[0]
        else:
            node = node.children[0]
    return node, substitutions


def path_events(leaf: LockNode) -> List[Event]:
    """Field events on the path to `leaf`, as stored in the realization."""
    return [n.raw_event for n in leaf.path() if n.raw_event is not None]


def resolve_readout(
    model: Model,
    outcome: CftpAmbOutcome,
    evalues: Mapping[Event, int],
    theta: Optional[ThetaMap] = None,
    mode: str = 'consensus',
    k: int = DEFAULT_CONSENSUS_K,
    seed: int = 0,
) -> int:
    """Coupled value at the origin of `outcome` given the values of its
    ambiguities.

    Every branching event on the selected path is substituted by its value;
    the readout runs on the raw events of the leaf's set.
    """
    leaf, substitutions = leaf_for(outcome, evalues)
    events = path_events(leaf)
    if mode == 'exact' and theta is not None:
        return readout(
            model, theta, events, substitutions, mode='exact', k=k,
            seed=seed, site=outcome.origin_site, time=outcome.origin_time,
        )
    return readout_consensus(
        model, events, substitutions, k=k, seed=seed,
        site=outcome.origin_site, time=outcome.origin_time,
    )


def _describe(model: Model, ev: Event) -> str:
    name = model.rules[ev.rule].name or str(ev.rule)
    return f'{format_site(ev.site)} {name} t={ev.time!r}'


def dump_tree(model: Model, outcome: CftpAmbOutcome) -> Iterator[str]:
    """Indented text rendering, one line per node; runs of unbranched nodes
    stay at the same indentation."""
    yield (
        f'root {format_site(outcome.origin_site)} '
        f't={outcome.origin_time!r} T={outcome.T!r} |H|={len(outcome.H)} '
        f'R={outcome.R} L={outcome.L}'
    )
    stack: List[Tuple[LockNode, int]] = [
        (c, 1) for c in reversed(outcome.root.children)
    ]
    while stack:
        node, level = stack.pop()
        assert node.event is not None
        label = '' if node.label is None else f'[{model.label(node.label)}] '
        marker = ' *' if node.branching else ''
        done = '' if node.frontier else ' (leaf)'
        yield (
            f'{"  " * level}{label}{_describe(model, node.event)} '
            f'γ={node.gamma!r}{marker}{done}'
        )
        child_level = level + 1 if node.branching else level
        stack.extend((c, child_level) for c in reversed(node.children))


def h_mass(model: Model, events: Sequence[Event]) -> int:
    """Σ_{α in H} |A_α|"""
    return sum(len(model.rules[ev.rule].offsets) for ev in events)
