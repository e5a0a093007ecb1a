from collections import namedtuple
from typing import Any
from typing import Dict
from typing import Mapping
from typing import NamedTuple

from ips_cftp.exception import ValidationError


DEFAULT_MAX_STEPS = 10 ** 5
DEFAULT_MAX_NODES = 10 ** 5
DEFAULT_MAX_DEPTH = 10 ** 4
DEFAULT_MAX_POINTS = 10 ** 4
DEFAULT_MAX_LAYERS = 10 ** 3
DEFAULT_MAX_STATES = 2 ** 20
DEFAULT_CHUNK_SIZE = 64
DEFAULT_CONSENSUS_K = 6
DEFAULT_READOUT = 'consensus'
DEFAULT_FAILURE_THRESHOLD = 0.001
DEFAULT_TRACING_PERCENT = 0.0


class Caps(NamedTuple):
    """Work budgets. Hitting a sampler cap fails the sample being built;
    `max_states` bounds the configurations of the torus oracle."""
    max_steps: int = DEFAULT_MAX_STEPS
    max_nodes: int = DEFAULT_MAX_NODES
    max_depth: int = DEFAULT_MAX_DEPTH
    max_points: int = DEFAULT_MAX_POINTS
    max_layers: int = DEFAULT_MAX_LAYERS
    max_states: int = DEFAULT_MAX_STATES

    def doubled(self) -> 'Caps':
        return Caps(*(2 * c for c in self))


_CAP_KEYS = {
    'steps': 'max_steps',
    'nodes': 'max_nodes',
    'depth': 'max_depth',
    'points': 'max_points',
    'layers': 'max_layers',
    'states': 'max_states',
}


def parse_caps(text: str, base: Caps = Caps()) -> Caps:
    """Parses a `nodes=...,depth=...,points=...` string over `base`.

    :param text: comma separated key=value pairs
    :param base: caps used for keys that are not mentioned
    :returns: the updated caps
    """
    values = base._asdict()
    for item in filter(None, (p.strip() for p in text.split(','))):
        key, sep, raw = item.partition('=')
        if not sep or key.strip() not in _CAP_KEYS:
            raise ValidationError(f'unknown cap {item!r}', field='caps')
        try:
            value = int(raw)
        except ValueError:
            raise ValidationError(f'not an integer: {raw!r}', field='caps')
        if value <= 0:
            raise ValidationError(f'{key} must be positive', field='caps')
        values[_CAP_KEYS[key.strip()]] = value
    return Caps(**values)


_CftpSettings = namedtuple('_CftpSettings', [
    'caps',
    'readout',
    'consensus_k',
    'chunk_size',
    'strict_failures',
    'failure_threshold',
    'tracing_percent',
    'transport_handler',
    'service_name',
])


def get_settings(settings: Mapping[str, Any]) -> _CftpSettings:
    """Extracts the sampler configuration from a flat dict of dotted keys.

    Here are the supported settings:

    cftp.max_steps, cftp.max_nodes, cftp.max_depth, cftp.max_points,
    cftp.max_layers, cftp.max_states: work budgets, see :class:`Caps`.
    cftp.readout: `consensus` (default) replays every explored event set from
        several initial configurations; `exact` uses the θ map's own readout
        when it has one.
    cftp.consensus_k: number of initial configurations of the consensus readout.
    cftp.chunk_size: number of events generated at once when a column of the
        event field grows backward.
    cftp.strict_failures: if true a batch aborts on the first budget failure
        instead of reporting it.
    cftp.failure_threshold: failure rate above which a batch is reported as
        failed (and censored diagnostics are marked biased).
    cftp.tracing_percent: percentage of seeds wrapped in a py_zipkin span.
    cftp.transport_handler: py_zipkin transport receiving the spans.
    service_name: service name of the spans.
    """
    caps = Caps(
        max_steps=int(settings.get('cftp.max_steps', DEFAULT_MAX_STEPS)),
        max_nodes=int(settings.get('cftp.max_nodes', DEFAULT_MAX_NODES)),
        max_depth=int(settings.get('cftp.max_depth', DEFAULT_MAX_DEPTH)),
        max_points=int(settings.get('cftp.max_points', DEFAULT_MAX_POINTS)),
        max_layers=int(settings.get('cftp.max_layers', DEFAULT_MAX_LAYERS)),
        max_states=int(settings.get('cftp.max_states', DEFAULT_MAX_STATES)),
    )
    if min(caps) <= 0:
        raise ValidationError('caps must be positive', field='cftp')

    readout = settings.get('cftp.readout', DEFAULT_READOUT)
    if readout not in ('consensus', 'exact'):
        raise ValidationError(
            f'unknown readout {readout!r}', field='cftp.readout',
        )
    consensus_k = int(settings.get('cftp.consensus_k', DEFAULT_CONSENSUS_K))
    if consensus_k < 2:
        raise ValidationError('needs at least 2', field='cftp.consensus_k')
    chunk_size = int(settings.get('cftp.chunk_size', DEFAULT_CHUNK_SIZE))
    if chunk_size < 1:
        raise ValidationError('must be positive', field='cftp.chunk_size')

    tracing_percent = float(
        settings.get('cftp.tracing_percent', DEFAULT_TRACING_PERCENT),
    )
    if not 0.0 <= tracing_percent <= 100.0:
        raise ValidationError(
            'must be within [0, 100]', field='cftp.tracing_percent',
        )

    return _CftpSettings(
        caps,
        readout,
        consensus_k,
        chunk_size,
        bool(settings.get('cftp.strict_failures', False)),
        float(settings.get(
            'cftp.failure_threshold', DEFAULT_FAILURE_THRESHOLD,
        )),
        tracing_percent,
        settings.get('cftp.transport_handler'),
        service_name=settings.get('service_name', 'ips_cftp'),
    )


def merge_settings(*layers: Mapping[str, Any]) -> Dict[str, Any]:
    """Later layers win; `None` values do not override."""
    merged: Dict[str, Any] = {}
    for layer in layers:
        merged.update({k: v for k, v in layer.items() if v is not None})
    return merged


CFTP_KEYS = frozenset(
    [f'cftp.{name}' for name in Caps._fields] + [
        'cftp.readout',
        'cftp.consensus_k',
        'cftp.chunk_size',
        'cftp.strict_failures',
        'cftp.failure_threshold',
        'cftp.tracing_percent',
        'cftp.transport_handler',
        'cftp.stream_name',
    ],
)


def flatten_settings(
    raw: Mapping[str, Any],
    prefix: str = '',
) -> Dict[str, Any]:
    """Turns nested tables into dotted keys and rejects unknown `cftp.*` keys.

    A TOML `[settings]` table holding `cftp.max_nodes = 7` parses as
    `{'cftp': {'max_nodes': 7}}`; this returns `{'cftp.max_nodes': 7}`.
    """
    flat: Dict[str, Any] = {}
    for key, value in raw.items():
        dotted = f'{prefix}{key}'
        if isinstance(value, Mapping):
            flat.update(flatten_settings(value, f'{dotted}.'))
            continue
        if dotted.startswith('cftp.') and dotted not in CFTP_KEYS:
            raise ValidationError(f'unknown setting {dotted!r}', 'settings')
        flat[dotted] = value
    return flat
