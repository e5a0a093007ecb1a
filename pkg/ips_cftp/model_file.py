"""Loading model descriptions from JSON or TOML files.

A file either lists its rules explicitly::

    dim = 1
    states = ["+", "-"]
    theta = "voter"

    [[rules]]
    offsets = [0, -1]
    table = ["* + -> +", "* - -> -"]
    rate = 0.5

or names one of the builtin builders in a `[builder]` table. Either form may
add a `perturbation` list of extra rules (always perturbative) and a
`[settings]` table of dotted `cftp.*` keys.

Table entries read `"<input> ... -> <output>"`, one input token per offset in
order. An input token is a state label or `*`; an output is a state label or
`$k`, the k-th input. The first matching entry wins, then `default`.
"""
import hashlib
import itertools
import json
import sys
from pathlib import Path
from typing import Any
from typing import Callable
from typing import Dict
from typing import List
from typing import Mapping
from typing import NamedTuple
from typing import Optional
from typing import Sequence
from typing import Tuple

from ips_cftp import models
from ips_cftp.event_field import Site
from ips_cftp.exception import ValidationError
from ips_cftp.models import Model
from ips_cftp.models import Rule
from ips_cftp.models import StateSpace
from ips_cftp.settings import flatten_settings

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


DEFAULT_THETA = {
    'independent_sites': 'finite_factor(b=0)',
    'noisy_voter': 'voter',
    'asymmetric_polling': 'polling',
    'rn_ypr': 'finite_factor(b=1)',
}


class ModelFile(NamedTuple):
    model: Model
    theta: str
    settings: Dict[str, Any]
    digest: str
    path: str


def _parse_offset(raw: Any, dim: int, where: str) -> Site:
    site = (raw,) if isinstance(raw, int) else tuple(raw)
    if len(site) != dim or not all(isinstance(c, int) for c in site):
        raise ValidationError(
            f'offset {raw!r} is not a {dim}-dimensional integer vector',
            field=where,
        )
    return site


def _parse_output(
    token: str,
    states: StateSpace,
    arity: int,
    where: str,
) -> Callable[[Tuple[int, ...]], int]:
    if token.startswith('$'):
        try:
            k = int(token[1:])
        except ValueError:
            raise ValidationError(f'bad input reference {token!r}', field=where)
        if not 0 <= k < arity:
            raise ValidationError(f'{token} out of range', field=where)
        return lambda inputs: inputs[k]
    value = states.index(token)
    return lambda inputs: value


def parse_table(
    entries: Sequence[str],
    default: Optional[str],
    states: StateSpace,
    arity: int,
    where: str = 'table',
) -> Tuple[int, ...]:
    """Expands table entries into the explicit output tuple of a rule."""
    parsed: List[Tuple[Tuple[Optional[int], ...], Callable]] = []
    for n, entry in enumerate(entries):
        lhs, sep, rhs = entry.partition('->')
        if not sep:
            raise ValidationError(
                f'missing "->" in {entry!r}', field=f'{where}[{n}]',
            )
        tokens = lhs.split()
        if len(tokens) != arity:
            raise ValidationError(
                f'{entry!r} has {len(tokens)} inputs, rule has {arity} offsets',
                field=f'{where}[{n}]',
            )
        pattern = tuple(None if t == '*' else states.index(t) for t in tokens)
        parsed.append((
            pattern,
            _parse_output(rhs.strip(), states, arity, f'{where}[{n}]'),
        ))
    fallback = None
    if default is not None:
        fallback = _parse_output(
            str(default).strip(), states, arity, f'{where}.default',
        )
    table = []
    for inputs in itertools.product(range(len(states)), repeat=arity):
        for pattern, output in parsed:
            if all(p is None or p == w for p, w in zip(pattern, inputs)):
                table.append(output(inputs))
                break
        else:
            if fallback is None:
                labels = ' '.join(states.labels[w] for w in inputs)
                raise ValidationError(
                    f'no entry covers inputs {labels!r}', field=where,
                )
            table.append(fallback(inputs))
    return tuple(table)


def parse_rule(
    raw: Mapping[str, Any],
    states: StateSpace,
    dim: int,
    where: str,
    kind: Optional[str] = None,
) -> Rule:
    offsets = tuple(
        _parse_offset(o, dim, f'{where}.offsets')
        for o in raw.get('offsets', [])
    )
    table = raw.get('table')
    if table is None:
        raise ValidationError('missing', field=f'{where}.table')
    if isinstance(table, str):
        table = [table]
    outputs = parse_table(
        table, raw.get('default'), states, len(offsets), f'{where}.table',
    )
    try:
        rate = float(raw['rate'])
    except (KeyError, TypeError, ValueError):
        raise ValidationError('missing or not a number', field=f'{where}.rate')
    return Rule(
        offsets,
        outputs,
        rate,
        kind or raw.get('kind', models.UNPERTURBED),
        str(raw.get('name', '')),
        len(states),
    )


def _kernel(raw: Any) -> Dict[Site, float]:
    if isinstance(raw, Mapping):
        items = [
            (json.loads(k) if isinstance(k, str) else k, v)
            for k, v in raw.items()
        ]
    else:
        items = [tuple(pair) for pair in raw]
    return {
        ((x,) if isinstance(x, int) else tuple(x)): float(p) for x, p in items
    }


def build_from_builder(raw: Mapping[str, Any]) -> Model:
    params = dict(raw)
    name = params.pop('name', None)
    try:
        if name == 'independent_sites':
            return models.independent_sites(**params)
        if name == 'noisy_voter':
            if 'kernel' in params:
                params['kernel'] = _kernel(params['kernel'])
            return models.noisy_voter(**params)
        if name == 'asymmetric_polling':
            return models.asymmetric_polling(**params)
        if name == 'rn_ypr':
            return models.rn_ypr(**params)
    except TypeError as e:
        raise ValidationError(str(e), field='builder')
    raise ValidationError(f'unknown builder {name!r}', field='builder.name')


def build_model(spec: Mapping[str, Any]) -> Tuple[Model, str]:
    """Builds and validates a model from a parsed description.

    :returns: the model and the name of its θ map
    """
    if 'builder' in spec:
        model = build_from_builder(spec['builder'])
        default_theta = DEFAULT_THETA.get(spec['builder'].get('name'), '')
        theta = spec.get('theta', default_theta)
    else:
        try:
            dim = int(spec['dim'])
            states = StateSpace(tuple(str(s) for s in spec['states']))
        except KeyError as e:
            raise ValidationError('missing', field=str(e.args[0]))
        rules = tuple(
            parse_rule(r, states, dim, f'rules[{k}]')
            for k, r in enumerate(spec.get('rules', []))
        )
        model = Model(dim, states, rules)
        theta = spec.get('theta', '')
    extra = [
        parse_rule(
            r, model.states, model.dim, f'perturbation[{k}]',
            kind=models.PERTURBATIVE,
        )
        for k, r in enumerate(spec.get('perturbation', []))
    ]
    if extra:
        model = models.with_perturbation(model, extra)
    if spec.get('merge_identical', False):
        model = model.merged()
    if not theta:
        raise ValidationError('no θ map selected', field='theta')
    return model, str(theta)


def load_model_file(path: str) -> ModelFile:
    raw = Path(path).read_bytes()
    try:
        if path.endswith('.json'):
            spec = json.loads(raw)
        else:
            spec = tomllib.loads(raw.decode('utf-8'))
    except (ValueError, UnicodeDecodeError) as e:
        raise ValidationError(f'cannot parse {path}: {e}')
    model, theta = build_model(spec)
    raw_settings = spec.get('settings', {})
    if not isinstance(raw_settings, Mapping):
        raise ValidationError('must be a table', field='settings')
    settings = flatten_settings(raw_settings)
    digest = hashlib.sha256(raw).hexdigest()
    return ModelFile(model, theta, settings, digest, path)
