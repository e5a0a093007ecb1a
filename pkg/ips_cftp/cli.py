"""Command line interface: `ips-cftp validate|sample|diagnose|oracle|selftest`.

Exit codes: 0 success, 1 invalid input, 2 failure rate above the threshold,
3 internal error.
"""
import argparse
import csv
import io
import json
import logging
import sys
from typing import Any
from typing import Dict
from typing import IO
from typing import List
from typing import NoReturn
from typing import Optional
from typing import Sequence
from typing import Tuple

from ips_cftp import diagnostics
from ips_cftp import oracle
from ips_cftp.assembler import BatchResult
from ips_cftp.assembler import build_amb_closure
from ips_cftp.assembler import sample_batch
from ips_cftp.assembler import SampleResult
from ips_cftp.event_field import column_count_rate_check
from ips_cftp.event_field import dump_column
from ips_cftp.event_field import EventField
from ips_cftp.event_field import mix_seed
from ips_cftp.event_field import origin
from ips_cftp.event_field import Site
from ips_cftp.exception import BudgetExceeded
from ips_cftp.exception import CapExceeded
from ips_cftp.exception import CftpError
from ips_cftp.exception import InvalidQuery
from ips_cftp.exception import ModelShapeMismatch
from ips_cftp.exception import PositiveRatesMissing
from ips_cftp.exception import ValidationError
from ips_cftp.exception import ZeroTotalRate
from ips_cftp.exploration import parse_theta
from ips_cftp.exploration import readout_consensus
from ips_cftp.exploration import run_exploration
from ips_cftp.exploration import ThetaMap
from ips_cftp.locking import dump_tree
from ips_cftp.locking import explore_with_locking
from ips_cftp.manifest import RunManifest
from ips_cftp.manifest import write_manifest
from ips_cftp.model_file import load_model_file
from ips_cftp.model_file import ModelFile
from ips_cftp.models import epsilon
from ips_cftp.models import independent_sites
from ips_cftp.models import kappa
from ips_cftp.models import Model
from ips_cftp.settings import get_settings
from ips_cftp.settings import merge_settings
from ips_cftp.settings import parse_caps
from ips_cftp.tracing import FileTransport
from ips_cftp.version import __version__


log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILURES = 2
EXIT_INTERNAL = 3

INVALID_INPUT = (
    ValidationError,
    InvalidQuery,
    PositiveRatesMissing,
    ModelShapeMismatch,
    CapExceeded,
    ZeroTotalRate,
)

CSV_COLUMNS = (
    'seed', 'value', 't_star', 'l_star', 'points', 'tree_nodes', 'failed',
)


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    """Reports usage errors with exit code 1 instead of 2."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        raise UsageError(f'{self.prog}: error: {message}')


def parse_site(text: str) -> Site:
    try:
        return tuple(int(c) for c in text.split(','))
    except ValueError:
        raise ValidationError(f'not a site: {text!r}', field='site')


def _add_model(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--model', required=True, help='model file (TOML/JSON)')
    parser.add_argument('--theta', help='override the θ map of the model file')


def _add_run(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--n', type=int, default=1000)
    parser.add_argument('--seed', type=int, default=0)
    parser.add_argument(
        '--caps', default='', help='e.g. nodes=100000,depth=10000,points=10000',
    )
    parser.add_argument('--threads', type=int, default=1)
    parser.add_argument('--out', help='output file, stdout when omitted')


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog='ips-cftp')
    parser.add_argument('--version', action='version', version=__version__)
    parser.add_argument('-v', '--verbose', action='count', default=0)
    sub = parser.add_subparsers(dest='command')
    sub.required = True

    validate = sub.add_parser('validate', help='check a model file')
    validate.add_argument('model')
    validate.add_argument('--theta')

    sample = sub.add_parser('sample', help='exact samples of a marginal')
    _add_model(sample)
    _add_run(sample)
    sample.add_argument('--site', default=None)
    sample.add_argument('--strict-failures', action='store_true', default=None)
    sample.add_argument('--readout', choices=('consensus', 'exact'))
    sample.add_argument('--consensus-k', type=int)
    sample.add_argument('--trace-file', help='append py_zipkin spans here')
    sample.add_argument('--tracing-percent', type=float)
    sample.add_argument(
        '--dump-tree', action='store_true',
        help='print the locking tree of the first seed on stderr',
    )
    sample.add_argument(
        '--dump-column', metavar='SITE',
        help='print the events of one column of the first seed on stderr',
    )

    diagnose = sub.add_parser('diagnose', help='estimate g, Λ and bounds')
    _add_model(diagnose)
    _add_run(diagnose)
    diagnose.add_argument('--lambda', dest='lam', type=float, default=-0.1)
    diagnose.add_argument(
        '--tail', choices=diagnostics.TAIL_QUANTITIES,
        help='add the survival curve of a quantity',
    )

    oracle_parser = sub.add_parser('oracle', help='reference distributions')
    kinds = oracle_parser.add_subparsers(dest='kind')
    kinds.required = True
    torus = kinds.add_parser('torus', help='exact solve on a periodic torus')
    torus.add_argument('--model', required=True)
    torus.add_argument('--n', type=int, default=4, help='torus side')
    torus.add_argument('--caps', default='', help='e.g. states=4096')
    torus.add_argument('--out')
    forward = kinds.add_parser('forward', help='forward simulation on a box')
    forward.add_argument('--model', required=True)
    forward.add_argument('--radius', type=int, default=20)
    forward.add_argument('--burnin', type=float, default=50.0)
    forward.add_argument('--n', type=int, default=1000)
    forward.add_argument('--seed', type=int, default=0)
    forward.add_argument('--out')

    selftest = sub.add_parser('selftest', help='fast consistency checks')
    selftest.add_argument('--model')
    selftest.add_argument('--theta')
    selftest.add_argument('--n', type=int, default=200)
    selftest.add_argument('--seed', type=int, default=0)
    return parser


def _load(args: argparse.Namespace) -> Tuple[ModelFile, ThetaMap]:
    model_file = load_model_file(args.model)
    theta = parse_theta(args.theta or model_file.theta)
    theta.check_model(model_file.model)
    return model_file, theta


def _open_out(path: Optional[str]) -> IO[str]:
    return open(path, 'w', newline='') if path else io.StringIO()


def _emit(path: Optional[str], text: str) -> None:
    if path:
        with open(path, 'w') as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _manifest(
    args: argparse.Namespace,
    argv: Sequence[str],
    model_file: Optional[ModelFile] = None,
) -> RunManifest:
    manifest = RunManifest(args.command, list(argv))
    if model_file is not None:
        manifest.model_path = model_file.path
        manifest.model_digest = model_file.digest
    manifest.start()
    return manifest


def _finish(manifest: RunManifest, out: Optional[str]) -> None:
    manifest.stop()
    if out:
        write_manifest(out, manifest)


def cmd_validate(args: argparse.Namespace, argv: Sequence[str]) -> int:
    model_file = load_model_file(args.model)
    model = model_file.model
    theta = parse_theta(args.theta or model_file.theta)
    theta.check_model(model)
    print(f'dim={model.dim} states={",".join(model.states.labels)}')
    print(f'rules={len(model.rules)} '
          f'perturbative={len(model.perturbative_indices)}')
    print(f'theta={theta}')
    if model.has_positive_rates:
        print(f'ε={epsilon(model):g}, κ={kappa(model):g}, positive-rates: yes')
    else:
        print('positive-rates: no')
        return EXIT_INVALID
    return EXIT_OK


def _write_samples(
    model: Model,
    batch: BatchResult,
    out: IO[str],
) -> None:
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(CSV_COLUMNS)
    for r in batch.results:
        writer.writerow(_row(model, r))


def _row(model: Model, r: SampleResult) -> List[Any]:
    return [
        r.seed,
        '' if r.value is None else model.label(r.value),
        '' if r.failed else repr(r.t_star),
        '' if r.failed else r.l_star,
        r.points,
        r.tree_nodes,
        int(r.failed),
    ]


def _dumps(
    args: argparse.Namespace,
    model: Model,
    theta: ThetaMap,
    batch: BatchResult,
    caps: Any,
    chunk_size: int,
) -> None:
    if not batch.results:
        return
    first = batch.results[0]
    field = EventField(model, first.seed, chunk_size)
    closure = build_amb_closure(model, theta, field, caps, (first.site, 0.0))
    if args.dump_tree:
        for line in dump_tree(model, closure.root.outcome):
            print(line, file=sys.stderr)
    if args.dump_column:
        for line in dump_column(
            field, parse_site(args.dump_column), closure.T_star,
        ):
            print(line, file=sys.stderr)


def cmd_sample(args: argparse.Namespace, argv: Sequence[str]) -> int:
    model_file, theta = _load(args)
    model = model_file.model
    flags: Dict[str, Any] = {
        'cftp.strict_failures': args.strict_failures,
        'cftp.readout': args.readout,
        'cftp.consensus_k': args.consensus_k,
        'cftp.tracing_percent': args.tracing_percent,
    }
    if args.trace_file:
        flags['cftp.transport_handler'] = FileTransport(args.trace_file)
    raw_settings = merge_settings(model_file.settings, flags)
    settings = get_settings(raw_settings)
    caps = parse_caps(args.caps, settings.caps)
    site = parse_site(args.site) if args.site else origin(model.dim)
    if len(site) != model.dim:
        raise ValidationError(f'site must have dimension {model.dim}', 'site')
    manifest = _manifest(args, argv, model_file)
    manifest.set_caps(caps)
    manifest.seed_schedule = {
        'base_seed': args.seed, 'n': args.n, 'rule': 'mix(base_seed, k)',
    }
    manifest.settings = {
        k: v for k, v in raw_settings.items()
        if k != 'cftp.transport_handler'
    }
    batch = sample_batch(
        model, theta, args.seed, args.n, caps, site=site,
        workers=args.threads,
        strict=settings.strict_failures,
        settings=raw_settings,
        readout=settings.readout,
        consensus_k=settings.consensus_k,
        chunk_size=settings.chunk_size,
    )
    out = _open_out(args.out)
    _write_samples(model, batch, out)
    if args.out:
        out.close()
    else:
        assert isinstance(out, io.StringIO)
        sys.stdout.write(out.getvalue())
    _finish(manifest, args.out)
    if args.dump_tree or args.dump_column:
        _dumps(args, model, theta, batch, caps, settings.chunk_size)
    print(
        f'{args.n} samples, {batch.failures} failed', file=sys.stderr,
    )
    if batch.internal_errors:
        return EXIT_INTERNAL
    if batch.failure_rate > settings.failure_threshold:
        return EXIT_FAILURES
    return EXIT_OK


def cmd_diagnose(args: argparse.Namespace, argv: Sequence[str]) -> int:
    model_file, theta = _load(args)
    model = model_file.model
    settings = get_settings(model_file.settings)
    caps = parse_caps(args.caps, settings.caps)
    manifest = _manifest(args, argv, model_file)
    manifest.set_caps(caps)
    manifest.seed_schedule = {
        'base_seed': args.seed, 'n': args.n, 'rule': 'mix(base_seed, k)',
    }
    report = diagnostics.diagnose(
        model, theta, args.n, args.seed, args.lam, caps, args.threads,
        settings.failure_threshold,
    )
    if args.tail:
        curve = diagnostics.tail_curve(
            model, theta, args.tail, args.n, args.seed, caps, args.threads,
        )
        report['tail'] = {'quantity': args.tail, 'curve': curve}
    _emit(args.out, json.dumps(report, indent=2, sort_keys=True) + '\n')
    _finish(manifest, args.out)
    return EXIT_FAILURES if report['biased'] else EXIT_OK


def cmd_oracle(args: argparse.Namespace, argv: Sequence[str]) -> int:
    model_file = load_model_file(args.model)
    model = model_file.model
    manifest = _manifest(args, argv, model_file)
    labels = model.states.labels
    if args.kind == 'torus':
        caps = parse_caps(args.caps, get_settings(model_file.settings).caps)
        manifest.set_caps(caps)
        solved = oracle.torus_stationary(model, args.n, caps.max_states)
        report: Dict[str, Any] = {
            'kind': 'torus',
            'n': args.n,
            'configurations': solved.chain.size,
            'marginal': dict(zip(labels, solved.marginal)),
        }
    else:
        manifest.seed_schedule = {
            'base_seed': args.seed, 'n': args.n, 'rule': 'mix(base_seed, k)',
        }
        values = oracle.forward_marginal(
            model, args.radius, args.burnin, args.n, args.seed,
        )
        marginal = oracle.empirical_distribution(values, len(labels))
        report = {
            'kind': 'forward',
            'radius': args.radius,
            'burnin': args.burnin,
            'n': args.n,
            'marginal': {labels[v]: p for v, p in marginal.items()},
        }
    _emit(args.out, json.dumps(report, indent=2, sort_keys=True) + '\n')
    _finish(manifest, args.out)
    return EXIT_OK


def selftest_checks(
    model: Model,
    theta: ThetaMap,
    n: int,
    seed: int,
) -> List[Tuple[str, bool, str]]:
    """Generator rate check, degeneration of the locking tree and agreement
    of the exact and consensus readouts."""
    checks = []
    stats = column_count_rate_check(
        EventField(model, seed), origin(model.dim), 10.0, n,
    )
    expected = 10.0 * model.total_rate
    tolerance = 5 * (expected / n) ** 0.5
    checks.append((
        'generator rate',
        abs(stats.mean_count - expected) <= tolerance,
        f'mean {stats.mean_count:.3f}, expected {expected:.3f}',
    ))

    unperturbed = model.unperturbed()
    same = agree = 0
    for k in range(n):
        s = mix_seed(seed, k)
        trace = run_exploration(unperturbed, theta, EventField(unperturbed, s))
        outcome = explore_with_locking(
            unperturbed, theta, EventField(unperturbed, s),
        )
        same += (
            outcome.T == trace.T_u and not outcome.H
            and outcome.event_count == trace.size
        )
        exact = theta.readout(unperturbed, trace.events)
        consensus = readout_consensus(unperturbed, trace.events, seed=s)
        agree += exact is None or exact == consensus
    checks.append(('degeneration', same == n, f'{same}/{n}'))
    checks.append(('readout agreement', agree == n, f'{agree}/{n}'))
    return checks


def cmd_selftest(args: argparse.Namespace, argv: Sequence[str]) -> int:
    if args.model:
        model_file, theta = _load(args)
        model = model_file.model
    else:
        model = independent_sites([2.0, 1.0])
        theta = parse_theta('finite_factor(b=0)')
    failed = 0
    for name, ok, detail in selftest_checks(model, theta, args.n, args.seed):
        print(f'{"ok  " if ok else "FAIL"} {name}: {detail}')
        failed += not ok
    return EXIT_INTERNAL if failed else EXIT_OK


COMMANDS = {
    'validate': cmd_validate,
    'sample': cmd_sample,
    'diagnose': cmd_diagnose,
    'oracle': cmd_oracle,
    'selftest': cmd_selftest,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format='%(levelname)s %(name)s: %(message)s',
    )
    try:
        return COMMANDS[args.command](args, argv)
    except INVALID_INPUT as e:
        print(f'error: {e}', file=sys.stderr)
        return EXIT_INVALID
    except OSError as e:
        print(f'error: {e}', file=sys.stderr)
        return EXIT_INVALID
    except BudgetExceeded as e:
        print(f'budget exceeded: {e}', file=sys.stderr)
        return EXIT_FAILURES
    except CftpError as e:
        print(f'internal error: {type(e).__name__}: {e}', file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == '__main__':  # pragma: no cover
    sys.exit(main())
