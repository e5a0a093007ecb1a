import csv
import json
from unittest import mock

import pytest

from ips_cftp import cli
from ips_cftp.event_field import mix_seed
from ips_cftp.exception import CouplingViolation
from ips_cftp.manifest import manifest_path
from ips_cftp.manifest import read_manifest


@pytest.fixture
def independent_file(model_files):
    return str(model_files / 'independent.toml')


@pytest.fixture
def perturbed_voter_file(model_files):
    return str(model_files / 'noisy_voter_perturbed.toml')


def test_validate(capsys, independent_file):
    assert cli.main(['validate', independent_file]) == cli.EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert out[0] == 'dim=1 states=A,B'
    assert out[1] == 'rules=2 perturbative=0'
    assert out[-1].endswith('positive-rates: yes')


def test_validate_without_positive_rates(capsys, tmp_path):
    path = tmp_path / 'one_sided.toml'
    path.write_text(
        'theta = "finite_factor(b=0)"\n'
        '[builder]\n'
        'name = "independent_sites"\n'
        'rates = [1.0, 0.0]\n'
    )
    assert cli.main(['validate', str(path)]) == cli.EXIT_INVALID


def test_missing_model_file(capsys, tmp_path):
    missing = str(tmp_path / 'missing.toml')
    assert cli.main(['validate', missing]) == cli.EXIT_INVALID
    assert capsys.readouterr().err.startswith('error: ')


@pytest.mark.parametrize('argv', [
    [],
    ['sample'],
    ['sample', '--model', 'x.toml', '--n', 'many'],
    ['oracle', 'exact', '--model', 'x.toml'],
])
def test_usage_errors_exit_with_one(capsys, argv):
    assert cli.main(argv) == cli.EXIT_INVALID
    assert 'usage:' in capsys.readouterr().err


def test_bad_caps_are_invalid_input(independent_file):
    argv = ['sample', '--model', independent_file, '--caps', 'width=3']
    assert cli.main(argv) == cli.EXIT_INVALID


def test_sample_writes_csv_and_manifest(capsys, tmp_path, independent_file):
    out = tmp_path / 'samples.csv'
    argv = [
        'sample', '--model', independent_file,
        '--n', '20', '--seed', '3', '--out', str(out),
    ]
    assert cli.main(argv) == cli.EXIT_OK

    with open(out) as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 20
    assert [int(r['seed']) for r in rows] == [mix_seed(3, k) for k in range(20)]
    assert {r['value'] for r in rows} <= {'A', 'B'}
    assert all(r['failed'] == '0' for r in rows)
    assert all(float(r['t_star']) < 0 for r in rows)
    assert capsys.readouterr().err.strip() == '20 samples, 0 failed'

    manifest = read_manifest(manifest_path(str(out)))
    assert manifest['command'] == 'sample'
    assert manifest['argv'] == argv
    assert manifest['seed_schedule']['base_seed'] == 3
    assert manifest['model_path'] == independent_file
    assert len(manifest['model_digest']) == 64
    assert manifest['caps']['max_nodes'] > 0
    assert 'elapsed' in manifest['timing']


def test_sample_reruns_are_byte_identical(tmp_path, perturbed_voter_file):
    outputs = []
    for name, threads in (('first.csv', '1'), ('second.csv', '2')):
        out = tmp_path / name
        argv = [
            'sample', '--model', perturbed_voter_file, '--n', '30',
            '--seed', '11', '--threads', threads, '--out', str(out),
        ]
        assert cli.main(argv) == cli.EXIT_OK
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1]
    assert len(outputs[0].splitlines()) == 31


def test_sample_to_stdout(capsys, independent_file):
    argv = ['sample', '--model', independent_file, '--n', '3', '--site', '4']
    assert cli.main(argv) == cli.EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == ','.join(cli.CSV_COLUMNS)
    assert len(lines) == 4


def test_sample_site_of_the_wrong_dimension(independent_file):
    argv = ['sample', '--model', independent_file, '--site', '0,0']
    assert cli.main(argv) == cli.EXIT_INVALID


def test_sample_failure_rate_above_the_threshold(capsys, perturbed_voter_file):
    argv = [
        'sample', '--model', perturbed_voter_file, '--n', '4',
        '--caps', 'nodes=1',
    ]
    assert cli.main(argv) == cli.EXIT_FAILURES
    rows = capsys.readouterr().out.splitlines()[1:]
    assert all(row.endswith(',1') for row in rows)


def test_sample_strict_failures(perturbed_voter_file):
    argv = [
        'sample', '--model', perturbed_voter_file, '--n', '4',
        '--caps', 'nodes=1', '--strict-failures',
    ]
    assert cli.main(argv) == cli.EXIT_FAILURES


def test_sample_internal_errors(perturbed_voter_file):
    argv = ['sample', '--model', perturbed_voter_file, '--n', '2']
    with mock.patch(
        'ips_cftp.assembler.resolve_all',
        autospec=True,
        side_effect=CouplingViolation('disagree', (0, 1)),
    ):
        assert cli.main(argv) == cli.EXIT_INTERNAL


def test_sample_trace_file(tmp_path, independent_file):
    spans = tmp_path / 'spans.jsonl'
    argv = [
        'sample', '--model', independent_file, '--n', '2',
        '--trace-file', str(spans), '--tracing-percent', '100',
        '--out', str(tmp_path / 'samples.csv'),
    ]
    assert cli.main(argv) == cli.EXIT_OK
    assert len(spans.read_text().splitlines()) == 2
    manifest = read_manifest(str(tmp_path / 'samples.csv.manifest.json'))
    assert 'cftp.transport_handler' not in manifest['settings']


def test_sample_debug_dumps(capsys, perturbed_voter_file):
    argv = [
        'sample', '--model', perturbed_voter_file, '--n', '1',
        '--dump-tree', '--dump-column', '0',
    ]
    assert cli.main(argv) == cli.EXIT_OK
    err = capsys.readouterr().err.splitlines()
    assert err[0].startswith('root 0 ')
    assert err[-1] == '1 samples, 0 failed'
    columns = [line for line in err if line.count(';') == 2]
    assert columns
    assert all(line.startswith('0;') for line in columns)


def test_diagnose(capsys, model_files):
    argv = [
        'diagnose', '--model', str(model_files / 'independent_perturbed.toml'),
        '--n', '50', '--seed', '1', '--lambda', '-0.1',
    ]
    assert cli.main(argv) == cli.EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report['biased'] is False
    assert report['g']['n'] == 50
    assert report['bounds']['lambda'] == -0.1


def test_diagnose_with_a_tail_curve(tmp_path, independent_file):
    out = tmp_path / 'diagnose.json'
    argv = [
        'diagnose', '--model', independent_file, '--n', '1000',
        '--tail', 'explored', '--out', str(out),
    ]
    assert cli.main(argv) == cli.EXIT_OK
    report = json.loads(out.read_text())
    assert report['tail']['curve'] == [[0, 1.0], [1, 1.0], [2, 0.0]]
    assert read_manifest(manifest_path(str(out)))['command'] == 'diagnose'


def test_oracle_torus(capsys, independent_file):
    argv = ['oracle', 'torus', '--model', independent_file, '--n', '2']
    assert cli.main(argv) == cli.EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report['configurations'] == 4
    assert report['marginal']['A'] == pytest.approx(2 / 3)
    assert report['marginal']['B'] == pytest.approx(1 / 3)


@pytest.mark.parametrize('extra', [
    ['--n', '21'],
    ['--n', '4', '--caps', 'states=8'],
])
def test_oracle_torus_too_large(capsys, independent_file, extra):
    argv = ['oracle', 'torus', '--model', independent_file] + extra
    assert cli.main(argv) == cli.EXIT_INVALID
    assert 'exceed the cap' in capsys.readouterr().err


def test_oracle_torus_reads_the_state_cap(tmp_path, independent_file):
    out = tmp_path / 'torus.json'
    argv = [
        'oracle', 'torus', '--model', independent_file, '--n', '13',
        '--caps', 'states=8192', '--out', str(out),
    ]
    assert cli.main(argv) == cli.EXIT_OK
    assert json.loads(out.read_text())['configurations'] == 2 ** 13
    assert read_manifest(manifest_path(str(out)))['caps']['max_states'] == 8192


def test_oracle_forward(capsys, independent_file):
    argv = [
        'oracle', 'forward', '--model', independent_file,
        '--radius', '0', '--burnin', '10', '--n', '50',
    ]
    assert cli.main(argv) == cli.EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report['kind'] == 'forward'
    assert set(report['marginal']) == {'A', 'B'}
    assert sum(report['marginal'].values()) == pytest.approx(1.0)


def test_selftest(capsys):
    assert cli.main(['selftest']) == cli.EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3
    assert all(line.startswith('ok') for line in lines)


def test_selftest_on_a_model_file(capsys, model_files):
    argv = [
        'selftest', '--model', str(model_files / 'noisy_voter.toml'),
        '--n', '50',
    ]
    assert cli.main(argv) == cli.EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert [line.split(':')[0] for line in lines] == [
        'ok   generator rate', 'ok   degeneration', 'ok   readout agreement',
    ]


def test_selftest_with_a_theta_override(capsys, model_files):
    model = str(model_files / 'noisy_voter.toml')
    argv = ['selftest', '--model', model, '--theta', 'voter', '--n', '20']
    assert cli.main(argv) == cli.EXIT_OK
    argv = ['selftest', '--model', model, '--theta', 'nearest']
    assert cli.main(argv) == cli.EXIT_INVALID
    assert 'θ' in capsys.readouterr().err
