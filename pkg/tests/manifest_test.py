from unittest import mock

from ips_cftp import manifest
from ips_cftp.settings import Caps
from ips_cftp.version import __version__


def test_package_versions():
    versions = manifest.package_versions()
    assert versions['ips_cftp'] == __version__
    assert set(versions) == {'ips_cftp', 'numpy', 'scipy', 'py_zipkin', 'python'}


def test_manifest_round_trip(tmp_path):
    out = str(tmp_path / 'samples.csv')
    run = manifest.RunManifest('sample', ['sample', '--n', '3'])
    run.set_caps(Caps(max_nodes=9))
    run.seed_schedule = {'base_seed': 1, 'n': 3}
    run.start()
    run.stop()

    path = manifest.write_manifest(out, run)

    assert path == out + '.manifest.json'
    written = manifest.read_manifest(path)
    assert written['command'] == 'sample'
    assert written['caps']['max_nodes'] == 9
    assert written['seed_schedule'] == {'base_seed': 1, 'n': 3}
    assert written['timing'] == {'started': mock.ANY, 'elapsed': mock.ANY}
    assert written['timing']['elapsed'] >= 0


def test_manifests_of_identical_runs_differ_only_in_timing(tmp_path):
    docs = []
    for _ in range(2):
        run = manifest.RunManifest('diagnose', ['diagnose'], 'm.toml', 'ab')
        run.start()
        run.stop()
        docs.append(run.to_dict())
    for doc in docs:
        doc.pop('timing')
    assert docs[0] == docs[1]
