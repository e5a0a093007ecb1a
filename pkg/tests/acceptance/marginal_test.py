"""Marginals of exact samples against the reference distributions.

Forward runs start from the all-first-state configuration on a box wide
enough and a burn-in long enough that their bias is far below the
tolerances, which are about 5 standard deviations of the sampling noise.
"""
import pytest

from ips_cftp import oracle
from ips_cftp.assembler import sample_batch
from tests.acceptance.test_helper import frequency
from tests.acceptance.test_helper import load_shipped_model


def exact_marginal(model, theta, seed, n):
    batch = sample_batch(model, theta, seed, n)
    assert batch.failure_rate < 0.01
    values = [r.value for r in batch.results if not r.failed]
    return oracle.empirical_distribution(values, len(model.states))


def forward_marginal(model, radius, burn_in, seed, n):
    values = oracle.forward_marginal(model, radius, burn_in, n, seed)
    return oracle.empirical_distribution(values, len(model.states))


def test_independent_sites_with_a_perturbation():
    model, theta = load_shipped_model('independent_perturbed.toml')
    exact = exact_marginal(model, theta, 11, 2000)
    forward = forward_marginal(model, 3, 8.0, 12, 2000)
    assert oracle.tv_distance(exact, forward) < 0.07


def test_symmetric_voter_against_the_torus():
    model, theta = load_shipped_model('noisy_voter.toml')
    torus = oracle.torus_stationary(model, 4)
    batch = sample_batch(model, theta, 21, 2000)
    assert abs(frequency(batch.results, 0) - torus.marginal[0]) < 0.056


@pytest.mark.slow
@pytest.mark.parametrize('name,radius,burn_in', [
    ('noisy_voter_perturbed.toml', 8, 15.0),
    ('polling.toml', 8, 15.0),
    ('polling_perturbed.toml', 8, 15.0),
])
def test_two_state_models_against_forward_runs(name, radius, burn_in):
    model, theta = load_shipped_model(name)
    exact = exact_marginal(model, theta, 31, 3000)
    forward = forward_marginal(model, radius, burn_in, 32, 3000)
    assert oracle.tv_distance(exact, forward) < 0.065


@pytest.mark.slow
@pytest.mark.parametrize('name', [
    'rn_ypr.toml', 'rn_ypr_cpg.toml', 'rn_ypr_perturbed.toml',
])
def test_nucleotide_models_against_forward_runs(name):
    model, theta = load_shipped_model(name)
    exact = exact_marginal(model, theta, 41, 3000)
    forward = forward_marginal(model, 6, 6.0, 42, 3000)
    assert oracle.tv_distance(exact, forward) < 0.05


@pytest.mark.slow
def test_exact_and_consensus_readouts_give_the_same_samples():
    model, theta = load_shipped_model('noisy_voter_perturbed.toml')
    consensus = sample_batch(model, theta, 51, 500, readout='consensus')
    exact = sample_batch(model, theta, 51, 500, readout='exact')
    assert [r.value for r in consensus.results] == [
        r.value for r in exact.results
    ]
