from pathlib import Path

import pytest

from ips_cftp import models
from ips_cftp.event_field import EventField
from ips_cftp.exploration import parse_theta
from ips_cftp.model_file import load_model_file


MODEL_FILES = Path(__file__).resolve().parent.parent / 'model_files'


def perturbed_voter_rule(rate=0.05):
    """Neighbors rule of the shipped perturbed voter: the common state of
    the two neighbors, + when they disagree."""
    return models.make_rule(
        2, [(-1,), (1,)],
        lambda w: w[0] if w[0] == w[1] else models.PLUS,
        rate,
        name='neighbors',
    )


@pytest.fixture
def model_files():
    return MODEL_FILES


@pytest.fixture
def independent():
    return models.independent_sites([2.0, 1.0])


@pytest.fixture
def independent_perturbed(independent):
    flip = models.make_rule(2, [(1,)], lambda w: 1 - w[0], 0.05, name='flip')
    return models.with_perturbation(independent, [flip])


@pytest.fixture
def voter():
    return models.noisy_voter(noise=(0.5, 0.5))


@pytest.fixture
def perturbed_voter(voter):
    return models.with_perturbation(voter, [perturbed_voter_rule()])


@pytest.fixture
def polling():
    return models.asymmetric_polling([[-1, 1]], [1.0])


@pytest.fixture
def perturbed_polling(polling):
    copy = models.make_rule(2, [(2,)], lambda w: w[0], 0.05, name='copy-2')
    return models.with_perturbation(polling, [copy])


@pytest.fixture
def rn():
    return models.rn_ypr()


@pytest.fixture
def b0():
    return parse_theta('finite_factor(b=0)')


@pytest.fixture
def b1():
    return parse_theta('finite_factor(b=1)')


@pytest.fixture
def voter_theta():
    return parse_theta('voter')


@pytest.fixture
def polling_theta():
    return parse_theta('polling')


@pytest.fixture
def voter_field(voter):
    return EventField(voter, seed=7)


PERTURBED_CASES = {
    'voter': ('perturbed_voter', 'voter_theta'),
    'independent': ('independent_perturbed', 'b0'),
    'polling': ('perturbed_polling', 'polling_theta'),
}


@pytest.fixture(params=['voter', 'independent', 'polling', 'rn_ypr'])
def perturbed_case(request):
    """(model, θ map) of each perturbed model, the shipped rn_ypr included."""
    if request.param == 'rn_ypr':
        loaded = load_model_file(str(MODEL_FILES / 'rn_ypr_perturbed.toml'))
        return loaded.model, parse_theta(loaded.theta)
    model, theta = PERTURBED_CASES[request.param]
    return request.getfixturevalue(model), request.getfixturevalue(theta)
