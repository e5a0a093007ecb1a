import pytest
from hypothesis import given
from hypothesis import settings
from hypothesis import strategies as st

from ips_cftp import exploration
from ips_cftp import models
from ips_cftp.event_field import Event
from ips_cftp.event_field import EventField
from ips_cftp.event_field import FixedEventField
from ips_cftp.event_field import mix_seed
from ips_cftp.exception import BudgetExceeded
from ips_cftp.exception import CouplingViolation
from ips_cftp.exception import ModelShapeMismatch
from ips_cftp.exception import ThetaContainmentError
from ips_cftp.exception import ValidationError
from ips_cftp.exploration import EventSetEvaluator
from ips_cftp.exploration import FiniteFactorTheta
from ips_cftp.exploration import parse_theta
from ips_cftp.exploration import run_exploration
from ips_cftp.models import MINUS
from ips_cftp.models import PatchConfig
from ips_cftp.models import PLUS

# rule indices of the noisy voter and polling fixtures
COPY_LEFT, COPY_RIGHT, VOTER_PLUS, VOTER_MINUS = range(4)
POLL, POLL_PLUS, POLL_MINUS = range(3)


@pytest.fixture
def lineage_field(voter):
    """Origin copies 1, which copied 0, which got a + noise event."""
    return FixedEventField(voter, {
        (0,): [(-1.0, COPY_RIGHT), (-3.0, VOTER_PLUS)],
        (1,): [(-2.0, COPY_LEFT)],
    })


@pytest.mark.parametrize('name,expected', [
    ('finite_factor(b=2)', 'finite_factor(b=2)'),
    ('finite_factor(0)', 'finite_factor(b=0)'),
    (' voter ', 'voter'),
    ('polling', 'polling'),
])
def test_parse_theta(name, expected):
    assert repr(parse_theta(name)) == expected


@pytest.mark.parametrize('name', ['finite_factor(b=-1)', 'box', ''])
def test_parse_theta_rejects_unknown_maps(name):
    with pytest.raises(ValidationError):
        parse_theta(name)


def test_voter_exploration_follows_the_lineage(
    voter, voter_theta, lineage_field,
):
    trace = run_exploration(voter, voter_theta, lineage_field)

    assert trace.terminated
    assert trace.explored == [
        Event(-1.0, (0,), COPY_RIGHT),
        Event(-2.0, (1,), COPY_LEFT),
        Event(-3.0, (0,), VOTER_PLUS),
    ]
    assert trace.frontiers == [
        frozenset([(0,)]), frozenset([(1,)]), frozenset([(0,)]), frozenset(),
    ]
    assert trace.gammas == [0.0, -1.0, -2.0, -3.0]
    assert trace.T_u == -3.0
    assert voter_theta.readout(voter, trace.events) == PLUS
    assert exploration.readout_consensus(voter, trace.events) == PLUS


@pytest.fixture
def tied_field(voter):
    """Origin copies -1 at the very time -1 got a - noise event."""
    return FixedEventField(voter, {
        (0,): [(-1.0, COPY_LEFT)],
        (-1,): [(-1.0, VOTER_MINUS), (-2.0, VOTER_PLUS)],
    })


def test_exploration_finds_an_event_tied_with_the_last_one(
    voter, voter_theta, tied_field,
):
    trace = run_exploration(voter, voter_theta, tied_field)
    # site -1 comes first in the tuple order, so its event is older
    assert trace.explored == [
        Event(-1.0, (0,), COPY_LEFT), Event(-1.0, (-1,), VOTER_MINUS),
    ]
    assert trace.T_u == -1.0
    assert voter_theta.readout(voter, trace.events) == MINUS
    assert exploration.readout_consensus(voter, trace.events) == MINUS


def test_exploration_from_another_origin_point(voter, voter_theta):
    field = FixedEventField(voter, {
        (5,): [(-2.0, COPY_LEFT)],
        (4,): [(-2.5, VOTER_MINUS), (-1.0, VOTER_PLUS)],
    })
    trace = run_exploration(voter, voter_theta, field, ((5,), -1.5))
    # the + event at 4 is after the time floor and is not seen
    assert trace.explored == [
        Event(-2.0, (5,), COPY_LEFT), Event(-2.5, (4,), VOTER_MINUS),
    ]
    assert trace.frontiers[1] == frozenset([(-1,)])
    assert exploration.readout_consensus(
        voter, trace.events, site=(5,), time=-1.5,
    ) == MINUS


def test_finite_factor_zero_stops_at_the_first_event(independent, b0):
    field = FixedEventField(independent, {(0,): [(-0.5, 1), (-1.0, 0)]})
    trace = run_exploration(independent, b0, field)
    assert trace.explored == [Event(-0.5, (0,), 1)]
    assert exploration.readout_consensus(independent, trace.events) == 1


def test_finite_factor_needs_the_box_covered_by_unconditional_events(rn, b1):
    uncond_c, transition_a = 1, 8
    field = FixedEventField(rn, {
        (-1,): [(-1.0, uncond_c), (-5.0, uncond_c)],
        (0,): [(-2.0, transition_a), (-4.0, uncond_c)],
        (1,): [(-3.0, uncond_c)],
    })
    trace = run_exploration(rn, b1, field)
    # the windows ending at -3 and -4 still hold the conditional event
    assert [ev.time for ev in trace.explored] == [-1.0, -2.0, -3.0, -4.0, -5.0]
    assert trace.frontiers[3] == b1.box(1)
    assert trace.frontiers[4] == b1.box(1)
    assert trace.frontiers[5] == frozenset()
    assert exploration.readout_consensus(rn, trace.events) == uncond_c


def test_polling_exploration_settles_minus_sites(polling, polling_theta):
    field = FixedEventField(polling, {
        (0,): [(-1.0, POLL)],
        (1,): [(-2.0, POLL_MINUS)],
        (-1,): [(-3.0, POLL_MINUS)],
    })
    trace = run_exploration(polling, polling_theta, field)
    assert trace.frontiers == [
        frozenset([(0,)]),
        frozenset([(-1,), (1,)]),
        frozenset([(-1,)]),
        frozenset(),
    ]
    assert polling_theta.readout(polling, trace.events) == MINUS
    assert exploration.readout_consensus(polling, trace.events) == MINUS


def test_polling_exploration_stops_on_a_plus(polling, polling_theta):
    field = FixedEventField(polling, {
        (0,): [(-1.0, POLL)],
        (1,): [(-3.0, POLL_MINUS)],
        (-1,): [(-2.0, POLL_PLUS)],
    })
    trace = run_exploration(polling, polling_theta, field)
    assert trace.size == 2
    assert polling_theta.readout(polling, trace.events) == PLUS
    assert exploration.readout_consensus(polling, trace.events) == PLUS


def test_exploration_rejects_perturbed_models(perturbed_voter, voter_theta):
    with pytest.raises(ModelShapeMismatch):
        run_exploration(
            perturbed_voter, voter_theta, EventField(perturbed_voter, 1),
        )


def test_theta_rejects_models_it_does_not_fit(voter, polling):
    with pytest.raises(ModelShapeMismatch):
        parse_theta('voter').check_model(polling)
    with pytest.raises(ModelShapeMismatch):
        parse_theta('polling').check_model(voter)
    with pytest.raises(ModelShapeMismatch):
        parse_theta('polling').check_model(models.rn_ypr())


def test_exploration_cap_raises_with_the_partial_trace(voter, voter_theta):
    field = FixedEventField(voter, {
        (0,): [(-1.0, COPY_RIGHT)],
        (1,): [(-2.0, COPY_RIGHT)],
        (2,): [(-3.0, COPY_RIGHT)],
    })
    with pytest.raises(BudgetExceeded) as e:
        run_exploration(voter, voter_theta, field, cap=2)
    assert e.value.partial.size == 2
    assert not e.value.partial.terminated


def test_exploration_reports_an_exhausted_field(voter, voter_theta):
    field = FixedEventField(voter, {(0,): [(-1.0, COPY_RIGHT)]})
    with pytest.raises(BudgetExceeded) as e:
        run_exploration(voter, voter_theta, field)
    assert 'exhausted' in str(e.value)


def test_exploration_rejects_a_zero_cap(voter, voter_theta, voter_field):
    with pytest.raises(ValidationError):
        run_exploration(voter, voter_theta, voter_field, cap=0)


class ShrunkBox(FiniteFactorTheta):
    def beta(self, model, ell):
        return 0


def test_frontier_outside_the_size_bound_is_reported(independent):
    with pytest.raises(ThetaContainmentError):
        run_exploration(
            independent, ShrunkBox(1), EventField(independent, 1),
        )


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2 ** 32))
def test_incremental_frontiers_match_theta_from_scratch(seed):
    voter = models.noisy_voter()
    theta = parse_theta('voter')
    trace = run_exploration(voter, theta, EventField(voter, seed))
    for n in range(trace.size + 1):
        assert theta(voter, trace.explored[:n]) == trace.frontiers[n]


@pytest.mark.parametrize('fixture,theta_name', [
    ('voter', 'voter'),
    ('polling', 'polling'),
    ('independent', 'finite_factor(b=0)'),
    ('rn', 'finite_factor(b=1)'),
])
def test_exact_and_consensus_readouts_agree(request, fixture, theta_name):
    model = request.getfixturevalue(fixture)
    theta = parse_theta(theta_name)
    for seed in range(30):
        trace = run_exploration(model, theta, EventField(model, seed))
        consensus = exploration.readout_consensus(
            model, trace.events, seed=seed,
        )
        assert exploration.readout(
            model, theta, trace.events, mode='exact', seed=seed,
        ) == consensus


def test_consensus_detects_an_undetermined_value(voter):
    events = [Event(-1.0, (0,), COPY_RIGHT)]
    with pytest.raises(CouplingViolation) as e:
        exploration.readout_consensus(voter, events)
    assert set(e.value.values) == {PLUS, MINUS}


def test_consensus_configs():
    configs = exploration.consensus_configs(4, 6, seed=3)
    assert [c[(0,)] for c in configs[:4]] == [0, 1, 2, 3]
    assert [c.seed for c in configs[4:]] == [
        mix_seed(3, 0), mix_seed(3, 1),
    ]
    assert len(exploration.consensus_configs(2, 6, seed=0)) == 6
    with pytest.raises(ValidationError):
        exploration.consensus_configs(2, 1, seed=0)


def test_evaluator_uses_substitutions(voter):
    copy = Event(-1.0, (0,), COPY_RIGHT)
    events = [copy, Event(-2.0, (1,), VOTER_MINUS)]
    evaluator = EventSetEvaluator(voter, events, {copy: PLUS})
    assert evaluator.value(PatchConfig(2), (0,), 0.0) == PLUS
    assert evaluator.value(PatchConfig(2), (1,), 0.0) == MINUS
    # before any event the initial configuration is read
    assert evaluator.value(PatchConfig(2, constant=PLUS), (1,), -2.0) == PLUS


def test_readout_voter_needs_a_noise_event_last(voter):
    with pytest.raises(ModelShapeMismatch):
        exploration.readout_voter(voter, [Event(-1.0, (0,), COPY_RIGHT)])
    with pytest.raises(ModelShapeMismatch):
        exploration.readout_voter(voter, [])


def test_exact_readout_falls_back_to_consensus(independent, b0):
    events = [Event(-1.0, (0,), 0)]
    assert exploration.readout(independent, b0, events, mode='exact') == 0
