import numpy as np
import pytest

from ips_cftp import models
from ips_cftp import oracle
from ips_cftp.exception import CapExceeded
from ips_cftp.exception import SingularSystem
from ips_cftp.exception import SupportMismatch
from ips_cftp.exception import ValidationError
from ips_cftp.settings import DEFAULT_MAX_STATES


def test_torus_of_independent_sites_has_the_product_law(independent):
    solved = oracle.torus_stationary(independent, 2)
    assert solved.chain.size == 4
    assert solved.marginal == pytest.approx((2 / 3, 1 / 3))
    # configurations are independent: π(B, B) = 1/9
    assert solved.pi[3] == pytest.approx(1 / 9)


def test_torus_generator_rows_sum_to_zero(voter):
    chain = oracle.torus_generator(voter, 3)
    assert chain.size == 8
    dense = chain.generator.toarray()
    np.testing.assert_allclose(dense.sum(axis=1), 0.0, atol=1e-12)
    assert (dense - np.diag(np.diag(dense)) >= 0).all()


def test_symmetric_voter_on_a_torus(voter):
    solved = oracle.torus_stationary(voter, 4)
    assert solved.marginal == pytest.approx((0.5, 0.5))


def test_torus_too_small_for_the_offsets(voter):
    with pytest.raises(ValidationError):
        oracle.torus_generator(voter, 2)


@pytest.mark.parametrize('n,cap', [(4, 8), (21, DEFAULT_MAX_STATES)])
def test_torus_size_caps(independent, n, cap):
    with pytest.raises(CapExceeded):
        oracle.torus_stationary(independent, n, cap)


def test_torus_beyond_a_dense_solve(independent):
    # 2 ** 13 configurations, solved sparsely under the default cap
    solved = oracle.torus_stationary(independent, 13)
    assert solved.chain.size == 2 ** 13
    assert solved.chain.generator.nnz == 13 * 2 ** 13
    assert solved.marginal == pytest.approx((2 / 3, 1 / 3))
    assert solved.pi.sum() == pytest.approx(1.0)


def test_torus_with_two_absorbing_states_is_singular():
    # without noise both constant configurations absorb
    silent = models.noisy_voter(noise=(0.0, 0.0))
    with pytest.raises(SingularSystem):
        oracle.torus_stationary(silent, 3)


def test_torus_without_dynamics_is_singular():
    frozen = models.Model(1, models.StateSpace(('a', 'b')), ())
    with pytest.raises(SingularSystem):
        oracle.torus_stationary(frozen, 2)


def test_forward_events_are_sorted_and_in_the_box(voter):
    events = oracle.forward_events(voter, 2, 5.0, seed=3)
    assert events == sorted(events)
    assert all(-5.0 <= ev.time < 0 for ev in events)
    assert all(abs(ev.site[0]) <= 2 for ev in events)
    # 5 sites at rate 2 for 5 time units
    assert 20 < len(events) < 80


def test_forward_events_need_a_positive_burn_in(voter):
    with pytest.raises(ValidationError):
        oracle.forward_events(voter, 2, 0.0, seed=3)


def test_forward_marginal_of_independent_sites(independent):
    # 5 standard deviations at n = 2000 is about 0.053
    values = oracle.forward_marginal(independent, 0, 10.0, 2000, seed=5)
    distribution = oracle.empirical_distribution(values, 2)
    assert abs(distribution[0] - 2 / 3) < 0.055


def test_forward_simulate_keeps_the_outside_frozen(voter):
    xi = models.PatchConfig(2, constant=models.MINUS)
    cfg = oracle.forward_simulate(voter, 1, 3.0, xi, seed=1)
    assert cfg[(2,)] == models.MINUS
    assert cfg[(-7,)] == models.MINUS


def test_empirical_distribution():
    assert oracle.empirical_distribution([0, 2, 2, 2], 3) == {
        0: 0.25, 1: 0.0, 2: 0.75,
    }


def test_tv_distance():
    assert oracle.tv_distance({'a': 0.5, 'b': 0.5}, {'a': 0.7, 'b': 0.3}) == (
        pytest.approx(0.2)
    )
    with pytest.raises(SupportMismatch):
        oracle.tv_distance({'a': 1.0}, {'b': 1.0})
