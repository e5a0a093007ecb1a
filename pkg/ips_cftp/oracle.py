"""Reference distributions the sampler is checked against.

`torus_stationary` solves the finite periodic chain exactly; it equals the
infinite lattice law only for non-interacting sites. `forward_simulate`
runs the dynamics forward on a box whose outside stays frozen at the initial
configuration.
"""
import itertools
import logging
import warnings
from typing import Dict
from typing import Hashable
from typing import List
from typing import Mapping
from typing import NamedTuple
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import MatrixRankWarning
from scipy.sparse.linalg import spsolve

from ips_cftp.event_field import box_sites
from ips_cftp.event_field import Event
from ips_cftp.event_field import mix_seed
from ips_cftp.event_field import origin
from ips_cftp.event_field import seed_sequence
from ips_cftp.event_field import sup_norm
from ips_cftp.exception import CapExceeded
from ips_cftp.exception import SingularSystem
from ips_cftp.exception import SupportMismatch
from ips_cftp.exception import ValidationError
from ips_cftp.models import flow_replay
from ips_cftp.models import Model
from ips_cftp.models import PatchConfig
from ips_cftp.settings import DEFAULT_MAX_STATES


log = logging.getLogger(__name__)

ROW_SUM_TOLERANCE = 1e-9
RESIDUAL_TOLERANCE = 1e-8


class TorusChain(NamedTuple):
    n: int
    sites: List[Tuple[int, ...]]
    n_states: int
    generator: sparse.csr_matrix

    @property
    def size(self) -> int:
        return int(self.generator.shape[0])


class TorusStationary(NamedTuple):
    chain: TorusChain
    pi: np.ndarray
    marginal: Tuple[float, ...]


def _check_size(model: Model, n: int, cap: int) -> int:
    if n < 1:
        raise ValidationError('torus side must be positive', field='n')
    reach = max(
        (sup_norm(y) for rule in model.rules for y in rule.offsets), default=0,
    )
    if 2 * reach >= n:
        raise ValidationError(
            f'offsets of norm {reach} do not fit a torus of side {n}',
            field='n',
        )
    n_sites = n ** model.dim
    size = len(model.states) ** n_sites
    if size > cap:
        raise CapExceeded(f'{size} configurations exceed the cap {cap}')
    return size


def torus_generator(
    model: Model,
    n: int,
    cap: int = DEFAULT_MAX_STATES,
) -> TorusChain:
    """Sparse generator of the dynamics on the periodic torus of side n.

    Configuration codes are base-|S| numbers whose k-th digit is the state of
    the k-th site of `itertools.product(range(n), repeat=d)`.
    """
    size = _check_size(model, n, cap)
    n_states = len(model.states)
    sites = [tuple(s) for s in itertools.product(range(n), repeat=model.dim)]
    index = {s: k for k, s in enumerate(sites)}
    codes = np.arange(size, dtype=np.int64)
    powers = n_states ** np.arange(len(sites), dtype=np.int64)
    digit_type = np.min_scalar_type(n_states)
    digits = [((codes // p) % n_states).astype(digit_type) for p in powers]
    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    rates: List[np.ndarray] = []
    for rule in model.rules:
        if rule.rate <= 0:
            continue
        table = np.asarray(rule.table)
        for k, site in enumerate(sites):
            neighbors = [
                index[tuple((a + b) % n for a, b in zip(site, y))]
                for y in rule.offsets
            ]
            inputs = np.zeros(size, dtype=np.int64)
            for nb in neighbors:
                inputs = inputs * n_states + digits[nb]
            current = digits[k].astype(np.int64)
            new = table[inputs]
            changed = new != current
            rows.append(codes[changed])
            cols.append(codes[changed] + (new - current)[changed] * powers[k])
            rates.append(np.full(int(changed.sum()), rule.rate))
    if rows:
        # duplicate (row, col) pairs are summed by the conversion
        jumps = sparse.coo_matrix(
            (np.concatenate(rates), (np.concatenate(rows), np.concatenate(cols))),
            shape=(size, size),
        ).tocsr()
    else:
        jumps = sparse.csr_matrix((size, size))
    outflow = np.asarray(jumps.sum(axis=1)).ravel()
    generator = (jumps - sparse.diags(outflow)).tocsr()
    row_sums = np.abs(np.asarray(generator.sum(axis=1)).ravel())
    if row_sums.max(initial=0.0) >= ROW_SUM_TOLERANCE:
        raise SingularSystem(f'generator row sums up to {row_sums.max()}')
    log.debug('torus n=%d: %d transitions', n, generator.nnz)
    return TorusChain(n, sites, n_states, generator)


def torus_stationary(
    model: Model,
    n: int,
    cap: int = DEFAULT_MAX_STATES,
) -> TorusStationary:
    """Solves πQ = 0, Σπ = 1 and returns π with its marginal at site 0.

    The last balance equation is replaced by the normalization, which leaves
    a regular system exactly when the stationary law is unique.

    :raises CapExceeded: if the torus has more than `cap` configurations
    :raises SingularSystem: if the stationary law is not unique
    """
    chain = torus_generator(model, n, cap)
    size = chain.size
    balance = chain.generator.T.tocsr()
    system = sparse.vstack(
        [balance[:-1], sparse.csr_matrix(np.ones((1, size)))],
    ).tocsc()
    rhs = np.zeros(size)
    rhs[-1] = 1.0
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', MatrixRankWarning)
        try:
            pi = np.atleast_1d(spsolve(system, rhs))
        except RuntimeError as e:
            raise SingularSystem(f'no unique stationary law: {e}')
    if not np.isfinite(pi).all():
        raise SingularSystem('generator has no unique stationary law')
    residual = float(np.abs(balance @ pi).max(initial=0.0))
    if residual > RESIDUAL_TOLERANCE:
        raise SingularSystem(f'stationary residual {residual:.3g}')
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    first = chain.sites.index(origin(model.dim))
    site_states = (np.arange(size) // chain.n_states ** first) % chain.n_states
    marginal = tuple(
        float(pi[site_states == v].sum()) for v in range(chain.n_states)
    )
    log.debug('torus n=%d: %d configurations solved', n, size)
    return TorusStationary(chain, pi, marginal)


def forward_events(
    model: Model,
    radius: int,
    burn_in: float,
    seed: int,
) -> List[Event]:
    """Events of the box of `radius` in [-burn_in, 0), by increasing time."""
    if burn_in <= 0:
        raise ValidationError('burn-in must be positive', field='burn_in')
    if model.total_rate <= 0:
        return []
    rng = np.random.default_rng(seed_sequence(seed))
    sites = box_sites(radius, model.dim)
    count = int(rng.poisson(len(sites) * model.total_rate * burn_in))
    times = np.sort(rng.uniform(-burn_in, 0.0, count))
    where = rng.integers(0, len(sites), count)
    probs = np.asarray(model.rates) / model.total_rate
    rules = rng.choice(len(probs), size=count, p=probs)
    return [
        Event(t, sites[s], r)
        for t, s, r in zip(times.tolist(), where.tolist(), rules.tolist())
    ]


def forward_simulate(
    model: Model,
    radius: int,
    burn_in: float,
    xi: PatchConfig,
    seed: int,
) -> PatchConfig:
    """Configuration at time 0 after running the box dynamics from xi at
    time -burn_in; sites outside the box keep their xi value."""
    events = forward_events(model, radius, burn_in, seed)
    return flow_replay(model, events, xi)


def forward_marginal(
    model: Model,
    radius: int,
    burn_in: float,
    n: int,
    seed: int,
    xi: Optional[PatchConfig] = None,
    site: Optional[Tuple[int, ...]] = None,
) -> List[int]:
    """States at `site` of n forward runs on the seeds `mix(seed, k)`."""
    xi = xi if xi is not None else PatchConfig(len(model.states))
    site = site if site is not None else origin(model.dim)
    return [
        forward_simulate(model, radius, burn_in, xi, mix_seed(seed, k))[site]
        for k in range(n)
    ]


def empirical_distribution(
    values: Sequence[int],
    n_states: int,
) -> Dict[int, float]:
    counts = np.bincount(np.asarray(values, dtype=np.int64), minlength=n_states)
    total = counts.sum()
    return {
        v: float(counts[v]) / total if total else 0.0 for v in range(n_states)
    }


def tv_distance(
    p: Mapping[Hashable, float],
    q: Mapping[Hashable, float],
) -> float:
    """Half the L1 distance between two distributions on the same keys.

    :raises SupportMismatch: if the key sets differ
    """
    if set(p) != set(q):
        raise SupportMismatch(
            f'supports differ: {sorted(map(str, set(p) ^ set(q)))}',
        )
    return 0.5 * sum(abs(p[k] - q[k]) for k in p)
