import numpy as np
import pytest

from conftest import delta_pair, random_distribution
from mkflow.distributions import GroundCost, Grid, QuantizedDistribution, quantize_jointly
from mkflow.errors import InvalidArgument
from mkflow.oracle import compare_random, lp_distance, random_pair


def test_identical_inputs_stay_on_diagonal(rng):
    f = random_distribution(rng, 3, 3)
    q0, q1 = quantize_jointly(f, f, 100)
    r = lp_distance(q0, q1, GroundCost.on(f.grid), 1.0)
    assert r.value == 0
    off = r.plan - np.diag(np.diag(r.plan))
    assert np.all(off == 0)


def test_two_delta_kappa_two():
    f0, f1 = delta_pair(4, 5, (0, 0), (3, 4))
    q0, q1 = quantize_jointly(f0, f1, 10)
    r = lp_distance(q0, q1, GroundCost.on(f0.grid), 2.0)
    assert r.value == pytest.approx(4.0, rel=1e-12)
    assert np.all(r.plan == 0)


def test_bounds_and_marginals(rng):
    for _ in range(20):
        f0, f1 = random_pair(rng, 4)
        q0, q1 = quantize_jointly(f0, f1, 1000)
        kappa = float(rng.choice([0.25, 1.0, 4.0]))
        r = lp_distance(q0, q1, GroundCost.on(f0.grid), kappa)
        unit = q0.unit_size
        upper = kappa * (q0.total_units + q1.total_units) * unit
        assert -1e-12 <= r.value <= upper * (1 + 1e-12)
        assert np.all(r.plan >= 0)
        assert np.allclose(r.plan.sum(axis=1), r.g0.mass, atol=1e-9 * unit)
        assert np.allclose(r.plan.sum(axis=0), r.g1.mass, atol=1e-9 * unit)


def test_size_guard_and_unit_check():
    g = Grid(9, 8)
    q = QuantizedDistribution(g, np.ones(g.size, dtype=np.int64), 1.0)
    with pytest.raises(InvalidArgument):
        lp_distance(q, q, GroundCost.on(g), 1.0)
    small = Grid(2, 2)
    a = QuantizedDistribution(small, np.ones(4, dtype=np.int64), 1.0)
    b = QuantizedDistribution(small, np.ones(4, dtype=np.int64), 0.5)
    with pytest.raises(InvalidArgument):
        lp_distance(a, b, GroundCost.on(small), 1.0)


def test_agrees_with_flow_solver_including_other_exponents():
    records = compare_random(trials=30, seed=7, ps=(1.0, 2.0, 0.5))
    assert all(r.matched for r in records)
