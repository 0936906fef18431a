import json
import math

import numpy as np
import pytest

from conftest import GOLDEN
from surrolab import mc_engine
from surrolab.mc_engine import McReplicateError, RunPlan

G = json.loads((GOLDEN / "mc_engine.json").read_text())


def test_splitmix64_reference_value():
    # first output of SplitMix64 seeded with 0, as published with the generator
    assert mc_engine.splitmix64(0) == 0xE220A8397B1DCDAF == G["splitmix64_0"]


@pytest.mark.parametrize("base,idx,want", G["derive_seed"])
def test_derive_seed_golden(base, idx, want):
    assert mc_engine.derive_seed(base, idx) == want


def test_derive_seed_distinct_and_rejects_negative():
    seeds = {mc_engine.derive_seed(5, i) for i in range(10_000)}
    assert len(seeds) == 10_000
    assert mc_engine.derive_seed(3, 0) != mc_engine.derive_seed(3, 1)
    with pytest.raises(ValueError):
        mc_engine.derive_seed(0, -1)


def test_streams_golden():
    assert [int(x) for x in mc_engine.raw_bits(mc_engine.make_rng(0), 4)] == G["raw_bits_seed0"]
    g = mc_engine.gaussian(mc_engine.make_rng(0), 5)
    want = np.array([float.fromhex(h) for h in G["gaussian_seed0"]])
    np.testing.assert_allclose(g, want, rtol=4e-16, atol=0)


def test_uniform_range_and_gaussian_moments():
    u = mc_engine.uniform(mc_engine.make_rng(1), 100_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    z = mc_engine.gaussian(mc_engine.make_rng(2), (200, 500))
    assert z.shape == (200, 500)
    se = 1 / math.sqrt(z.size)
    assert abs(z.mean()) < 5 * se
    assert abs(z.var() - 1) < 5 * math.sqrt(2) * se


def test_gaussian_odd_length_is_prefix_of_even():
    a = mc_engine.gaussian(mc_engine.make_rng(9), 7)
    b = mc_engine.gaussian(mc_engine.make_rng(9), 8)
    assert np.array_equal(a, b[:7])


def test_constant_estimator():
    est = mc_engine.run_mc(lambda s: 2.5, RunPlan(0, 50))
    assert est.mean == 2.5 and est.stderr == 0.0 and est.replicates == 50


def test_parity_estimator_tends_to_half():
    est = mc_engine.run_mc(lambda s: s & 1, RunPlan(11, 20_000))
    assert abs(est.mean - 0.5) < 4 * est.stderr


def test_parallelism_bit_identical():
    def f(s):
        return float(mc_engine.gaussian(mc_engine.make_rng(s), 3).sum())

    a = mc_engine.run_mc(f, RunPlan(4, 500, 1))
    b = mc_engine.run_mc(f, RunPlan(4, 500, 8))
    assert a == b
    assert mc_engine.map_replicates(f, RunPlan(4, 50, 1)) == mc_engine.map_replicates(f, RunPlan(4, 50, 8))


def test_early_stopping_reproducible():
    def f(s):
        return float(mc_engine.uniform(mc_engine.make_rng(s), 1)[0])

    plan1 = RunPlan(3, 10_000, 1, target_stderr=0.01)
    plan8 = RunPlan(3, 10_000, 8, target_stderr=0.01)
    a, b = mc_engine.run_mc(f, plan1), mc_engine.run_mc(f, plan8)
    assert a == b
    assert a.replicates < 10_000 and a.replicates % 100 == 0
    assert a.stderr <= 0.01


def test_failure_reports_index_and_seed():
    bad = mc_engine.derive_seed(7, 13)

    def f(s):
        if s == bad:
            raise ZeroDivisionError
        return 0.0

    with pytest.raises(McReplicateError) as info:
        mc_engine.run_mc(f, RunPlan(7, 20, 4))
    assert info.value.index == 13 and info.value.seed == bad


def test_run_mc_many_and_single_replicate():
    m = mc_engine.run_mc_many(lambda s: (1.0, float(s % 3)), RunPlan(0, 30))
    assert len(m) == 2 and m[0].mean == 1.0
    one = mc_engine.run_mc(lambda s: 4.0, RunPlan(0, 1))
    assert one.stderr == 0.0


@pytest.mark.parametrize("kw", [dict(replicates=0), dict(max_parallelism=0), dict(target_stderr=0.0)])
def test_plan_validation(kw):
    args = dict(base_seed=0, replicates=10)
    args.update(kw)
    with pytest.raises(ValueError):
        RunPlan(**args)
