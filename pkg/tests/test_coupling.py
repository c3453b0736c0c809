import numpy as np
import pytest

from contactlab.construction import GraphicalConstruction
from contactlab.coupling import (
    ConditioningEvent,
    CoupledPair,
    CouplingError,
    InitialPairSample,
    SamplingError,
    basic_couple,
    conditioning_events,
    joint_domination_run,
    sample_initial_pair,
    sample_initial_pairs,
)
from contactlab.dynamics import ModelParams, ParameterError, replay
from contactlab.graphs import EdgePerturbation, Ring, apply_perturbation

R30 = Ring(30)
R30C = apply_perturbation(R30, EdgePerturbation(added=[(0, 15)]))


def test_pair_order_enforced():
    CoupledPair({1}, {1, 2})
    with pytest.raises(CouplingError):
        CoupledPair({1, 3}, {1, 2})
    assert CoupledPair({1}, {1, 2}).discrepancy == frozenset({2})


def test_conditioning_events():
    gp = apply_perturbation(R30, EdgePerturbation(added=[(0, 15)], removed=[(3, 4)]))
    ev = conditioning_events(R30, gp)
    assert [(e.u, e.v, e.side) for e in ev] == [(0, 15, "u"), (0, 15, "v"), (3, 4, "u"), (3, 4, "v")]
    e = ev[1]
    assert e.zero_end == 15 and e.one_end == 0
    assert e.holds(frozenset({0})) and not e.holds(frozenset({0, 15}))
    with pytest.raises(ParameterError):
        ConditioningEvent(0, "w", 0, 1)


def test_initial_pair_invariant():
    ev = conditioning_events(R30, R30C)[0]
    with pytest.raises(CouplingError):
        InitialPairSample(frozenset({15}), frozenset({15, 3}), 0.1, 0.0, 10, ev)


def test_sampling_fails_at_lambda_zero():
    ev = conditioning_events(R30, R30C)[0]
    with pytest.raises(SamplingError) as info:
        sample_initial_pair(R30C, ModelParams(0.0), ev, relax_time=20.0, max_attempts=2000)
    d = info.value.diagnostics
    assert d["accepted"] == 0 and d["attempts"] == 2000 and d["acceptance_rate"] == 0.0


def test_sampled_pairs_satisfy_event():
    ev = conditioning_events(R30, R30C)[1]
    pairs = sample_initial_pairs(R30C, ModelParams(1.5), ev, relax_time=3.0, count=50, seed=4)
    for p in pairs:
        assert ev.holds(p.eta0)
        assert p.xi0 - p.eta0 == frozenset([ev.zero_end])
        assert 0 < p.weight < 1


def test_weight_consistent_across_seeds():
    g = Ring(50)
    gp = apply_perturbation(g, EdgePerturbation(added=[(0, 25)]))
    ev = conditioning_events(g, gp)[0]
    ws = [sample_initial_pair(gp, ModelParams(3.0), ev, 50.0, seed=s, batch=2000) for s in (1, 2)]
    a, b = ws
    assert abs(a.weight - b.weight) <= 3 * np.hypot(a.weight_se, b.weight_se)


def test_sampling_worker_independent():
    ev = conditioning_events(R30, R30C)[0]
    a = sample_initial_pairs(R30C, ModelParams(2.0), ev, 2.0, count=20, seed=3, workers=1)
    b = sample_initial_pairs(R30C, ModelParams(2.0), ev, 2.0, count=20, seed=3, workers=3)
    assert [p.eta0 for p in a] == [p.eta0 for p in b]


def test_basic_couple_marginals_and_order():
    obs = np.linspace(0, 5, 11)
    for seed in range(10):
        c = GraphicalConstruction(R30, 2.0, seed=seed)
        pair = CoupledPair({0, 5, 10}, {0, 5, 10, 15, 20})
        ct = basic_couple(R30, R30C, ModelParams(2.0), pair, 5.0, obs, construction=c, verify=True)
        solo_lo = replay(c, [(R30, 2.0, pair.lower)], 5.0, obs)[0]
        solo_up = replay(c, [(R30C, 2.0, pair.upper)], 5.0, obs)[0]
        assert ct.lower.snapshots == solo_lo.snapshots
        assert ct.upper.snapshots == solo_up.snapshots
        for lo, up, n in zip(ct.lower.snapshots, ct.upper.snapshots, ct.discrepancy_sizes):
            assert lo <= up and len(up - lo) == n


def test_basic_couple_requires_subgraph():
    with pytest.raises(CouplingError):
        basic_couple(R30C, R30, ModelParams(1.0), CoupledPair({0}, {0}), 1.0, [1.0])


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
def test_domination_zero_violations(lam):
    ev = conditioning_events(R30, R30C)[0]
    pairs = sample_initial_pairs(R30C, ModelParams(lam), ev, 2.0, count=40, seed=1)
    obs = np.linspace(0, 8, 9)
    for k, pair in enumerate(pairs):
        run = joint_domination_run(R30, R30C, ModelParams(lam), ev, pair, 8.0, obs, seed=k)
        assert run.violations == 0
        assert run.events_checked >= 0
        for z, a in zip(run.zeta_snapshots, run.dominator.snapshots):
            assert z <= a
        assert run.zeta_sizes[0] == 1 and run.dominator_sizes[0] == 1


def test_domination_preconditions():
    ev = conditioning_events(R30, R30C)[0]
    bad = InitialPairSample(frozenset({0}), frozenset({0, 3}), 0.1, 0.0, 1)
    with pytest.raises(CouplingError):
        joint_domination_run(R30, R30C, ModelParams(1.0), ev, bad, 1.0)
