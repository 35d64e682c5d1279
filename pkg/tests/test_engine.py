"""Token game and stationary simulator."""

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as scipy_stats

from hlfspn.spn import (
    Arc,
    Atom,
    Constant,
    ContractViolationError,
    Deterministic,
    DivergenceError,
    ExpectedTokens,
    Exponential,
    FiringRate,
    FlushAll,
    Flushed,
    Immediate,
    IntRhs,
    LivelockError,
    Param,
    PartialResultError,
    PetriNet,
    Place,
    ProbabilityOf,
    ServerSemantics,
    SimConfig,
    Transition,
    enabled_set,
    eval_predicate,
    fire,
    simulate_stationary,
    vanish,
)

from queueing import mm1k, mmck
from refnets import mm1k_net, mmck_net


class TestEnabledSet:
    def test_degrees_and_guard(self):
        net = PetriNet(
            places=(Place("A", 6), Place("B", 1), Place("C", 0)),
            transitions=(
                Transition("T1", Immediate(), input_arcs=(Arc("A", Constant(2)),)),
                Transition("T2", Immediate(), input_arcs=(Arc("A"), Arc("B"))),
                Transition("T3", Immediate(), input_arcs=(Arc("C"),)),
                Transition("T4", Immediate(), input_arcs=(Arc("A"),),
                           guard=Atom("B", "=", IntRhs(0))),
            ))
        assert enabled_set(net, net.initial_marking()) == {"T1": 3, "T2": 1}

    def test_flush_enabling_degree_is_one(self):
        net = PetriNet(
            places=(Place("A", 7), Place("B", 0)),
            transitions=(
                Transition("T", Immediate(),
                           input_arcs=(Arc("A", FlushAll()),),
                           output_arcs=(Arc("B", Flushed()),)),
            ))
        assert enabled_set(net, {"A": 7, "B": 0}) == {"T": 1}
        assert enabled_set(net, {"A": 0, "B": 0}) == {}

    def test_source_transition_degree_is_one(self):
        net = PetriNet(
            places=(Place("A", 0),),
            transitions=(Transition("SRC", Exponential(1.0),
                                    output_arcs=(Arc("A"),)),))
        assert enabled_set(net, {"A": 0}) == {"SRC": 1}

    def test_param_arc_threshold(self):
        net = PetriNet(
            places=(Place("A", 5),),
            transitions=(Transition("T", Immediate(),
                                    input_arcs=(Arc("A", Param("N")),)),),
            parameters={"N": 3})
        assert enabled_set(net, {"A": 5}) == {"T": 1}
        assert enabled_set(net, {"A": 2}) == {}


class TestFire:
    def test_constant_arcs(self):
        net = PetriNet(
            places=(Place("A", 3), Place("B", 0)),
            transitions=(Transition("T", Immediate(),
                                    input_arcs=(Arc("A", Constant(2)),),
                                    output_arcs=(Arc("B", Constant(5)),)),))
        marking, kappa = fire(net, {"A": 3, "B": 0}, "T")
        assert marking == {"A": 1, "B": 5}
        assert kappa == 0

    def test_flush_returns_and_reproduces_kappa(self):
        net = PetriNet(
            places=(Place("A", 4), Place("B", 0), Place("C", 0)),
            transitions=(Transition("T", Immediate(),
                                    input_arcs=(Arc("A", FlushAll()),),
                                    output_arcs=(Arc("B", Flushed()),
                                                 Arc("C", Constant(1)))),))
        marking, kappa = fire(net, {"A": 4, "B": 0, "C": 0}, "T")
        assert kappa == 4
        assert marking == {"A": 0, "B": 4, "C": 1}

    def test_firing_disabled_transition_raises(self):
        net = PetriNet(
            places=(Place("A", 0),),
            transitions=(Transition("T", Immediate(),
                                    input_arcs=(Arc("A"),)),))
        with pytest.raises(ContractViolationError):
            fire(net, {"A": 0}, "T")

    def test_unknown_transition_raises(self):
        net = PetriNet(places=(Place("A", 0),), transitions=())
        with pytest.raises(KeyError):
            fire(net, {"A": 0}, "NOPE")


class TestVanish:
    def test_resolves_chain_to_tangible(self):
        net = PetriNet(
            places=(Place("A", 2), Place("B", 0), Place("C", 0)),
            transitions=(
                Transition("T1", Immediate(), input_arcs=(Arc("A"),),
                           output_arcs=(Arc("B"),)),
                Transition("T2", Immediate(), input_arcs=(Arc("B"),),
                           output_arcs=(Arc("C"),)),
            ))
        out = vanish(net, {"A": 2, "B": 0, "C": 0}, random.Random(0))
        assert out == {"A": 0, "B": 0, "C": 2}

    def test_priority_beats_weight(self):
        net = PetriNet(
            places=(Place("A", 1), Place("LO", 0), Place("HI", 0)),
            transitions=(
                Transition("T_LO", Immediate(priority=1, weight=1000.0),
                           input_arcs=(Arc("A"),), output_arcs=(Arc("LO"),)),
                Transition("T_HI", Immediate(priority=2, weight=1.0),
                           input_arcs=(Arc("A"),), output_arcs=(Arc("HI"),)),
            ))
        for seed in range(20):
            out = vanish(net, {"A": 1, "LO": 0, "HI": 0},
                         random.Random(seed))
            assert out == {"A": 0, "LO": 0, "HI": 1}

    def test_weight_proportional_choice(self):
        net = PetriNet(
            places=(Place("A", 1), Place("X", 0), Place("Y", 0)),
            transitions=(
                Transition("TX", Immediate(weight=1.0),
                           input_arcs=(Arc("A"),), output_arcs=(Arc("X"),)),
                Transition("TY", Immediate(weight=3.0),
                           input_arcs=(Arc("A"),), output_arcs=(Arc("Y"),)),
            ))
        rng = random.Random(42)
        trials = 100_000
        hits = 0
        start = {"A": 1, "X": 0, "Y": 0}
        for _ in range(trials):
            if vanish(net, start, rng)["X"] == 1:
                hits += 1
        assert abs(hits / trials - 0.25) < 0.01

    def test_livelock_detection(self):
        net = PetriNet(
            places=(Place("A", 1), Place("B", 0)),
            transitions=(
                Transition("AB", Immediate(), input_arcs=(Arc("A"),),
                           output_arcs=(Arc("B"),)),
                Transition("BA", Immediate(), input_arcs=(Arc("B"),),
                           output_arcs=(Arc("A"),)),
            ))
        with pytest.raises(LivelockError):
            vanish(net, {"A": 1, "B": 0}, random.Random(0),
                   max_immediate_steps=100)


# ---------------------------------------------------------------------------
# Property tests: enabling and firing against a naive reference

place_names = ("P0", "P1", "P2")


@st.composite
def small_nets(draw):
    places = tuple(Place(n, draw(st.integers(0, 5))) for n in place_names)
    transitions = []
    for i in range(draw(st.integers(1, 3))):
        n_in = draw(st.integers(0, 2))
        in_places = draw(st.permutations(place_names))[:n_in]
        input_arcs = tuple(
            Arc(p, Constant(draw(st.integers(1, 3)))) for p in in_places)
        guard = None
        if draw(st.booleans()):
            guard = Atom(draw(st.sampled_from(place_names)),
                         draw(st.sampled_from(("=", "<", ">=", "!="))),
                         IntRhs(draw(st.integers(0, 4))))
        transitions.append(Transition(
            f"T{i}", Immediate(), input_arcs=input_arcs, guard=guard))
    return PetriNet(places=places, transitions=tuple(transitions))


def naive_degree(net, t, marking):
    if t.guard is not None and not eval_predicate(t.guard, marking,
                                                 dict(net.parameters)):
        return 0
    degrees = []
    for arc in t.input_arcs:
        degrees.append(marking[arc.place] // arc.count.k)
    if not degrees:
        return 1
    return min(degrees)


@settings(max_examples=200, deadline=None)
@given(net=small_nets(), data=st.data())
def test_enabled_set_matches_naive_reference(net, data):
    marking = {n: data.draw(st.integers(0, 6), label=n) for n in place_names}
    expected = {}
    for t in net.transitions:
        d = naive_degree(net, t, marking)
        if d > 0:
            expected[t.name] = d
    assert enabled_set(net, marking) == expected


@settings(max_examples=200, deadline=None)
@given(net=small_nets(), data=st.data())
def test_fire_applies_arc_deltas(net, data):
    marking = {n: data.draw(st.integers(0, 6), label=n) for n in place_names}
    enabled = enabled_set(net, marking)
    if not enabled:
        return
    name = data.draw(st.sampled_from(sorted(enabled)))
    t = net.transition(name)
    after, kappa = fire(net, marking, name)
    assert kappa == 0
    expected = dict(marking)
    for arc in t.input_arcs:
        expected[arc.place] -= arc.count.k
    for arc in t.output_arcs:
        expected[arc.place] += arc.count.k
    assert after == expected
    assert all(v >= 0 for v in after.values())


# ---------------------------------------------------------------------------
# Stationary simulation

def run(net, queries, **kwargs):
    defaults = dict(warmup_time=100.0, batch_count=20, batch_length=100.0,
                    seed=7)
    defaults.update(kwargs)
    return simulate_stationary(net, queries, SimConfig(**defaults))


class TestStationarySimulation:
    def test_mm1k_against_closed_form(self):
        lam, mu, K = 8.0, 10.0, 5
        oracle = mm1k(lam, mu, K)
        net = mm1k_net(lam, mu, K)
        q_len = ExpectedTokens("Q")
        q_blocked = ProbabilityOf(Atom("ROOM", "=", IntRhs(0)))
        q_rate = FiringRate("SERVE")
        res = run(net, [q_len, q_blocked, q_rate], batch_length=200.0)
        assert res.value(q_len) == pytest.approx(
            oracle.mean_in_system, abs=max(3 * res.halfwidth(q_len),
                                           0.03 * oracle.mean_in_system))
        assert res.value(q_blocked) == pytest.approx(
            oracle.blocking_prob, abs=max(3 * res.halfwidth(q_blocked),
                                          0.05 * oracle.blocking_prob))
        assert res.value(q_rate) == pytest.approx(
            oracle.effective_rate, abs=max(3 * res.halfwidth(q_rate),
                                           0.03 * oracle.effective_rate))

    def test_mmck_against_closed_form(self):
        lam, mu, c, K = 6.0, 2.0, 3, 7
        oracle = mmck(lam, mu, c, K)
        net = mmck_net(lam, mu, c, K)
        q_n = [ExpectedTokens("Q"), ExpectedTokens("S")]
        q_blocked = ProbabilityOf(Atom("ROOM", "=", IntRhs(0)))
        res = run(net, q_n + [q_blocked], batch_length=200.0)
        n_est = res.value(q_n[0]) + res.value(q_n[1])
        hw = math.hypot(res.halfwidth(q_n[0]), res.halfwidth(q_n[1]))
        assert n_est == pytest.approx(
            oracle.mean_in_system, abs=max(3 * hw,
                                           0.03 * oracle.mean_in_system))
        assert res.value(q_blocked) == pytest.approx(
            oracle.blocking_prob, abs=max(3 * res.halfwidth(q_blocked),
                                          0.05 * oracle.blocking_prob))

    def test_infinite_server_mean(self):
        # M/M/inf: mean in system is exactly arrival rate x mean service
        net = PetriNet(
            places=(Place("Q", 0),),
            transitions=(
                Transition("ARRIVE", Exponential(0.2),
                           output_arcs=(Arc("Q"),)),
                Transition("SERVE", Exponential(2.0),
                           input_arcs=(Arc("Q"),),
                           server_semantics=ServerSemantics.INFINITE),
            ))
        q = ExpectedTokens("Q")
        res = run(net, [q])
        assert res.value(q) == pytest.approx(10.0, rel=0.05)

    def test_single_server_mean(self):
        # M/M/1 at rho = 0.5: mean in system is rho / (1 - rho) = 1
        net = PetriNet(
            places=(Place("Q", 0),),
            transitions=(
                Transition("ARRIVE", Exponential(2.0),
                           output_arcs=(Arc("Q"),)),
                Transition("SERVE", Exponential(1.0),
                           input_arcs=(Arc("Q"),)),
            ))
        q = ExpectedTokens("Q")
        res = run(net, [q], batch_length=500.0)
        assert res.value(q) == pytest.approx(1.0, rel=0.08)

    def test_deterministic_source_rate(self):
        net = PetriNet(
            places=(Place("Q", 0),),
            transitions=(
                Transition("TICK", Deterministic(0.1),
                           output_arcs=(Arc("Q"),)),
                Transition("SINK", Exponential(0.01),
                           input_arcs=(Arc("Q"),),
                           server_semantics=ServerSemantics.INFINITE),
            ))
        q = FiringRate("TICK")
        res = run(net, [q], warmup_time=10.0, batch_count=10,
                  batch_length=50.0)
        assert res.value(q) == pytest.approx(10.0, rel=0.01)

    def test_race_with_restart_cancels_pending_firings(self):
        # the token shuttles between A and B every ~0.4 s on average, so a
        # 5 s deterministic timer on A restarts constantly and never fires
        net = PetriNet(
            places=(Place("A", 1), Place("B", 0), Place("C", 0)),
            transitions=(
                Transition("OFF", Exponential(0.4), input_arcs=(Arc("A"),),
                           output_arcs=(Arc("B"),)),
                Transition("ON", Exponential(0.4), input_arcs=(Arc("B"),),
                           output_arcs=(Arc("A"),)),
                Transition("TIMER", Deterministic(5.0),
                           input_arcs=(Arc("A"),), output_arcs=(Arc("C"),)),
            ))
        q = FiringRate("TIMER")
        res = run(net, [q], warmup_time=10.0, batch_count=10,
                  batch_length=100.0)
        assert res.value(q) == 0.0

    def test_confidence_interval_matches_t_formula(self):
        net = mm1k_net(8.0, 10.0, 5)
        q = ExpectedTokens("Q")
        res = run(net, [q], batch_count=12, batch_length=50.0,
                  confidence_level=0.9)
        vals = res.estimates[q].batch_values
        assert len(vals) == 12
        mean = sum(vals) / len(vals)
        var = sum((v - mean) ** 2 for v in vals) / (len(vals) - 1)
        expected_hw = scipy_stats.t.ppf(0.95, 11) * math.sqrt(var / 12)
        assert res.value(q) == pytest.approx(mean)
        assert res.halfwidth(q) == pytest.approx(expected_hw)

    def test_same_seed_reproduces_exactly(self):
        net = mm1k_net(8.0, 10.0, 5)
        q = ExpectedTokens("Q")
        r1 = run(net, [q], batch_count=5, batch_length=20.0, seed=3)
        r2 = run(net, [q], batch_count=5, batch_length=20.0, seed=3)
        assert r1.estimates[q].batch_values == r2.estimates[q].batch_values
        r3 = run(net, [q], batch_count=5, batch_length=20.0, seed=4)
        assert r1.estimates[q].batch_values != r3.estimates[q].batch_values

    def test_event_cap_yields_partial_result(self):
        net = mm1k_net(8.0, 10.0, 5)
        q = ExpectedTokens("Q")
        with pytest.raises(PartialResultError) as exc_info:
            run(net, [q], max_events=50)
        partial = exc_info.value.result
        assert partial is not None
        assert partial.event_count >= 50

    def test_token_divergence_detected(self):
        net = PetriNet(
            places=(Place("Q", 0),),
            transitions=(Transition(
                "FLOOD", Deterministic(0.001),
                output_arcs=(Arc("Q", Constant(600_000_000)),)),))
        with pytest.raises(DivergenceError):
            run(net, [ExpectedTokens("Q")], warmup_time=0.0,
                batch_count=2, batch_length=1.0)

    def test_sim_config_validation(self):
        with pytest.raises(ValueError):
            SimConfig(batch_count=1)
        with pytest.raises(ValueError):
            SimConfig(batch_length=0.0)
        with pytest.raises(ValueError):
            SimConfig(confidence_level=1.0)
        with pytest.raises(ValueError):
            SimConfig(warmup_time=-1.0)

    def test_unknown_query_targets_raise(self):
        net = mm1k_net(8.0, 10.0, 5)
        with pytest.raises(ContractViolationError):
            run(net, [ExpectedTokens("NOPE")], batch_count=2,
                batch_length=1.0)
        with pytest.raises(ContractViolationError):
            run(net, [FiringRate("NOPE")], batch_count=2, batch_length=1.0)
