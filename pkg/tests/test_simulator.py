"""Scenario engine: allocation, adaptation, handover policy, stepping,
determinism, and ping-pong detection."""

import dataclasses

import numpy as np
import pytest

from ranstab import (
    PolicyParams,
    RadioParams,
    RuConfig,
    ScenarioConfig,
    Topology,
    default_scenario,
    detect_ping_pong,
    run_scenario,
)
from ranstab.simulator import (
    HandoverRecord,
    ScenarioState,
    UeState,
    adapt_capacity,
    allocate_prbs,
    apply_handover_policy,
    initial_state,
    step,
)


def make_config(n_rus=2, beta=None, **overrides):
    topo = Topology.from_edges(n_rus, [(i, i + 1) for i in range(n_rus - 1)])
    rus = [
        RuConfig(id=i, position=(500.0 * i, 0.0), tx_power=10.0, cio={j: 5.0 for j in topo.neighbors(i)}, hys=2.0)
        for i in range(n_rus)
    ]
    if beta is None:
        beta = np.zeros((n_rus, n_rus))
    defaults = dict(
        topology=topo,
        rus=rus,
        radio=RadioParams(),
        policy=PolicyParams(beta=np.asarray(beta, dtype=float)),
        steps=10,
        ue_arrival_rate=0.0,
    )
    defaults.update(overrides)
    return ScenarioConfig(**defaults)


def make_ue(ue_id, serving, required, rsrp=None, seq=None, lifetime=10_000):
    required = np.asarray(required, dtype=float)
    return UeState(
        id=ue_id,
        position=(0.0, 0.0),
        bitrate=1e5,
        lifetime=lifetime,
        serving=serving,
        required=required,
        rsrp=np.full(len(required), -70.0) if rsrp is None else np.asarray(rsrp, dtype=float),
        arrival_seq=ue_id if seq is None else seq,
    )


def make_state(config, ues, provisioned):
    return ScenarioState(
        t=0,
        ues=list(ues),
        provisioned=np.asarray(provisioned, dtype=int),
        allocated=np.zeros(config.topology.n, dtype=int),
        rng=np.random.default_rng(0),
        next_ue_id=len(ues),
        next_seq=len(ues),
    )


class TestAllocatePrbs:
    def test_no_contention(self):
        config = make_config()
        state = make_state(config, [make_ue(0, 0, [10, 10])], [100, 100])
        allocate_prbs(state, config)
        assert state.ues[0].allocated == 10
        assert state.allocated[0] == 10

    def test_fcfs_exhaustion(self):
        config = make_config()
        ues = [make_ue(0, 0, [60, 60]), make_ue(1, 0, [60, 60])]
        state = make_state(config, ues, [100, 100])
        allocate_prbs(state, config)
        assert ues[0].allocated == 60
        assert ues[1].allocated == 40

    def test_empty_cell(self):
        config = make_config()
        state = make_state(config, [], [100, 100])
        allocate_prbs(state, config)
        assert np.all(state.allocated == 0)


class TestAdaptCapacity:
    def test_fixed_point_at_load_one(self):
        config = make_config(n_rus=1)
        state = make_state(config, [make_ue(0, 0, [50.0])], [50])
        adapt_capacity(state, config)
        assert state.provisioned[0] == 50

    def test_moves_half_way(self):
        config = make_config(n_rus=1)
        state = make_state(config, [make_ue(0, 0, [100.0])], [50])
        adapt_capacity(state, config)
        assert state.provisioned[0] == 75

    def test_cap_binds_under_overload(self):
        config = make_config(n_rus=1, adapt_gain=1.0)
        state = make_state(config, [make_ue(0, 0, [200.0])], [90])
        adapt_capacity(state, config)
        assert state.provisioned[0] == 100

    def test_shrink_preempts_recent_grants(self):
        config = make_config(n_rus=1, adapt_gain=1.0)
        ues = [make_ue(0, 0, [30.0]), make_ue(1, 0, [30.0])]
        state = make_state(config, ues, [100])
        allocate_prbs(state, config)
        # demand 60 -> provisioned shrinks to 60; latest grant is trimmed
        adapt_capacity(state, config)
        assert state.provisioned[0] == 60
        assert state.allocated[0] <= state.provisioned[0]
        assert ues[1].allocated == 30  # preemption order: most recent first


class TestHandoverPolicy:
    def overload_fixture(self, beta_01=10.0):
        beta = np.zeros((2, 2))
        beta[0, 1] = beta_01
        config = make_config(beta=beta)
        ues = [make_ue(k, 0, [3.0, 3.0]) for k in range(5)]
        ues.append(make_ue(5, 1, [5.0, 5.0]))
        state = make_state(config, ues, [10, 10])  # loads 1.5 and 0.5
        return config, state, ues

    def test_volume_bound_respected(self):
        config, state, _ = self.overload_fixture(beta_01=10.0)
        moved = apply_handover_policy(state, config)
        # gap 1.0, beta 10 -> budget 10 PRBs; three 3-PRB UEs fit, a fourth would not
        assert len(moved) == 3
        assert all(rec.from_ru == 0 and rec.to_ru == 1 for rec in moved)

    def test_balanced_loads_no_handover(self):
        beta = np.zeros((2, 2))
        beta[0, 1] = beta[1, 0] = 10.0
        config = make_config(beta=beta)
        ues = [make_ue(0, 0, [5.0, 5.0]), make_ue(1, 1, [5.0, 5.0])]
        state = make_state(config, ues, [10, 10])
        assert apply_handover_policy(state, config) == []

    def test_zero_beta_never_moves(self):
        config, state, _ = self.overload_fixture(beta_01=0.0)
        assert apply_handover_policy(state, config) == []

    def test_a3_gate_blocks_moves(self):
        config, state, ues = self.overload_fixture()
        for ue in ues:
            ue.rsrp = np.array([-60.0, -90.0])  # neighbor far too weak
        assert apply_handover_policy(state, config) == []

    def test_conservation(self):
        config, state, ues = self.overload_fixture()
        before = sorted((ue.id, ue.bitrate) for ue in state.ues)
        apply_handover_policy(state, config)
        after = sorted((ue.id, ue.bitrate) for ue in state.ues)
        assert before == after
        assert all(0 <= ue.serving < 2 for ue in state.ues)


class TestStepAndRun:
    def test_empty_network_advances(self):
        config = make_config(ue_arrival_rate=0.0)
        state = initial_state(config)
        row, handovers = step(state, config)
        assert state.t == 1
        assert np.all(row["load"] == 0.0)
        assert handovers == []

    def test_zero_steps_empty_series(self):
        run = run_scenario(make_config(steps=0))
        assert run.series.n_samples == 0

    def test_determinism(self, tmp_path):
        from ranstab.store import write_telemetry

        config = default_scenario("symmetric", seed=13, steps=40)
        a, b = run_scenario(config), run_scenario(config)
        assert np.array_equal(a.series.loads, b.series.loads)
        pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
        write_telemetry(a.series, pa)
        write_telemetry(b.series, pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_single_ru_converges_to_load_one(self):
        config = make_config(n_rus=1, adapt_gain=1.0, steps=5)
        state = initial_state(config)
        state.ues.append(make_ue(0, 0, [50.0]))
        loads = []
        for _ in range(5):
            row, _ = step(state, config)
            loads.append(row["load"][0])
        assert state.provisioned[0] == 50
        assert loads[-1] == pytest.approx(1.0)

    def test_capacity_safety_over_run(self):
        config = default_scenario("symmetric", seed=3, steps=60)
        series = run_scenario(config).series
        prb_min = np.array([ru.prb_min for ru in config.rus])
        prb_max = np.array([ru.prb_max for ru in config.rus])
        assert np.all(series.provisioned >= prb_min)
        assert np.all(series.provisioned <= prb_max)
        assert np.all(series.allocated <= series.provisioned)

    def test_isolated_policy_never_hands_over(self):
        config = default_scenario("none", seed=5, steps=80)
        assert run_scenario(config).handovers == []

    def test_warm_start_hits_initial_load(self):
        config = default_scenario("none", seed=2, steps=1)
        config = dataclasses.replace(config, adapt_gain=0.01)
        loads = run_scenario(config).series.loads[0]
        assert abs(loads.mean() - 2.0) < 0.3  # displaced start per initial_load=2.0


class TestConfigValidation:
    def test_beta_off_edge_rejected(self):
        beta = np.zeros((2, 2))
        topo = Topology.from_edges(2, [])
        policy = PolicyParams(beta=beta)
        beta2 = beta.copy()
        beta2[0, 1] = 1.0
        with pytest.raises(ValueError, match="off topology"):
            PolicyParams(beta=beta2).validate_against(topo)
        policy.validate_against(topo)  # zero beta is fine anywhere

    def test_negative_beta_rejected(self):
        with pytest.raises(ValueError, match="nonnegative"):
            PolicyParams(beta=np.array([[0.0, -1.0], [0.0, 0.0]]))

    def test_initial_load_shape_checked(self):
        with pytest.raises(ValueError, match="initial_load"):
            make_config(initial_load=[1.0, 2.0, 3.0])

    def test_bad_adapt_gain_rejected(self):
        with pytest.raises(ValueError, match="adapt_gain"):
            make_config(adapt_gain=0.0)


class TestPingPongDetection:
    def test_empty_log(self):
        assert detect_ping_pong(None, [], 20, 3) == []

    def test_three_bounces_in_window(self):
        log = [
            HandoverRecord(0, 7, 1, 2),
            HandoverRecord(5, 7, 2, 1),
            HandoverRecord(9, 7, 1, 2),
        ]
        events = detect_ping_pong(None, log, 20, 3)
        assert len(events) == 1
        event = events[0]
        assert event.ue_id == 7
        assert event.ru_pair == (1, 2)
        assert event.bounce_count == 3
        assert event.window == (0, 9)

    def test_single_handover_below_threshold(self):
        assert detect_ping_pong(None, [HandoverRecord(0, 1, 0, 1)], 20, 2) == []

    def test_bounces_spread_wider_than_window(self):
        log = [HandoverRecord(t, 1, 0, 1) for t in (0, 30, 60)]
        assert detect_ping_pong(None, log, 20, 3) == []

    def test_distinct_pairs_not_conflated(self):
        log = [
            HandoverRecord(0, 1, 0, 1),
            HandoverRecord(1, 1, 1, 2),
            HandoverRecord(2, 1, 2, 0),
        ]
        assert detect_ping_pong(None, log, 20, 2) == []

    @pytest.mark.parametrize("window,threshold", [(1, 3), (20, 1)])
    def test_parameter_validation(self, window, threshold):
        with pytest.raises(ValueError):
            detect_ping_pong(None, [], window, threshold)
