import math

import numpy as np
import pytest

from cecsim.model import EdgeNode, Link, Microservice, ServiceDag, Topology
from cecsim.sim import (
    ActionCommand,
    CecEnv,
    EnvConfig,
    MsAction,
    audit_feasibility,
    route,
    run_episode,
)
from cecsim.workload import GenConfig, generate_topology, generate_workload
from cecsim.baselines import Greedy, LocalExecution

from conftest import chain_service

ECFG = EnvConfig(slots=6, data_norm_bits=5e8, load_norm_cycles=1e8, demand_norm=100.0)


def single_ms_service(sid, load, source, release=0.0, data=0.0, demand=1.0):
    ms = Microservice(sid, "m00", data, load, demand)
    return ServiceDag(sid, (ms,), frozenset(), release, source)


class TestRoute:
    def test_same_node_empty_path(self, line_topology):
        assert route("a", "a", line_topology) == ()

    def test_line(self, line_topology):
        assert route("a", "c", line_topology) == ("a", "b", "c")

    def test_diamond_tie_breaks_lexicographically(self):
        nodes = [EdgeNode(n, 1e6, 1.0) for n in "abcd"]
        links = [
            Link("a-b", ("a", "b"), 1.0),
            Link("a-c", ("a", "c"), 1.0),
            Link("b-d", ("b", "d"), 1.0),
            Link("c-d", ("c", "d"), 1.0),
        ]
        topo = Topology(nodes, links)
        assert route("a", "d", topo) == ("a", "b", "d")

    def test_unknown_node(self, line_topology):
        with pytest.raises(KeyError):
            route("a", "zz", line_topology)


class TestReset:
    def test_empty_workload_residuals_one(self, pair_topology):
        env = CecEnv(pair_topology, [], ECFG)
        state = env.observe()
        assert np.all(state.link_residuals == 1.0)
        assert np.all(state.node_residuals == 1.0)
        assert np.all(state.dag_features == 0.0)
        assert env.done

    def test_reset_deterministic(self, pair_topology):
        wl = [single_ms_service("s1", 1e6, "a")]
        env1 = CecEnv(pair_topology, wl, ECFG, seed=3)
        env2 = CecEnv(pair_topology, wl, ECFG, seed=3)
        assert env1.observe().equals(env2.observe())

    def test_dag_features_fill_first_slots(self, pair_topology):
        svc = chain_service("s1", [1e6, 2e6, 3e6], [1e6, 2e6, 3e6], "a")
        env = CecEnv(pair_topology, [svc], ECFG)
        state = env.observe()
        per = 5
        filled = state.dag_features[: 3 * per].reshape(3, per)
        assert np.all(filled[:, 0] > 0)  # data
        assert np.all(filled[:, 1] > 0)  # load
        assert np.all(state.dag_features[3 * per :] == 0.0)

    def test_observe_matches_reset_return(self, pair_topology):
        wl = [single_ms_service("s1", 1e6, "a")]
        env = CecEnv(pair_topology, wl, ECFG)
        first = env.reset()
        assert first.equals(env.observe())


class TestStep:
    def test_single_service_reward_minus_one(self, pair_topology):
        wl = [single_ms_service("s1", 10e6, "a")]
        env = CecEnv(pair_topology, wl, ECFG)
        action = ActionCommand({("s1", "m00"): MsAction("a", 1.0, 0.0)})
        state, reward, done, info = env.step(action)
        assert reward == pytest.approx(-1.0, abs=1e-9)
        assert done
        assert info["completed"] == (("s1", 1.0),)

    def test_empty_action_on_empty_pending_is_noop(self, pair_topology):
        env = CecEnv(pair_topology, [], ECFG)
        before = env.observe()
        state, reward, done, info = env.step(ActionCommand())
        assert reward == 0.0
        assert done == env.done
        assert state.equals(before)

    def test_fcfs_wait_equals_predecessor(self, pair_topology):
        wl = [
            single_ms_service("s1", 10e6, "a", release=0.0),
            single_ms_service("s2", 10e6, "a", release=0.0),
        ]
        env = CecEnv(pair_topology, wl, ECFG)
        assert set(env.pending_keys()) == {("s1", "m00"), ("s2", "m00")}
        action = ActionCommand(
            {
                ("s1", "m00"): MsAction("a", 1.0, 0.0),
                ("s2", "m00"): MsAction("a", 1.0, 0.0),
            }
        )
        _, reward, done, _ = env.step(action)
        assert done
        placement = env.placement_record()
        assert placement.assignments[("s1", "m00")].wait_s == pytest.approx(0.0)
        assert placement.assignments[("s2", "m00")].wait_s == pytest.approx(1.0)
        assert reward == pytest.approx(-(1.0 + 2.0))

    def test_unknown_microservice_rejected(self, pair_topology):
        env = CecEnv(pair_topology, [single_ms_service("s1", 1e6, "a")], ECFG)
        with pytest.raises(ValueError):
            env.step(ActionCommand({("nope", "m00"): MsAction("a", 1.0, 0.0)}))

    def test_unknown_node_rejected(self, pair_topology):
        env = CecEnv(pair_topology, [single_ms_service("s1", 1e6, "a")], ECFG)
        with pytest.raises(ValueError):
            env.step(ActionCommand({("s1", "m00"): MsAction("zz", 1.0, 0.0)}))

    def test_infeasible_fraction_clamped_not_crashed(self, pair_topology):
        env = CecEnv(pair_topology, [single_ms_service("s1", 1e6, "a")], ECFG)
        _, _, done, info = env.step(ActionCommand({("s1", "m00"): MsAction("a", 7.5, -2.0)}))
        assert done
        assert info["clamped"] >= 1


class TestFlows:
    def _two_node_chain(self, data_bits, fraction, defer=0.0):
        """m00 on a (1s compute), m01 on b pulling data over the link."""
        svc = chain_service("s1", [10e6, 10e6], [0.0, data_bits], "a")
        topo_nodes = [EdgeNode("a", 10e6, 100.0), EdgeNode("b", 10e6, 100.0)]
        topo = Topology(topo_nodes, [Link("a-b", ("a", "b"), 10e6)])
        env = CecEnv(topo, [svc], ECFG)
        action = ActionCommand(
            {
                ("s1", "m00"): MsAction("a", 1.0, 0.0),
                ("s1", "m01"): MsAction("b", fraction, defer),
            }
        )
        return env, action

    def test_flow_bandwidth_is_fraction_of_bottleneck(self):
        env, action = self._two_node_chain(50e6, 0.5)
        env.step(action)
        flows = env.flow_record()
        assert len(flows) == 1
        assert flows[0].bandwidth_bps == pytest.approx(5e6)
        # compute 1s, flow 50e6/5e6 = 10s, then 1s compute
        assert env.completion_times()["s1"] == pytest.approx(12.0)

    def test_residual_during_and_after_flow(self):
        env, action = self._two_node_chain(50e6, 0.5)
        events = []
        env.trace_sink = events.append
        env.step(action)
        starts = [e for e in events if e["event"] == "flow_ready"]
        finishes = [e for e in events if e["event"] == "flow_finish"]
        assert starts and finishes
        assert starts[0]["link_residual_bps"]["a-b"] == pytest.approx(5e6)
        assert finishes[0]["link_residual_bps"]["a-b"] == pytest.approx(10e6)

    def test_colocated_dependency_is_free(self):
        svc = chain_service("s1", [10e6, 10e6], [0.0, 50e6], "a")
        topo = Topology(
            [EdgeNode("a", 10e6, 100.0), EdgeNode("b", 10e6, 100.0)],
            [Link("a-b", ("a", "b"), 10e6)],
        )
        env = CecEnv(topo, [svc], ECFG)
        action = ActionCommand(
            {
                ("s1", "m00"): MsAction("a", 1.0, 0.0),
                ("s1", "m01"): MsAction("a", 1.0, 0.0),
            }
        )
        env.step(action)
        assert env.flow_record() == ()
        assert env.completion_times()["s1"] == pytest.approx(2.0)

    def test_defer_delays_flow(self):
        env, action = self._two_node_chain(50e6, 1.0, defer=2.0)
        env.step(action)
        flows = env.flow_record()
        assert flows[0].wait_s == pytest.approx(2.0)
        # 1s compute + 2s defer + 5s flow + 1s compute
        assert env.completion_times()["s1"] == pytest.approx(9.0)

    def test_full_bandwidth_flows_serialize(self):
        """Two full-bandwidth flows sharing one link run one after the other."""
        s1 = chain_service("s1", [10e6, 10e6], [0.0, 20e6], "a")
        s2 = chain_service("s2", [10e6, 10e6], [0.0, 20e6], "a")
        topo = Topology(
            [EdgeNode("a", 10e6, 100.0), EdgeNode("b", 10e6, 100.0)],
            [Link("a-b", ("a", "b"), 10e6)],
        )
        env = CecEnv(topo, [s1, s2], ECFG)
        action = ActionCommand(
            {
                ("s1", "m00"): MsAction("a", 1.0, 0.0),
                ("s1", "m01"): MsAction("b", 1.0, 0.0),
                ("s2", "m00"): MsAction("a", 1.0, 0.0),
                ("s2", "m01"): MsAction("b", 1.0, 0.0),
            }
        )
        env.step(action)
        flows = sorted(env.flow_record(), key=lambda f: f.wait_s)
        assert flows[0].wait_s == pytest.approx(0.0)
        # roots run serially on a: flow2 is ready at t=2, the link frees at
        # t=3 when flow1 (2 s at full rate) completes
        assert flows[1].wait_s == pytest.approx(1.0)
        assert flows[0].bandwidth_bps == pytest.approx(10e6)
        assert flows[1].bandwidth_bps == pytest.approx(10e6)
        assert env.completion_times() == pytest.approx({"s1": 4.0, "s2": 6.0})


class TestInvariantsOnRandomEpisodes:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    @pytest.mark.parametrize("scheduler_cls", [LocalExecution, Greedy])
    def test_feasible_and_complete(self, seed, scheduler_cls):
        cfg = GenConfig(seed=seed, device_count=2)
        topo = generate_topology(cfg)
        wl = generate_workload(cfg, 6, 5, 12.0, topo)
        env = CecEnv(topo, wl, EnvConfig.from_gen(cfg, slots=5, audit=True))
        result = run_episode(env, scheduler_cls())
        assert result.completed_all
        assert audit_feasibility(env) == []

    def test_reward_consistency(self):
        cfg = GenConfig(seed=5)
        topo = generate_topology(cfg)
        wl = generate_workload(cfg, 5, 4, 10.0, topo)
        env = CecEnv(topo, wl, EnvConfig.from_gen(cfg, slots=4))
        result = run_episode(env, Greedy())
        total_tt = sum(env.completion_times().values())
        assert result.total_reward == pytest.approx(-total_tt, rel=1e-12)

    def test_bit_identical_trajectories(self):
        cfg = GenConfig(seed=6)
        topo = generate_topology(cfg)
        wl = generate_workload(cfg, 5, 4, 10.0, topo)
        traces = []
        for _ in range(2):
            events = []
            env = CecEnv(topo, wl, EnvConfig.from_gen(cfg, slots=4), trace_sink=events.append)
            run_episode(env, Greedy())
            traces.append(events)
        assert traces[0] == traces[1]

    def test_work_conservation_immediate_start(self, pair_topology):
        # a ready microservice on an idle node with enough resources starts
        # at its ready instant (wait 0)
        wl = [single_ms_service("s1", 5e6, "a")]
        env = CecEnv(pair_topology, wl, ECFG)
        env.step(ActionCommand({("s1", "m00"): MsAction("b", 1.0, 0.0)}))
        asg = env.placement_record().assignments[("s1", "m00")]
        assert asg.wait_s == pytest.approx(0.0)
        assert asg.start_time_s == pytest.approx(0.0)


class TestResourceGating:
    def test_admission_waits_for_resources(self):
        """Node capacity 5 with two demand-4 microservices: strictly serial
        residency, second admitted only at the first's finish."""
        topo = Topology(
            [EdgeNode("a", 10e6, 5.0), EdgeNode("b", 10e6, 5.0)],
            [Link("a-b", ("a", "b"), 10e6)],
        )
        wl = [
            single_ms_service("s1", 10e6, "a", demand=4.0),
            single_ms_service("s2", 10e6, "a", demand=4.0),
        ]
        env = CecEnv(topo, wl, EnvConfig(slots=4, data_norm_bits=1e9, load_norm_cycles=1e8, demand_norm=10.0, audit=True))
        env.step(
            ActionCommand(
                {
                    ("s1", "m00"): MsAction("a", 1.0, 0.0),
                    ("s2", "m00"): MsAction("a", 1.0, 0.0),
                }
            )
        )
        assert env.completion_times() == pytest.approx({"s1": 1.0, "s2": 2.0})
        assert audit_feasibility(env) == []
        # at no audited instant were both resident together
        for rec in env.audit_records:
            assert len(rec.resident) <= 1


class TestMidRunObservation:
    def test_link_residual_visible_at_next_decision(self):
        """A half-rate flow in flight shows a 0.5 link residual to the next
        arriving service, and 1.0 once finished."""
        s1 = chain_service("s1", [10e6, 10e6], [0.0, 100e6], "a", release=0.0)
        s2 = single_ms_service("s2", 1e6, "a", release=5.0)
        s3 = single_ms_service("s3", 1e6, "a", release=50.0)
        topo = Topology(
            [EdgeNode("a", 10e6, 100.0), EdgeNode("b", 10e6, 100.0)],
            [Link("a-b", ("a", "b"), 10e6)],
        )
        env = CecEnv(topo, [s1, s2, s3], ECFG)
        state = env.step(
            ActionCommand(
                {
                    ("s1", "m00"): MsAction("a", 1.0, 0.0),
                    ("s1", "m01"): MsAction("b", 0.5, 0.0),
                }
            )
        )[0]
        # decision point t=5: flow started at t=1 at 5 Mbps, runs 20 s
        assert env.clock.now_s == pytest.approx(5.0)
        assert state.link_residuals[0] == pytest.approx(0.5)
        state = env.step(ActionCommand({("s2", "m00"): MsAction("a", 1.0, 0.0)}))[0]
        # decision point t=50: flow long gone
        assert state.link_residuals[0] == pytest.approx(1.0)
