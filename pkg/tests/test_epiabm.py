import networkx as nx
import numpy as np
import pandas as pd
import pytest
from scipy import stats

from popnet.config.settings import SimConfig
from popnet.services.epiabm import (
    E, I, R, S, SimAgents, boundary_update, init_sim, run_replicates, run_simulation, step_day, summarize,
    takeoff_day,
)
from popnet.services.netgen import ContactGraph, reference_graph
from popnet.services.streams import stream


def _ring(n, k=2):
    u = np.repeat(np.arange(n), k // 2)
    v = (u + np.tile(np.arange(1, k // 2 + 1), n)) % n
    return ContactGraph.from_layers(n, [("ref", u, v)])


def test_no_transmission_keeps_seeds_only():
    cfg = SimConfig(p_transmit=0.0, n_seeds=3, horizon_days=30)
    trace = run_simulation(_ring(50), SimAgents.anonymous(50), cfg, np.random.default_rng(0))
    assert trace.tolist() == [3] * 30


def test_no_seeds_no_epidemic():
    cfg = SimConfig(p_transmit=1.0, n_seeds=0, horizon_days=20)
    trace = run_simulation(_ring(50), SimAgents.anonymous(50), cfg, np.random.default_rng(0))
    assert not trace.any()


def test_transmission_timing_on_an_edge():
    g = ContactGraph.from_layers(2, [("ref", np.array([0]), np.array([1]))])
    cfg = SimConfig(p_transmit=1.0, n_seeds=1, exposed_days=5, infectious_days_min=1, infectious_days_max=1,
                    horizon_days=30)
    st = init_sim(g, SimAgents.anonymous(2), cfg, np.random.default_rng(0))
    other = 1 - int(st.seeds[0])
    step_day(st)
    assert st.state[other] == E and st.state[st.seeds[0]] == R
    for _ in range(5):
        step_day(st)
    assert st.day == 6 and st.state[other] == I
    step_day(st)
    assert st.state[other] == R


def test_trace_is_forward_filled_after_extinction():
    g = ContactGraph.from_layers(2, [("ref", np.array([0]), np.array([1]))])
    cfg = SimConfig(p_transmit=1.0, n_seeds=1, infectious_days_min=1, infectious_days_max=1, horizon_days=40)
    trace = run_simulation(g, SimAgents.anonymous(2), cfg, np.random.default_rng(0))
    assert trace.tolist() == [2] * 40


def _boundary_agents(n, placeholders=(), outside=()):
    agents = SimAgents.anonymous(n)
    agents.placeholder[list(placeholders)] = True
    agents.works_outside[list(outside)] = True
    return agents


def test_boundary_exposes_placeholders_at_window_rate():
    cfg = SimConfig(p_transmit=0.0, n_seeds=0, horizon_days=30)
    st = init_sim(_ring(10), _boundary_agents(10, placeholders=[8, 9]), cfg, np.random.default_rng(0))
    assert st.window_susceptible == 8
    st.window_exposed = 8
    boundary_update(st)
    assert st.state[8] == E and st.state[9] == E
    assert st.boundary_exposed == 2
    assert st.window_exposed == 0


def test_boundary_idle_without_window_infections():
    cfg = SimConfig(p_transmit=0.0, n_seeds=0, horizon_days=30)
    st = init_sim(_ring(10), _boundary_agents(10, placeholders=[8], outside=[0]), cfg, np.random.default_rng(0))
    boundary_update(st)
    assert not np.any(st.state != S)


def test_boundary_work_rate_drives_outside_workers():
    cfg = SimConfig(p_transmit=0.0, n_seeds=0, horizon_days=30)
    agents = _boundary_agents(10, outside=[0, 1])
    agents.workplace[2:6] = 0
    st = init_sim(_ring(10), agents, cfg, np.random.default_rng(0))
    assert st.window_workers_susceptible == 4
    st.window_work_exposed = 4
    boundary_update(st)
    assert st.state[0] == E and st.state[1] == E
    assert np.all(st.state[2:] == S)


def test_seeds_exceeding_population():
    cfg = SimConfig(n_seeds=5, horizon_days=10)
    with pytest.raises(ValueError, match="n_seeds"):
        init_sim(_ring(6), _boundary_agents(6, placeholders=[0, 1, 2]), cfg, np.random.default_rng(0))


def test_replicates_deterministic_across_threads():
    g = _ring(300, k=4)
    cfg = SimConfig(p_transmit=0.3, n_seeds=5, horizon_days=60, replicates=3)
    traces1, summary1 = run_replicates(g, SimAgents.anonymous(300), cfg, master_seed=9, threads=1, name="ring")
    traces2, summary2 = run_replicates(g, SimAgents.anonymous(300), cfg, master_seed=9, threads=2, name="ring")
    pd.testing.assert_frame_equal(traces1, traces2)
    pd.testing.assert_frame_equal(summary1, summary2)
    assert (traces1["cumulative_infections"] - traces1["cumulative_excluding_seeds"] == 5).all()
    for _, trace in traces1.groupby("replicate"):
        assert np.all(np.diff(trace["cumulative_infections"].to_numpy()) >= 0)


def test_summary_confidence_interval():
    summary = summarize(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert summary["mean"].tolist() == [2.0, 3.0]
    half = stats.t.ppf(0.975, 1) * np.sqrt(2.0) / np.sqrt(2.0)
    np.testing.assert_allclose(summary["ci_high"] - summary["mean"], [half, half])
    single = summarize(np.array([[5.0, 6.0]]))
    assert (single["ci_low"] == single["ci_high"]).all()


def test_takeoff_day():
    assert takeoff_day(np.array([0, 5, 30, 40]), 100) == 2
    assert takeoff_day(np.array([0, 5, 10]), 100) is None


def test_agents_from_people_table():
    people = pd.DataFrame({
        "person_id": [0, 1, 2, 3],
        "household_id": ["H:a:0", "H:a:0", None, None],
        "workplace_id": ["W:x:RET:0", "W:OUTSIDE:1", "W:x:RET:0", None],
        "work_cbg": ["x", "OUTSIDE", "x", None],
        "placeholder_flag": [False, False, True, False],
    })
    agents = SimAgents.from_people(people)
    assert agents.placeholder.tolist() == [False, False, True, False]
    assert agents.works_outside.tolist() == [False, True, False, False]
    assert agents.household[0] == agents.household[1] >= 0
    assert agents.household[2] == agents.household[3] == -1
    assert agents.workplace[0] == agents.workplace[2] >= 0
    assert agents.workplace[1] == agents.workplace[3] == -1


def _connected_graph(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(20, 120))
    nxg = nx.connected_watts_strogatz_graph(n, 4, float(rng.uniform(0.0, 0.5)), seed=seed)
    edges = np.array(list(nxg.edges()), dtype=np.int64)
    return ContactGraph.from_layers(n, [("ref", edges[:, 0], edges[:, 1])])


@pytest.mark.parametrize("seed", range(20))
def test_certain_transmission_reaches_everyone(seed):
    g = _connected_graph(seed)
    cfg = SimConfig(p_transmit=1.0, n_seeds=1, horizon_days=600)
    trace = run_simulation(g, SimAgents.anonymous(g.n_vertices), cfg, np.random.default_rng(seed))
    assert trace[-1] == g.n_vertices
    assert np.all(np.diff(trace) >= 0)


LEGAL_MOVES = {(S, S), (S, E), (E, E), (E, I), (I, I), (I, R), (R, R)}


@pytest.mark.parametrize("seed", range(10))
def test_states_only_move_forward(seed):
    g = _connected_graph(100 + seed)
    n = g.n_vertices
    agents = _boundary_agents(n, placeholders=[0, 1, 2], outside=[3, 4])
    agents.workplace[5:15] = 0
    cfg = SimConfig(p_transmit=0.3, n_seeds=3, horizon_days=120, boundary_interval_days=5)
    st = init_sim(g, agents, cfg, np.random.default_rng(seed))
    previous = st.state.copy()
    while st.day < cfg.horizon_days:
        step_day(st)
        moves = set(zip(previous.tolist(), st.state.tolist()))
        assert moves <= LEGAL_MOVES
        previous = st.state.copy()


@pytest.mark.slow
def test_hub_graph_takes_off_before_random_graph():
    n = 20000
    cfg = SimConfig(p_transmit=0.15, n_seeds=10, replicates=10, horizon_days=600)
    days = {}
    for kind in ("barabasi_albert", "erdos_renyi"):
        g = reference_graph(kind, n, 8.5, stream(1, "reference", kind))
        traces, _ = run_replicates(g, SimAgents.anonymous(n), cfg, master_seed=1, threads=2, name=kind)
        days[kind] = [takeoff_day(t["cumulative_infections"].to_numpy(), n)
                      for _, t in traces.groupby("replicate")]
    earlier = sum(1 for ba, er in zip(days["barabasi_albert"], days["erdos_renyi"])
                  if ba is not None and (er is None or ba < er))
    assert earlier >= 9
