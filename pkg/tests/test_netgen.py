import numpy as np
import pytest

from popnet.config.settings import NetworkConfig
from popnet.services.netgen import (
    BlockModelSpec, ContactGraph, assemble_network, household_cliques, reference_graph,
    sbm_block_degrees, sbm_generate, static_scale_free, watts_strogatz,
)
from popnet.services.placement import Place, Population

from factories import person


def test_household_cliques():
    u, v = household_cliques({"h1": [3, 1, 2], "h2": [7], "h3": [5, 4]})
    pairs = sorted(zip(u.tolist(), v.tolist()))
    assert pairs == [(1, 2), (1, 3), (2, 3), (4, 5)]


def test_block_degrees():
    kij = sbm_block_degrees([10, 10], k=8.0, alpha=0.9)
    np.testing.assert_allclose(kij, [[7.6, 0.4], [0.4, 7.6]])
    np.testing.assert_allclose(sbm_block_degrees([3, 7, 10], 12.0, 0.5).sum(axis=1), 12.0)


def test_sbm_mean_degree_and_mixing():
    members = np.arange(2000)
    blocks = np.where(members < 1000, "low", "high")
    u, v = sbm_generate(BlockModelSpec(members, blocks, k=8.0, alpha=0.9), np.random.default_rng(4))
    assert 2.0 * len(u) / len(members) == pytest.approx(8.0, abs=0.3)
    within = np.mean((u < 1000) == (v < 1000))
    assert within == pytest.approx(0.95, abs=0.02)
    assert np.all(u != v)


def test_sbm_needs_two_members():
    with pytest.raises(ValueError):
        sbm_generate(BlockModelSpec([0], ["a"], 4.0, 0.5), np.random.default_rng(0))


def test_watts_strogatz_ring():
    u, v = watts_strogatz(range(100, 110), 4, 0.0, np.random.default_rng(0))
    assert len(u) == 20
    degrees = np.bincount(np.concatenate([u, v]) - 100)
    assert degrees.tolist() == [4] * 10
    with pytest.raises(ValueError):
        watts_strogatz(range(4), 4, 0.1, np.random.default_rng(0))
    with pytest.raises(ValueError):
        watts_strogatz(range(10), 3, 0.1, np.random.default_rng(0))


def test_reference_graph_zero_degree():
    g = reference_graph("erdos_renyi", 50, 0.0, np.random.default_rng(0))
    assert g.n_vertices == 50
    assert g.n_edges == 0


def test_reference_graph_mean_degrees():
    rng = np.random.default_rng(1)
    ba = reference_graph("barabasi_albert", 500, 8.0, rng)
    assert 2.0 * ba.n_edges / 500 == pytest.approx(8.0, abs=0.2)
    ws = reference_graph("watts_strogatz", 500, 9.0, rng)
    assert ws.n_edges == 500 * 4
    with pytest.raises(ValueError, match="unknown reference graph"):
        reference_graph("lattice", 10, 2.0, rng)


def test_static_scale_free_edge_count():
    u, v = static_scale_free(400, 6.0, 2.5, np.random.default_rng(2))
    assert len(u) == 1200
    assert np.all(u < v)
    assert len(set(zip(u.tolist(), v.tolist()))) == 1200


def test_edges_sorted_and_deduplicated():
    g = ContactGraph.from_layers(6, [
        ("work", np.array([4, 1, 2]), np.array([3, 0, 2])),
        ("home", np.array([5, 0, 1]), np.array([2, 1, 0])),
    ])
    rows = list(zip(g.layer.tolist(), g.u.tolist(), g.v.tolist()))
    # home=0, work=1; self loops dropped, (0, 1) kept once per layer
    assert rows == [(0, 0, 1), (0, 2, 5), (1, 0, 1), (1, 3, 4)]
    su, sv = g.simple_edges()
    assert list(zip(su.tolist(), sv.tolist())) == [(0, 1), (2, 5), (3, 4)]
    with pytest.raises(ValueError):
        ContactGraph.from_layers(3, [("home", np.array([0]), np.array([3]))])


def test_csv_keeps_isolated_vertices(tmp_path):
    g = ContactGraph.from_layers(10, [("home", np.array([0]), np.array([1]))])
    path = str(tmp_path / "g.csv")
    g.save_csv(path)
    again = ContactGraph.load_csv(path, n_vertices=10)
    assert again.n_vertices == 10
    assert again.n_edges == 1
    assert again.layer_counts() == {"home": 1}


def _placed_population():
    pop = Population()
    for k in range(30):
        pop.add_person("240010001001", person(35, industry="RET", income=20000.0 if k % 2 else 90000.0),
                       household_id=f"h{k // 3}", workplace_id="W1", work_cbg="240010001002")
    pop.add_person("OUTSIDE", person(None, industry="RET", income=None, relationship="placeholder"),
                   placeholder=True, workplace_id="W1", work_cbg="240010001002")
    pop.add_place(Place(place_id="W1", kind="workplace", cbg="240010001002", capacity=31, size=31,
                        industry="RET"))
    return pop


def test_assemble_network_layers():
    pop = _placed_population()
    g = assemble_network(pop, NetworkConfig(), master_seed=3)
    assert g.n_vertices == 31
    counts = g.layer_counts()
    assert counts["home"] == 10 * 3
    assert counts["work"] > 0
    again = assemble_network(pop, NetworkConfig(), master_seed=3)
    np.testing.assert_array_equal(g.u, again.u)
    np.testing.assert_array_equal(g.v, again.v)


def test_sbm_degrees_match_block_expectations():
    members = np.arange(2000)
    blocks = np.where(members < 1000, "low", "high")
    spec = BlockModelSpec(members, blocks, k=8.0, alpha=0.9)
    within, cross = [], []
    for seed in range(20):
        u, v = sbm_generate(spec, np.random.default_rng(seed))
        same = (u < 1000) == (v < 1000)
        within.append(2.0 * same.sum() / 2000)
        cross.append((~same).sum() / 1000)
    expected = sbm_block_degrees([1000, 1000], 8.0, 0.9)
    for values, target in ((within, expected[0, 0]), (cross, expected[0, 1])):
        se = np.std(values, ddof=1) / np.sqrt(len(values))
        assert abs(np.mean(values) - target) <= 3 * se


def test_block_degrees_sum_to_k():
    rng = np.random.default_rng(8)
    for _ in range(1000):
        sizes = rng.integers(1, 500, size=int(rng.integers(1, 8)))
        k = float(rng.uniform(0.0, 30.0))
        kij = sbm_block_degrees(sizes, k, float(rng.uniform(0.0, 1.0)))
        np.testing.assert_allclose(kij.sum(axis=1), k, rtol=1e-12, atol=1e-12)
