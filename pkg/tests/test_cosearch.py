import math

import numpy as np
import pytest

from popnet.config.settings import AnnealConfig
from popnet.data.inputs import load_region_inputs
from popnet.services.cosearch import (
    FIT_REPORT_COLUMNS, SamplePool, SearchInfeasibleError, _Search, acceptance_probability, anneal_cbg,
    critical_value, ft2_cost, pool_ladder, synthesize_region,
)
from popnet.services.ingest import filter_cbgs

from factories import geo_frame


def test_ft2_cost_examples():
    assert ft2_cost([4, 9], [1, 4]) == pytest.approx(2.0)
    assert ft2_cost([0, 9], [4, 0]) == pytest.approx(13.0)
    assert ft2_cost([5, 5], [5, 5]) == 0.0


def test_ft2_cost_rejects_bad_vectors():
    with pytest.raises(ValueError, match="length mismatch"):
        ft2_cost([1, 2], [1])
    with pytest.raises(ValueError):
        ft2_cost([-1], [1])


def test_acceptance_probability():
    assert acceptance_probability(1.0, 1.0) == pytest.approx(math.exp(-1))
    assert acceptance_probability(-3.0, 0.5) == 1.0
    with pytest.raises(ValueError):
        acceptance_probability(1.0, 0.0)


def test_critical_value():
    assert critical_value(20) == pytest.approx(30.1435, abs=1e-3)


def _ladder_geo():
    return geo_frame([
        ("240010001001", 0, 0, "P1", "24001", "X", 50.0),
        ("240010001002", 1, 0, "P2", "24001", "X", 80.0),
        ("240030001001", 2, 0, "P3", "24003", "X", 55.0),
        ("240050001001", 3, 0, "P4", "24005", "", 10.0),
    ])


def _by_puma():
    return {p: np.array([i], dtype=np.int64) for i, p in enumerate(["P1", "P2", "P3", "P4"])}


def test_pool_ladder_levels_grow():
    geo = _ladder_geo()
    urban = {"P1": 50.0, "P2": 80.0, "P3": 55.0, "P4": 10.0}
    pools = [pool_ladder("240010001001", lv, geo, _by_puma(), urban) for lv in range(4)]
    assert [p.pumas for p in pools] == [
        ("P1",), ("P1", "P2"), ("P1", "P2", "P3"), ("P1", "P2", "P3"),
    ]
    for lower, upper in zip(pools, pools[1:]):
        assert set(lower.households) <= set(upper.households)


def test_pool_ladder_without_cbsa():
    geo = _ladder_geo()
    urban = {"P1": 50.0, "P2": 80.0, "P3": 55.0, "P4": 10.0}
    level1 = pool_ladder("240050001001", 1, geo, _by_puma(), urban)
    level2 = pool_ladder("240050001001", 2, geo, _by_puma(), urban)
    assert level1.pumas == level2.pumas == ("P4",)
    with pytest.raises(ValueError):
        pool_ladder("240050001001", 4, geo, _by_puma(), urban)


def _pool(level, members):
    return SamplePool(level=level, households=np.array(members, dtype=np.int64))


def test_anneal_finds_exact_mix():
    contributions = np.array([[1, 0], [0, 1]])
    cfg = AnnealConfig(cost_cutoff=0.01, max_steps_per_level=20000)
    result = anneal_cbg([7, 3], 10, [_pool(0, [0, 1])], cfg, np.random.default_rng(1), contributions)
    assert result.below_cutoff
    assert result.final_cost == pytest.approx(0.0, abs=1e-9)
    assert np.count_nonzero(result.selection == 0) == 7
    assert result.level_used == 0


def test_anneal_infinite_cutoff_keeps_first_selection():
    contributions = np.array([[1, 0], [0, 1]])
    cfg = AnnealConfig(cost_cutoff=math.inf)
    result = anneal_cbg([7, 3], 10, [_pool(0, [0, 1])], cfg, np.random.default_rng(1), contributions)
    assert result.steps == 0
    assert len(result.selection) == 10


def test_anneal_skips_empty_levels():
    contributions = np.array([[1, 0], [0, 1]])
    cfg = AnnealConfig(cost_cutoff=math.inf)
    pools = [_pool(0, []), _pool(1, [1])]
    result = anneal_cbg([7, 3], 10, pools, cfg, np.random.default_rng(1), contributions)
    assert result.level_used == 1
    assert set(result.selection.tolist()) == {1}


def test_anneal_returns_best_when_cutoff_missed():
    contributions = np.array([[1, 0], [0, 1]])
    cfg = AnnealConfig(cost_cutoff=1e-6, max_steps_per_level=0)
    pools = [_pool(0, [0]), _pool(1, [0, 1])]
    result = anneal_cbg([7, 3], 10, pools, cfg, np.random.default_rng(2), contributions)
    assert not result.below_cutoff
    assert result.steps == 0
    expected = ft2_cost(contributions[result.selection].sum(axis=0), [7, 3])
    assert result.final_cost == pytest.approx(expected)


def test_anneal_reports_first_level_reaching_cutoff():
    contributions = np.array([[1, 0], [0, 1]])
    cfg = AnnealConfig(cost_cutoff=0.01, max_steps_per_level=20000)
    # level 0 only holds household 0, so [7, 3] is out of reach there
    pools = [_pool(0, [0]), _pool(1, [0, 1]), _pool(2, [0, 1])]
    result = anneal_cbg([7, 3], 10, pools, cfg, np.random.default_rng(3), contributions)
    assert result.below_cutoff
    assert result.level_used == 1
    assert result.final_cost == pytest.approx(ft2_cost(contributions[result.selection].sum(axis=0), [7, 3]))

    feasible = [_pool(lv, [0, 1]) for lv in range(3)]
    result = anneal_cbg([7, 3], 10, feasible, cfg, np.random.default_rng(3), contributions)
    assert result.level_used == 0


def test_running_sums_track_the_selection():
    rng = np.random.default_rng(8)
    contributions = rng.integers(0, 4, size=(12, 5))
    e = rng.integers(5, 30, size=5).astype(float)
    search = _Search(e, rng.integers(0, 12, size=9), contributions)
    for _ in range(300):
        slot, new = int(rng.integers(0, 9)), int(rng.integers(0, 12))
        old = search.selection[slot]
        if new == old:
            continue
        delta, nz, o_new = search.delta(old, new)
        search.o[nz] = o_new
        search.selection[slot] = new
        search.cost += delta
        np.testing.assert_array_equal(search.o, contributions[search.selection].sum(axis=0))
        assert search.cost == pytest.approx(ft2_cost(search.o, e), abs=1e-9)
    search.o[0] += 1
    with pytest.raises(RuntimeError, match="drifted"):
        search.verify()


def test_anneal_rejects_bad_input():
    contributions = np.array([[1, 0]])
    cfg = AnnealConfig()
    with pytest.raises(ValueError, match="n_households"):
        anneal_cbg([1, 0], 0, [_pool(0, [0])], cfg, np.random.default_rng(0), contributions)
    with pytest.raises(SearchInfeasibleError):
        anneal_cbg([1, 0], 3, [_pool(0, []), _pool(1, [])], cfg, np.random.default_rng(0), contributions)


def test_region_synthesis_independent_of_threads(small_fixture):
    region = load_region_inputs(small_fixture[0])
    retained = sorted(filter_cbgs(region))
    cfg = AnnealConfig(max_steps_per_level=2000)
    one = synthesize_region(region, retained, cfg, master_seed=5, threads=1)
    two = synthesize_region(region, retained, cfg, master_seed=5, threads=2)
    assert list(one.report.columns) == FIT_REPORT_COLUMNS
    assert len(one.report) == len(retained)
    assert one.report.equals(two.report)
    for cbg in retained:
        np.testing.assert_array_equal(one.selections[cbg], two.selections[cbg])
        assert len(one.selections[cbg]) == int(round(region.cbg_table.at[cbg, "households"]))
