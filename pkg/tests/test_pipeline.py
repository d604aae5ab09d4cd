import filecmp
import os

import numpy as np
import pandas as pd
import pytest
import yaml

from popnet.config.settings import ConfigError
from popnet.data.fixture import FixtureSpec, generate_fixture
from popnet.data.inputs import load_region_inputs
from popnet.data.outputs import PEOPLE_COLUMNS, PLACE_COLUMNS, read_people
from popnet.main import EXIT_CONFIG, EXIT_INPUT, EXIT_INTERNAL, EXIT_OK, build_parser, load_run_config, main
from popnet.pipeline import PopulationPipeline
from popnet.services.cosearch import FIT_REPORT_COLUMNS
from popnet.services.ingest import derive_targets

from factories import make_config


def _csv(path):
    return pd.read_csv(path, dtype=str, keep_default_na=False)


def test_fixture_truth_reproduces_marginals(small_fixture):
    """Truth households summed through the schema give the census targets exactly."""
    inputs, truth = small_fixture
    region = load_region_inputs(inputs)
    by_id = {h.id: h for h in region.households}
    truth_hh = _csv(os.path.join(truth, "households.csv"))
    industry_cols = set(region.schema.industry_columns().values())
    keep = [i for i in range(len(region.schema.columns)) if i not in industry_cols]
    for cbg, group in truth_hh.groupby("cbg"):
        o = np.sum([by_id[h].contribution for h in group["hh_id"]], axis=0)
        e = derive_targets(region.cbg_table.loc[cbg], region.schema, optimized_only=False)
        np.testing.assert_array_equal(o[keep], e[keep])
        assert len(group) == region.cbg_table.at[cbg, "households"]


def test_fixture_rejects_bad_spec(tmp_path):
    with pytest.raises(ConfigError, match="industries"):
        generate_fixture(FixtureSpec(n_cbgs=2, industries=["RET"]), str(tmp_path))
    with pytest.raises(ConfigError, match="schema_width"):
        generate_fixture(FixtureSpec(n_cbgs=2, schema_width=90), str(tmp_path))


def test_synthesis_outputs(small_fixture, synthesized):
    out, summary = synthesized
    assert summary.failures == {}
    assert summary.n_cbgs == 10 and summary.n_dropped == 0

    report = _csv(os.path.join(out, "fit_report.csv"))
    assert list(report.columns) == FIT_REPORT_COLUMNS
    assert len(report) == 10

    people = read_people(os.path.join(out, "people.csv"))
    assert list(_csv(os.path.join(out, "people.csv")).columns) == PEOPLE_COLUMNS
    assert len(people) == summary.n_persons
    assert int(people["placeholder_flag"].sum()) == summary.n_placeholders

    marginals = _csv(os.path.join(small_fixture[0], "cbg_marginals.csv")).set_index("cbg")
    households = people.dropna(subset=["household_id"]).groupby("home_cbg")["household_id"].nunique()
    for cbg, n in households.items():
        assert n == int(marginals.at[cbg, "households"])

    truth_gq = _csv(os.path.join(small_fixture[1], "gq.csv"))
    assert people["gq_id"].notna().sum() == truth_gq["residents"].astype(int).sum()

    places = _csv(os.path.join(out, "places.csv"))
    assert list(places.columns) == PLACE_COLUMNS
    assert not places["place_id"].duplicated().any()
    # every referenced place exists
    for col in ("school_id", "workplace_id", "gq_id"):
        assert set(people[col].dropna()) <= set(places["place_id"])


def test_students_and_workers_placed(synthesized):
    out, _ = synthesized
    people = read_people(os.path.join(out, "people.csv"))
    residents = people[~people["placeholder_flag"]]
    workers = residents[residents["is_worker"] & residents["industry"].notna()]
    assert workers["work_cbg"].notna().all()
    assert workers["workplace_id"].notna().all()
    placeholders = people[people["placeholder_flag"]]
    assert placeholders["home_cbg"].eq("OUTSIDE").all()
    assert placeholders["age"].isna().all()


def test_network_index_and_layers(synthesized):
    out, summary = synthesized
    index = _csv(os.path.join(out, "networks.csv"))
    assert sorted(index["name"]) == ["barabasi_albert", "erdos_renyi", "static_scale_free", "synthetic",
                                     "watts_strogatz"]
    assert set(index["n_vertices"].astype(int)) == {summary.n_persons}
    edges = pd.read_csv(os.path.join(out, "network_synthetic.csv"))
    assert (edges["u"] < edges["v"]).all()
    assert {"home", "work"} <= set(edges["layer"])
    assert not edges.duplicated().any()


def test_stats_table(synthesized):
    out, _ = synthesized
    df = PopulationPipeline(make_config(out_dir=out)).stats()
    assert df["name"].tolist() == ["synthetic", "barabasi_albert", "erdos_renyi", "watts_strogatz",
                                   "static_scale_free"]
    assert os.path.exists(os.path.join(out, "stats.csv"))
    synthetic = df.iloc[0]
    # household cliques give far more clustering than the random graphs
    assert synthetic["mean_local_c"] > df.loc[df["name"] == "erdos_renyi", "mean_local_c"].iloc[0]


def test_synthesis_independent_of_thread_count(small_fixture, synthesized, tmp_path):
    out1, _ = synthesized
    out2 = str(tmp_path / "threads2")
    pipeline = PopulationPipeline(make_config(small_fixture[0], out2, threads=2))
    pipeline.synthesize()
    pipeline.network()
    for name in ("fit_report.csv", "people.csv", "places.csv", "network_synthetic.csv", "networks.csv"):
        assert filecmp.cmp(os.path.join(out1, name), os.path.join(out2, name), shallow=False), name


def test_home_degree_is_household_size_minus_one(synthesized):
    out, summary = synthesized
    people = read_people(os.path.join(out, "people.csv"))
    edges = pd.read_csv(os.path.join(out, "network_synthetic.csv"))
    home = edges[edges["layer"] == "home"]
    degree = np.bincount(np.concatenate([home["u"], home["v"]]), minlength=summary.n_persons)
    sizes = people.groupby("household_id")["person_id"].transform("size")
    in_household = people["household_id"].notna().to_numpy()
    np.testing.assert_array_equal(degree[in_household], sizes[in_household].to_numpy() - 1)
    assert not degree[~in_household].any()


@pytest.mark.slow
def test_fifty_cbg_region_fits_below_cutoff(tmp_path):
    inputs, _ = generate_fixture(FixtureSpec(n_cbgs=50, households_per_cbg=150, schema_width=40, n_offtarget=12),
                                 str(tmp_path / "region"))
    config = make_config(inputs, str(tmp_path / "out"), threads=2, **{"anneal.max_steps_per_level": 200000})
    summary = PopulationPipeline(config).synthesize()
    assert summary.failures == {}
    report = pd.read_csv(os.path.join(config.out_dir, "fit_report.csv"))
    assert len(report) == 50
    assert (report["final_cost"] <= 15.0).mean() >= 0.99
    assert report["final_cost"].median() < report["random_baseline_cost"].median()
    # columns left out of the search still fit better than a random draw
    assert report["offtarget_cost"].mean() <= report["offtarget_random_cost"].mean()


def _config_file(tmp_path):
    path = tmp_path / "popnet.yaml"
    path.write_text(yaml.safe_dump({
        "run": {"master_seed": 3},
        "anneal": {"max_steps_per_level": 3000},
        "sim": {"n_seeds": 2, "replicates": 2, "horizon_days": 30},
    }))
    return str(path)


@pytest.mark.slow
def test_cli_end_to_end(tmp_path):
    root = str(tmp_path / "region")
    assert main(["fixture", "--out", root, "--n-cbgs", "4", "--households-per-cbg", "25",
                 "--schema-width", "12", "--n-offtarget", "4", "--n-schools", "3", "--seed", "5"]) == EXIT_OK
    inputs = os.path.join(root, "inputs")
    out = str(tmp_path / "out")
    common = ["--config", _config_file(tmp_path), "--input-dir", inputs, "--out-dir", out, "--log-level", "WARNING"]

    assert main(common + ["synthesize"]) == EXIT_OK
    assert main(common + ["network"]) == EXIT_OK
    assert main(common + ["stats"]) == EXIT_OK
    assert main(common + ["simulate", "--p-transmit", "0.2"]) == EXIT_OK
    trace = _csv(os.path.join(out, "trace.csv"))
    assert trace["replicate"].nunique() == 2
    assert len(trace) == 2 * 30
    assert main(common + ["compare"]) == EXIT_OK
    takeoff = _csv(os.path.join(out, "takeoff.csv"))
    assert len(takeoff) == 5 * 2
    summary = _csv(os.path.join(out, "compare_summary.csv"))
    assert list(summary.columns) == ["network", "day", "mean", "ci_low", "ci_high"]
    with open(os.path.join(out, "run_config.yaml"), encoding="utf-8") as f:
        saved = yaml.safe_load(f)
    assert saved["sim"]["n_seeds"] == 2


def test_cli_exit_codes(tmp_path):
    out = str(tmp_path / "out")
    assert main(["--config", str(tmp_path / "missing.yaml"), "--out-dir", out, "stats"]) == EXIT_CONFIG
    assert main(["--out-dir", out, "synthesize"]) == EXIT_CONFIG
    assert main(["--input-dir", str(tmp_path / "nowhere"), "--out-dir", out, "synthesize"]) == EXIT_INPUT
    assert main(["--out-dir", out, "stats"]) == EXIT_INPUT
    assert main(["--out-dir", out, "simulate", "--p-transmit", "2.0"]) == EXIT_CONFIG


def test_cli_internal_failure_has_own_exit_code(tmp_path, monkeypatch):
    def broken(self, names=None):
        raise RuntimeError("boom")

    monkeypatch.setattr(PopulationPipeline, "stats", broken)
    assert main(["--out-dir", str(tmp_path / "out"), "stats"]) == EXIT_INTERNAL


def test_config_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("POPNET_CONFIG", _config_file(tmp_path))
    args = build_parser().parse_args(["--threads", "3", "simulate", "--replicates", "7"])
    config = load_run_config(args)
    assert config.master_seed == 3
    assert config.threads == 3
    assert config.sim.replicates == 7
    assert config.anneal.max_steps_per_level == 3000
