"""
Population pipeline: runs the stages behind each CLI command and writes
their output files.
"""
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from popnet.config.settings import INDUSTRIES, OUTSIDE, ConfigError, RunConfig
from popnet.data.inputs import InputDataError, RegionInputs, load_region_inputs
from popnet.data.outputs import (
    population_from_frames, read_network_index, read_people, read_places,
    write_frame, write_network_index, write_population,
)
from popnet.services.cosearch import synthesize_region
from popnet.services.epiabm import SimAgents, run_replicates, takeoff_day
from popnet.services.ingest import (
    GqCounts, derive_gq_counts, fill_school_counts, filter_cbgs,
    fit_county_employer_sizes, p43_proportions, school_rankings,
)
from popnet.services.ipf import (
    RESIDENCE_TYPES, CommuteMatrix, IndustryResidence, IpfInfeasibleError,
    ResidenceCounts, commute_matrix, industry_residence_matrix, wac_by_destination,
)
from popnet.services.netgen import REFERENCE_KINDS, ContactGraph, assemble_network, reference_graph
from popnet.services.netstats import STATS_COLUMNS, stats_report
from popnet.services.placement import (
    Population, add_schools, assign_commutes, assign_gq_staff, assign_students,
    assign_teachers, inbound_jobs, instantiate_population, place_workers,
)
from popnet.services.streams import stream

logger = logging.getLogger(__name__)

SYNTHETIC = "synthetic"
COMPARE_ORDER = (SYNTHETIC, "barabasi_albert", "erdos_renyi", "watts_strogatz", "static_scale_free")
TAKEOFF_FRACTION = 0.25


@dataclass
class SynthesisSummary:
    n_cbgs: int
    n_dropped: int
    n_below_cutoff: int
    n_persons: int
    n_placeholders: int
    n_places: int
    failures: Dict[str, str] = field(default_factory=dict)


def _employment(row: Mapping[str, float]) -> np.ndarray:
    return np.array([float(row.get(f"emp_{ind}", 0.0) or 0.0) for ind in INDUSTRIES])


def _rank_one_commute(origin: str, counts: np.ndarray, od_row: Mapping[str, float]) -> CommuteMatrix:
    """Commute matrix with every industry split by the OD shares alone."""
    od = {d: float(c) for d, c in od_row.items() if c > 0} or {OUTSIDE: 1.0}
    destinations = sorted(d for d in od if d != OUTSIDE) + ([OUTSIDE] if OUTSIDE in od else [])
    shares = np.array([od[d] for d in destinations]) / sum(od.values())
    return CommuteMatrix(origin_cbg=origin, destinations=destinations, cells=np.outer(counts, shares),
                         converged=False)


class PopulationPipeline:
    """
    Pipeline stages over one output directory.

    Args:
        config: resolved run configuration
    """
    def __init__(self, config: RunConfig):
        self.config = config
        if not config.out_dir:
            raise ConfigError("run.out_dir: required")
        os.makedirs(config.out_dir, exist_ok=True)

    @property
    def out_dir(self) -> str:
        return self.config.out_dir

    def _path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def _save_config(self):
        self.config.save_config(self._path("run_config.yaml"))

    # ------------------------------------------------------------------
    # synthesize
    # ------------------------------------------------------------------

    def _industry_residence(self, region: RegionInputs, retained: Sequence[str],
                            gq_counts: Mapping[str, GqCounts]) -> Dict[str, IndustryResidence]:
        fits = {}
        for cbg in sorted(retained):
            row = region.cbg_table.loc[cbg]
            emp = _employment(row)
            hh_pop, total_gq = float(row["hh_population"]), float(row["total_gq"])
            share = hh_pop / (hh_pop + total_gq) if hh_pop + total_gq > 0 else 1.0
            counts = gq_counts[cbg]
            residence = ResidenceCounts(
                household_share=share,
                civilian_gq_18_64=counts.get("18_64", "civilian_noninst"),
                military_gq=counts.get("18_64", "military"),
            )
            try:
                fits[cbg] = industry_residence_matrix(cbg, emp, residence, region.gq_industry)
            except IpfInfeasibleError as e:
                logger.warning("CBG %s: %s; all workers assigned to households", cbg, e)
                matrix = np.zeros((len(RESIDENCE_TYPES), len(INDUSTRIES)))
                matrix[0] = emp
                fits[cbg] = IndustryResidence(cbg=cbg, matrix=matrix, converged=False)
        n_bad = sum(1 for f in fits.values() if not f.converged)
        if n_bad:
            logger.warning("%d industry x residence fits did not converge", n_bad)
        return fits

    def _commutes(self, region: RegionInputs, pop: Population, origins: Sequence[str],
                  wac: Mapping[str, np.ndarray], dump_dir: Optional[str]) -> int:
        """Fit each origin's commute matrix and set work_cbg on its workers."""
        seed = self.config.master_seed
        workers: Dict[str, Dict[str, List[int]]] = {}
        for p in pop.workers():
            workers.setdefault(p.home_cbg, {}).setdefault(p.attrs.industry, []).append(p.person_id)
        od_rows: Dict[str, Dict[str, float]] = {}
        for r in region.od.itertuples(index=False):
            od_rows.setdefault(r.home_cbg, {})[r.work_cbg] = float(r.count)

        n_assigned = 0
        for origin in sorted(origins):
            by_industry = workers.get(origin)
            counts = _employment(region.cbg_table.loc[origin])
            od_row = od_rows.get(origin, {})
            try:
                cm = commute_matrix(origin, counts, od_row, wac)
            except IpfInfeasibleError as e:
                logger.warning("Origin %s: %s; using OD shares for every industry", origin, e)
                cm = _rank_one_commute(origin, counts, od_row)
            if dump_dir:
                pd.DataFrame(cm.cells, index=INDUSTRIES, columns=cm.destinations).to_csv(
                    os.path.join(dump_dir, f"commute_{origin}.csv"), index_label="industry")
            if not by_industry:
                continue
            for pid, dest in assign_commutes(by_industry, cm, stream(seed, "commute", origin)).items():
                pop.persons[pid].work_cbg = dest
                n_assigned += 1
        return n_assigned

    def synthesize(self, ipf_dump: bool = False) -> SynthesisSummary:
        """
        Load inputs, fit households per CBG and place every person.

        Writes fit_report.csv, people.csv, places.csv and run_config.yaml.
        CBGs with no microdata at any ladder level are reported in the
        returned summary; the caller decides how to exit.

        Args:
            ipf_dump: also write every fitted IPF matrix under ``ipf/``

        Returns:
            SynthesisSummary
        """
        cfg = self.config
        if not cfg.input_dir:
            raise ConfigError("run.input_dir: required for synthesize")
        seed = cfg.master_seed
        region = load_region_inputs(cfg.input_dir)

        reasons: Dict[str, str] = {}
        retained = sorted(filter_cbgs(region, cfg.min_households, cfg.min_gq_residents, reasons))
        gq_counts = {cbg: derive_gq_counts(region.cbg_table.loc[cbg], p43_proportions(region.cbg_table.loc[cbg]), cbg)
                     for cbg in retained}

        county_params, region_params = fit_county_employer_sizes(region.cbp)
        schools = fill_school_counts(region.schools)
        rankings = school_rankings(retained, schools, region.geo, cfg.placement.n_ranked_schools)

        dump_dir = None
        if ipf_dump:
            dump_dir = self._path("ipf")
            os.makedirs(dump_dir, exist_ok=True)
        fits = self._industry_residence(region, retained, gq_counts)
        if dump_dir:
            for cbg, fit in fits.items():
                pd.DataFrame(fit.matrix, index=RESIDENCE_TYPES, columns=INDUSTRIES).to_csv(
                    os.path.join(dump_dir, f"industry_residence_{cbg}.csv"), index_label="residence")

        synthesis = synthesize_region(
            region, retained, cfg.anneal, seed, cfg.threads,
            household_industry={cbg: f.row("household") for cbg, f in fits.items()},
        )
        write_frame(synthesis.report, self.out_dir, "fit_report.csv")

        gq_rows = {cbg: {"civilian_gq": f.row("civilian_gq"), "military_gq": f.row("military_gq")}
                   for cbg, f in fits.items()}
        pop = instantiate_population(region, synthesis.selections, gq_counts, seed, gq_rows,
                                     min_gq_residents=cfg.placement.min_gq_residents)
        add_schools(pop, schools, region.geo)
        assign_students(pop, rankings, stream(seed, "students"), cfg.placement.first_choice_prob)

        wac = wac_by_destination(region.wac)
        n_commuters = self._commutes(region, pop, retained, wac, dump_dir)
        logger.info("Assigned destinations to %d commuters", n_commuters)
        assign_teachers(pop, region.geo, seed)
        assign_gq_staff(pop, region.geo, seed, cfg.placement.institutional_staff_ratio,
                        cfg.placement.noninstitutional_staff_ratio)
        n_placeholders = place_workers(pop, county_params, region_params, region.cbg_county, seed,
                                       inbound_jobs(region.od, wac))

        write_population(pop, self.out_dir)
        self._save_config()

        report = synthesis.report
        summary = SynthesisSummary(
            n_cbgs=len(retained),
            n_dropped=len(reasons),
            n_below_cutoff=int((report["final_cost"] <= cfg.anneal.cost_cutoff).sum()) if len(report) else 0,
            n_persons=len(pop.persons),
            n_placeholders=n_placeholders,
            n_places=len(pop.places),
            failures=dict(synthesis.failures),
        )
        if summary.failures:
            logger.error("%d CBGs could not be synthesized: %s", len(summary.failures),
                         ", ".join(sorted(summary.failures)))
        return summary

    # ------------------------------------------------------------------
    # network / stats
    # ------------------------------------------------------------------

    def load_population(self) -> Tuple[pd.DataFrame, Population]:
        people = read_people(self._path("people.csv"))
        places = read_places(self._path("places.csv"))
        return people, population_from_frames(people, places)

    def network(self, with_reference: bool = True) -> Dict[str, ContactGraph]:
        """
        Assemble the synthetic network and, optionally, the reference graphs
        with the same vertex count and mean degree. Writes network_<name>.csv
        and the networks.csv index.
        """
        cfg = self.config
        _, pop = self.load_population()
        graphs = {SYNTHETIC: assemble_network(pop, cfg.network, cfg.master_seed, cfg.threads)}
        if with_reference:
            g = graphs[SYNTHETIC]
            m = len(g.simple_edges()[0])
            mean_degree = 2.0 * m / g.n_vertices if g.n_vertices else 0.0
            for kind in REFERENCE_KINDS:
                graphs[kind] = reference_graph(kind, g.n_vertices, mean_degree, stream(cfg.master_seed, "reference", kind),
                                               exponent=cfg.network.static_sf_exponent, beta=cfg.network.gq_beta)
                logger.info("Reference %s: %r", kind, graphs[kind])
        entries = []
        for name, g in graphs.items():
            fname = f"network_{name}.csv"
            g.save_csv(self._path(fname))
            entries.append({"name": name, "n_vertices": g.n_vertices, "n_edges": g.n_edges, "path": fname})
        write_network_index(entries, self.out_dir)
        self._save_config()
        return graphs

    def load_network(self, name: str) -> ContactGraph:
        index = read_network_index(self.out_dir)
        row = index[index["name"] == name]
        if row.empty:
            raise InputDataError(f"networks.csv: no network named {name!r} (have {sorted(index['name'])})")
        row = row.iloc[0]
        return ContactGraph.load_csv(self._path(row["path"]), int(row["n_vertices"]))

    def stats(self, names: Optional[Sequence[str]] = None) -> pd.DataFrame:
        """One statistics row per indexed network (or the named ones); writes stats.csv."""
        index = read_network_index(self.out_dir)
        names = list(names) if names else sorted(index["name"], key=self._order_key)
        rows = [stats_report(self.load_network(name), name).as_row() for name in names]
        df = pd.DataFrame(rows, columns=STATS_COLUMNS)
        write_frame(df, self.out_dir, "stats.csv")
        return df

    @staticmethod
    def _order_key(name: str):
        return (COMPARE_ORDER.index(name) if name in COMPARE_ORDER else len(COMPARE_ORDER), name)

    # ------------------------------------------------------------------
    # simulate / compare
    # ------------------------------------------------------------------

    def _agents(self, name: str, g: ContactGraph) -> SimAgents:
        if name != SYNTHETIC:
            return SimAgents.anonymous(g.n_vertices)
        agents = SimAgents.from_people(read_people(self._path("people.csv")))
        if agents.n != g.n_vertices:
            raise InputDataError(f"people.csv has {agents.n} persons but network {name} has {g.n_vertices} vertices")
        return agents

    def simulate(self, name: str = SYNTHETIC) -> pd.DataFrame:
        """Run the SEIR replicates on one network; writes trace.csv and summary.csv."""
        cfg = self.config
        g = self.load_network(name)
        traces, summary = run_replicates(g, self._agents(name, g), cfg.sim, cfg.master_seed, cfg.threads, name)
        write_frame(traces, self.out_dir, "trace.csv")
        write_frame(summary, self.out_dir, "summary.csv")
        self._save_config()
        return summary

    def compare(self) -> Tuple[pd.DataFrame, pd.DataFrame]:
        """
        Same SEIR settings on every indexed network of equal size.

        Writes compare_summary.csv (network, day, mean, ci_low, ci_high) and
        takeoff.csv (network, replicate, day cumulative infections first
        reach a quarter of the vertices; blank if never).
        """
        cfg = self.config
        index = read_network_index(self.out_dir)
        names = sorted(index["name"], key=self._order_key)
        sizes = set(int(n) for n in index["n_vertices"])
        if len(sizes) != 1:
            raise InputDataError(f"networks.csv: compared networks must have one vertex count, got {sorted(sizes)}")

        summaries, takeoffs = [], []
        for name in names:
            g = self.load_network(name)
            traces, summary = run_replicates(g, self._agents(name, g), cfg.sim, cfg.master_seed, cfg.threads, name)
            summaries.append(summary.assign(network=name))
            for r, trace in traces.groupby("replicate"):
                day = takeoff_day(trace["cumulative_infections"].to_numpy(), g.n_vertices, TAKEOFF_FRACTION)
                takeoffs.append({"network": name, "replicate": int(r), "takeoff_day": day})
        summary_df = pd.concat(summaries, ignore_index=True)[["network", "day", "mean", "ci_low", "ci_high"]]
        takeoff_df = pd.DataFrame(takeoffs, columns=["network", "replicate", "takeoff_day"])
        takeoff_df["takeoff_day"] = takeoff_df["takeoff_day"].astype("Int64")
        write_frame(summary_df, self.out_dir, "compare_summary.csv")
        write_frame(takeoff_df, self.out_dir, "takeoff.csv")
        self._save_config()
        return summary_df, takeoff_df
