"""
Per-CBG household selection by simulated annealing over microdata samples,
with the four-level sample-pool ladder and the parallel region driver.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import stats

from popnet.config.settings import INDUSTRIES, AnnealConfig
from popnet.data.inputs import RegionInputs
from popnet.services.ingest import derive_targets
from popnet.services.streams import stream

logger = logging.getLogger(__name__)

N_LEVELS = 4
_DRAW_BATCH = 4096

FIT_REPORT_COLUMNS = [
    "cbg", "n_households", "final_cost", "ln_cost", "level_used", "steps", "pass_flag",
    "random_baseline_cost", "offtarget_cost", "offtarget_random_cost",
]


class SearchInfeasibleError(Exception):
    """Raised when every level of a CBG's sample-pool ladder is empty."""
    pass


def ft2_cost(o: Sequence[float], e: Sequence[float]) -> float:
    """Mismatch cost sum((sqrt(o) - sqrt(e))^2), a quarter of Freeman-Tukey."""
    o = np.asarray(o, dtype=float)
    e = np.asarray(e, dtype=float)
    if o.shape != e.shape:
        raise ValueError(f"length mismatch: o has {o.shape}, e has {e.shape}")
    if np.any(o < 0) or np.any(e < 0):
        raise ValueError("cost vectors must be non-negative")
    return float(np.sum((np.sqrt(o) - np.sqrt(e)) ** 2))


def acceptance_probability(delta_e: float, temp: float) -> float:
    if not temp > 0:
        raise ValueError(f"temperature must be > 0, got {temp}")
    if delta_e < 0:
        return 1.0
    return math.exp(-delta_e / temp)


def critical_value(width: int, quantile: float = 0.95) -> float:
    """Chi-square critical value for 4E with width - 1 degrees of freedom."""
    return float(stats.chi2.ppf(quantile, max(width - 1, 1)))


@dataclass(frozen=True)
class SamplePool:
    """Microdata households eligible at one ladder level (indices into RegionInputs.households)."""
    level: int
    households: np.ndarray
    pumas: tuple = ()

    @property
    def size(self) -> int:
        return len(self.households)


def _level_pumas(cbg: str, level: int, geo: pd.DataFrame, puma_urban: Mapping[str, float],
                 urban_threshold: float) -> List[str]:
    row = geo.loc[cbg]
    pumas = {row["puma"]} - {""}
    if level >= 1:
        pumas |= set(geo.loc[geo["county"] == row["county"], "puma"]) - {""}
    if level >= 2 and row["cbsa"]:
        pumas |= set(geo.loc[geo["cbsa"] == row["cbsa"], "puma"]) - {""}
    if level >= 3:
        target = float(row["urban_pct"])
        pumas |= {p for p, u in puma_urban.items() if p and abs(float(u) - target) <= urban_threshold}
    return sorted(pumas)


def pool_ladder(cbg: str, level: int, geo: pd.DataFrame, by_puma: Mapping[str, np.ndarray],
                puma_urban: Optional[Mapping[str, float]] = None,
                urban_threshold: float = 20.0) -> SamplePool:
    """
    Sample pool for one ladder level.

    Level 0 is the CBG's own PUMA; 1 adds every PUMA touching its county;
    2 adds the PUMAs of its CBSA (same as level 1 without a CBSA); 3 adds
    PUMAs whose urban percentage is within ``urban_threshold`` points.
    Each level contains the previous one.

    Args:
        cbg: CBG id
        level: 0..3
        geo: geo table indexed by cbg
        by_puma: PUMA -> household indices
        puma_urban: PUMA -> urban percentage
        urban_threshold: similarity threshold in percentage points

    Returns:
        SamplePool
    """
    if not 0 <= level < N_LEVELS:
        raise ValueError(f"ladder level must be in 0..3, got {level}")
    if puma_urban is None:
        puma_urban = geo.groupby("puma")["urban_pct"].mean().to_dict()
    pumas = _level_pumas(cbg, level, geo, puma_urban, urban_threshold)
    parts = [by_puma[p] for p in pumas if p in by_puma]
    households = np.unique(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)
    return SamplePool(level=level, households=households.astype(np.int64), pumas=tuple(pumas))


def build_ladder(cbg: str, region: RegionInputs, urban_threshold: float = 20.0) -> List[SamplePool]:
    """All four pools for a CBG; raises SearchInfeasibleError if even level 3 is empty."""
    ladder = [pool_ladder(cbg, lv, region.geo, region.by_puma, region.puma_urban, urban_threshold)
              for lv in range(N_LEVELS)]
    if ladder[-1].size == 0:
        raise SearchInfeasibleError(f"CBG {cbg}: no microdata households at any ladder level")
    return ladder


@dataclass
class AnnealResult:
    selection: np.ndarray
    final_cost: float
    level_used: int
    steps: int
    below_cutoff: bool


class _Search:
    """Running state of one annealing pass: selection, synthetic sums o, cost E and temperature T."""

    def __init__(self, e: np.ndarray, selection: np.ndarray, contributions: np.ndarray):
        self.e = e
        self.sqrt_e = np.sqrt(e)
        self.contributions = contributions
        self.selection = selection
        self.o = contributions[selection].sum(axis=0)
        self.cost = ft2_cost(self.o, e)

    def delta(self, old: int, new: int):
        d = self.contributions[new] - self.contributions[old]
        nz = np.flatnonzero(d)
        o_new = self.o[nz] + d[nz]
        before = (np.sqrt(self.o[nz]) - self.sqrt_e[nz]) ** 2
        after = (np.sqrt(o_new) - self.sqrt_e[nz]) ** 2
        return float(np.sum(after - before)), nz, o_new

    def verify(self):
        o = self.contributions[self.selection].sum(axis=0)
        if not np.array_equal(o, self.o):
            raise RuntimeError("running synthetic sums drifted from the selection")
        self.cost = ft2_cost(self.o, self.e)


def anneal_cbg(e: Sequence[float], n_households: int, pools: Sequence[SamplePool], cfg: AnnealConfig,
               rng: np.random.Generator, contributions: np.ndarray) -> AnnealResult:
    """
    Select ``n_households`` microdata households (with replacement) whose
    summed contributions match ``e``.

    Levels are tried in order; each starts from a fresh random selection
    with T0 = start_temp_fraction x initial cost and cools by its own
    multiplier every step, accepted or not. The first selection reaching
    the cutoff is returned; otherwise the best one seen at any level.

    Args:
        e: census-side targets over the optimized columns
        n_households: selection size
        pools: ladder pools, level 0 first
        cfg: annealing settings
        rng: this CBG's stream
        contributions: int64 matrix, one row per microdata household, same
            columns as ``e``

    Returns:
        AnnealResult
    """
    if n_households < 1:
        raise ValueError(f"n_households must be >= 1, got {n_households}")
    if all(p.size == 0 for p in pools):
        raise SearchInfeasibleError("all sample pools are empty")
    e = np.asarray(e, dtype=float)
    contributions = np.asarray(contributions, dtype=np.int64)

    best: Optional[AnnealResult] = None
    total_steps = 0
    for pool in pools:
        if pool.size == 0:
            logger.warning("Ladder level %d pool is empty, skipping", pool.level)
            continue
        members = pool.households
        cooling = cfg.cooling[pool.level]
        search = _Search(e, members[rng.integers(0, len(members), size=n_households)], contributions)
        temp = max(cfg.start_temp_fraction * search.cost, cfg.temp_floor)
        best_cost, best_sel = search.cost, search.selection.copy()

        steps = 0
        while search.cost > cfg.cost_cutoff and steps < cfg.max_steps_per_level:
            batch = min(_DRAW_BATCH, cfg.max_steps_per_level - steps)
            slots = rng.integers(0, n_households, size=batch)
            picks = members[rng.integers(0, len(members), size=batch)]
            uniforms = rng.random(size=batch)
            for k in range(batch):
                slot, new = slots[k], picks[k]
                old = search.selection[slot]
                if new != old:
                    delta, nz, o_new = search.delta(old, new)
                    if delta < 0 or uniforms[k] < math.exp(-delta / temp):
                        search.o[nz] = o_new
                        search.selection[slot] = new
                        search.cost += delta
                        if search.cost < best_cost:
                            best_cost, best_sel = search.cost, search.selection.copy()
                temp = max(temp * cooling, cfg.temp_floor)
                steps += 1
                if steps % cfg.verify_interval == 0:
                    search.verify()
                if search.cost <= cfg.cost_cutoff:
                    break
        search.verify()
        total_steps += steps

        if search.cost <= cfg.cost_cutoff:
            return AnnealResult(search.selection, search.cost, pool.level, total_steps, True)
        best_cost = ft2_cost(contributions[best_sel].sum(axis=0), e)
        if best is None or best_cost < best.final_cost:
            best = AnnealResult(best_sel, best_cost, pool.level, total_steps, False)
        logger.debug("Level %d ended at cost %.3f after %d steps", pool.level, search.cost, steps)

    best.steps = total_steps
    return best


@dataclass
class RegionSynthesis:
    """Selections (household indices per CBG) and the fit report."""
    selections: Dict[str, np.ndarray]
    report: pd.DataFrame
    failures: Dict[str, str] = field(default_factory=dict)


def cbg_targets(region: RegionInputs, cbg: str,
                household_industry: Optional[Mapping[str, np.ndarray]] = None) -> np.ndarray:
    """
    Census-side vector over every schema column, with ``role: industry``
    columns taken from the household row of the industry x residence fit.
    """
    e = derive_targets(region.cbg_table.loc[cbg], region.schema, optimized_only=False)
    if household_industry is not None and cbg in household_industry:
        row = household_industry[cbg]
        for ind, col in region.schema.industry_columns().items():
            e[col] = max(float(row[INDUSTRIES.index(ind)]), 0.0)
    return e


def _synthesize_one(cbg: str, e_full: np.ndarray, n_households: int, ladder: List[SamplePool],
                    opt_index: np.ndarray, off_index: np.ndarray, contributions: np.ndarray,
                    cfg: AnnealConfig, master_seed: int):
    e_opt = e_full[opt_index]
    e_off = e_full[off_index]
    c_opt = contributions[:, opt_index]

    if n_households >= 1:
        result = anneal_cbg(e_opt, n_households, ladder, cfg, stream(master_seed, "anneal", cbg), c_opt)
        selection, cost, level, steps = result.selection, result.final_cost, result.level_used, result.steps
    else:
        selection = np.zeros(0, dtype=np.int64)
        cost, level, steps = ft2_cost(np.zeros_like(e_opt), e_opt), -1, 0

    base_pool = next(p for p in ladder if p.size > 0).households
    baseline = base_pool[stream(master_seed, "baseline", cbg).integers(0, len(base_pool), size=max(n_households, 0))]

    def _cost(sel, cols, target):
        if len(cols) == 0:
            return float("nan")
        o = contributions[sel][:, cols].sum(axis=0) if len(sel) else np.zeros(len(cols))
        return ft2_cost(o, target)

    row = {
        "cbg": cbg,
        "n_households": n_households,
        "final_cost": cost,
        "ln_cost": math.log(cost) if cost > 0 else float("-inf"),
        "level_used": level,
        "steps": steps,
        "pass_flag": bool(4.0 * cost < critical_value(len(opt_index), cfg.critical_quantile)),
        "random_baseline_cost": _cost(baseline, opt_index, e_opt),
        "offtarget_cost": _cost(selection, off_index, e_off),
        "offtarget_random_cost": _cost(baseline, off_index, e_off),
    }
    return cbg, np.sort(selection), row


def synthesize_region(region: RegionInputs, retained: Sequence[str], cfg: AnnealConfig, master_seed: int,
                      threads: int = 1,
                      household_industry: Optional[Mapping[str, np.ndarray]] = None) -> RegionSynthesis:
    """
    Run the household search for every retained CBG.

    Each CBG draws from its own stream keyed by (master_seed, cbg), so the
    result does not depend on ``threads``. CBGs whose ladder is empty are
    collected in ``failures`` and the run continues.

    Args:
        region: loaded inputs
        retained: CBG ids from filter_cbgs
        cfg: annealing settings
        master_seed: run seed
        threads: joblib worker count
        household_industry: cbg -> household-row industry targets

    Returns:
        RegionSynthesis
    """
    schema = region.schema
    failures: Dict[str, str] = {}
    tasks = []
    for cbg in sorted(retained):
        try:
            ladder = build_ladder(cbg, region, cfg.urban_threshold)
        except SearchInfeasibleError as e:
            logger.error("%s", e)
            failures[cbg] = str(e)
            continue
        n = int(round(float(region.cbg_table.at[cbg, "households"])))
        e_full = cbg_targets(region, cbg, household_industry)
        tasks.append((cbg, e_full, n, ladder))

    logger.info("Annealing %d CBGs on %d worker(s)", len(tasks), threads)
    results = Parallel(n_jobs=threads)(
        delayed(_synthesize_one)(cbg, e_full, n, ladder, schema.optimized_index, schema.offtarget_index,
                                 region.contributions, cfg, master_seed)
        for cbg, e_full, n, ladder in tasks
    )

    selections = {}
    rows = []
    for cbg, selection, row in sorted(results, key=lambda r: r[0]):
        selections[cbg] = selection
        rows.append(row)
    report = pd.DataFrame(rows, columns=FIT_REPORT_COLUMNS)
    if len(report):
        below = int((report["final_cost"] <= cfg.cost_cutoff).sum())
        logger.info("%d of %d CBGs reached the cost cutoff %.1f", below, len(report), cfg.cost_cutoff)
    return RegionSynthesis(selections=selections, report=report, failures=failures)
