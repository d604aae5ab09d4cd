"""
Preprocessing of region inputs: census-side target vectors, group-quarters
counts, CBG filtering, employer-size fits and school rankings.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd
from scipy import optimize, stats

from popnet.config.settings import GQ_BANDS, GQ_TYPES, P43_TYPE_CODES, ALL_GRADES
from popnet.data.inputs import InputDataError, RegionInputs
from popnet.data.schema import TargetSchema
from popnet.services.apportion import largest_remainder

logger = logging.getLogger(__name__)


class EmployerSizeError(ValueError):
    """Raised when CBP bins cannot identify a lognormal; use the region-level fit instead."""
    pass


@dataclass
class GqCounts:
    """GQ residents per (age band, residence type)."""
    counts: Dict[Tuple[str, str], int] = field(default_factory=dict)

    def get(self, band: str, gq_type: str) -> int:
        return self.counts.get((band, gq_type), 0)

    def band_total(self, band: str) -> int:
        return sum(self.get(band, t) for t in GQ_TYPES)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def as_dict(self) -> Dict[str, int]:
        return {f"{b}_{t}": self.get(b, t) for b in GQ_BANDS for t in GQ_TYPES}


@dataclass(frozen=True)
class LognormalParams:
    """Employer-size distribution, natural-log scale."""
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")


def derive_targets(cbg_row: Mapping[str, float], schema: TargetSchema, optimized_only: bool = True) -> np.ndarray:
    """
    Census-side target vector e for one CBG.

    Each schema column sums its raw census columns (e.g. male + female
    single householders).

    Args:
        cbg_row: raw census counts by column name
        schema: active target schema
        optimized_only: return only the optimized columns (the annealing
            vector); False returns every schema column in schema order

    Returns:
        np.ndarray of float
    """
    columns = schema.columns
    if optimized_only:
        columns = [columns[i] for i in schema.optimized_index]
    out = np.zeros(len(columns), dtype=float)
    for i, col in enumerate(columns):
        total = 0.0
        for raw in col.raw:
            if raw not in cbg_row:
                raise InputDataError(f"schema column {col.name}: raw census column {raw!r} missing from cbg table")
            total += float(cbg_row[raw])
        out[i] = max(total, 0.0)
    return out


def p43_proportions(cbg_row: Mapping[str, float]) -> Dict[str, Tuple[float, float, float]]:
    """
    Per-band (institutional, civilian_noninst, military) proportions from
    the P43 count columns. Military is kept only in 18-64; a band with no
    mass falls back to all-institutional.
    """
    props = {}
    for band in GQ_BANDS:
        raw = []
        for gq_type in GQ_TYPES:
            col = f"p43_{band}_{P43_TYPE_CODES[gq_type]}"
            raw.append(max(float(cbg_row.get(col, 0.0) or 0.0), 0.0))
        if band != "18_64":
            raw[2] = 0.0
        s = sum(raw)
        props[band] = tuple(r / s for r in raw) if s > 0 else (1.0, 0.0, 0.0)
    return props


def derive_gq_counts(cbg_row: Mapping[str, float], p43_props: Mapping[str, Sequence[float]],
                     cbg: str = "") -> GqCounts:
    """
    GQ residents by age band and type.

    gq_adults = total_adults - household_adults; gq_18_64 = gq_adults - gq_65plus;
    gq_under18 = total_gq - gq_adults. Each band is split over types by the
    P43 proportions with largest-remainder rounding.

    Args:
        cbg_row: needs total_adults, household_adults, total_gq, gq_65plus
        p43_props: band -> (institutional, civilian_noninst, military)
        cbg: id used in warnings only

    Returns:
        GqCounts
    """
    def _clamp(name, value):
        if value < 0:
            logger.warning("CBG %s: %s derived as %s, clamped to 0", cbg, name, value)
            return 0
        return value

    total_adults = int(round(float(cbg_row["total_adults"])))
    household_adults = int(round(float(cbg_row["household_adults"])))
    total_gq = int(round(float(cbg_row["total_gq"])))
    gq_65 = int(round(float(cbg_row["gq_65plus"])))

    gq_adults = _clamp("gq_adults", total_adults - household_adults)
    bands = {
        "under18": _clamp("gq_under18", total_gq - gq_adults),
        "65plus": _clamp("gq_65plus", gq_65),
    }
    bands["18_64"] = _clamp("gq_18_64", gq_adults - bands["65plus"])

    counts = {}
    for band in GQ_BANDS:
        weights = p43_props.get(band, (1.0, 0.0, 0.0))
        if sum(weights) <= 0:
            weights = (1.0, 0.0, 0.0)
        split = largest_remainder(weights, bands[band])
        for gq_type, n in zip(GQ_TYPES, split):
            counts[(band, gq_type)] = int(n)
    return GqCounts(counts)


def filter_cbgs(region: RegionInputs, min_households: int = 20, min_gq: int = 20,
                reasons: Optional[Dict[str, str]] = None) -> Set[str]:
    """
    CBGs kept for synthesis: enough households or GQ residents, and a PUMA.

    Args:
        region: loaded inputs
        min_households: household threshold
        min_gq: GQ resident threshold
        reasons: optional dict filled with cbg -> drop reason

    Returns:
        set of retained CBG ids
    """
    retained = set()
    for cbg in region.cbgs:
        row = region.cbg_table.loc[cbg]
        households = float(row["households"])
        gq_total = derive_gq_counts(row, p43_proportions(row), cbg).total
        puma = region.geo.at[cbg, "puma"] if cbg in region.geo.index else ""
        if not puma:
            why = "no PUMA"
        elif households >= min_households or gq_total >= min_gq:
            retained.add(cbg)
            continue
        else:
            why = f"{households:g} households and {gq_total} GQ residents"
        logger.info("Dropping CBG %s: %s", cbg, why)
        if reasons is not None:
            reasons[cbg] = why
    logger.info("Retained %d of %d CBGs", len(retained), len(region.cbgs))
    return retained


def _bin_edges(bins: Sequence[Tuple[float, Optional[float], float]]) -> List[Tuple[float, float, float]]:
    """
    Continuous edges per bin: [bin_min, next bin_min); the lowest bin starts
    at 0 and an open top bin runs to infinity.
    """
    ordered = sorted(bins, key=lambda b: b[0])
    edges = []
    for k, (lo, hi, count) in enumerate(ordered):
        if lo < 1:
            raise ValueError(f"bin_min must be >= 1, got {lo}")
        left = 0.0 if k == 0 else float(lo)
        if hi is None or (isinstance(hi, float) and math.isnan(hi)) or math.isinf(hi):
            right = math.inf
        elif k + 1 < len(ordered):
            right = float(ordered[k + 1][0])
        else:
            right = float(hi) + 1.0
        edges.append((left, right, float(count)))
    return edges


def fit_employer_sizes(bins: Sequence[Tuple[float, Optional[float], float]]) -> LognormalParams:
    """
    Binned maximum-likelihood lognormal fit of employer sizes.

    Args:
        bins: (bin_min, bin_max, count); bin_max None/NaN marks the open
            (right-censored) top bin

    Returns:
        LognormalParams
    """
    edges = _bin_edges(bins)
    positive = [e for e in edges if e[2] > 0]
    if len(positive) < 2:
        raise EmployerSizeError("need at least two size bins with employers; fall back to the region-level fit")

    log_lo = np.array([math.log(e[0]) if e[0] > 0 else -np.inf for e in edges])
    log_hi = np.array([math.log(e[1]) if np.isfinite(e[1]) else np.inf for e in edges])
    counts = np.array([e[2] for e in edges])

    def nll(theta):
        mu, log_sigma = theta
        sigma = math.exp(log_sigma)
        p = stats.norm.cdf((log_hi - mu) / sigma) - stats.norm.cdf((log_lo - mu) / sigma)
        return -float(np.sum(counts * np.log(np.clip(p, 1e-300, None))))

    # start from the count-weighted log midpoint
    mids = []
    for lo, hi, _ in edges:
        lo_ = max(lo, 1.0)
        hi_ = hi if np.isfinite(hi) else lo_ * 2.0
        mids.append(0.5 * (math.log(lo_) + math.log(max(hi_, lo_))))
    mu0 = float(np.average(mids, weights=counts))
    res = optimize.minimize(nll, x0=np.array([mu0, 0.0]), method="Nelder-Mead",
                            options={"xatol": 1e-9, "fatol": 1e-10, "maxiter": 20000})
    mu, log_sigma = res.x
    return LognormalParams(mu=float(mu), sigma=float(math.exp(log_sigma)))


def fit_county_employer_sizes(cbp: pd.DataFrame) -> Tuple[Dict[str, LognormalParams], LognormalParams]:
    """
    Fit each county, falling back to the region-level fit for degenerate ones.

    Returns:
        (county -> params, region params)
    """
    def _bins(df):
        grouped = df.groupby("bin_min", as_index=False).agg({"bin_max": "first", "count": "sum"})
        return [(r.bin_min, None if pd.isna(r.bin_max) else r.bin_max, r.count) for r in grouped.itertuples()]

    region_params = fit_employer_sizes(_bins(cbp))
    per_county = {}
    for county, df in cbp.groupby("county"):
        try:
            per_county[county] = fit_employer_sizes(_bins(df))
        except EmployerSizeError as e:
            logger.warning("County %s: %s", county, e)
            per_county[county] = region_params
    return per_county, region_params


def fill_school_counts(schools: pd.DataFrame) -> pd.DataFrame:
    """
    Keep active regular schools with grades; fill missing student/teacher
    counts with the mean for the school type (region-wide mean when the
    type has no reported value).
    """
    keep = schools[schools["active"] & schools["regular"]
                   & schools["low_grade"].notna() & schools["high_grade"].notna()].copy()
    for col in ("n_students", "n_teachers"):
        overall = keep[col].mean()
        if pd.isna(overall):
            overall = 0.0
        type_means = keep.groupby("school_type")[col].mean()
        missing = keep[col].isna()
        if missing.any():
            fill = keep.loc[missing, "school_type"].map(type_means).fillna(overall)
            keep.loc[missing, col] = fill
            logger.info("Filled %d missing %s values with school-type means", int(missing.sum()), col)
    return keep.sort_values("school_id").reset_index(drop=True)


def nearest_schools(cbg: str, grade: int, schools: pd.DataFrame, geo: pd.DataFrame, k: int = 5) -> List[str]:
    """
    Up to k schools offering ``grade``, nearest first from the CBG centroid.

    Args:
        cbg: CBG id
        grade: grade code (-1 = PK, 0 = KG, 1..12)
        schools: eligible schools (after fill_school_counts)
        geo: geo table indexed by cbg

    Returns:
        list of school ids; ties broken by school id
    """
    offers = schools[(schools["low_grade"] <= grade) & (schools["high_grade"] >= grade)]
    if offers.empty:
        return []
    cx, cy = float(geo.at[cbg, "x"]), float(geo.at[cbg, "y"])
    dist = np.hypot(offers["x"].to_numpy(float) - cx, offers["y"].to_numpy(float) - cy)
    ranked = sorted(zip(dist, offers["school_id"]), key=lambda t: (t[0], t[1]))
    return [sid for _, sid in ranked[:k]]


def school_rankings(cbgs: Sequence[str], schools: pd.DataFrame, geo: pd.DataFrame,
                    k: int = 5) -> Dict[Tuple[str, int], List[str]]:
    """Precompute nearest_schools for every (CBG, grade)."""
    return {(cbg, g): nearest_schools(cbg, g, schools, geo, k) for cbg in cbgs for g in ALL_GRADES}
