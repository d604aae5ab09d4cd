"""
Iterative proportional fitting and its two uses in preprocessing:
industry x residence-type worker counts and industry x destination
commute matrices.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from popnet.config.settings import INDUSTRIES, INDUSTRY_INDEX, OUTSIDE, STAFF_INDUSTRY

logger = logging.getLogger(__name__)

RESIDENCE_TYPES = ["household", "civilian_gq", "military_gq"]
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITERS = 1000


class IpfInfeasibleError(ValueError):
    """Raised when a positive margin target sits on an all-zero seed line."""
    pass


@dataclass
class IpfProblem:
    seed: np.ndarray
    row_targets: np.ndarray
    col_targets: np.ndarray
    tol: float = DEFAULT_TOL
    max_iters: int = DEFAULT_MAX_ITERS


@dataclass
class IpfResult:
    matrix: np.ndarray
    converged: bool
    error: float
    iterations: int


def _margin_error(m: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> float:
    """Largest relative margin error; zero targets count absolute error."""
    def rel(sums, targets):
        diff = np.abs(sums - targets)
        scale = np.where(targets > 0, targets, 1.0)
        return float(np.max(diff / scale)) if len(diff) else 0.0
    return max(rel(m.sum(axis=1), rows), rel(m.sum(axis=0), cols))


def ipf_fit(problem: IpfProblem, label: str = "") -> IpfResult:
    """
    Alternate row and column scaling of the seed until both margins match.

    Zero seed cells stay zero. If the two target totals disagree by more
    than 1e-6 relative, column targets are rescaled to the row total.

    Args:
        problem: seed matrix and margin targets
        label: context for log messages

    Returns:
        IpfResult with the fitted matrix, converged flag, final error and
        the number of sweeps performed
    """
    seed = np.asarray(problem.seed, dtype=float)
    rows = np.asarray(problem.row_targets, dtype=float)
    cols = np.asarray(problem.col_targets, dtype=float)
    if seed.ndim != 2 or seed.shape != (len(rows), len(cols)):
        raise ValueError(f"seed shape {seed.shape} does not match margins ({len(rows)}, {len(cols)})")
    if np.any(seed < 0) or np.any(rows < 0) or np.any(cols < 0):
        raise ValueError("IPF seed and targets must be non-negative")

    row_total, col_total = rows.sum(), cols.sum()
    if abs(row_total - col_total) > 1e-6 * max(row_total, col_total, 1e-12):
        logger.warning("IPF %s: margin totals differ (rows %.6g, cols %.6g); rescaling column targets",
                       label, row_total, col_total)
        cols = cols * (row_total / col_total) if col_total > 0 else cols

    row_sums, col_sums = seed.sum(axis=1), seed.sum(axis=0)
    for i in np.flatnonzero((rows > 0) & (row_sums <= 0)):
        raise IpfInfeasibleError(f"IPF {label}: row {i} has target {rows[i]:g} but an all-zero seed")
    for j in np.flatnonzero((cols > 0) & (col_sums <= 0)):
        raise IpfInfeasibleError(f"IPF {label}: column {j} has target {cols[j]:g} but an all-zero seed")

    m = seed.copy()
    error = _margin_error(m, rows, cols)
    iterations = 0
    while error >= problem.tol and iterations < problem.max_iters:
        s = m.sum(axis=1)
        factor = np.divide(rows, s, out=np.zeros_like(rows), where=s > 0)
        m *= factor[:, None]
        s = m.sum(axis=0)
        factor = np.divide(cols, s, out=np.zeros_like(cols), where=s > 0)
        m *= factor[None, :]
        iterations += 1
        error = _margin_error(m, rows, cols)

    converged = error < problem.tol
    if not converged:
        logger.warning("IPF %s: not converged after %d sweeps (error %.3g)", label, iterations, error)
    return IpfResult(matrix=m, converged=converged, error=error, iterations=iterations)


@dataclass
class ResidenceCounts:
    """Inputs for the worker split by residence type of one CBG."""
    household_share: float
    civilian_gq_18_64: float
    military_gq: float


@dataclass
class IndustryResidence:
    """Fitted workers, rows = RESIDENCE_TYPES, columns = INDUSTRIES."""
    cbg: str
    matrix: np.ndarray
    converged: bool

    def row(self, residence: str) -> np.ndarray:
        return self.matrix[RESIDENCE_TYPES.index(residence)]


def industry_residence_matrix(cbg: str, employment_counts: Sequence[float], residence: ResidenceCounts,
                              gq_industry_props: Mapping[str, float],
                              tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS) -> IndustryResidence:
    """
    Split census industry counts across households, civilian GQs and military GQs.

    Seed: household cells = industry count x household population share;
    civilian GQ cells = 18-64 non-institutional residents x state-level GQ
    industry proportions; military GQ residents all start in armed forces.
    Column targets are the census industry counts, row targets the workers
    of each residence type.

    Args:
        cbg: CBG id (labels only)
        employment_counts: census counts in INDUSTRIES order
        residence: household share and GQ resident counts
        gq_industry_props: industry -> share of civilian GQ residents employed there

    Returns:
        IndustryResidence
    """
    emp = np.asarray(employment_counts, dtype=float)
    props = np.array([gq_industry_props.get(ind, 0.0) for ind in INDUSTRIES], dtype=float)
    seed = np.zeros((len(RESIDENCE_TYPES), len(INDUSTRIES)))
    seed[0] = emp * residence.household_share
    seed[1] = residence.civilian_gq_18_64 * props
    seed[2, INDUSTRY_INDEX[STAFF_INDUSTRY]] = residence.military_gq

    total = emp.sum()
    civ, mil = seed[1].sum(), seed[2].sum()
    rows = np.array([max(total - civ - mil, 0.0), civ, mil])
    result = ipf_fit(IpfProblem(seed, rows, emp, tol, max_iters), label=f"industry x residence {cbg}")
    return IndustryResidence(cbg=cbg, matrix=result.matrix, converged=result.converged)


@dataclass
class CommuteMatrix:
    """Expected workers from one origin, rows = INDUSTRIES, columns = destinations."""
    origin_cbg: str
    destinations: List[str]
    cells: np.ndarray
    converged: bool = True

    def row(self, industry: str) -> np.ndarray:
        return self.cells[INDUSTRY_INDEX[industry]]

    @property
    def total(self) -> float:
        return float(self.cells.sum())


def commute_matrix(origin: str, industry_counts: Sequence[float], od_row: Mapping[str, float],
                   wac: Mapping[str, Sequence[float]],
                   tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS) -> CommuteMatrix:
    """
    Industry-by-destination commute matrix for one origin CBG.

    Seed cell (industry, dest) = WAC industry share at dest x workers going
    to dest; OUTSIDE (no WAC) uses the origin's own industry mix. Row
    targets are the census industry counts, column targets the OD share of
    total workers per destination.

    Args:
        origin: origin CBG id
        industry_counts: census worker counts in INDUSTRIES order
        od_row: destination -> commuter count from this origin
        wac: destination -> worker counts by industry (INDUSTRIES order)

    Returns:
        CommuteMatrix
    """
    counts = np.asarray(industry_counts, dtype=float)
    total = counts.sum()
    od = {d: float(c) for d, c in od_row.items() if c > 0}
    if not od:
        if total > 0:
            logger.warning("Origin %s has no OD flows; all %g workers sent OUTSIDE", origin, total)
        od = {OUTSIDE: 1.0}
    destinations = sorted(d for d in od if d != OUTSIDE)
    if OUTSIDE in od:
        destinations.append(OUTSIDE)
    od_total = sum(od.values())
    col_targets = np.array([total * od[d] / od_total for d in destinations])

    origin_mix = counts / total if total > 0 else np.full(len(counts), 1.0 / len(counts))
    seed = np.zeros((len(INDUSTRIES), len(destinations)))
    has_wac = np.zeros(len(destinations), dtype=bool)
    for j, d in enumerate(destinations):
        mix = np.asarray(wac.get(d, np.zeros(len(INDUSTRIES))), dtype=float)
        if d != OUTSIDE and mix.sum() > 0:
            seed[:, j] = mix / mix.sum() * col_targets[j]
            has_wac[j] = True
        elif d == OUTSIDE:
            seed[:, j] = origin_mix * col_targets[j]
            has_wac[j] = True

    label = f"commute {origin}"
    try:
        result = ipf_fit(IpfProblem(seed, counts, col_targets, tol, max_iters), label=label)
    except IpfInfeasibleError as e:
        logger.warning("%s; retrying with a uniform seed", e)
        fallback = np.zeros_like(seed)
        fallback[:, has_wac] = 1.0
        result = ipf_fit(IpfProblem(fallback, counts, col_targets, tol, max_iters), label=label)
    return CommuteMatrix(origin_cbg=origin, destinations=destinations, cells=result.matrix,
                         converged=result.converged)


def wac_by_destination(wac_rows) -> Dict[str, np.ndarray]:
    """Collapse WAC rows (work_cbg, industry, count) into per-destination vectors."""
    out: Dict[str, np.ndarray] = {}
    for r in wac_rows.itertuples(index=False):
        vec = out.setdefault(r.work_cbg, np.zeros(len(INDUSTRIES)))
        vec[INDUSTRY_INDEX[r.industry]] += float(r.count)
    return out
