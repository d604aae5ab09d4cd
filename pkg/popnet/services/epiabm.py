"""
Agent-based SEIR simulation over a contact network.

Time runs in whole days. Exposure events fire at the start of their day;
then infectious agents whose window ended recover and exposed agents whose
latent period ended turn infectious and schedule their own exposure
events. An agent turning infectious on day t is infectious on days
t+1..t+duration; seeds count as turning infectious on day -1.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import stats

from popnet.config.settings import OUTSIDE, SimConfig
from popnet.services.netgen import ContactGraph
from popnet.services.streams import stream

logger = logging.getLogger(__name__)

S, E, I, R = 0, 1, 2, 3
STATE_NAMES = "SEIR"
TRACE_COLUMNS = ["replicate", "day", "cumulative_infections", "cumulative_excluding_seeds"]
SUMMARY_COLUMNS = ["day", "mean", "ci_low", "ci_high"]


@dataclass
class SimAgents:
    """Per-agent facts the simulation needs beyond the graph."""
    placeholder: np.ndarray
    household: np.ndarray
    workplace: np.ndarray
    works_outside: np.ndarray

    @property
    def n(self) -> int:
        return len(self.placeholder)

    @classmethod
    def anonymous(cls, n: int) -> "SimAgents":
        """Agents of a reference graph: no households, workplaces or boundary."""
        return cls(placeholder=np.zeros(n, dtype=bool), household=np.full(n, -1, dtype=np.int64),
                   workplace=np.full(n, -1, dtype=np.int64), works_outside=np.zeros(n, dtype=bool))

    @classmethod
    def from_people(cls, people: pd.DataFrame) -> "SimAgents":
        """Build from a people table ordered by person_id."""
        def _codes(series):
            values = series.fillna("").astype(str)
            codes, _ = pd.factorize(values.where(values != "", None))
            return codes.astype(np.int64)

        placeholder = people["placeholder_flag"].astype(bool).to_numpy()
        work_cbg = people["work_cbg"].fillna("").astype(str)
        in_region_job = people["workplace_id"].notna() & (work_cbg != OUTSIDE)
        workplace = np.where(in_region_job.to_numpy(), _codes(people["workplace_id"]), -1)
        return cls(
            placeholder=placeholder,
            household=_codes(people["household_id"]),
            workplace=workplace.astype(np.int64),
            works_outside=((work_cbg == OUTSIDE).to_numpy() & ~placeholder),
        )


@dataclass
class SimState:
    state: np.ndarray
    transition_day: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    agents: SimAgents
    cfg: SimConfig
    rng: np.random.Generator
    seeds: np.ndarray
    events: Dict[int, List[Tuple[np.ndarray, np.ndarray]]] = field(default_factory=dict)
    day: int = 0
    # boundary window ledger
    window_susceptible: int = 0
    window_workers_susceptible: int = 0
    window_exposed: int = 0
    window_work_exposed: int = 0
    boundary_exposed: int = 0

    @property
    def n_seeds(self) -> int:
        return len(self.seeds)

    @property
    def cumulative(self) -> int:
        return int(np.count_nonzero(self.state != S))

    @property
    def active(self) -> bool:
        return bool(self.events) or bool(np.any((self.state == E) | (self.state == I)))

    def open_window(self):
        in_pop = ~self.agents.placeholder
        self.window_susceptible = int(np.count_nonzero(in_pop & (self.state == S)))
        self.window_workers_susceptible = int(np.count_nonzero((self.agents.workplace >= 0) & in_pop
                                                               & (self.state == S)))
        self.window_exposed = 0
        self.window_work_exposed = 0


def _schedule(st: SimState, sources: np.ndarray, first_day: np.ndarray, durations: np.ndarray):
    """Queue exposure events from each source to each distinct neighbour with probability p."""
    p = st.cfg.p_transmit
    if p <= 0 or len(sources) == 0:
        return
    for s, start, dur in zip(sources, first_day, durations):
        nbrs = st.indices[st.indptr[s]:st.indptr[s + 1]]
        if len(nbrs) == 0:
            continue
        hit = nbrs[st.rng.random(len(nbrs)) < p]
        if len(hit) == 0:
            continue
        days = int(start) + st.rng.integers(0, int(dur), size=len(hit))
        for d in np.unique(days):
            st.events.setdefault(int(d), []).append((np.full(np.count_nonzero(days == d), s), hit[days == d]))


def _durations(st: SimState, n: int) -> np.ndarray:
    return st.rng.integers(st.cfg.infectious_days_min, st.cfg.infectious_days_max + 1, size=n)


def init_sim(g: ContactGraph, agents: SimAgents, cfg: SimConfig, rng: np.random.Generator) -> SimState:
    """
    Seed ``cfg.n_seeds`` infectious agents drawn from non-placeholders.

    Args:
        g: contact network
        agents: per-agent attributes, aligned with graph vertices
        cfg: simulation parameters
        rng: replicate stream

    Returns:
        SimState at day 0
    """
    if agents.n != g.n_vertices:
        raise ValueError(f"agents ({agents.n}) and graph vertices ({g.n_vertices}) differ")
    eligible = np.flatnonzero(~agents.placeholder)
    if cfg.n_seeds > len(eligible):
        raise ValueError(f"n_seeds {cfg.n_seeds} exceeds the population {len(eligible)}")
    indptr, indices = g.neighbor_lists()
    st = SimState(
        state=np.zeros(g.n_vertices, dtype=np.int8),
        transition_day=np.full(g.n_vertices, -1, dtype=np.int64),
        indptr=indptr, indices=indices, agents=agents, cfg=cfg, rng=rng,
        seeds=np.sort(rng.choice(eligible, size=cfg.n_seeds, replace=False)),
    )
    durations = _durations(st, len(st.seeds))
    st.state[st.seeds] = I
    st.transition_day[st.seeds] = durations - 1
    _schedule(st, st.seeds, np.zeros(len(st.seeds), dtype=np.int64), durations)
    st.open_window()
    return st


def _expose(st: SimState, targets: np.ndarray):
    st.state[targets] = E
    st.transition_day[targets] = st.day + st.cfg.exposed_days


def _fire_events(st: SimState):
    batch = st.events.pop(st.day, None)
    if not batch:
        return
    src = np.concatenate([b[0] for b in batch])
    tgt = np.concatenate([b[1] for b in batch])
    susceptible = st.state[tgt] == S
    src, tgt = src[susceptible], tgt[susceptible]
    if len(tgt) == 0:
        return
    _, first = np.unique(tgt, return_index=True)
    first = np.sort(first)
    src, tgt = src[first], tgt[first]
    _expose(st, tgt)

    in_pop = ~st.agents.placeholder[tgt]
    if st.cfg.boundary_mode == "home_only":
        hh = st.agents.household
        counted = in_pop & (hh[tgt] >= 0) & (hh[tgt] == hh[src])
    else:
        counted = in_pop
    st.window_exposed += int(np.count_nonzero(counted))
    wp = st.agents.workplace
    st.window_work_exposed += int(np.count_nonzero(in_pop & (wp[tgt] >= 0) & (wp[tgt] == wp[src])))


def boundary_update(st: SimState):
    """
    Expose agents whose home or job lies outside the network.

    Susceptible placeholders become exposed with q = in-population new
    exposures in the window / in-population susceptibles at window start;
    susceptible residents working outside use the same ratio computed from
    workplace transmissions among in-region workers. Opens the next window.
    """
    q = st.window_exposed / st.window_susceptible if st.window_susceptible else 0.0
    q_work = (st.window_work_exposed / st.window_workers_susceptible
              if st.window_workers_susceptible else 0.0)
    exposed = 0
    for mask, prob in ((st.agents.placeholder, q), (st.agents.works_outside, q_work)):
        if prob <= 0:
            continue
        candidates = np.flatnonzero(mask & (st.state == S))
        hit = candidates[st.rng.random(len(candidates)) < min(prob, 1.0)]
        _expose(st, hit)
        exposed += len(hit)
    st.boundary_exposed += exposed
    if exposed:
        logger.debug("Day %d boundary: q=%.4f q_work=%.4f, %d exposed", st.day, q, q_work, exposed)
    st.open_window()


def step_day(st: SimState) -> SimState:
    """Advance one day: boundary check, due exposures, then I->R and E->I."""
    if st.day >= st.cfg.horizon_days:
        raise ValueError(f"day {st.day} is past the horizon {st.cfg.horizon_days}")
    if st.day > 0 and st.day % st.cfg.boundary_interval_days == 0:
        boundary_update(st)
    _fire_events(st)

    recovering = np.flatnonzero((st.state == I) & (st.transition_day == st.day))
    st.state[recovering] = R
    turning = np.flatnonzero((st.state == E) & (st.transition_day == st.day))
    if len(turning):
        durations = _durations(st, len(turning))
        st.state[turning] = I
        st.transition_day[turning] = st.day + durations
        _schedule(st, turning, np.full(len(turning), st.day + 1), durations)
    st.day += 1
    return st


def run_simulation(g: ContactGraph, agents: SimAgents, cfg: SimConfig, rng: np.random.Generator) -> np.ndarray:
    """
    One replicate.

    Returns:
        int array of cumulative infections (seeds included) per day, length horizon_days
    """
    st = init_sim(g, agents, cfg, rng)
    trace = np.zeros(cfg.horizon_days, dtype=np.int64)
    while st.day < cfg.horizon_days:
        day = st.day
        step_day(st)
        trace[day] = st.cumulative
        boundary_idle = (st.window_exposed == 0 and st.window_work_exposed == 0) or \
            not np.any(agents.placeholder | agents.works_outside)
        if not st.active and boundary_idle:
            trace[day + 1:] = trace[day]
            break
    return trace


def _replicate(g, agents, cfg, master_seed, name, r):
    return r, run_simulation(g, agents, cfg, stream(master_seed, "sim", name, r))


def summarize(traces: np.ndarray) -> pd.DataFrame:
    """Per-day mean and t-based 95% confidence interval over replicates (rows)."""
    traces = np.asarray(traces, dtype=float)
    n_rep, horizon = traces.shape
    mean = traces.mean(axis=0)
    if n_rep > 1:
        half = stats.t.ppf(0.975, n_rep - 1) * traces.std(axis=0, ddof=1) / math.sqrt(n_rep)
    else:
        half = np.zeros(horizon)
    return pd.DataFrame({"day": np.arange(horizon), "mean": mean, "ci_low": mean - half, "ci_high": mean + half},
                        columns=SUMMARY_COLUMNS)


def run_replicates(g: ContactGraph, agents: SimAgents, cfg: SimConfig, master_seed: int, threads: int = 1,
                   name: str = "synthetic") -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Independent replicates with streams keyed by (master_seed, name, replicate).

    Returns:
        (trace frame, summary frame)
    """
    results = Parallel(n_jobs=threads)(
        delayed(_replicate)(g, agents, cfg, master_seed, name, r) for r in range(cfg.replicates)
    )
    results.sort(key=lambda t: t[0])
    n_seeds = cfg.n_seeds
    frames = []
    for r, trace in results:
        frames.append(pd.DataFrame({
            "replicate": r,
            "day": np.arange(len(trace)),
            "cumulative_infections": trace,
            "cumulative_excluding_seeds": trace - n_seeds,
        }, columns=TRACE_COLUMNS))
    traces = pd.concat(frames, ignore_index=True)
    summary = summarize(np.vstack([t for _, t in results]))
    logger.info("%s: %d replicates, final mean cumulative %.1f", name, cfg.replicates, summary["mean"].iloc[-1])
    return traces, summary


def takeoff_day(trace: np.ndarray, population: int, fraction: float = 0.25) -> Optional[int]:
    """First day cumulative infections reach ``fraction`` of the population, or None."""
    hits = np.flatnonzero(np.asarray(trace) >= fraction * population)
    return int(hits[0]) if len(hits) else None
