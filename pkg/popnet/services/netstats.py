"""
Topology statistics of a contact network, computed on the simple graph
obtained by merging all layers.
"""
import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import sparse

from popnet.services.netgen import ContactGraph

logger = logging.getLogger(__name__)

STATS_COLUMNS = ["name", "n", "m", "mean_degree", "mean_local_c", "global_c", "r", "tmh", "ir_vd"]


@dataclass
class StatsReport:
    """One row of the stats table; None marks an undefined statistic."""
    name: str
    n: int
    m: int
    mean_degree: float
    mean_local_c: float
    global_c: Optional[float]
    r: Optional[float]
    tmh: Optional[float]
    ir_vd: Optional[float]

    def as_row(self) -> Dict[str, object]:
        return asdict(self)


def _adjacency(g: ContactGraph) -> Tuple[sparse.csr_matrix, np.ndarray]:
    a = g.to_sparse()
    return a, np.asarray(a.sum(axis=1)).ravel().astype(np.int64)


def _triangles(a: sparse.csr_matrix) -> np.ndarray:
    """Triangles through each vertex."""
    if a.nnz == 0:
        return np.zeros(a.shape[0], dtype=np.int64)
    closed = (a @ a).multiply(a)
    return (np.asarray(closed.sum(axis=1)).ravel() // 2).astype(np.int64)


def clustering(g: ContactGraph) -> Tuple[float, Optional[float]]:
    """
    Mean local and global clustering.

    Local: triangles through v over d(d-1)/2, 0 when d < 2, averaged over all
    vertices. Global: closed over connected triples; None without triples.
    """
    a, d = _adjacency(g)
    if g.n_vertices == 0:
        return 0.0, None
    t = _triangles(a)
    pairs = d * (d - 1) / 2.0
    local = np.divide(t, pairs, out=np.zeros(len(d), dtype=float), where=pairs > 0)
    triples = pairs.sum()
    global_c = float(t.sum() / triples) if triples > 0 else None
    return float(local.mean()), global_c


def degree_assortativity(g: ContactGraph) -> Optional[float]:
    """Pearson correlation of end-vertex degrees over edges in both directions; None when undefined."""
    a, d = _adjacency(g)
    u, v = g.simple_edges()
    if len(u) == 0:
        return None
    x = np.concatenate([d[u], d[v]]).astype(float)
    y = np.concatenate([d[v], d[u]]).astype(float)
    x_c, y_c = x - x.mean(), y - y.mean()
    denom = math.sqrt(float(np.dot(x_c, x_c)) * float(np.dot(y_c, y_c)))
    if denom == 0:
        return None
    return float(np.dot(x_c, y_c) / denom)


def tmh(g: ContactGraph) -> Optional[float]:
    """Tendency to make hubs: sum d^2 / sum d."""
    _, d = _adjacency(g)
    total = d.sum()
    if total == 0:
        return None
    return float(np.sum(d.astype(float) ** 2) / total)


def ir_vd(g: ContactGraph) -> Optional[float]:
    """Vertex degree information index: sum d log2 d / (2E log2 2E)."""
    _, d = _adjacency(g)
    two_e = float(d.sum())
    if two_e == 0:
        return None
    pos = d[d > 0].astype(float)
    return float(np.sum(pos * np.log2(pos)) / (two_e * math.log2(two_e)))


def stats_report(g: ContactGraph, name: str = "") -> StatsReport:
    """All six statistics for one network."""
    u, _ = g.simple_edges()
    m = len(u)
    mean_local, global_c = clustering(g)
    report = StatsReport(
        name=name,
        n=g.n_vertices,
        m=m,
        mean_degree=2.0 * m / g.n_vertices if g.n_vertices else 0.0,
        mean_local_c=mean_local,
        global_c=global_c,
        r=degree_assortativity(g),
        tmh=tmh(g),
        ir_vd=ir_vd(g),
    )
    logger.info("Stats %s: n=%d m=%d mean degree %.3f", name, report.n, report.m, report.mean_degree)
    return report
