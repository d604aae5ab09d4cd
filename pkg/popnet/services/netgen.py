"""
Layered contact network: household cliques, block-model workplaces and
schools, small-world group quarters, and the reference random graphs they
are compared against.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import sparse

from popnet.config.settings import LAYERS, NetworkConfig
from popnet.services.streams import seed_int, stream

logger = logging.getLogger(__name__)

LAYER_CODE = {name: i for i, name in enumerate(LAYERS)}
REFERENCE_KINDS = ("barabasi_albert", "erdos_renyi", "static_scale_free", "watts_strogatz")

EdgeArrays = Tuple[np.ndarray, np.ndarray]


def _empty_edges() -> EdgeArrays:
    return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)


class ContactGraph:
    """
    Undirected multi-layer graph over person ids 0..n_vertices-1.

    Edges are stored with u < v, unique within a layer and sorted by
    (layer code, u, v). The same pair may appear once per layer.
    """
    def __init__(self, n_vertices: int, u: np.ndarray, v: np.ndarray, layer: np.ndarray):
        self.n_vertices = int(n_vertices)
        self.u = u
        self.v = v
        self.layer = layer

    @classmethod
    def from_layers(cls, n_vertices: int, parts: Iterable[Tuple[str, np.ndarray, np.ndarray]]) -> "ContactGraph":
        us, vs, ls = [], [], []
        for name, a, b in parts:
            a = np.asarray(a, dtype=np.int64)
            b = np.asarray(b, dtype=np.int64)
            us.append(np.minimum(a, b))
            vs.append(np.maximum(a, b))
            ls.append(np.full(len(a), LAYER_CODE[name], dtype=np.int8))
        if not us:
            return cls(n_vertices, *_empty_edges(), np.zeros(0, dtype=np.int8))
        u, v, layer = np.concatenate(us), np.concatenate(vs), np.concatenate(ls)
        keep = u != v
        u, v, layer = u[keep], v[keep], layer[keep]
        if len(u) and (u.min() < 0 or v.max() >= n_vertices):
            raise ValueError(f"edge endpoint outside 0..{n_vertices - 1}")
        order = np.lexsort((v, u, layer))
        u, v, layer = u[order], v[order], layer[order]
        if len(u) > 1:
            dup = (u[1:] == u[:-1]) & (v[1:] == v[:-1]) & (layer[1:] == layer[:-1])
            first = np.concatenate([[True], ~dup])
            u, v, layer = u[first], v[first], layer[first]
        return cls(n_vertices, u, v, layer)

    @property
    def n_edges(self) -> int:
        return len(self.u)

    def layer_counts(self) -> Dict[str, int]:
        counts = np.bincount(self.layer, minlength=len(LAYERS))
        return {name: int(counts[i]) for i, name in enumerate(LAYERS) if counts[i]}

    def layer_edges(self, name: str) -> EdgeArrays:
        mask = self.layer == LAYER_CODE[name]
        return self.u[mask], self.v[mask]

    def simple_edges(self) -> EdgeArrays:
        """Unique (u, v) pairs across layers."""
        if self.n_edges == 0:
            return _empty_edges()
        keys = np.unique(self.u * self.n_vertices + self.v)
        return keys // self.n_vertices, keys % self.n_vertices

    def to_sparse(self) -> sparse.csr_matrix:
        """Symmetric 0/1 adjacency of the de-duplicated simple graph."""
        u, v = self.simple_edges()
        data = np.ones(2 * len(u), dtype=np.int64)
        a = sparse.coo_matrix((data, (np.concatenate([u, v]), np.concatenate([v, u]))),
                              shape=(self.n_vertices, self.n_vertices))
        return a.tocsr()

    def neighbor_lists(self) -> Tuple[np.ndarray, np.ndarray]:
        """CSR (indptr, indices) of distinct neighbors, each list sorted."""
        a = self.to_sparse()
        a.sort_indices()
        return a.indptr, a.indices

    def degrees(self) -> np.ndarray:
        indptr, _ = self.neighbor_lists()
        return np.diff(indptr)

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.n_vertices))
        u, v = self.simple_edges()
        g.add_edges_from(zip(u.tolist(), v.tolist()))
        return g

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"u": self.u, "v": self.v, "layer": np.array(LAYERS, dtype=object)[self.layer]})

    def save_csv(self, path: str):
        self.to_frame().to_csv(path, index=False)

    @classmethod
    def load_csv(cls, path: str, n_vertices: Optional[int] = None) -> "ContactGraph":
        df = pd.read_csv(path, dtype={"u": np.int64, "v": np.int64, "layer": str})
        unknown = set(df["layer"]) - set(LAYERS)
        if unknown:
            raise ValueError(f"{path}: unknown layer {sorted(unknown)[0]!r}")
        if n_vertices is None:
            n_vertices = int(max(df["u"].max(), df["v"].max()) + 1) if len(df) else 0
        parts = [(name, g["u"].to_numpy(), g["v"].to_numpy()) for name, g in df.groupby("layer")]
        return cls.from_layers(n_vertices, parts)

    def __repr__(self):
        return f"ContactGraph(n_vertices={self.n_vertices}, n_edges={self.n_edges}, layers={self.layer_counts()})"


def household_cliques(households: Mapping[str, Sequence[int]]) -> EdgeArrays:
    """Complete graph inside every household."""
    us, vs = [], []
    for members in households.values():
        m = np.asarray(sorted(members), dtype=np.int64)
        if len(m) < 2:
            continue
        iu, ju = np.triu_indices(len(m), 1)
        us.append(m[iu])
        vs.append(m[ju])
    if not us:
        return _empty_edges()
    return np.concatenate(us), np.concatenate(vs)


@dataclass
class BlockModelSpec:
    members: np.ndarray
    block_of: np.ndarray
    k: float
    alpha: float

    def __post_init__(self):
        self.members = np.asarray(self.members, dtype=np.int64)
        self.block_of = np.asarray(self.block_of)
        if len(self.members) != len(self.block_of):
            raise ValueError("every member needs a block label")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.k < 0:
            raise ValueError(f"mean degree must be >= 0, got {self.k}")

    def blocks(self) -> Tuple[list, List[np.ndarray]]:
        labels = sorted(set(self.block_of.tolist()))
        groups = [np.sort(self.members[self.block_of == lab]) for lab in labels]
        return labels, groups


def sbm_block_degrees(sizes: Sequence[int], k: float, alpha: float) -> np.ndarray:
    """
    Mean neighbours in block j of a vertex in block i:
    K_ij = (1 - alpha) K N_j / N, plus alpha K on the diagonal.
    """
    n_j = np.asarray(sizes, dtype=float)
    n = n_j.sum()
    kij = np.tile((1.0 - alpha) * k * n_j / n, (len(n_j), 1))
    kij[np.diag_indices(len(n_j))] += alpha * k
    return kij


def _triangle_pairs(idx: np.ndarray, n: int) -> EdgeArrays:
    """Decode row-major indices of the strict upper triangle of an n x n matrix."""
    idx = idx.astype(np.int64)
    a = (n - 2 - np.floor(np.sqrt(-8.0 * idx + 4.0 * n * (n - 1) - 7) / 2.0 - 0.5)).astype(np.int64)

    def start(r):
        return r * n - r * (r + 1) // 2

    a = np.where(idx < start(a), a - 1, a)
    a = np.where(idx >= start(a + 1), a + 1, a)
    b = idx - start(a) + a + 1
    return a, b


def _bernoulli_pairs(n_pairs: int, p: float, rng: np.random.Generator) -> np.ndarray:
    if n_pairs <= 0 or p <= 0:
        return np.zeros(0, dtype=np.int64)
    m = int(rng.binomial(n_pairs, p))
    if m == 0:
        return np.zeros(0, dtype=np.int64)
    return np.sort(rng.choice(n_pairs, size=m, replace=False))


def sbm_generate(spec: BlockModelSpec, rng: np.random.Generator, label: str = "") -> EdgeArrays:
    """
    Realize a block model with independent pair draws.

    Within block i pairs connect with K_ii / (N_i - 1), across blocks i, j
    with K_ij / N_j. Probabilities above 1 are clamped with a warning.

    Args:
        spec: members, block labels, K and alpha
        rng: place stream
        label: context for warnings

    Returns:
        (u, v) arrays of person ids
    """
    if len(spec.members) < 2:
        raise ValueError("block model needs at least two members")
    labels, groups = spec.blocks()
    sizes = [len(g) for g in groups]
    kij = sbm_block_degrees(sizes, spec.k, spec.alpha)

    def _prob(expected, candidates, i, j):
        if candidates <= 0:
            if expected > 0:
                logger.warning("SBM %s: block %s has a single member, within-block degree %.2f unrealizable",
                               label, labels[i], expected)
            return 0.0
        p = expected / candidates
        if p > 1.0:
            logger.warning("SBM %s: edge probability %.3f for blocks (%s, %s) clamped to 1",
                           label, p, labels[i], labels[j])
            p = 1.0
        return p

    us, vs = [], []
    for i, gi in enumerate(groups):
        n_i = len(gi)
        p = _prob(kij[i, i], n_i - 1, i, i)
        picks = _bernoulli_pairs(n_i * (n_i - 1) // 2, p, rng)
        if len(picks):
            a, b = _triangle_pairs(picks, n_i)
            us.append(gi[a])
            vs.append(gi[b])
        for j in range(i + 1, len(groups)):
            gj = groups[j]
            p = _prob(kij[i, j], len(gj), i, j)
            picks = _bernoulli_pairs(n_i * len(gj), p, rng)
            if len(picks):
                us.append(gi[picks // len(gj)])
                vs.append(gj[picks % len(gj)])
    if not us:
        return _empty_edges()
    return np.concatenate(us), np.concatenate(vs)


def watts_strogatz(members: Sequence[int], k: int, beta: float, rng: np.random.Generator) -> EdgeArrays:
    """Small-world graph over ``members`` (ring of k/2 neighbours each side, rewired with beta)."""
    members = np.asarray(sorted(members), dtype=np.int64)
    if k % 2 or k < 2:
        raise ValueError(f"K must be a positive even integer, got {k}")
    if len(members) <= k:
        raise ValueError(f"Watts-Strogatz needs more than K={k} members, got {len(members)}")
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    g = nx.watts_strogatz_graph(len(members), k, beta, seed=seed_int(rng))
    edges = np.array(sorted(g.edges()), dtype=np.int64).reshape(-1, 2)
    return members[edges[:, 0]], members[edges[:, 1]]


def static_scale_free(n: int, mean_degree: float, exponent: float, rng: np.random.Generator) -> EdgeArrays:
    """
    Static scale-free graph: vertex i gets weight (i + 1)^(-1/(exponent - 1));
    n * mean_degree / 2 distinct edges are drawn with endpoint probability
    proportional to weight, rejecting self-loops and repeats.
    """
    if exponent <= 2.0:
        raise ValueError(f"exponent must be > 2, got {exponent}")
    target = int(round(n * mean_degree / 2.0))
    if target > n * (n - 1) // 2:
        raise ValueError("mean degree too large for a simple graph")
    if target == 0:
        return _empty_edges()
    w = np.arange(1, n + 1, dtype=float) ** (-1.0 / (exponent - 1.0))
    w /= w.sum()
    keys = np.zeros(0, dtype=np.int64)
    while len(keys) < target:
        batch = max(2 * (target - len(keys)), 1024)
        a = rng.choice(n, size=batch, p=w)
        b = rng.choice(n, size=batch, p=w)
        ok = a != b
        lo, hi = np.minimum(a[ok], b[ok]), np.maximum(a[ok], b[ok])
        new = lo * n + hi
        _, first = np.unique(new, return_index=True)
        new = new[np.sort(first)]
        new = new[~np.isin(new, keys)]
        keys = np.concatenate([keys, new[:target - len(keys)]])
    return keys // n, keys % n


def reference_graph(kind: str, n: int, mean_degree: float, rng: np.random.Generator,
                    exponent: float = 2.5, beta: float = 0.25) -> ContactGraph:
    """
    Comparison graph on n vertices with the given mean degree.

    barabasi_albert uses m = floor(mean_degree / 2); erdos_renyi is G(n, p)
    with p = mean_degree / (n - 1); watts_strogatz uses the largest even K
    not above mean_degree; static_scale_free draws n * mean_degree / 2 edges.
    """
    if n < 2:
        raise ValueError(f"reference graph needs n >= 2, got {n}")
    if mean_degree < 0:
        raise ValueError(f"mean degree must be >= 0, got {mean_degree}")
    if kind == "barabasi_albert":
        m = int(math.floor(mean_degree / 2.0))
        if not 1 <= m < n:
            raise ValueError(f"Barabasi-Albert needs 1 <= m < n, got m={m}")
        g = nx.barabasi_albert_graph(n, m, seed=seed_int(rng))
        edges = np.array(list(g.edges()), dtype=np.int64).reshape(-1, 2)
        u, v = edges[:, 0], edges[:, 1]
    elif kind == "erdos_renyi":
        p = mean_degree / (n - 1)
        if p > 1:
            raise ValueError(f"Erdos-Renyi probability {p:.3f} exceeds 1")
        g = nx.fast_gnp_random_graph(n, p, seed=seed_int(rng))
        edges = np.array(list(g.edges()), dtype=np.int64).reshape(-1, 2)
        u, v = edges[:, 0], edges[:, 1]
    elif kind == "watts_strogatz":
        k = int(math.floor(mean_degree / 2.0)) * 2
        u, v = watts_strogatz(np.arange(n), k, beta, rng)
    elif kind == "static_scale_free":
        u, v = static_scale_free(n, mean_degree, exponent, rng)
    else:
        raise ValueError(f"unknown reference graph kind {kind!r}; expected one of {REFERENCE_KINDS}")
    return ContactGraph.from_layers(n, [("ref", u, v)])


def _income_block(income: Optional[float], split: float, placeholder_block: str) -> str:
    if income is None or (isinstance(income, float) and math.isnan(income)):
        return placeholder_block
    return "high" if income >= split else "low"


@dataclass
class _PlaceTask:
    """What one place's generator needs, detached from the population."""
    place_id: str
    kind: str
    members: np.ndarray
    blocks: np.ndarray
    n_students: int = 0


def _place_task(place, members: List[int], pop, cfg: NetworkConfig) -> Optional[_PlaceTask]:
    if len(members) < 2:
        return None
    if place.kind == "workplace":
        blocks = [_income_block(pop.persons[m].attrs.income, cfg.income_split, cfg.placeholder_block)
                  for m in members]
        return _PlaceTask(place.place_id, "work", np.array(members), np.array(blocks))
    if place.kind == "school":
        students = [m for m in members if pop.persons[m].school_id == place.place_id]
        teachers = [m for m in members if pop.persons[m].school_id != place.place_id]
        grades = [pop.persons[m].attrs.grade for m in students] + [0] * len(teachers)
        return _PlaceTask(place.place_id, "school", np.array(students + teachers),
                          np.array(grades, dtype=np.int64), n_students=len(students))
    if place.kind == "gq":
        return _PlaceTask(place.place_id, "gq", np.array(members), np.zeros(len(members)))
    return None


def _place_edges(task: _PlaceTask, cfg: NetworkConfig, master_seed: int):
    rng = stream(master_seed, "network", task.place_id)
    if task.kind == "work":
        spec = BlockModelSpec(task.members, task.blocks, cfg.work_k, cfg.work_alpha)
        return ("work",) + sbm_generate(spec, rng, label=task.place_id)
    if task.kind == "school":
        blocks = task.blocks.copy()
        n_teachers = len(blocks) - task.n_students
        if task.n_students and n_teachers:
            levels, counts = np.unique(blocks[:task.n_students], return_counts=True)
            blocks[task.n_students:] = rng.choice(levels, size=n_teachers, p=counts / counts.sum())
        spec = BlockModelSpec(task.members, blocks, cfg.school_k, cfg.school_alpha)
        return ("school",) + sbm_generate(spec, rng, label=task.place_id)
    if len(task.members) <= cfg.gq_k:
        logger.warning("GQ %s has %d members, not more than K=%d; using a clique",
                       task.place_id, len(task.members), cfg.gq_k)
        return ("gq",) + household_cliques({task.place_id: task.members})
    return ("gq",) + watts_strogatz(task.members, cfg.gq_k, cfg.gq_beta, rng)


def assemble_network(pop, cfg: NetworkConfig, master_seed: int, threads: int = 1) -> ContactGraph:
    """
    Build the synthetic contact network.

    Households are cliques; workplaces are block models over two income
    blocks; schools are block models over grades, with teachers spread
    across grades in proportion to enrolment; GQs (residents plus staff)
    are small-world graphs. Placeholder workplaces outside the region get
    no edges. Each place draws from its own stream, so the result does not
    depend on ``threads``.

    Args:
        pop: Population after placement
        cfg: layer parameters
        master_seed: run seed
        threads: joblib worker count

    Returns:
        ContactGraph over all persons
    """
    members = pop.members_by_place()
    tasks = []
    for place_id in sorted(members):
        place = pop.places[place_id]
        if not place.in_network:
            continue
        task = _place_task(place, members[place_id], pop, cfg)
        if task is not None:
            tasks.append(task)
    results = Parallel(n_jobs=threads)(delayed(_place_edges)(task, cfg, master_seed) for task in tasks)
    hu, hv = household_cliques(pop.households)
    graph = ContactGraph.from_layers(len(pop.persons), [("home", hu, hv)] + list(results))
    logger.info("Assembled %r", graph)
    return graph
