"""UE-centric clustering, the UE conflict graph and pilot assignment by
saturation-degree greedy coloring."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import seeding
from .config import ConfigError, SystemConfig
from .channel import MIN_DISTANCE_M, NetworkGeometry


@dataclass(frozen=True)
class ConnectivityGraph:
    r_o: float
    membership: np.ndarray  # (M, K) bool, AP m serves UE k

    @property
    def ue_clusters(self) -> list[np.ndarray]:
        return [np.flatnonzero(col) for col in self.membership.T]

    @property
    def ap_clusters(self) -> list[np.ndarray]:
        return [np.flatnonzero(row) for row in self.membership]


@dataclass(frozen=True)
class ConflictGraph:
    adjacency: np.ndarray  # (K, K) bool, symmetric, empty diagonal

    @property
    def num_vertices(self) -> int:
        return self.adjacency.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(i.tolist(), j.tolist()))


@dataclass(frozen=True)
class PilotAssignment:
    pilot_of: np.ndarray  # (K,) 0-based pilot index
    tau_p: int
    capped: bool = False  # True if a pilot budget forced reuse inside a cluster
    copilot_sets: tuple = field(init=False)

    def __post_init__(self):
        sets = tuple(np.flatnonzero(self.pilot_of == l) for l in range(self.tau_p))
        object.__setattr__(self, "copilot_sets", sets)

    @property
    def shares_pilot(self) -> np.ndarray:
        """(K, K) bool: UEs k and k' use the same pilot (diagonal True)."""
        return self.pilot_of[:, None] == self.pilot_of[None, :]

    @classmethod
    def from_indices(cls, pilot_of, tau_p: int | None = None) -> "PilotAssignment":
        p = np.asarray(pilot_of, dtype=int)
        return cls(p, int(p.max()) + 1 if tau_p is None else int(tau_p))


def cluster_radius_snr(config: SystemConfig, n_antennas: int | None = None) -> float:
    """Distance at which N E_p beta(d) / N0 falls to gamma_min under the
    single-slope law beta(d) = (d/d0)^-PL."""
    gamma = 10.0 ** (config.gamma_min_db / 10.0)
    if not gamma > 0:
        raise ConfigError("gamma_min must be positive in linear scale")
    n = config.antennas_per_ap if n_antennas is None else n_antennas
    # pilot SNR at the reference distance, scaled by any per-UE override
    snr = n * 10.0 ** (config.pilot_snr_db / 10.0) * min(config.pilot_powers()) / config.pilot_power
    pl = config.simple_pl
    return pl.d0_m * (snr / gamma) ** (1.0 / pl.exponent)


def compute_r_o(geom: NetworkGeometry, config: SystemConfig, n_antennas: int | None = None) -> float:
    """Cluster radius: large enough that every UE reaches an AP, and at least
    the SNR-limited radius. Multiplied by ``config.r_o_scale``."""
    nearest = np.maximum(geom.distances(), MIN_DISTANCE_M).min(axis=0).max()
    return config.r_o_scale * max(float(nearest), cluster_radius_snr(config, n_antennas))


def build_connectivity(geom: NetworkGeometry, r_o: float) -> ConnectivityGraph:
    if not r_o > 0:
        raise ValueError("r_o must be positive")
    d = np.maximum(geom.distances(), MIN_DISTANCE_M)
    return ConnectivityGraph(float(r_o), d <= r_o)


def conflict_graph(conn: ConnectivityGraph) -> ConflictGraph:
    mem = conn.membership.astype(np.int64)
    adj = (mem.T @ mem) > 0
    np.fill_diagonal(adj, False)
    return ConflictGraph(adj)


def color_graph(graph: ConflictGraph, seed: int = 0, max_colors: int | None = None) -> PilotAssignment:
    """Greedy saturation-degree coloring.

    Vertex order: most distinct neighbour colors, then highest degree, then a
    seeded random priority. Color choice: among colors unused by neighbours,
    the least used one, lowest index on ties; a new color is opened only when
    none is free.

    ``max_colors`` caps the number of colors. When the cap is reached and no
    color is free, the color with the fewest conflicting neighbours is reused
    (then least used, then lowest index) and the result is flagged ``capped``.
    """
    adj = graph.adjacency
    K = graph.num_vertices
    if K == 0:
        return PilotAssignment(np.zeros(0, dtype=int), 0)
    deg = graph.degrees
    prio = seeding.rng_for(seed, seeding.COLORING).permutation(K)
    color = np.full(K, -1)
    uses: list[int] = []
    capped = False
    neighbor_colors: list[set] = [set() for _ in range(K)]
    for _ in range(K):
        best = None
        for v in range(K):
            if color[v] >= 0:
                continue
            key = (len(neighbor_colors[v]), deg[v], -prio[v])
            if best is None or key > best[0]:
                best = (key, v)
        v = best[1]
        free = [c for c in range(len(uses)) if c not in neighbor_colors[v]]
        if free:
            c = min(free, key=lambda c: (uses[c], c))
        elif max_colors is None or len(uses) < max_colors:
            c = len(uses)
            uses.append(0)
        else:
            nb = np.flatnonzero(adj[v])
            clash = [int(np.sum(color[nb] == c)) for c in range(len(uses))]
            c = min(range(len(uses)), key=lambda c: (clash[c], uses[c], c))
            capped = True
        color[v] = c
        uses[c] += 1
        for u in np.flatnonzero(adj[v]):
            neighbor_colors[u].add(c)
    return PilotAssignment(color, len(uses), capped)


def verify_assignment(pilots: PilotAssignment, conn: ConnectivityGraph) -> tuple[bool, list[tuple[int, int, int]]]:
    """Check that UEs served by a common AP use distinct pilots.

    Returns (ok, violations) with violations as (m, k, k') triples, k < k'.
    """
    bad = []
    for m, ues in enumerate(conn.ap_clusters):
        for a, b in itertools.combinations(ues.tolist(), 2):
            if pilots.pilot_of[a] == pilots.pilot_of[b]:
                bad.append((m, a, b))
    return not bad, bad


def chromatic_number(graph: ConflictGraph) -> int:
    """Exact chromatic number by backtracking (small graphs only)."""
    adj = graph.adjacency
    K = graph.num_vertices
    if K == 0:
        return 0
    order = list(np.argsort(-graph.degrees, kind="stable"))

    def colorable(k: int) -> bool:
        col = [-1] * K

        def place(i: int) -> bool:
            if i == K:
                return True
            v = order[i]
            used = {col[u] for u in np.flatnonzero(adj[v])}
            top = max(col) + 1
            for c in range(min(k, top + 1)):
                if c not in used:
                    col[v] = c
                    if place(i + 1):
                        return True
                    col[v] = -1
            return False

        return place(0)

    for k in range(1, K + 1):
        if colorable(k):
            return k
    return K


def assign_pilots(
    geom: NetworkGeometry,
    config: SystemConfig,
    seed: int,
    max_colors: int | None = None,
    n_antennas: int | None = None,
) -> tuple[PilotAssignment, ConnectivityGraph]:
    """Cluster radius, connectivity, conflict graph and coloring in one call."""
    conn = build_connectivity(geom, compute_r_o(geom, config, n_antennas))
    return color_graph(conflict_graph(conn), seed, max_colors), conn


def export_pilots_csv(path: str | Path, pilots: PilotAssignment) -> None:
    with open(path, "w") as fh:
        fh.write("ue,pilot\n")
        for k, l in enumerate(pilots.pilot_of.tolist()):
            fh.write(f"{k},{l}\n")


def export_edges(path: str | Path, graph: ConflictGraph) -> None:
    with open(path, "w") as fh:
        for a, b in graph.edges():
            fh.write(f"{a} {b}\n")
