"""Per-frame interaction-graph construction under each connectivity scheme.

All builders return a directed edge list closed under pair reversal (both
(i, j) and (j, i) present), never touch absent entities, and are pure
functions of positions, presence and roles. Distances are computed on the
raw-meter (x, y) plane; the ball's height is ignored.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import BALL_SLOT, N_ENTITIES, N_PER_TEAM, ROLE_BALL

SCHEME_NAMES = (
    "none",
    "full",
    "knn",
    "distance",
    "ball_knn",
    "ball_distance",
    "positional",
)


class GraphSchemeError(Exception):
    pass


@dataclass(frozen=True)
class EdgeScheme:
    variant: str
    k: int = 0
    r: float = 0.0

    def __post_init__(self):
        if self.variant not in SCHEME_NAMES:
            raise GraphSchemeError(f"unknown edge scheme {self.variant!r}")
        if self.variant in ("knn", "ball_knn") and self.k < 1:
            raise GraphSchemeError(f"{self.variant} requires k >= 1, got {self.k}")
        if self.variant in ("distance", "ball_distance") and not self.r > 0:
            raise GraphSchemeError(f"{self.variant} requires r > 0, got {self.r}")

    @classmethod
    def parse(cls, spec):
        """Parse config strings like "positional", "knn:8", "distance:15"."""
        name, _, arg = spec.partition(":")
        name = name.strip().lower()
        if name in ("knn", "ball_knn"):
            if not arg:
                raise GraphSchemeError(f"{name} needs a k parameter, e.g. {name}:8")
            return cls(name, k=int(arg))
        if name in ("distance", "ball_distance"):
            if not arg:
                raise GraphSchemeError(f"{name} needs a radius, e.g. {name}:15")
            return cls(name, r=float(arg))
        if arg:
            raise GraphSchemeError(f"scheme {name!r} takes no parameter")
        return cls(name)

    def __str__(self):
        if self.variant in ("knn", "ball_knn"):
            return f"{self.variant}:{self.k}"
        if self.variant in ("distance", "ball_distance"):
            return f"{self.variant}:{self.r:g}"
        return self.variant


@dataclass
class FrameGraph:
    """Directed edge list over one frame's present entities."""

    src: np.ndarray  # (E,) int
    dst: np.ndarray  # (E,) int

    @property
    def num_edges(self):
        return len(self.src)

    def undirected_pairs(self):
        return {(min(i, j), max(i, j)) for i, j in zip(self.src, self.dst)}


def _canonical(pairs):
    """Symmetrize + dedupe an unordered-pair set into a sorted directed list."""
    if not pairs:
        return FrameGraph(np.empty(0, dtype=np.intp), np.empty(0, dtype=np.intp))
    arr = np.array(sorted(pairs), dtype=np.intp)
    src = np.concatenate([arr[:, 0], arr[:, 1]])
    dst = np.concatenate([arr[:, 1], arr[:, 0]])
    order = np.lexsort((dst, src))
    return FrameGraph(src[order], dst[order])


def _pair_distances(positions):
    diff = positions[:, None, :] - positions[None, :, :]
    return np.sqrt((diff**2).sum(axis=2))


def build_edges(positions, present, roles, scheme):
    """Construct the frame's edge set.

    positions: (N, 2) raw meters; present: (N,) bool; roles: (N,) codes.
    """
    positions = np.asarray(positions, dtype=np.float64)
    present = np.asarray(present, dtype=bool)
    n = positions.shape[0]
    idx = np.flatnonzero(present)
    v = scheme.variant

    if v == "none" or len(idx) < 2:
        return _canonical(set())

    if v == "full":
        pairs = {(int(a), int(b)) for ai, a in enumerate(idx) for b in idx[ai + 1 :]}
        return _canonical(pairs)

    if v == "distance":
        d = _pair_distances(positions[idx])
        a, b = np.nonzero(np.triu(d <= scheme.r, k=1))
        return _canonical({(int(idx[i]), int(idx[j])) for i, j in zip(a, b)})

    if v == "knn":
        d = _pair_distances(positions[idx])
        np.fill_diagonal(d, np.inf)
        pairs = set()
        m = len(idx)
        k = min(scheme.k, m - 1)
        for row in range(m):
            # ties broken by lower slot index (stable lexsort on (index, dist))
            order = np.lexsort((idx, d[row]))[:k]
            for col in order:
                a, b = int(idx[row]), int(idx[col])
                pairs.add((min(a, b), max(a, b)))
        return _canonical(pairs)

    if v in ("ball_knn", "ball_distance"):
        if not present[BALL_SLOT]:
            return _canonical(set())
        players = idx[idx != BALL_SLOT]
        if len(players) == 0:
            return _canonical(set())
        d = np.sqrt(
            ((positions[players] - positions[BALL_SLOT]) ** 2).sum(axis=1)
        )
        if v == "ball_distance":
            chosen = players[d <= scheme.r]
        else:
            k = min(scheme.k, len(players))
            order = np.lexsort((players, d))[:k]
            chosen = players[order]
        return _canonical({(int(p), BALL_SLOT) for p in chosen})

    # positional: adjacent tactical lines within each team, ball to all
    roles = np.asarray(roles)
    if np.any((roles[:BALL_SLOT] < 0) | (roles[:BALL_SLOT] > 3)):
        raise GraphSchemeError("positional scheme requires a GK/DEF/MID/FWD role "
                               "for every player slot")
    pairs = set()
    for lo in (0, N_PER_TEAM):
        team = np.arange(lo, lo + N_PER_TEAM)
        team = team[present[team]]
        by_role = {r: team[roles[team] == r] for r in range(4)}
        for ra, rb in ((0, 1), (1, 1), (1, 2), (2, 2), (2, 3), (3, 3)):
            if ra == rb:
                members = by_role[ra]
                pairs.update(
                    (int(a), int(b))
                    for ai, a in enumerate(members)
                    for b in members[ai + 1 :]
                )
            else:
                pairs.update(
                    (min(int(a), int(b)), max(int(a), int(b)))
                    for a in by_role[ra]
                    for b in by_role[rb]
                )
    if present[BALL_SLOT]:
        pairs.update(
            (int(p), BALL_SLOT) for p in np.flatnonzero(present[:BALL_SLOT])
        )
    return _canonical(pairs)


def build_window_edges(window, scheme):
    """Edge lists for every frame of a TrackingWindow."""
    return [
        build_edges(window.positions(t), window.present[t], window.roles, scheme)
        for t in range(window.features.shape[0])
    ]


# The positional / none / full schemes depend only on presence and roles,
# so their per-frame edge lists are memoized (the training hot path).
_TOPOLOGY_ONLY = ("none", "full", "positional")
_edge_cache = {}


def frame_edges_cached(positions, present, roles, scheme):
    if scheme.variant in _TOPOLOGY_ONLY:
        key = (scheme, present.tobytes(), roles.tobytes())
        hit = _edge_cache.get(key)
        if hit is None:
            g = build_edges(positions, present, roles, scheme)
            hit = _edge_cache[key] = (g.src, g.dst)
            if len(_edge_cache) > 4096:
                _edge_cache.clear()
        return hit
    g = build_edges(positions, present, roles, scheme)
    return g.src, g.dst
