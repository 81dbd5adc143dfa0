"""Graph builders vs brute-force oracles; scheme parsing; invariants."""

import numpy as np
import pytest

from posgar.data import BALL_SLOT, N_ENTITIES, ROLE_BALL
from posgar.graphs import EdgeScheme, GraphSchemeError, build_edges

FORMATION_442_ROLES = np.array(
    [0] + [1] * 4 + [2] * 4 + [3] * 2 + [0] + [1] * 4 + [2] * 4 + [3] * 2 + [4],
    dtype=np.int8,
)


def random_frame(rng, n_absent=0):
    pos = rng.uniform(-55, 40, size=(N_ENTITIES, 2))
    present = np.ones(N_ENTITIES, dtype=bool)
    if n_absent:
        present[rng.choice(N_ENTITIES, size=n_absent, replace=False)] = False
    return pos, present


def oracle_knn(pos, present, k):
    """Brute-force symmetrized k-nearest-neighbor pair set."""
    idx = np.flatnonzero(present)
    pairs = set()
    for i in idx:
        d = [(np.hypot(*(pos[j] - pos[i])), j) for j in idx if j != i]
        d.sort()
        for _, j in d[:k]:
            pairs.add((min(i, j), max(i, j)))
    return pairs


def oracle_distance(pos, present, r):
    idx = np.flatnonzero(present)
    return {
        (int(i), int(j))
        for a, i in enumerate(idx)
        for j in idx[a + 1 :]
        if np.hypot(*(pos[j] - pos[i])) <= r
    }


class TestSchemeParsing:
    def test_parse_forms(self):
        assert EdgeScheme.parse("knn:8") == EdgeScheme("knn", k=8)
        assert EdgeScheme.parse("distance:15") == EdgeScheme("distance", r=15.0)
        assert EdgeScheme.parse("ball_distance:20").r == 20.0
        assert EdgeScheme.parse("positional").variant == "positional"

    def test_roundtrip_str(self):
        for s in ("none", "full", "knn:8", "distance:15", "ball_knn:8",
                  "ball_distance:20", "positional"):
            assert str(EdgeScheme.parse(s)) == s

    def test_unknown_scheme_rejected(self):
        with pytest.raises(GraphSchemeError, match="voronoi"):
            EdgeScheme.parse("voronoi")

    def test_missing_parameter_rejected(self):
        with pytest.raises(GraphSchemeError, match="knn"):
            EdgeScheme.parse("knn")

    def test_invalid_parameter_rejected(self):
        with pytest.raises(GraphSchemeError):
            EdgeScheme.parse("knn:0")
        with pytest.raises(GraphSchemeError):
            EdgeScheme.parse("distance:-3")

    def test_parameter_on_parameterless_scheme_rejected(self):
        with pytest.raises(GraphSchemeError):
            EdgeScheme.parse("full:3")


class TestBasicSchemes:
    def test_none_is_empty(self):
        pos, present = random_frame(np.random.default_rng(0))
        g = build_edges(pos, present, FORMATION_442_ROLES, EdgeScheme("none"))
        assert g.num_edges == 0

    def test_full_all_present(self):
        pos, present = random_frame(np.random.default_rng(1))
        g = build_edges(pos, present, FORMATION_442_ROLES, EdgeScheme("full"))
        assert len(g.undirected_pairs()) == 253  # C(23, 2)
        assert g.num_edges == 506

    def test_symmetry_closure(self):
        rng = np.random.default_rng(2)
        pos, present = random_frame(rng, n_absent=3)
        for spec in ("full", "knn:4", "distance:15", "ball_knn:8",
                     "ball_distance:20", "positional"):
            g = build_edges(pos, present, FORMATION_442_ROLES,
                            EdgeScheme.parse(spec))
            directed = set(zip(g.src.tolist(), g.dst.tolist()))
            assert directed == {(j, i) for i, j in directed}, spec
            assert all(i != j for i, j in directed)

    def test_absent_entities_untouched(self):
        rng = np.random.default_rng(3)
        pos, present = random_frame(rng)
        present[[2, 17]] = False
        for spec in ("full", "knn:4", "distance:15", "positional"):
            g = build_edges(pos, present, FORMATION_442_ROLES,
                            EdgeScheme.parse(spec))
            assert not np.isin(g.src, [2, 17]).any(), spec


class TestKnnOracle:
    def test_collinear_example(self):
        pos = np.zeros((4, 2))
        pos[:, 0] = [0.0, 1.0, 2.0, 10.0]
        g = build_edges(pos, np.ones(4, bool), np.zeros(4, np.int8),
                        EdgeScheme("knn", k=1))
        assert g.undirected_pairs() == {(0, 1), (1, 2), (2, 3)}

    def test_against_bruteforce_1000_frames(self):
        rng = np.random.default_rng(4)
        scheme = EdgeScheme("knn", k=8)
        for _ in range(1000):
            pos, present = random_frame(rng, n_absent=int(rng.integers(0, 4)))
            g = build_edges(pos, present, FORMATION_442_ROLES, scheme)
            assert g.undirected_pairs() == oracle_knn(pos, present, 8)

    def test_fewer_present_than_k(self):
        pos, present = random_frame(np.random.default_rng(5))
        present[:] = False
        present[[0, 5]] = True
        g = build_edges(pos, present, FORMATION_442_ROLES, EdgeScheme("knn", k=8))
        assert g.undirected_pairs() == {(0, 5)}


class TestDistanceOracle:
    def test_against_bruteforce_1000_frames(self):
        rng = np.random.default_rng(6)
        scheme = EdgeScheme("distance", r=15.0)
        for _ in range(1000):
            pos, present = random_frame(rng, n_absent=int(rng.integers(0, 4)))
            g = build_edges(pos, present, FORMATION_442_ROLES, scheme)
            assert g.undirected_pairs() == oracle_distance(pos, present, 15.0)


class TestBallSchemes:
    def test_ball_knn_oracle(self):
        rng = np.random.default_rng(7)
        scheme = EdgeScheme("ball_knn", k=8)
        for _ in range(200):
            pos, present = random_frame(rng)
            g = build_edges(pos, present, FORMATION_442_ROLES, scheme)
            d = sorted(
                (np.hypot(*(pos[p] - pos[BALL_SLOT])), p)
                for p in range(BALL_SLOT)
            )
            expect = {(min(p, BALL_SLOT), BALL_SLOT) for _, p in d[:8]}
            assert g.undirected_pairs() == expect

    def test_ball_distance_oracle(self):
        rng = np.random.default_rng(8)
        scheme = EdgeScheme("ball_distance", r=20.0)
        for _ in range(200):
            pos, present = random_frame(rng)
            g = build_edges(pos, present, FORMATION_442_ROLES, scheme)
            expect = {
                (p, BALL_SLOT)
                for p in range(BALL_SLOT)
                if np.hypot(*(pos[p] - pos[BALL_SLOT])) <= 20.0
            }
            assert g.undirected_pairs() == expect

    def test_ball_absent_gives_empty(self):
        pos, present = random_frame(np.random.default_rng(9))
        present[BALL_SLOT] = False
        for spec in ("ball_knn:8", "ball_distance:20"):
            g = build_edges(pos, present, FORMATION_442_ROLES,
                            EdgeScheme.parse(spec))
            assert g.num_edges == 0


class TestPositional:
    def test_442_pair_counts(self):
        pos, present = random_frame(np.random.default_rng(10))
        g = build_edges(pos, present, FORMATION_442_ROLES,
                        EdgeScheme("positional"))
        # 41 player pairs per team + 22 ball edges
        assert len(g.undirected_pairs()) == 104

    def test_442_ball_absent(self):
        pos, present = random_frame(np.random.default_rng(11))
        present[BALL_SLOT] = False
        g = build_edges(pos, present, FORMATION_442_ROLES,
                        EdgeScheme("positional"))
        assert len(g.undirected_pairs()) == 82

    def test_topology_only(self):
        rng = np.random.default_rng(12)
        present = np.ones(N_ENTITIES, dtype=bool)
        scheme = EdgeScheme("positional")
        pairs = None
        for _ in range(5):
            pos = rng.uniform(-50, 50, size=(N_ENTITIES, 2))
            g = build_edges(pos, present, FORMATION_442_ROLES, scheme)
            if pairs is None:
                pairs = g.undirected_pairs()
            assert g.undirected_pairs() == pairs

    def test_no_cross_team_player_edges(self):
        pos, present = random_frame(np.random.default_rng(13))
        g = build_edges(pos, present, FORMATION_442_ROLES,
                        EdgeScheme("positional"))
        for i, j in g.undirected_pairs():
            if BALL_SLOT in (i, j):
                continue
            assert (i < 11) == (j < 11), (i, j)

    def test_unknown_role_rejected(self):
        roles = FORMATION_442_ROLES.copy()
        roles[3] = ROLE_BALL
        pos, present = random_frame(np.random.default_rng(14))
        with pytest.raises(GraphSchemeError, match="role"):
            build_edges(pos, present, roles, EdgeScheme("positional"))

    def test_mask_respect(self):
        pos, present = random_frame(np.random.default_rng(15))
        scheme = EdgeScheme("positional")
        base = build_edges(pos, present, FORMATION_442_ROLES, scheme)
        present2 = present.copy()
        present2[7] = False
        g2 = build_edges(pos, present2, FORMATION_442_ROLES, scheme)
        expect = {p for p in base.undirected_pairs() if 7 not in p}
        assert g2.undirected_pairs() == expect
