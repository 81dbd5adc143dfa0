"""Tracking data model: normalization, feature encoding, window extraction,
on-disk dataset format, and a class-conditioned synthetic match generator.

A sample is a 16x23x8 window of normalized entity features sampled at a
9-frame interval around an annotated event (4.5 s at 30 fps). Entities are
11 home players, 11 away players and the ball, in a canonical slot order
that is stable across all frames of a match. Absent entities carry the
sentinel value -2.0 in their coordinate channels.

Displacement channels are computed between consecutive *sampled* frames
(0.3 s apart), keeping every window self-contained; see README for the
rationale.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

# Geometry / encoding constants
X_RANGE = (-60.0, 60.0)
Y_RANGE = (-42.0, 41.0)
Z_RANGE = (-8.0, 25.0)
X_SCALE, Y_SCALE, Z_SCALE = 60.0, 42.0, 25.0
CLAMP_SLACK = 0.5  # meters of out-of-range tolerance before data is rejected
SENTINEL = -2.0

T_SAMPLES = 16
FRAME_STRIDE = 9
WINDOW_OFFSETS = -67 + FRAME_STRIDE * np.arange(T_SAMPLES)  # spans 135 frames
N_ENTITIES = 23
N_PER_TEAM = 11
BALL_SLOT = 22
D_FEATURES = 8  # [x, y, z, is_home, is_away, is_ball, dx, dy]

CLASS_NAMES = (
    "PASS",
    "TACKLE",
    "OUT",
    "HEADER",
    "HIGH PASS",
    "THROW IN",
    "CROSS",
    "FREE KICK",
    "SHOT",
    "GOAL",
)
NUM_CLASSES = len(CLASS_NAMES)
CLASS_INDEX = {name: i for i, name in enumerate(CLASS_NAMES)}

ROLE_NAMES = ("GK", "DEF", "MID", "FWD")
ROLE_INDEX = {name: i for i, name in enumerate(ROLE_NAMES)}
ROLE_BALL = 4  # ball carries no tactical role


class MalformedDataError(Exception):
    """Raised for out-of-range coordinates, bad files, or schema violations."""


def class_index(name):
    try:
        return CLASS_INDEX[name]
    except KeyError:
        raise MalformedDataError(f"unknown activity label {name!r}") from None


def class_name(index):
    return CLASS_NAMES[index]


# ---------------------------------------------------------------------------
# normalization & encoding
# ---------------------------------------------------------------------------


def normalize_position(x, y, z, present, frame_index=None):
    """Map raw meters to normalized units; absent entities get the sentinel.

    Values out of legal range by at most `CLAMP_SLACK` meters are clamped to
    the range boundary; larger violations are malformed data.
    """
    if not present:
        return (SENTINEL, SENTINEL, SENTINEL)
    out = []
    for val, (lo, hi), scale in (
        (x, X_RANGE, X_SCALE),
        (y, Y_RANGE, Y_SCALE),
        (z, Z_RANGE, Z_SCALE),
    ):
        clamped = min(max(val, lo), hi)
        if abs(val - clamped) > CLAMP_SLACK:
            where = f" at frame {frame_index}" if frame_index is not None else ""
            raise MalformedDataError(
                f"coordinate {val} outside legal range [{lo}, {hi}]"
                f" by more than {CLAMP_SLACK} m{where}"
            )
        out.append(clamped / scale)
    return tuple(out)


def _normalize_block(xyz, present, frame_indices):
    """Vectorized normalize_position over a (T, N, 3) raw-coordinate block."""
    lows = np.array([X_RANGE[0], Y_RANGE[0], Z_RANGE[0]])
    highs = np.array([X_RANGE[1], Y_RANGE[1], Z_RANGE[1]])
    scales = np.array([X_SCALE, Y_SCALE, Z_SCALE])
    clamped = np.clip(xyz, lows, highs)
    bad = (np.abs(xyz - clamped) > CLAMP_SLACK).any(axis=2) & present
    if bad.any():
        t, n = np.argwhere(bad)[0]
        raise MalformedDataError(
            f"entity slot {n} coordinates {xyz[t, n].tolist()} out of legal "
            f"range by more than {CLAMP_SLACK} m at frame {frame_indices[t]}"
        )
    norm = clamped / scales
    norm[~present] = SENTINEL
    return norm


def slot_indicators():
    """(N, 3) one-hot [is_home, is_away, is_ball] by canonical slot."""
    ind = np.zeros((N_ENTITIES, 3))
    ind[:N_PER_TEAM, 0] = 1.0
    ind[N_PER_TEAM : 2 * N_PER_TEAM, 1] = 1.0
    ind[BALL_SLOT, 2] = 1.0
    return ind


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass
class TrackingWindow:
    """One sample: a T x N x D feature block, presence masks and a label."""

    features: np.ndarray  # (T, N, D) float64
    present: np.ndarray  # (T, N) bool
    label: int
    source: tuple  # (match_id, event_frame)
    roles: np.ndarray  # (N,) int8 role codes, ball = ROLE_BALL

    def positions(self, t):
        """Raw-meter (x, y) plane coordinates of frame t (for edge building)."""
        return self.features[t, :, 0:2] * np.array([X_SCALE, Y_SCALE])


@dataclass
class MatchStream:
    """Per-match tracking arrays in canonical entity order."""

    match_id: str
    first_frame: int
    xy: np.ndarray  # (F, N, 2) raw meters
    z: np.ndarray  # (F,) ball height
    present: np.ndarray  # (F, N) bool
    roles: np.ndarray  # (N,) int8

    @property
    def num_frames(self):
        return self.xy.shape[0]

    @property
    def last_frame(self):
        return self.first_frame + self.num_frames - 1


@dataclass
class DatasetManifest:
    root: str
    splits: dict  # split -> list of match ids
    event_counts: dict = field(default_factory=dict)  # match id -> n events


# ---------------------------------------------------------------------------
# window extraction
# ---------------------------------------------------------------------------


def window_sample_frames(event_frame, first_frame, last_frame):
    """Raw frame indices of the 16 samples, clamped to the stream bounds."""
    idx = event_frame + WINDOW_OFFSETS
    return np.clip(idx, first_frame, last_frame)


def extract_window(stream, event_frame, label=-1):
    """Build the TrackingWindow centered (near-centered) on `event_frame`."""
    if stream.num_frames == 0:
        raise MalformedDataError(f"match {stream.match_id} has an empty stream")
    frames = window_sample_frames(event_frame, stream.first_frame, stream.last_frame)
    rows = frames - stream.first_frame
    xy = stream.xy[rows]  # (T, N, 2)
    present = stream.present[rows]  # (T, N)
    xyz = np.concatenate([xy, np.zeros((T_SAMPLES, N_ENTITIES, 1))], axis=2)
    xyz[:, BALL_SLOT, 2] = stream.z[rows]
    norm = _normalize_block(xyz, present, frames)

    feats = np.empty((T_SAMPLES, N_ENTITIES, D_FEATURES))
    feats[:, :, 0:3] = norm
    feats[:, :, 3:6] = slot_indicators()

    delta = np.zeros((T_SAMPLES, N_ENTITIES, 2))
    both = present[1:] & present[:-1]
    delta[1:][both] = (norm[1:, :, 0:2] - norm[:-1, :, 0:2])[both]
    delta[~present] = SENTINEL
    feats[:, :, 6:8] = delta

    return TrackingWindow(
        features=feats,
        present=present.copy(),
        label=label,
        source=(stream.match_id, int(event_frame)),
        roles=stream.roles.copy(),
    )


def encode_features(frame_entities, prev_entities=None):
    """Encode one frame given (and optionally the previous sampled frame's)
    canonical-order entity dicts with keys x, y, z, present.

    Returns an (N, D) block plus the (N,) presence mask. Frame-level
    convenience over the vectorized window path; both share the same rules.
    """
    if len(frame_entities) != N_ENTITIES:
        raise MalformedDataError(
            f"expected {N_ENTITIES} canonical entity slots, got {len(frame_entities)}"
        )
    if prev_entities is not None and len(prev_entities) != N_ENTITIES:
        raise MalformedDataError("canonical entity order mismatch between frames")
    feats = np.zeros((N_ENTITIES, D_FEATURES))
    feats[:, 3:6] = slot_indicators()
    mask = np.zeros(N_ENTITIES, dtype=bool)
    for i, e in enumerate(frame_entities):
        mask[i] = bool(e["present"])
        xn, yn, zn = normalize_position(
            e.get("x", 0.0), e.get("y", 0.0), e.get("z", 0.0), mask[i]
        )
        feats[i, 0:3] = (xn, yn, zn)
        if not mask[i]:
            feats[i, 6:8] = SENTINEL
        elif prev_entities is not None and prev_entities[i]["present"]:
            pxn, pyn, _ = normalize_position(
                prev_entities[i].get("x", 0.0),
                prev_entities[i].get("y", 0.0),
                prev_entities[i].get("z", 0.0),
                True,
            )
            feats[i, 6:8] = (xn - pxn, yn - pyn)
    return feats, mask


# ---------------------------------------------------------------------------
# dataset loading
# ---------------------------------------------------------------------------

_REQUIRED_PLAYER_KEYS = ("id", "role", "x", "y")
_REQUIRED_BALL_KEYS = ("x", "y", "z", "present")


def _parse_tracking(path, match_id):
    frames = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedDataError(f"{path}:{lineno}: bad JSON ({exc})") from None
            for key in ("frame", "ball", "home", "away"):
                if key not in obj:
                    raise MalformedDataError(f"{path}:{lineno}: missing key {key!r}")
            for side in ("home", "away"):
                if len(obj[side]) != N_PER_TEAM:
                    raise MalformedDataError(
                        f"{path}:{lineno}: expected {N_PER_TEAM} {side} players, "
                        f"got {len(obj[side])}"
                    )
                for p in obj[side]:
                    for key in _REQUIRED_PLAYER_KEYS:
                        if key not in p:
                            raise MalformedDataError(
                                f"{path}:{lineno}: player missing key {key!r}"
                            )
            for key in _REQUIRED_BALL_KEYS:
                if key not in obj["ball"]:
                    raise MalformedDataError(f"{path}:{lineno}: ball missing key {key!r}")
            frames.append(obj)
    if not frames:
        raise MalformedDataError(f"{path}: empty tracking stream")
    frames.sort(key=lambda o: o["frame"])
    first = int(frames[0]["frame"])
    nf = len(frames)
    if int(frames[-1]["frame"]) != first + nf - 1:
        raise MalformedDataError(f"{path}: frame indices are not contiguous")

    # canonical order fixed by the first frame: home ids sorted, away ids
    # sorted, then the ball
    home_ids = sorted(p["id"] for p in frames[0]["home"])
    away_ids = sorted(p["id"] for p in frames[0]["away"])
    home_pos = {pid: k for k, pid in enumerate(home_ids)}
    away_pos = {pid: k for k, pid in enumerate(away_ids)}
    roles = np.full(N_ENTITIES, ROLE_BALL, dtype=np.int8)
    for p in frames[0]["home"] + frames[0]["away"]:
        if p["role"] not in ROLE_INDEX:
            raise MalformedDataError(f"{path}: unknown role {p['role']!r}")
    for p in frames[0]["home"]:
        roles[home_pos[p["id"]]] = ROLE_INDEX[p["role"]]
    for p in frames[0]["away"]:
        roles[N_PER_TEAM + away_pos[p["id"]]] = ROLE_INDEX[p["role"]]

    xy = np.zeros((nf, N_ENTITIES, 2))
    z = np.zeros(nf)
    present = np.zeros((nf, N_ENTITIES), dtype=bool)
    for t, obj in enumerate(frames):
        for p in obj["home"]:
            slot = home_pos.get(p["id"])
            if slot is None:
                raise MalformedDataError(
                    f"{path}: home player id {p['id']} not in first frame"
                )
            xy[t, slot] = (p["x"], p["y"])
            present[t, slot] = True
        for p in obj["away"]:
            slot = away_pos.get(p["id"])
            if slot is None:
                raise MalformedDataError(
                    f"{path}: away player id {p['id']} not in first frame"
                )
            xy[t, N_PER_TEAM + slot] = (p["x"], p["y"])
            present[t, N_PER_TEAM + slot] = True
        ball = obj["ball"]
        xy[t, BALL_SLOT] = (ball["x"], ball["y"])
        z[t] = ball["z"]
        present[t, BALL_SLOT] = bool(ball["present"])
    return MatchStream(
        match_id=match_id,
        first_frame=first,
        xy=xy,
        z=z,
        present=present,
        roles=roles,
    )


def _parse_events(path):
    events = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            for key in ("frame", "label"):
                if key not in obj:
                    raise MalformedDataError(f"{path}:{lineno}: missing key {key!r}")
            if obj["label"] not in CLASS_INDEX:
                raise MalformedDataError(
                    f"{path}:{lineno}: unknown label {obj['label']!r}"
                )
            events.append((int(obj["frame"]), CLASS_INDEX[obj["label"]]))
    return events


class Dataset:
    """Loaded dataset with lazy window extraction and per-split event lists."""

    def __init__(self, manifest, streams, events):
        self.manifest = manifest
        self.streams = streams
        self.events = events  # split -> list of (match_id, frame, label)
        self._window_cache = {}

    def num_events(self, split):
        return len(self.events[split])

    def window(self, match_id, event_frame, label=-1):
        return extract_window(self.streams[match_id], event_frame, label)

    def windows(self, split):
        """All windows of a split (cached after first access)."""
        if split not in self._window_cache:
            self._window_cache[split] = [
                self.window(mid, frame, label)
                for mid, frame, label in self.events[split]
            ]
        return self._window_cache[split]

    def labels(self, split):
        return np.array([label for _, _, label in self.events[split]], dtype=np.int64)

    def class_histogram(self, split):
        """Event counts per activity class, in frozen class order."""
        counts = np.zeros(NUM_CLASSES, dtype=np.int64)
        for _, _, label in self.events[split]:
            counts[label] += 1
        return counts


def load_dataset(root, splits=None):
    """Load a dataset directory (see README for the on-disk layout)."""
    splits_path = os.path.join(root, "splits.json")
    if not os.path.exists(splits_path):
        raise MalformedDataError(f"missing {splits_path}")
    with open(splits_path, "r", encoding="utf-8") as fh:
        split_map = json.load(fh)
    seen = {}
    for split, ids in split_map.items():
        for mid in ids:
            if mid in seen:
                raise MalformedDataError(
                    f"match id {mid!r} appears in both {seen[mid]!r} and {split!r}"
                )
            seen[mid] = split
    wanted = splits if splits is not None else list(split_map)
    streams = {}
    events = {}
    counts = {}
    for split in wanted:
        events[split] = []
        for mid in split_map[split]:
            mdir = os.path.join(root, "matches", str(mid))
            streams[mid] = _parse_tracking(os.path.join(mdir, "tracking.jsonl"), mid)
            evs = _parse_events(os.path.join(mdir, "events.jsonl"))
            counts[mid] = len(evs)
            events[split].extend((mid, frame, label) for frame, label in evs)
    manifest = DatasetManifest(
        root=root,
        splits={s: list(split_map[s]) for s in split_map},
        event_counts=counts,
    )
    return Dataset(manifest, streams, events)


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

# Event-count proportions mirroring the real per-class distribution
# (PASS dominates at ~63%, GOAL is rare).
IMBALANCED_WEIGHTS = np.array(
    [9255, 1697, 955, 872, 405, 393, 373, 273, 266, 30], dtype=np.float64
)

EVENT_SPACING = 160  # frames between consecutive events; motifs span +-80
EVENT_MARGIN = 90  # frames before the first / after the last event


@dataclass
class SynthConfig:
    matches_per_split: dict = field(
        default_factory=lambda: {"train": 20, "val": 4, "test": 4}
    )
    events_per_match: int = 200
    formation: str = "4-4-2"
    seed: int = 0
    profile: str = "imbalanced"  # or "balanced"


def parse_formation(formation):
    try:
        lines = [int(tok) for tok in formation.split("-")]
    except ValueError:
        raise MalformedDataError(f"bad formation string {formation!r}") from None
    if len(lines) != 3 or sum(lines) != 10 or any(n < 1 for n in lines):
        raise MalformedDataError(
            f"formation {formation!r} must have three lines summing to 10"
        )
    return lines


def _class_counts(cfg):
    e = cfg.events_per_match
    if cfg.profile == "balanced":
        if e < NUM_CLASSES:
            raise MalformedDataError(
                f"balanced profile needs >= {NUM_CLASSES} events per match, got {e}"
            )
        counts = np.full(NUM_CLASSES, e // NUM_CLASSES, dtype=np.int64)
        counts[: e % NUM_CLASSES] += 1
        return counts
    if cfg.profile != "imbalanced":
        raise MalformedDataError(f"unknown profile {cfg.profile!r}")
    if e < NUM_CLASSES:
        raise MalformedDataError(
            f"imbalanced profile needs >= {NUM_CLASSES} events per match "
            f"(one per class), got {e}"
        )
    p = IMBALANCED_WEIGHTS / IMBALANCED_WEIGHTS.sum()
    raw = p * e
    counts = np.maximum(np.floor(raw).astype(np.int64), 1)
    # largest-remainder distribution of what is left
    frac = raw - np.floor(raw)
    order = np.argsort(-frac, kind="stable")
    i = 0
    while counts.sum() < e:
        counts[order[i % NUM_CLASSES]] += 1
        i += 1
    while counts.sum() > e:
        big = int(np.argmax(counts))
        counts[big] -= 1
    return counts


def _base_positions(lines):
    """Formation anchor positions for one team attacking +x (home side < 0)."""
    pos = [(-54.0, 0.0)]  # GK
    xs = (-34.0, -12.0, 12.0)
    roles = [0]
    for line_x, n in zip(xs, lines):
        ys = np.linspace(-28.0, 28.0, n) if n > 1 else np.array([0.0])
        for y in ys:
            pos.append((line_x, float(y)))
    for i, n in enumerate(lines):
        roles.extend([i + 1] * n)
    return np.array(pos), np.array(roles, dtype=np.int8)


class _MatchBuilder:
    """Assembles one synthetic match: baseline motion plus per-event motifs."""

    def __init__(self, match_id, cfg, rng):
        self.match_id = match_id
        self.rng = rng
        counts = _class_counts(cfg)
        order = np.repeat(np.arange(NUM_CLASSES), counts)
        rng.shuffle(order)
        self.event_classes = order
        self.event_frames = EVENT_MARGIN + EVENT_SPACING * np.arange(len(order))
        self.num_frames = int(self.event_frames[-1]) + EVENT_MARGIN + 1

        lines = parse_formation(cfg.formation)
        base, proles = _base_positions(lines)
        self.roles = np.concatenate([proles, proles, [ROLE_BALL]]).astype(np.int8)

        F = self.num_frames
        t = np.arange(F)[:, None]
        self.xy = np.zeros((F, N_ENTITIES, 2))
        for side, sign, lo in ((0, 1.0, 0), (1, -1.0, N_PER_TEAM)):
            anchors = base * np.array([sign, 1.0])
            amp = rng.uniform(1.0, 3.5, size=(N_PER_TEAM, 2))
            freq = rng.uniform(0.004, 0.012, size=(N_PER_TEAM, 2))
            phase = rng.uniform(0.0, 2 * np.pi, size=(N_PER_TEAM, 2))
            self.xy[:, lo : lo + N_PER_TEAM] = anchors + amp * np.sin(
                2 * np.pi * freq * t[:, :, None] + phase
            )
        self.z = np.zeros(F)
        self.present = np.ones((F, N_ENTITIES), dtype=bool)
        # baseline: ball travels with a central midfielder
        carrier = 1 + lines[0] + lines[1] // 2
        self.xy[:, BALL_SLOT] = self.xy[:, carrier] + np.array([0.5, 0.5])

        for f, c in zip(self.event_frames, self.event_classes):
            self._script_event(int(f), int(c))
        np.clip(self.xy[..., 0], -60.45, 60.45, out=self.xy[..., 0])
        np.clip(self.xy[..., 1], -41.9, Y_RANGE[1], out=self.xy[..., 1])

    # -- scripting helpers ---------------------------------------------

    def _span(self, f):
        return max(f - 80, 0), min(f + 80, self.num_frames)

    def _hold_player(self, slot, f, pos):
        lo, hi = self._span(f)
        self.xy[lo:hi, slot] = pos

    def _ball_keyframes(self, f, keys):
        """Piecewise-linear ball path from (t_rel, x, y, z, present) keys."""
        lo, hi = self._span(f)
        times = np.array([k[0] for k in keys]) + f
        for a, b in zip(keys[:-1], keys[1:]):
            t0, t1 = int(a[0] + f), int(b[0] + f)
            t0c, t1c = max(t0, lo), min(t1, hi)
            if t1c <= t0c:
                continue
            w = (np.arange(t0c, t1c) - t0) / max(t1 - t0, 1)
            for dim, (va, vb) in enumerate(zip(a[1:4], b[1:4])):
                vals = va + w * (vb - va)
                if dim < 2:
                    self.xy[t0c:t1c, BALL_SLOT, dim] = vals
                else:
                    self.z[t0c:t1c] = vals
            self.present[t0c:t1c, BALL_SLOT] = bool(a[4])
        # hold the last keyframe until the end of the scripted span
        tl = min(max(int(times[-1]), lo), hi)
        if tl < hi:
            self.xy[tl:hi, BALL_SLOT] = keys[-1][1:3]
            self.z[tl:hi] = keys[-1][3]
            self.present[tl:hi, BALL_SLOT] = bool(keys[-1][4])
        # and the first one back to the start of the span
        tf = min(max(int(times[0]), lo), hi)
        if tf > lo:
            self.xy[lo:tf, BALL_SLOT] = keys[0][1:3]
            self.z[lo:tf] = keys[0][3]
            self.present[lo:tf, BALL_SLOT] = bool(keys[0][4])

    def _teammates(self, home):
        lo = 0 if home else N_PER_TEAM
        return lo + 1 + self.rng.integers(0, 10, size=2)  # skip the GK slot

    # -- motifs --------------------------------------------------------

    def _script_event(self, f, c):
        rng = self.rng
        home = bool(rng.integers(0, 2))
        s = 1.0 if home else -1.0  # attacking direction
        name = CLASS_NAMES[c]
        if name in ("PASS", "HIGH PASS"):
            a, b = self._teammates(home)
            while b == a:
                b = self._teammates(home)[1]
            pa = self.xy[f, a].copy()
            dist = rng.uniform(10, 16) if name == "PASS" else rng.uniform(22, 40)
            ang = rng.uniform(0, 2 * np.pi)
            pb = pa + dist * np.array([np.cos(ang), np.sin(ang)])
            pb[0] = np.clip(pb[0], -55, 55)
            pb[1] = np.clip(pb[1], -38, 38)
            peak = 0.0 if name == "PASS" else rng.uniform(9, 15)
            self._hold_player(a, f, pa)
            self._hold_player(b, f, pb)
            mid = (pa + pb) / 2
            self._ball_keyframes(
                f,
                [
                    (-80, pa[0], pa[1], 0.0, True),
                    (-12, pa[0], pa[1], 0.0, True),
                    (0, mid[0], mid[1], peak, True),
                    (12, pb[0], pb[1], 0.0, True),
                ],
            )
        elif name == "CROSS":
            ys = 1.0 if rng.integers(0, 2) else -1.0
            start = np.array([s * rng.uniform(25, 42), ys * rng.uniform(26, 38)])
            end = np.array([s * rng.uniform(46, 56), rng.uniform(-12, 12)])
            peak = rng.uniform(4, 7)
            mid = (start + end) / 2
            self._ball_keyframes(
                f,
                [
                    (-80, start[0], start[1], 0.0, True),
                    (-12, start[0], start[1], 0.0, True),
                    (2, mid[0], mid[1], peak, True),
                    (16, end[0], end[1], 0.0, True),
                ],
            )
        elif name == "HEADER":
            p = self._teammates(home)[0]
            pp = self.xy[f, p].copy()
            self._hold_player(p, f, pp)
            drop_from = pp + rng.uniform(-8, 8, size=2)
            z0 = rng.uniform(4, 8)
            after = pp + rng.uniform(-4, 4, size=2)
            self._ball_keyframes(
                f,
                [
                    (-80, drop_from[0], drop_from[1], z0, True),
                    (-35, drop_from[0], drop_from[1], z0, True),
                    (0, pp[0], pp[1], 1.8, True),
                    (25, after[0], after[1], 0.0, True),
                ],
            )
        elif name in ("SHOT", "GOAL"):
            gy = rng.uniform(-3, 3)
            r = rng.uniform(16, 28)
            ang = rng.uniform(-0.5, 0.5)
            start = np.array(
                [s * 60 - s * r * np.cos(ang), gy + r * np.sin(ang)]
            )
            if name == "SHOT":
                stop = np.array([s * 57.5, gy])
                self._ball_keyframes(
                    f,
                    [
                        (-80, start[0], start[1], 0.0, True),
                        (0, start[0], start[1], 0.0, True),
                        (8, (start[0] + stop[0]) / 2, (start[1] + gy) / 2, 0.6, True),
                        (22, stop[0], stop[1], 0.3, True),
                    ],
                )
            else:
                self._ball_keyframes(
                    f,
                    [
                        (-80, start[0], start[1], 0.0, True),
                        (0, start[0], start[1], 0.0, True),
                        (12, s * 60.0, gy, 0.5, True),
                        (20, s * 60.4, gy, 0.4, True),
                        (34, s * 60.4, gy, 0.2, True),
                        (35, s * 60.4, gy, 0.0, False),
                        (79, s * 60.4, gy, 0.0, False),
                    ],
                )
        elif name == "FREE KICK":
            q = np.array([s * rng.uniform(-5, 30), rng.uniform(-25, 25)])
            # opponent wall between ball and their goal
            towards = np.array([s, 0.0])
            opp_lo = N_PER_TEAM if home else 0
            wall = opp_lo + 1 + rng.permutation(10)[:4]
            for k, slot in enumerate(wall):
                d = rng.uniform(9.5, 11.5)
                off = (k - 1.5) * 2.0
                self._hold_player(slot, f, q + towards * d + np.array([0.0, off]))
            target = q + np.array([s * rng.uniform(12, 20), rng.uniform(-8, 8)])
            # low driven kick: arc stays well below CROSS / HIGH PASS peaks
            peak = rng.uniform(1.2, 2.5)
            self._ball_keyframes(
                f,
                [
                    (-80, q[0], q[1], 0.0, True),
                    (8, q[0], q[1], 0.0, True),
                    (22, (q[0] + target[0]) / 2, (q[1] + target[1]) / 2, peak, True),
                    (36, target[0], target[1], 0.0, True),
                ],
            )
        elif name == "THROW IN":
            x0 = rng.uniform(-45, 45)
            thrower = self._teammates(home)[0]
            self._hold_player(thrower, f, np.array([x0, -41.2]))
            inward = np.array([x0 + rng.uniform(-8, 8), rng.uniform(-34, -26)])
            self._ball_keyframes(
                f,
                [
                    (-80, x0, -41.7, 0.0, False),
                    (-21, x0, -41.7, 0.0, False),
                    # held at the touchline through the -13 sample offset so
                    # every window sees the re-entry point
                    (-20, x0, -41.7, 2.5, True),
                    (-12, x0, -41.7, 3.0, True),
                    (-4, (x0 + inward[0]) / 2, -36.0, 3.5, True),
                    (12, inward[0], inward[1], 0.0, True),
                ],
            )
        elif name == "TACKLE":
            a = self._teammates(home)[0]
            b = self._teammates(not home)[0]
            pa = self.xy[f, a].copy()
            self._hold_player(a, f, pa)
            # opponent converges to within a meter of the ball at the event
            approach = pa + rng.uniform(6, 9) * _unit(rng)
            lo, hi = self._span(f)
            tt = np.arange(lo, hi)
            w = np.clip((tt - (f - 40)) / 40.0, 0.0, 1.0)[:, None]
            self.xy[lo:hi, b] = approach + w * (pa + 0.6 * _unit(rng) - approach)
            u = _unit(rng)
            before = pa - 3.5 * u
            after = pa - 3.0 * u
            # contested ball: approach, a dead stop during the challenge,
            # then a reversal back out — no other motif pauses mid-window
            self._ball_keyframes(
                f,
                [
                    (-80, before[0], before[1], 0.0, True),
                    (-40, before[0], before[1], 0.0, True),
                    (-10, pa[0], pa[1], 0.0, True),
                    (10, pa[0], pa[1], 0.0, True),
                    (40, after[0], after[1], 0.0, True),
                ],
            )
        elif name == "OUT":
            x0 = rng.uniform(-40, 40)
            start = np.array([x0, rng.uniform(-22, -12)])
            self._ball_keyframes(
                f,
                [
                    (-80, start[0], start[1], 0.0, True),
                    (-45, start[0], start[1], 0.0, True),
                    (12, x0 + rng.uniform(-6, 6), -41.8, 0.0, True),
                    (13, x0, -41.8, 0.0, False),
                    (79, x0, -41.8, 0.0, False),
                ],
            )
        else:  # pragma: no cover
            raise AssertionError(name)


def _unit(rng):
    ang = rng.uniform(0, 2 * np.pi)
    return np.array([np.cos(ang), np.sin(ang)])


def _write_match(mdir, builder):
    os.makedirs(mdir, exist_ok=True)
    roles = builder.roles
    ids_home = list(range(1, N_PER_TEAM + 1))
    ids_away = list(range(101, 101 + N_PER_TEAM))
    with open(os.path.join(mdir, "tracking.jsonl"), "w", encoding="utf-8") as fh:
        for t in range(builder.num_frames):
            parts = [f'{{"frame": {t}, "ball": {{"x": %.2f, "y": %.2f, "z": %.2f, "present": %s}}'
                     % (
                         builder.xy[t, BALL_SLOT, 0],
                         builder.xy[t, BALL_SLOT, 1],
                         builder.z[t],
                         "true" if builder.present[t, BALL_SLOT] else "false",
                     )]
            for side, ids, lo in (("home", ids_home, 0), ("away", ids_away, N_PER_TEAM)):
                rows = ", ".join(
                    '{"id": %d, "role": "%s", "x": %.2f, "y": %.2f}'
                    % (
                        pid,
                        ROLE_NAMES[roles[lo + k]],
                        builder.xy[t, lo + k, 0],
                        builder.xy[t, lo + k, 1],
                    )
                    for k, pid in enumerate(ids)
                )
                parts.append(f'"{side}": [{rows}]')
            fh.write(", ".join(parts) + "}\n")
    with open(os.path.join(mdir, "events.jsonl"), "w", encoding="utf-8") as fh:
        for frame, c in zip(builder.event_frames, builder.event_classes):
            fh.write(
                '{"frame": %d, "label": "%s"}\n' % (frame, CLASS_NAMES[int(c)])
            )


def generate_synthetic(root, config=None):
    """Write a deterministic synthetic dataset under `root`.

    Each event's window realizes a class-specific ball/player motif so the
    ten classes are statistically separable from positions alone.
    """
    cfg = config or SynthConfig()
    parse_formation(cfg.formation)
    _class_counts(cfg)  # validate profile up front
    os.makedirs(root, exist_ok=True)
    splits = {}
    for si, (split, n_matches) in enumerate(sorted(cfg.matches_per_split.items())):
        ids = [f"{split}_{i:03d}" for i in range(n_matches)]
        splits[split] = ids
        for mi, mid in enumerate(ids):
            rng = np.random.default_rng([cfg.seed, si, mi])
            builder = _MatchBuilder(mid, cfg, rng)
            _write_match(os.path.join(root, "matches", mid), builder)
    with open(os.path.join(root, "splits.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {s: splits[s] for s in ("train", "val", "test") if s in splits}
            | {s: splits[s] for s in splits if s not in ("train", "val", "test")},
            fh,
            indent=2,
            sort_keys=False,
        )
        fh.write("\n")
    return splits
