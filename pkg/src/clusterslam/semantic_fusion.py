"""Per-pixel class probabilities, Bayesian label fusion and 2D instance tracking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import DegenerateUpdate, OutOfBounds

PROB_FLOOR = 1e-6
TAU_PREV = 0.65
TAU_PREV2 = 0.4


def pixel_index(px, width: int, height: int) -> tuple[int, int]:
    """Integer (row, col) of the pixel containing ``px = (u, v)``."""
    u, v = float(px[0]), float(px[1])
    if not (np.isfinite(u) and np.isfinite(v)):
        raise OutOfBounds(f"non-finite pixel {px}")
    col, row = int(np.floor(u)), int(np.floor(v))
    if not (0 <= col < width and 0 <= row < height):
        raise OutOfBounds(f"pixel ({u:.2f}, {v:.2f}) outside {width}x{height} image")
    return row, col


def _floor_and_normalize(p: np.ndarray, floor: float) -> np.ndarray:
    p = np.maximum(p, floor)
    return p / p.sum(axis=-1, keepdims=True)


class ProbabilityMap:
    """Class distribution per pixel, conceptually an (H, W, C) array.

    A floor is applied at construction (clamp, then renormalize) so that a
    single hard zero in one segmentation cannot veto a class forever. Maps
    synthesized from a label image keep only the labels and build
    distributions on lookup; ``probs`` materializes the dense array.
    """

    def __init__(self, probs: np.ndarray, floor: float = PROB_FLOOR):
        probs = np.asarray(probs, dtype=float)
        if probs.ndim != 3:
            raise ValueError("probability map must have shape (H, W, C)")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ValueError("probabilities must be finite and non-negative")
        if floor > 0:
            probs = _floor_and_normalize(probs, floor)
        else:
            probs = probs / probs.sum(axis=-1, keepdims=True)
        probs.flags.writeable = False
        self._probs = probs
        self._labels = None
        self._shape = probs.shape

    @classmethod
    def from_labels(cls, labels: np.ndarray, n_classes: int, alpha: float = 0.9, floor: float = PROB_FLOOR) -> ProbabilityMap:
        """One-hot label image with confidence ``alpha``; the rest is spread uniformly."""
        labels = np.asarray(labels)
        if labels.ndim != 2:
            raise ValueError("label image must be 2D")
        if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
            raise ValueError(f"labels outside class table of size {n_classes}")
        if not 0.0 < alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        rest = (1.0 - alpha) / (n_classes - 1) if n_classes > 1 else 0.0
        self = cls.__new__(cls)
        self._probs = None
        self._labels = labels.astype(np.intp)
        self._labels.flags.writeable = False
        self._shape = labels.shape + (n_classes,)
        # every pixel carries the same two values: on-class and off-class
        one_hot = np.full(n_classes, rest)
        one_hot[0] = alpha
        one_hot = _floor_and_normalize(one_hot, floor) if floor > 0 else one_hot / one_hot.sum()
        self._on, self._off = one_hot[0], (one_hot[1] if n_classes > 1 else 0.0)
        return self

    @property
    def probs(self) -> np.ndarray:
        if self._probs is None:
            probs = np.full(self._shape, self._off)
            np.put_along_axis(probs, self._labels[..., None], self._on, axis=-1)
            probs.flags.writeable = False
            self._probs = probs
        return self._probs

    @property
    def height(self) -> int:
        return self._shape[0]

    @property
    def width(self) -> int:
        return self._shape[1]

    @property
    def n_classes(self) -> int:
        return self._shape[2]

    def at(self, px) -> np.ndarray:
        row, col = pixel_index(px, self.width, self.height)
        if self._probs is not None:
            return self._probs[row, col]
        d = np.full(self.n_classes, self._off)
        d[self._labels[row, col]] = self._on
        return d

    def labels(self) -> np.ndarray:
        if self._labels is not None:
            return self._labels
        return np.argmax(self.probs, axis=-1)


class InstanceMap:
    """Per-pixel instance ids; 0 means no instance (background or stuff)."""

    def __init__(self, ids: np.ndarray):
        ids = np.asarray(ids)
        if ids.ndim != 2:
            raise ValueError("instance map must be 2D")
        if np.any(ids < 0):
            raise ValueError("instance ids must be non-negative")
        ids = ids.astype(np.int64)
        ids.flags.writeable = False
        self.ids = ids

    @property
    def shape(self) -> tuple[int, int]:
        return self.ids.shape

    def at(self, px) -> int:
        row, col = pixel_index(px, self.ids.shape[1], self.ids.shape[0])
        return int(self.ids[row, col])

    def instance_ids(self) -> np.ndarray:
        ids = np.unique(self.ids)
        return ids[ids != 0]

    def mask(self, instance_id: int) -> np.ndarray:
        return self.ids == instance_id

    def relabel(self, mapping: Mapping[int, int]) -> InstanceMap:
        """New map with ids translated through ``mapping``; unmapped ids become 0."""
        lut = np.zeros(int(self.ids.max(initial=0)) + 1, dtype=np.int64)
        for u in self.instance_ids():
            lut[u] = mapping.get(int(u), 0)
        return InstanceMap(lut[self.ids])


def bayes_update(prior: np.ndarray, obs: np.ndarray) -> np.ndarray:
    """Posterior proportional to ``prior * obs``.

    Raises DegenerateUpdate (carrying the unchanged prior) when the
    product has no mass, i.e. the two distributions have disjoint support.
    """
    prior = np.asarray(prior, dtype=float)
    post = prior * np.asarray(obs, dtype=float)
    z = post.sum()
    if not z >= 1e-300:
        err = DegenerateUpdate("observation has no support in common with the prior")
        err.prior = prior.copy()
        raise err
    return post / z


def observe_point(dist: np.ndarray, pmap: ProbabilityMap, px) -> np.ndarray:
    return bayes_update(dist, pmap.at(px))


def argmax_class(dist: np.ndarray) -> int:
    # np.argmax returns the first maximal index
    return int(np.argmax(dist))


def uniform(n_classes: int) -> np.ndarray:
    return np.full(n_classes, 1.0 / n_classes)


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError("masks must have identical shapes")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def instance_classes(imap: InstanceMap, labels: np.ndarray) -> dict[int, int]:
    """Majority class label under each raw instance mask (ties to the lowest class)."""
    ids = imap.ids.ravel()
    lab = np.asarray(labels).ravel()
    keep = ids != 0
    out: dict[int, int] = {}
    if not np.any(keep):
        return out
    pairs, counts = np.unique(np.stack([ids[keep], lab[keep]]), axis=1, return_counts=True)
    for (iid, cls), n in zip(pairs.T, counts):
        iid, cls = int(iid), int(cls)
        best = out.get(iid)
        if best is None or n > best[1]:
            out[iid] = (cls, n)
    return {k: v[0] for k, v in out.items()}


def pairwise_iou(cur: np.ndarray, prev: np.ndarray) -> dict[tuple[int, int], float]:
    """IOU of every overlapping (cur id, prev id) pair of non-zero instances."""
    cur = np.asarray(cur, dtype=np.int64).ravel()
    prev = np.asarray(prev, dtype=np.int64).ravel()
    cur_ids, cur_area = np.unique(cur, return_counts=True)
    prev_ids, prev_area = np.unique(prev, return_counts=True)
    area_c = dict(zip(cur_ids.tolist(), cur_area.tolist()))
    area_p = dict(zip(prev_ids.tolist(), prev_area.tolist()))
    both = (cur != 0) & (prev != 0)
    out = {}
    if not np.any(both):
        return out
    base = int(prev.max()) + 1
    codes, inter = np.unique(cur[both] * base + prev[both], return_counts=True)
    for code, n in zip(codes.tolist(), inter.tolist()):
        c, p = divmod(code, base)
        out[(c, p)] = n / (area_c[c] + area_p[p] - n)
    return out


@dataclass
class _TrackedFrame:
    frame: int
    ids: np.ndarray  # persistent ids per pixel
    classes: dict[int, int]  # persistent id -> class


@dataclass
class InstanceTrackState:
    """Frame-to-frame instance id tracker.

    Raw ids of the current frame are matched against the persistent ids of
    the previous frame (IOU >= 0.65), then of the frame before that
    (IOU >= 0.4); unmatched instances receive fresh ids. Persistent ids are
    never reused.
    """

    tau_prev: float = TAU_PREV
    tau_prev2: float = TAU_PREV2
    next_id: int = 1
    history: list[_TrackedFrame] = field(default_factory=list)
    classes: dict[int, int] = field(default_factory=dict)

    def track(self, imap: InstanceMap, class_of: Mapping[int, int] | Callable[[int], int], frame: int | None = None) -> dict[int, int]:
        """Assign persistent ids to the raw ids of ``imap`` and advance the state."""
        lookup = class_of.get if isinstance(class_of, Mapping) else class_of
        raw_ids = [int(r) for r in imap.instance_ids()]
        raw_cls = {r: lookup(r) for r in raw_ids}
        assigned: dict[int, int] = {}
        used: set[int] = set()

        stages = [(self.history[-1], self.tau_prev)] if self.history else []
        if len(self.history) >= 2:
            stages.append((self.history[-2], self.tau_prev2))
        for past, tau in stages:
            ious = pairwise_iou(imap.ids, past.ids)
            candidates = [
                (iou, r, p)
                for (r, p), iou in ious.items()
                if iou >= tau and r not in assigned and p not in used and past.classes.get(p) == raw_cls.get(r)
            ]
            # descending IOU, deterministic tie-break on ids
            candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
            for _, r, p in candidates:
                if r in assigned or p in used:
                    continue
                assigned[r] = p
                used.add(p)

        for r in raw_ids:
            if r not in assigned:
                assigned[r] = self.next_id
                self.next_id += 1
        for r, p in assigned.items():
            self.classes[p] = raw_cls[r]

        persistent = imap.relabel(assigned)
        if frame is None:
            frame = self.history[-1].frame + 1 if self.history else 0
        self.history.append(_TrackedFrame(frame, persistent.ids, {assigned[r]: raw_cls[r] for r in raw_ids}))
        del self.history[:-2]
        return assigned


def track_instances(state: InstanceTrackState, imap: InstanceMap, class_of) -> tuple[InstanceTrackState, dict[int, int]]:
    """Functional wrapper around ``InstanceTrackState.track`` (mutates and returns the state)."""
    ids = state.track(imap, class_of)
    return state, ids
