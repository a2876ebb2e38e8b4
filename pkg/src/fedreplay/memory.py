"""Fixed-capacity replay buffer with class-balanced, score-driven admission.

Admission merges the stored samples of each incoming class with the new
candidates and keeps the per-class quota with the lowest scores (bottom-k),
the highest scores (top-k), or a uniform subset (class-balanced random).
The plain random policy ignores classes and keeps a uniform subset of the
whole buffer under the global capacity. Ties on equal scores are broken by
earlier arrival; quotas are recomputed whenever new classes appear and
classes over quota are trimmed by the same criterion.

Replay draws uniformly without replacement from everything stored for past
tasks; samples of the current task are never eligible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

POLICIES = ("bottom_k", "top_k", "random", "class_balanced_random")


@dataclass
class StoredSample:
    """One buffered example with its admission-time uncertainty score.

    ``arrival`` is the global offer index used to break score ties
    deterministically (earlier arrival wins).
    """

    features: np.ndarray
    label: int
    task_id: int
    score: float
    arrival: int = 0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.score = float(self.score)
        if not np.isfinite(self.score):
            raise ValueError("sample score must be finite")
        if self.label < 0:
            raise ValueError("label must be >= 0")


def class_quota(capacity: int, classes_seen) -> dict[int, int]:
    """Per-class slot counts that sum to ``capacity``.

    Each class gets floor(capacity / n); the remainder goes one slot at a
    time to the lowest class ids.
    """
    classes = sorted(classes_seen)
    if not classes:
        raise ValueError("classes_seen must be non-empty")
    base, rem = divmod(capacity, len(classes))
    return {c: base + (1 if i < rem else 0) for i, c in enumerate(classes)}


class MemoryBuffer:
    """Per-class partitioned store of at most ``capacity`` samples."""

    def __init__(self, capacity: int, policy: str, rng: np.random.Generator | None = None):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        if policy not in POLICIES:
            raise ValueError(f"unknown memory policy: {policy!r}")
        if policy in ("random", "class_balanced_random") and rng is None:
            rng = np.random.default_rng()
        self.capacity = capacity
        self.policy = policy
        self.rng = rng
        self.per_class: dict[int, list[StoredSample]] = {}
        self.classes_seen: set[int] = set()
        self._next_arrival = 0

    def __len__(self) -> int:
        return sum(len(v) for v in self.per_class.values())

    def samples(self) -> list[StoredSample]:
        """All stored samples, classes in ascending id order."""
        return [s for c in sorted(self.per_class) for s in self.per_class[c]]

    def class_counts(self) -> dict[int, int]:
        return {c: len(v) for c, v in self.per_class.items() if v}

    def _keep(self, candidates: list[StoredSample], quota: int) -> list[StoredSample]:
        if quota <= 0:
            return []
        if len(candidates) <= quota:
            return list(candidates)
        if self.policy == "bottom_k":
            chosen = sorted(candidates, key=lambda s: (s.score, s.arrival))[:quota]
        elif self.policy == "top_k":
            chosen = sorted(candidates, key=lambda s: (-s.score, s.arrival))[:quota]
        else:
            idx = self.rng.choice(len(candidates), size=quota, replace=False)
            chosen = [candidates[i] for i in idx]
        return sorted(chosen, key=lambda s: s.arrival)


def update_memory(buffer: MemoryBuffer, batch, scores, rescore=None) -> None:
    """Offer a batch of candidates to the buffer.

    ``scores`` must align with ``batch`` samples and come from the metric
    configured for the experiment, evaluated on the current model. When
    ``rescore`` is given it is called with the stored samples of each
    touched class and must return fresh scores for them, so retention
    compares the whole merged candidate set under the current model;
    without it stored samples keep their admission-time scores.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(batch.labels)
    feats = np.asarray(batch.features, dtype=np.float64)
    if scores.shape != labels.shape:
        raise ValueError("scores must align one-to-one with the batch samples")

    incoming: dict[int, list[StoredSample]] = {}
    for i in range(labels.size):
        s = StoredSample(
            features=feats[i],
            label=int(labels[i]),
            task_id=batch.task_id,
            score=float(scores[i]),
            arrival=buffer._next_arrival,
        )
        buffer._next_arrival += 1
        incoming.setdefault(s.label, []).append(s)

    buffer.classes_seen.update(incoming)
    if buffer.capacity == 0:
        return

    if buffer.policy == "random":
        pool = buffer.samples() + [s for c in sorted(incoming) for s in incoming[c]]
        if len(pool) > buffer.capacity:
            idx = buffer.rng.choice(len(pool), size=buffer.capacity, replace=False)
            pool = sorted((pool[i] for i in idx), key=lambda s: s.arrival)
        buffer.per_class = {}
        for s in pool:
            buffer.per_class.setdefault(s.label, []).append(s)
        return

    quota = class_quota(buffer.capacity, buffer.classes_seen)
    for c in sorted(incoming):
        stored = buffer.per_class.get(c, [])
        if rescore is not None and stored:
            fresh = np.asarray(rescore(stored), dtype=np.float64)
            if fresh.shape != (len(stored),):
                raise ValueError("rescore must return one score per stored sample")
            for s, f in zip(stored, fresh):
                s.score = float(f)
        buffer.per_class[c] = buffer._keep(stored + incoming[c], quota[c])
    # new classes can only shrink quotas, so trim the untouched ones too
    for c in sorted(buffer.per_class):
        if c not in incoming and len(buffer.per_class[c]) > quota[c]:
            buffer.per_class[c] = buffer._keep(buffer.per_class[c], quota[c])
    for c in [c for c, v in buffer.per_class.items() if not v]:
        del buffer.per_class[c]


def sample_replay(
    buffer: MemoryBuffer, replay_size: int, current_task: int, rng: np.random.Generator
) -> list[StoredSample]:
    """Uniform draw without replacement from samples of past tasks only."""
    if replay_size < 1:
        raise ValueError("replay_size must be >= 1")
    eligible = [s for s in buffer.samples() if s.task_id != current_task]
    if len(eligible) <= replay_size:
        return eligible
    idx = rng.choice(len(eligible), size=replay_size, replace=False)
    return [eligible[i] for i in idx]


def dump_csv(buffer: MemoryBuffer, path) -> None:
    """Debug snapshot: one row per stored sample (class, task, score, features)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class_id", "task_id", "score", "features"])
        for s in buffer.samples():
            writer.writerow(
                [s.label, s.task_id, repr(s.score), " ".join(repr(float(v)) for v in s.features)]
            )
