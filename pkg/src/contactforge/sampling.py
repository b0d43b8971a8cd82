"""Balanced contact sampling: deviation scores, log-spaced bins, resampling.

Samples are scored by how much their contact pattern deviates from the
dataset-wide mean, binned with logarithmically shrinking intervals (finer
resolution toward high scores), and drawn so every non-empty bin contributes
the same number of instances to the training stream.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .dataset import ContactDataset
from .util import atomic_write_text

DEFAULT_BINS = 8
DEFAULT_CURVATURE = 5.0


@dataclass(frozen=True)
class SamplingPlan:
    """Frozen output of plan construction.

    bins partition all sample indices; resampled is the training stream with
    per-bin contributions differing by at most one.
    """

    scores: np.ndarray
    edges: np.ndarray
    curvature: float
    bins: tuple
    resampled: np.ndarray
    seed: int

    @property
    def bin_count(self) -> int:
        return len(self.bins)


def contact_balance_score(contact, contact_mean) -> float:
    """Deviation of one contact vector from the dataset mean, in [-1, 1].

    s = (1/V) * (c . (1 - mean) - c . mean); zero for empty contact, larger
    for contact concentrated where the dataset rarely has any.
    """
    c = np.asarray(contact, dtype=np.float64)
    m = np.asarray(contact_mean, dtype=np.float64)
    if c.shape != m.shape:
        raise ValueError(f"length mismatch: contact {c.shape} vs mean {m.shape}")
    v = len(c)
    return float((c @ (1.0 - m) - c @ m) / v)


def contact_balance_scores(dataset: ContactDataset) -> np.ndarray:
    """Vectorized scores for every sample against the dataset's own mean."""
    contact = dataset.contact_matrix()
    return contact @ (1.0 - 2.0 * dataset.contact_mean) / dataset.vertex_count


def compute_bin_edges(
    s_min: float, s_max: float, k: int, curvature: float = DEFAULT_CURVATURE
) -> np.ndarray:
    """K+1 logarithmically spaced edges over [s_min, s_max].

    Spacing shrinks as k grows, so high-score bins are narrower. A collapsed
    score range degrades to the two-entry equal edge pair (single catch-all
    bin) with a warning.
    """
    if k < 2:
        raise ValueError(f"need at least 2 bins, got {k}")
    if not curvature > 0:
        raise ValueError(f"curvature must be > 0, got {curvature}")
    if s_max < s_min:
        raise ValueError(f"s_max {s_max} < s_min {s_min}")
    if s_max == s_min:
        warnings.warn(
            "score range is a single point; using one degenerate bin",
            RuntimeWarning,
            stacklevel=2,
        )
        return np.array([s_min, s_max])
    x = np.arange(k + 1) / k
    edges = s_min + (s_max - s_min) * np.log1p(curvature * x) / np.log1p(curvature)
    edges[0] = s_min
    edges[-1] = s_max
    if not (np.diff(edges) > 0).all():
        # Range too tiny for distinct float edges: same degenerate path.
        warnings.warn(
            "score range too small for distinct bin edges; using one bin",
            RuntimeWarning,
            stacklevel=2,
        )
        return np.array([s_min, s_max])
    return edges


def assign_bins(scores, edges) -> tuple:
    """Partition sample indices into half-open bins, last bin closed.

    Score s lands in bin k iff s is in [edges[k], edges[k+1]), except the
    last bin also includes its upper edge.
    """
    s = np.asarray(scores, dtype=np.float64)
    e = np.asarray(edges, dtype=np.float64)
    if s.min() < e[0] or s.max() > e[-1]:
        raise ValueError(
            f"scores outside edge range [{e[0]}, {e[-1]}]: "
            f"min {s.min()}, max {s.max()}"
        )
    k = len(e) - 1
    which = np.clip(np.searchsorted(e, s, side="right") - 1, 0, k - 1)
    return tuple(np.nonzero(which == b)[0] for b in range(k))


def stratified_resample(bins, total: int, seed: int) -> np.ndarray:
    """Equal-quota draw across non-empty bins, shuffled output order.

    Bins smaller than their quota are covered by whole copies plus a
    remainder drawn without replacement, so every member appears; larger
    bins are subsampled without replacement.
    """
    nonempty = [np.asarray(b, dtype=np.int64) for b in bins if len(b)]
    if not nonempty:
        raise ValueError("all bins are empty")
    k = len(nonempty)
    if total < k:
        raise ValueError(f"total {total} is below the non-empty bin count {k}")
    rng = np.random.default_rng(seed)
    base, extra = divmod(total, k)
    out = []
    for i, members in enumerate(nonempty):
        quota = base + (1 if i < extra else 0)
        reps, rem = divmod(quota, len(members))
        draw = [np.tile(members, reps)] if reps else []
        if rem:
            draw.append(rng.choice(members, size=rem, replace=False))
        out.append(np.concatenate(draw) if draw else np.empty(0, dtype=np.int64))
    stream = np.concatenate(out)
    rng.shuffle(stream)
    return stream


def build_plan(
    scores,
    k: int = DEFAULT_BINS,
    curvature: float = DEFAULT_CURVATURE,
    total: int | None = None,
    seed: int = 0,
) -> SamplingPlan:
    """Score -> edges -> bins -> resampled stream, all deterministic."""
    s = np.asarray(scores, dtype=np.float64)
    if len(s) == 0:
        raise ValueError("no scores")
    if total is None:
        total = len(s)
    s_min, s_max = float(s.min()), float(s.max())
    if s_max == s_min:
        edges = np.array([s_min, s_max])
    else:
        edges = compute_bin_edges(s_min, s_max, k, curvature)
    bins = assign_bins(s, edges)
    resampled = stratified_resample(bins, total, seed)
    return SamplingPlan(s, edges, float(curvature), bins, resampled, seed)


def plan_for_dataset(
    dataset: ContactDataset,
    k: int = DEFAULT_BINS,
    curvature: float = DEFAULT_CURVATURE,
    total: int | None = None,
    seed: int = 0,
) -> SamplingPlan:
    return build_plan(contact_balance_scores(dataset), k, curvature, total, seed)


def plan_for_epoch(scores, epoch: int, base_seed: int = 0, **kwargs) -> SamplingPlan:
    """Fresh plan per epoch, seeded at base_seed + epoch.

    Training can instead cycle a single plan; both modes give deterministic
    streams for a fixed base seed.
    """
    return build_plan(scores, seed=base_seed + epoch, **kwargs)


def uniform_plan(n_samples: int, total: int | None = None, seed: int = 0) -> SamplingPlan:
    """Sampling-off baseline: one bin over everything, shuffled draw."""
    scores = np.zeros(n_samples)
    bins = (np.arange(n_samples, dtype=np.int64),)
    resampled = stratified_resample(bins, total if total is not None else n_samples, seed)
    return SamplingPlan(scores, np.array([0.0, 0.0]), 0.0, bins, resampled, seed)


# ---------------------------------------------------------------------------
# Plan CSV
# ---------------------------------------------------------------------------


def save_plan_csv(plan: SamplingPlan, path: str) -> None:
    """Rows: position,sample_index,bin."""
    bin_of = np.empty(len(plan.scores), dtype=np.int64)
    for b, members in enumerate(plan.bins):
        bin_of[members] = b
    lines = ["position,sample_index,bin"]
    lines += [
        f"{pos},{idx},{bin_of[idx]}" for pos, idx in enumerate(plan.resampled)
    ]
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_plan_indices(path: str) -> np.ndarray:
    """Read back the resampled index sequence from a plan CSV."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "position,sample_index,bin":
        raise ValueError(f"{path}:1: expected header 'position,sample_index,bin'")
    indices = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 columns, got {line!r}")
        try:
            indices.append(int(parts[1]))
        except ValueError:
            raise ValueError(f"{path}:{lineno}: bad sample index {parts[1]!r}") from None
    return np.array(indices, dtype=np.int64)
