"""Contact dataset container, statistics, manifest I/O, synthetic benchmark.

A dataset is an ordered list of samples, each carrying a binary per-vertex
contact vector and a feature vector. Statistics cached on the dataset (the
per-vertex contact mean and class counts) feed both the sampling scores and
the class-balanced loss weights.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .mesh import make_proxy_mesh
from .util import atomic_write_text


class ManifestError(ValueError):
    """Malformed manifest content; message carries the line number."""


@dataclass(frozen=True)
class ContactSample:
    """One hand instance: stable id, feature vector, binary contact vector."""

    id: str
    features: np.ndarray
    contact: np.ndarray

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        contact = np.asarray(self.contact, dtype=np.uint8)
        if not np.isfinite(feats).all():
            raise ValueError(f"sample {self.id!r}: features must be finite")
        raw = np.asarray(self.contact)
        if not np.isin(raw, (0, 1)).all():
            raise ValueError(f"sample {self.id!r}: contact entries must be 0 or 1")
        if ";" in self.id or "\n" in self.id or not self.id:
            raise ValueError(f"sample id {self.id!r} is empty or contains ';'/newline")
        feats.flags.writeable = False
        contact.flags.writeable = False
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "contact", contact)


@dataclass(frozen=True, eq=False)
class ContactDataset:
    """Samples plus cached dataset-wide contact statistics.

    contact_mean[v] is the fraction of samples contacting vertex v;
    vertex_class_counts[v] = (non-contact count, contact count) at v;
    global_class_counts sums those over vertices.
    """

    samples: tuple
    contact_mean: np.ndarray
    vertex_class_counts: np.ndarray
    global_class_counts: np.ndarray

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    @property
    def vertex_count(self) -> int:
        return len(self.contact_mean)

    @property
    def feature_dim(self) -> int:
        return len(self.samples[0].features)

    @property
    def imbalance_ratio(self) -> float:
        """Non-contact to contact vertex-label ratio (inf when no contact)."""
        n0, n1 = self.global_class_counts
        return float(n0) / float(n1) if n1 else float("inf")

    def contact_matrix(self) -> np.ndarray:
        return np.stack([s.contact for s in self.samples]).astype(np.float64)

    def feature_matrix(self) -> np.ndarray:
        return np.stack([s.features for s in self.samples])

    def equals(self, other: "ContactDataset") -> bool:
        if self.n_samples != other.n_samples:
            return False
        return all(
            a.id == b.id
            and np.array_equal(a.features, b.features)
            and np.array_equal(a.contact, b.contact)
            for a, b in zip(self.samples, other.samples)
        )


def compute_statistics(samples) -> ContactDataset:
    """Build a ContactDataset with mean and class counts from raw samples."""
    samples = tuple(samples)
    if not samples:
        raise ValueError("no samples")
    v = len(samples[0].contact)
    for s in samples:
        if len(s.contact) != v:
            raise ValueError(
                f"mixed vertex counts: sample {s.id!r} has {len(s.contact)}, "
                f"expected {v}"
            )
    contact = np.stack([s.contact for s in samples]).astype(np.int64)
    n = len(samples)
    ones = contact.sum(axis=0)
    vertex_counts = np.stack([n - ones, ones], axis=1)
    global_counts = vertex_counts.sum(axis=0)
    mean = ones / n
    for arr in (mean, vertex_counts, global_counts):
        arr.flags.writeable = False
    return ContactDataset(samples, mean, vertex_counts, global_counts)


# ---------------------------------------------------------------------------
# Synthetic imbalanced benchmark
# ---------------------------------------------------------------------------


# Scale of the random feature projection, in units of 1/sqrt(V). Calibrated
# so per-vertex evidence is informative but not saturating: strong enough for
# a linear head to recover contact, weak enough that unweighted training
# leaves marginal positives below threshold.
FEATURE_PROJECTION_SCALE = 0.4


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs for the synthetic imbalanced benchmark generator."""

    subdivisions: int = 2
    n_samples: int = 2000
    feature_dim: int = 16
    empty_fraction: float = 0.7
    tip_boost: float = 10.0
    seed: int = 0
    patch_radius: int = 2
    noise_sigma: float = 0.1

    def __post_init__(self):
        if not (0.0 <= self.empty_fraction < 1.0):
            raise ValueError(f"empty_fraction must be in [0, 1), got {self.empty_fraction}")
        if self.tip_boost < 1.0:
            raise ValueError(f"tip_boost must be >= 1, got {self.tip_boost}")
        if self.n_samples < 100:
            raise ValueError(f"need at least 100 samples, got {self.n_samples}")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")


def _graph_balls(adjacency, radius: int) -> list[np.ndarray]:
    balls = []
    for center in range(len(adjacency)):
        seen = {center}
        frontier = deque([(center, 0)])
        while frontier:
            u, d = frontier.popleft()
            if d == radius:
                continue
            for w in adjacency[u]:
                if w not in seen:
                    seen.add(w)
                    frontier.append((w, d + 1))
        balls.append(np.array(sorted(seen), dtype=np.int64))
    return balls


def generate_synthetic(config: SyntheticConfig) -> ContactDataset:
    """Deterministic imbalanced benchmark on the proxy sphere.

    An exact quota of samples is all-zero (class imbalance); the rest mark a
    geodesic patch around a center vertex drawn with extra mass on the tip
    cap (spatial imbalance). Features are a fixed noisy random projection of
    the contact vector, so contact is recoverable by a linear head.
    """
    proxy = make_proxy_mesh(config.subdivisions)
    topo = proxy.topology
    v = topo.vertex_count
    rng = np.random.default_rng(config.seed)

    projection = rng.standard_normal((config.feature_dim, v)) * (
        FEATURE_PROJECTION_SCALE / np.sqrt(v)
    )

    n = config.n_samples
    n_empty = int(round(config.empty_fraction * n))
    empty = np.zeros(n, dtype=bool)
    empty[:n_empty] = True
    rng.shuffle(empty)

    center_weight = np.ones(v)
    center_weight[proxy.tip] = config.tip_boost
    center_prob = center_weight / center_weight.sum()
    balls = _graph_balls(topo.adjacency, config.patch_radius)

    samples = []
    for i in range(n):
        contact = np.zeros(v, dtype=np.uint8)
        if not empty[i]:
            center = int(rng.choice(v, p=center_prob))
            contact[balls[center]] = 1
        noise = rng.standard_normal(config.feature_dim)
        feats = projection @ contact + config.noise_sigma * noise
        samples.append(ContactSample(f"s{i:05d}", feats, contact))
    return compute_statistics(samples)


# ---------------------------------------------------------------------------
# Manifest I/O and heatmap export
# ---------------------------------------------------------------------------


def save_manifest(dataset: ContactDataset, path: str) -> None:
    """Write the line-oriented manifest; round-trips exactly via repr floats."""
    if dataset.n_samples == 0:
        raise ManifestError("no samples")
    lines = [f"V={dataset.vertex_count} d={dataset.feature_dim} N={dataset.n_samples}"]
    for s in dataset.samples:
        feats = ",".join(repr(float(x)) for x in s.features)
        contact = ",".join(str(int(c)) for c in s.contact)
        lines.append(f"{s.id};{feats};{contact}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_manifest(path: str) -> ContactDataset:
    """Parse a manifest; malformed rows raise ManifestError with line numbers."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].strip():
        raise ManifestError(f"{path}:1: missing header line")
    header = lines[0].split()
    try:
        fields = dict(part.split("=", 1) for part in header)
        v, d, n = int(fields["V"]), int(fields["d"]), int(fields["N"])
    except (ValueError, KeyError):
        raise ManifestError(
            f"{path}:1: header must be 'V=<int> d=<int> N=<int>', got {lines[0]!r}"
        ) from None
    if n < 1:
        raise ManifestError(f"{path}:1: no samples (N={n})")

    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != n:
        raise ManifestError(
            f"{path}: header promises N={n} samples but found {len(body)} rows"
        )

    samples = []
    for lineno, line in enumerate(body, start=2):
        parts = line.split(";")
        if len(parts) != 3:
            raise ManifestError(
                f"{path}:{lineno}: expected 'id;features;contact', got {line!r}"
            )
        sid, feat_str, contact_str = parts
        feat_tokens = feat_str.split(",")
        contact_tokens = contact_str.split(",")
        if len(feat_tokens) != d:
            raise ManifestError(
                f"{path}:{lineno}: expected {d} features, got {len(feat_tokens)}"
            )
        if len(contact_tokens) != v:
            raise ManifestError(
                f"{path}:{lineno}: expected {v} contact values, got {len(contact_tokens)}"
            )
        try:
            feats = np.array([float(t) for t in feat_tokens])
        except ValueError:
            raise ManifestError(f"{path}:{lineno}: non-numeric feature") from None
        if any(t not in ("0", "1") for t in contact_tokens):
            bad = next(t for t in contact_tokens if t not in ("0", "1"))
            raise ManifestError(
                f"{path}:{lineno}: contact values must be 0 or 1, got {bad!r}"
            )
        contact = np.array([int(t) for t in contact_tokens], dtype=np.uint8)
        try:
            samples.append(ContactSample(sid, feats, contact))
        except ValueError as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from None
    return compute_statistics(samples)


def heatmap_csv(values) -> str:
    """Per-vertex mean-contact CSV for external mesh coloring."""
    vals = np.asarray(values, dtype=np.float64)
    if vals.size == 0:
        raise ValueError("empty heatmap input")
    lines = ["vertex_index,mean_contact"]
    lines += [f"{i},{float(val)!r}" for i, val in enumerate(vals)]
    return "\n".join(lines) + "\n"
