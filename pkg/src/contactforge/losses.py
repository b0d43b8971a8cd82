"""Per-vertex contact losses with analytic logit gradients.

Every loss returns (value, d value / d logits). The class-balanced family
reweights the binary cross entropy by the reciprocal effective number of
samples, either per class globally or per vertex per class; the smoothness
and mean-regularization terms act on sigmoid probabilities of the full-
resolution logits. The weighted total also supervises coarser mesh levels
through fixed projection matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .mesh import LevelRegressor, MeshTopology

CONTACT_LOSSES = ("bce", "focal", "cb", "vcb")

DEFAULT_BETA = 0.9999
DEFAULT_GAMMA = 2.0


def _check_lengths(logits, labels) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if z.shape != y.shape or z.ndim != 1:
        raise ValueError(f"logits {z.shape} and labels {y.shape} must be equal 1-D")
    return z, y


def _bce_elementwise(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    # softplus identities keep this exact out to |z| ~ 700
    return y * np.logaddexp(0.0, -z) + (1.0 - y) * np.logaddexp(0.0, z)


def bce(logits, labels) -> tuple[float, np.ndarray]:
    """Mean binary cross entropy over vertices, stable for large |z|."""
    z, y = _check_lengths(logits, labels)
    v = len(z)
    value = float(_bce_elementwise(z, y).sum() / v)
    grad = (expit(z) - y) / v
    return value, grad


def focal_loss(logits, labels, gamma: float = DEFAULT_GAMMA) -> tuple[float, np.ndarray]:
    """Focal modulation (1 - p_t)^gamma on BCE; gamma = 0 recovers BCE."""
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    z, y = _check_lengths(logits, labels)
    v = len(z)
    p = expit(z)
    core = _bce_elementwise(z, y)
    pt_complement = np.where(y == 1.0, 1.0 - p, p)
    value = float((pt_complement**gamma * core).sum() / v)
    log_p = -np.logaddexp(0.0, -z)
    log_1mp = -np.logaddexp(0.0, z)
    grad_pos = (1.0 - p) ** gamma * (gamma * p * log_p - (1.0 - p))
    grad_neg = p**gamma * (p - gamma * (1.0 - p) * log_1mp)
    grad = np.where(y == 1.0, grad_pos, grad_neg) / v
    return value, grad


def cb_weight(count, beta: float):
    """Reciprocal effective number of samples: (1 - beta) / (1 - beta^n).

    Strictly decreasing in n for beta in (0, 1); a zero count is treated as
    a singleton (weight 1) so the weight stays bounded.
    """
    if not (0.0 <= beta < 1.0):
        raise ValueError(f"beta must be in [0, 1), got {beta}")
    n = np.asarray(count, dtype=np.float64)
    if (n < 0).any():
        raise ValueError("counts must be >= 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = 1.0 - np.power(beta, n)
        alpha = np.where(n == 0, 1.0, np.where(denom > 0, (1.0 - beta) / denom, 1.0))
    return float(alpha) if np.isscalar(count) or np.ndim(count) == 0 else alpha


@dataclass(frozen=True)
class ClassBalanceConfig:
    """Beta plus label counts, global (n0, n1) or per vertex (V, 2)."""

    beta: float = DEFAULT_BETA
    global_counts: tuple | None = None
    vertex_counts: np.ndarray | None = None

    def __post_init__(self):
        if not (0.0 <= self.beta < 1.0):
            raise ValueError(f"beta must be in [0, 1), got {self.beta}")
        if (self.global_counts is None) == (self.vertex_counts is None):
            raise ValueError("provide exactly one of global_counts / vertex_counts")
        if self.global_counts is not None:
            n0, n1 = self.global_counts
            if n0 < 0 or n1 < 0:
                raise ValueError("counts must be >= 0")
        else:
            counts = np.asarray(self.vertex_counts, dtype=np.float64)
            if counts.ndim != 2 or counts.shape[1] != 2 or (counts < 0).any():
                raise ValueError("vertex_counts must be a (V, 2) nonnegative array")
            object.__setattr__(self, "vertex_counts", counts)

    @classmethod
    def from_global(cls, n0, n1, beta: float = DEFAULT_BETA) -> "ClassBalanceConfig":
        return cls(beta=beta, global_counts=(float(n0), float(n1)))

    @classmethod
    def from_vertex_counts(cls, counts, beta: float = DEFAULT_BETA) -> "ClassBalanceConfig":
        return cls(beta=beta, vertex_counts=np.asarray(counts, dtype=np.float64))

    @classmethod
    def from_dataset(cls, dataset, beta: float = DEFAULT_BETA) -> "ClassBalanceConfig":
        return cls.from_vertex_counts(dataset.vertex_class_counts, beta)


def _weighted_bce(z, y, weights) -> tuple[float, np.ndarray]:
    v = len(z)
    value = float((weights * _bce_elementwise(z, y)).sum() / v)
    grad = weights * (expit(z) - y) / v
    return value, grad


def cb_loss(logits, labels, config: ClassBalanceConfig) -> tuple[float, np.ndarray]:
    """BCE with one weight per class from global label counts."""
    if config.global_counts is None:
        raise ValueError("cb_loss needs global counts")
    z, y = _check_lengths(logits, labels)
    n0, n1 = config.global_counts
    alpha = np.where(y == 1.0, cb_weight(n1, config.beta), cb_weight(n0, config.beta))
    return _weighted_bce(z, y, alpha)


def vcb_loss(logits, labels, config: ClassBalanceConfig) -> tuple[float, np.ndarray]:
    """BCE with a spatially varying weight per vertex per class."""
    if config.vertex_counts is None:
        raise ValueError("vcb_loss needs per-vertex counts")
    z, y = _check_lengths(logits, labels)
    counts = config.vertex_counts
    if len(counts) != len(z):
        raise ValueError(
            f"vertex_counts rows {len(counts)} must match logits length {len(z)}"
        )
    n = counts[np.arange(len(z)), y.astype(np.int64)]
    alpha = cb_weight(n, config.beta)
    return _weighted_bce(z, y, alpha)


def smoothness_loss(
    logits, topology: MeshTopology, epsilon: float = 1e-8
) -> tuple[float, np.ndarray]:
    """Penalty on predictions that disagree with their unnormalized
    neighbor sums, log-damped and normalized by total degree.

    Isolated vertices contribute a constant 1 to the numerator. Absolute
    values take subgradient 0 at their kinks.
    """
    z = np.asarray(logits, dtype=np.float64)
    if len(z) != topology.vertex_count:
        raise ValueError(
            f"logits length {len(z)} must match vertex count {topology.vertex_count}"
        )
    p = expit(z)
    adj = topology.adjacency_matrix
    p_hat = adj @ p
    q_hat = topology.degree - p_hat
    t1 = p - p_hat
    t2 = (1.0 - p) - q_hat
    s_total = float(np.abs(t1).sum() + np.abs(t2).sum())
    degree_total = float(topology.degree.sum()) + epsilon
    value = float(np.log1p(s_total / degree_total))

    h = np.sign(t1) - np.sign(t2)
    ds_dp = h - adj @ h
    grad = ds_dp * p * (1.0 - p) / (degree_total + s_total)
    return value, grad


def regularization_loss(logits, contact_mean) -> tuple[float, np.ndarray]:
    """Mean absolute deviation of predicted probabilities from the
    dataset-wide contact mean."""
    z = np.asarray(logits, dtype=np.float64)
    mean = np.asarray(contact_mean, dtype=np.float64)
    if z.shape != mean.shape:
        raise ValueError(f"length mismatch: logits {z.shape} vs mean {mean.shape}")
    if (mean < 0).any() or (mean > 1).any():
        raise ValueError("contact mean must lie in [0, 1]")
    v = len(z)
    p = expit(z)
    r = p - mean
    value = float(np.abs(r).sum() / v)
    grad = np.sign(r) * p * (1.0 - p) / v
    return value, grad


# ---------------------------------------------------------------------------
# Weighted multi-level total
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LossWeights:
    """Weights for the contact, regularization, and smoothness terms."""

    vcb: float = 1.0
    reg: float = 0.1
    smooth: float = 1.0

    def __post_init__(self):
        if min(self.vcb, self.reg, self.smooth) < 0:
            raise ValueError("loss weights must be >= 0")


@dataclass(frozen=True)
class LossReport:
    """Component scalars, per-level contact values, and the total gradient."""

    contact: float
    reg: float
    smooth: float
    level_values: tuple
    total: float
    gradient: np.ndarray
    contact_loss: str

    @property
    def components(self) -> dict:
        return {self.contact_loss: self.contact, "reg": self.reg, "smooth": self.smooth}


def _contact_loss_at_level(name, z, y, config, gamma):
    if name == "bce":
        return bce(z, y)
    if name == "focal":
        return focal_loss(z, y, gamma)
    if name == "cb":
        return cb_loss(z, y, config)
    if name == "vcb":
        return vcb_loss(z, y, config)
    raise ValueError(f"unknown contact loss {name!r}; choose from {CONTACT_LOSSES}")


def total_loss(
    logits,
    labels,
    topology: MeshTopology,
    contact_mean,
    regressors: LevelRegressor,
    config: ClassBalanceConfig | None = None,
    weights: LossWeights = LossWeights(),
    contact_loss: str = "vcb",
    gamma: float = DEFAULT_GAMMA,
) -> LossReport:
    """Weighted sum of multi-level contact loss, regularization, smoothness.

    The contact term is applied at every level: logits are projected through
    each level matrix, labels are projected and re-binarized at 0.5, and for
    the class-balanced variants the per-vertex counts are projected the same
    way and rounded. Level losses are averaged; regularization and
    smoothness act at full resolution only. The gradient pulls every level
    term back through the transposed projections.
    """
    z, y = _check_lengths(logits, labels)
    if len(z) != regressors.full_size:
        raise ValueError(
            f"logits length {len(z)} must match regressor size {regressors.full_size}"
        )
    if contact_loss in ("cb", "vcb") and config is None:
        raise ValueError(f"{contact_loss} requires a ClassBalanceConfig")

    level_values = []
    contact_grad = np.zeros(len(z))
    n_levels = len(regressors.matrices)
    for j in regressors.matrices:
        z_lvl = j @ z
        y_lvl = (j @ y >= 0.5).astype(np.float64)
        cfg_lvl = config
        if (
            contact_loss in ("cb", "vcb")
            and config is not None
            and config.vertex_counts is not None
        ):
            counts_lvl = np.rint(j @ config.vertex_counts)
            if contact_loss == "cb":
                cfg_lvl = ClassBalanceConfig.from_global(
                    counts_lvl[:, 0].sum(), counts_lvl[:, 1].sum(), config.beta
                )
            else:
                cfg_lvl = ClassBalanceConfig.from_vertex_counts(counts_lvl, config.beta)
        val, grad_lvl = _contact_loss_at_level(contact_loss, z_lvl, y_lvl, cfg_lvl, gamma)
        level_values.append(val)
        contact_grad += j.T @ grad_lvl
    contact_val = float(np.mean(level_values))
    contact_grad /= n_levels

    reg_val, reg_grad = regularization_loss(z, contact_mean)
    smooth_val, smooth_grad = smoothness_loss(z, topology)

    total = weights.vcb * contact_val + weights.reg * reg_val + weights.smooth * smooth_val
    gradient = (
        weights.vcb * contact_grad + weights.reg * reg_grad + weights.smooth * smooth_grad
    )
    return LossReport(
        contact=contact_val,
        reg=reg_val,
        smooth=smooth_val,
        level_values=tuple(level_values),
        total=float(total),
        gradient=gradient,
        contact_loss=contact_loss,
    )
