"""Channel statistics, the statistics-matching loss, and adaptive instance
re-normalization (AdaIN).

A feature map's per-sample, per-channel mean and standard deviation are
the quantities being transferred. The matching loss penalizes squared
differences of those moments between two maps; AdaIN rewrites a map so it
carries someone else's moments while keeping its spatial structure.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ShapeError, UsageError
from .ops import expand_row, expand_spatial, mse, row_sum, spatial_mean
from .tensor import Tensor

DEFAULT_EPS = 1e-5


@dataclass
class FeatureStats:
    """Per-sample channel moments of an (N, C, H, W) feature map.

    ``sigma`` is sqrt(biased variance + eps), so it is bounded below by
    sqrt(eps) and safe to divide by.
    """

    mu: Tensor      # (N, C)
    sigma: Tensor   # (N, C)
    eps: float

    @property
    def shape(self):
        return self.mu.shape

    def detach(self) -> "FeatureStats":
        return FeatureStats(self.mu.detach(), self.sigma.detach(), self.eps)


@dataclass
class PairSpec:
    """One teacher/student feature pairing.

    ``adapter`` is an optional trainable map (a 1x1 convolution in
    practice) applied to the student feature so its channel count matches
    the teacher's.
    """

    teacher_hook: str
    student_hook: str
    adapter: object | None = None


def channel_stats(feature: Tensor, eps: float = DEFAULT_EPS) -> FeatureStats:
    """Mean and epsilon-regularized standard deviation over each (sample, channel)."""
    if feature.ndim != 4:
        raise ShapeError(f"channel_stats: expected (N, C, H, W), got {feature.shape}")
    if eps <= 0:
        raise UsageError(f"channel_stats: eps must be positive, got {eps}")
    mu = spatial_mean(feature)
    centered = feature - expand_spatial(mu, feature.shape)
    var = spatial_mean(centered * centered)
    sigma = (var + eps).sqrt()
    return FeatureStats(mu, sigma, eps)


def stats_match_loss(teacher_stats: FeatureStats, student_stats: FeatureStats) -> Tensor:
    """Mean squared moment gap, averaged over channels then over the batch.

    The first argument is treated as the target: it is detached, so the
    gradient reaches only the second argument's graph. The value itself is
    symmetric under swapping the arguments.
    """
    if teacher_stats.shape != student_stats.shape:
        raise ShapeError(
            f"stats_match_loss: stats shapes differ, "
            f"{teacher_stats.shape} vs {student_stats.shape}"
        )
    n, c = student_stats.shape
    dmu = student_stats.mu - teacher_stats.mu.detach()
    dsigma = student_stats.sigma - teacher_stats.sigma.detach()
    total = (dmu * dmu).sum() + (dsigma * dsigma).sum()
    return total * (1.0 / (n * c))


def stats_match_total(pairs, eps: float = DEFAULT_EPS) -> Tensor:
    """Sum of per-pair matching losses over (teacher_map, student_map, PairSpec).

    Each pair's student map is passed through its adapter (when present)
    before the moments are compared; channel counts must agree afterwards.
    """
    pairs = list(pairs)
    if not pairs:
        raise UsageError("stats_match_total: need at least one feature pair")
    total = None
    for teacher_map, student_map, spec in pairs:
        mapped = spec.adapter(student_map) if spec.adapter is not None else student_map
        if mapped.shape[1] != teacher_map.shape[1]:
            raise ShapeError(
                f"stats_match_total: pair {spec.teacher_hook!r} compares "
                f"{teacher_map.shape[1]} teacher channels with "
                f"{mapped.shape[1]} student channels (adapter missing?)"
            )
        term = stats_match_loss(channel_stats(teacher_map, eps),
                                channel_stats(mapped, eps))
        total = term if total is None else total + term
    return total


def adain(content: Tensor, style: FeatureStats, eps: float = DEFAULT_EPS) -> Tensor:
    """Replace the content map's channel moments with the style moments.

    Computed as (content - mu_c) * (sigma_s / sigma_c) + mu_s, with the
    content moments measured under the same eps. Division happens on the
    (N, C) ratio, so styling a map with its own stats multiplies by exactly
    one and the eps bias cancels.
    """
    if content.ndim != 4:
        raise ShapeError(f"adain: expected (N, C, H, W) content, got {content.shape}")
    if style.shape != content.shape[:2]:
        raise ShapeError(
            f"adain: style stats shape {style.shape} does not match "
            f"content (N, C) = {content.shape[:2]}"
        )
    own = channel_stats(content, eps)
    ratio = style.sigma / own.sigma
    out = (content - expand_spatial(own.mu, content.shape)) \
        * expand_spatial(ratio, content.shape)
    return out + expand_spatial(style.mu, content.shape)


def adain_loss(reference_out: Tensor, renormed_out: Tensor) -> Tensor:
    """Squared distance between network outputs before/after re-normalization.

    The reference output is detached; only the re-normalized branch feeds
    gradient back (through the injected feature to the style source).
    """
    if reference_out.shape != renormed_out.shape:
        raise ShapeError(
            f"adain_loss: output shapes differ, "
            f"{reference_out.shape} vs {renormed_out.shape}"
        )
    return mse(reference_out.detach(), renormed_out)


def per_sample_l2_normalize(x: Tensor) -> Tensor:
    """Scale each row of (N, D) to unit Euclidean norm.

    A vanishing regularizer keeps all-zero rows finite without disturbing
    the scale invariance of the result beyond double rounding.
    """
    if x.ndim != 2:
        raise ShapeError(f"per_sample_l2_normalize: expected (N, D), got {x.shape}")
    norms = (row_sum(x * x) + 1e-24).sqrt()
    return x / expand_row(norms, x.shape)
