"""Adversarial, transformation-vector (TraVeL) and siamese margin losses.

Transformation vectors are differences of siamese embeddings within a batch,
``v[i, j] = S(x_j) - S(x_i)``. The generator is asked to preserve them:
the vector between two generated images should point the same way as the
vector between their sources. Pair losses average over ordered pairs i != j.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .diffcore import ops
from .diffcore.tensor import Tensor, clip, l2norm, log, relu, take

PROB_FLOOR = 1e-7
COSINE_EPS = 1e-8
METRICS = ("cosine", "cosine_plus_l2")


@dataclass(frozen=True)
class LossConfig:
    margin: float = 1.0
    dist_metric: str = "cosine"
    l2_weight: float = 0.0
    adv_weight: float = 1.0
    travel_weight: float = 1.0

    def __post_init__(self):
        if not self.margin > 0:
            raise ValueError(f"margin must be positive, got {self.margin}")
        if self.dist_metric not in METRICS:
            raise ValueError(f"dist_metric must be one of {METRICS}, got {self.dist_metric!r}")
        for key in ("l2_weight", "adv_weight", "travel_weight"):
            w = getattr(self, key)
            if not np.isfinite(w) or w < 0:
                raise ValueError(f"{key} must be finite and non-negative, got {w}")

    def to_dict(self):
        return {"margin": self.margin, "dist_metric": self.dist_metric, "l2_weight": self.l2_weight,
                "adv_weight": self.adv_weight, "travel_weight": self.travel_weight}


class PairwiseVectors:
    """All B x B transformation vectors of one batch of embeddings."""

    def __init__(self, latents: Tensor):
        if latents.ndim != 2:
            raise ValueError(f"latents must be (B, latent_dim), got {latents.shape}")
        self.latents = latents
        self.vectors = ops.pairwise_diff(latents)

    @property
    def batch_size(self):
        return self.latents.shape[0]

    @property
    def latent_dim(self):
        return self.latents.shape[1]

    def pair_index(self):
        b = self.batch_size
        i, j = np.nonzero(~np.eye(b, dtype=bool))
        return i, j

    def offdiagonal(self) -> Tensor:
        """(B*(B-1), latent_dim) vectors for ordered pairs i != j, row-major in (i, j)."""
        return take(self.vectors, self.pair_index(), unique=True)

    def numpy(self):
        return self.vectors.data


def transformation_vectors(latents) -> PairwiseVectors:
    if not isinstance(latents, Tensor):
        latents = Tensor(np.asarray(latents))
    return PairwiseVectors(latents)


def _check_pairs(nu: PairwiseVectors, what):
    if nu.batch_size < 2:
        warnings.warn(f"{what}: batch of {nu.batch_size} has no pairs; loss defined as 0", stacklevel=3)
        return False
    return True


def _zero(dtype):
    return Tensor(np.zeros((), dtype=dtype))


def travel_loss(nu_real: PairwiseVectors, nu_gen: PairwiseVectors, cfg: LossConfig = LossConfig()) -> Tensor:
    """Mean over ordered pairs of Dist(real pair vector, generated pair vector)."""
    if nu_real.batch_size != nu_gen.batch_size or nu_real.latent_dim != nu_gen.latent_dim:
        raise ValueError(f"travel_loss: shapes differ ({nu_real.batch_size}, {nu_real.latent_dim}) vs "
                         f"({nu_gen.batch_size}, {nu_gen.latent_dim})")
    if not _check_pairs(nu_real, "travel_loss"):
        return _zero(nu_real.latents.dtype)
    a, b = nu_real.offdiagonal(), nu_gen.offdiagonal()
    dot = (a * b).sum(axis=1)
    # floor the norm product rather than adding to it: exact cosine away from zero vectors
    cos = dot / clip(l2norm(a, axis=1) * l2norm(b, axis=1), COSINE_EPS, np.inf)
    dist = 1.0 - cos
    if cfg.dist_metric == "cosine_plus_l2" and cfg.l2_weight > 0:
        diff = a - b
        dist = dist + (diff * diff).sum(axis=1) * (cfg.l2_weight / nu_real.latent_dim)
    return dist.mean()


def margin_loss(nu_real: PairwiseVectors, cfg: LossConfig = LossConfig()) -> Tensor:
    """Mean over ordered pairs of max(0, margin - ||v_ij||)."""
    if not _check_pairs(nu_real, "margin_loss"):
        return _zero(nu_real.latents.dtype)
    norms = l2norm(nu_real.offdiagonal(), axis=1)
    return relu(cfg.margin - norms).mean()


def _as_prob(t):
    return t if isinstance(t, Tensor) else Tensor(np.asarray(t, dtype=np.float64))


def adversarial_d_loss(d_real, d_fake) -> Tensor:
    """Binary cross-entropy: -mean log D(real) - mean log(1 - D(fake))."""
    d_real, d_fake = _as_prob(d_real), _as_prob(d_fake)
    hi = 1.0 - PROB_FLOOR
    real_term = log(clip(d_real, PROB_FLOOR, hi)).mean()
    fake_term = log(clip(1.0 - d_fake, PROB_FLOOR, hi)).mean()
    return -(real_term + fake_term)


def adversarial_g_loss(d_fake) -> Tensor:
    """Non-saturating generator loss -mean log D(G(x))."""
    d_fake = _as_prob(d_fake)
    return -log(clip(d_fake, PROB_FLOOR, 1.0 - PROB_FLOOR)).mean()


@dataclass
class LossBreakdown:
    l_adv_g: float
    l_travel: float
    l_sc: float
    l_d: float
    l_g_total: float
    l_s_total: float

    def as_dict(self):
        return dict(self.__dict__)

    def is_finite(self):
        return all(np.isfinite(v) for v in self.__dict__.values())


def generator_objective(l_adv_g, l_travel, cfg: LossConfig):
    return l_adv_g * cfg.adv_weight + l_travel * cfg.travel_weight


def siamese_objective(l_sc, l_travel, cfg: LossConfig):
    return l_sc + l_travel * cfg.travel_weight


def compose_losses(parts: dict, cfg: LossConfig = LossConfig()) -> LossBreakdown:
    """Combine scalar loss parts (floats or scalar Tensors) into the network objectives."""
    vals = {k: float(v.data) if isinstance(v, Tensor) else float(v) for k, v in parts.items()}
    l_adv_g = vals.get("l_adv_g", 0.0)
    l_travel = vals.get("l_travel", 0.0)
    l_sc = vals.get("l_sc", 0.0)
    return LossBreakdown(
        l_adv_g=l_adv_g,
        l_travel=l_travel,
        l_sc=l_sc,
        l_d=vals.get("l_d", 0.0),
        l_g_total=generator_objective(l_adv_g, l_travel, cfg),
        l_s_total=siamese_objective(l_sc, l_travel, cfg),
    )
