"""Image-quality and distribution metrics: SSIM, pixel MSE, Frechet distance,
feature-space FID and the independently trained discriminator score.

Image metrics take arrays in [0, 1], shaped (C, H, W) or (H, W).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .. import losses as L
from ..data import BatchSchedule, DataError
from ..diffcore.optim import AdamState, adam_step
from ..diffcore.tensor import Tensor, backward
from ..networks import ArchitectureSpec, NetworkParams, build_discriminator, forward, trunk_features

log = logging.getLogger(__name__)

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def gaussian_window(size=SSIM_WIN, sigma=SSIM_SIGMA):
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img, g):
    """Separable 'valid' correlation of a 2-D image with window ``g``."""
    k = len(g)
    rows = sliding_window_view(img, k, axis=0) @ g
    return sliding_window_view(rows, k, axis=1) @ g


def _ssim_channel(a, b, data_range):
    g = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, data_range=1.0) -> float:
    """Mean local SSIM (11x11 Gaussian window, sigma 1.5, 'valid' extent), channels averaged."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if min(a.shape[-2:]) < SSIM_WIN:
        raise ValueError(f"ssim: images must be at least {SSIM_WIN}x{SSIM_WIN}, got {a.shape[-2:]}")
    return float(np.mean([_ssim_channel(a[c], b[c], data_range).mean() for c in range(a.shape[0])]))


def pixel_mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"pixel_mse: shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def _psd_sqrt(m):
    m = (m + m.T) / 2
    w, v = np.linalg.eigh(m)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def frechet_distance(mu1, cov1, mu2, cov2) -> float:
    """||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)).

    The trace of the product's square root is taken from the symmetric
    matrix S1^(1/2) S2 S1^(1/2), which has the same eigenvalues; negative
    eigenvalues from round-off are clamped to zero.
    """
    mu1, mu2 = np.atleast_1d(np.asarray(mu1, dtype=np.float64)), np.atleast_1d(np.asarray(mu2, dtype=np.float64))
    cov1, cov2 = np.atleast_2d(np.asarray(cov1, dtype=np.float64)), np.atleast_2d(np.asarray(cov2, dtype=np.float64))
    if mu1.shape != mu2.shape or cov1.shape != cov2.shape or cov1.shape != (mu1.size, mu1.size):
        raise ValueError(f"frechet_distance: dimension mismatch mu {mu1.shape}/{mu2.shape}, "
                         f"cov {cov1.shape}/{cov2.shape}")
    cov1 = (cov1 + cov1.T) / 2
    cov2 = (cov2 + cov2.T) / 2
    s1 = _psd_sqrt(cov1)
    inner = s1 @ cov2 @ s1
    eig = np.linalg.eigvalsh((inner + inner.T) / 2)
    tr_sqrt = np.sqrt(np.clip(eig, 0, None)).sum()
    diff = mu1 - mu2
    return float(max(0.0, diff @ diff + np.trace(cov1) + np.trace(cov2) - 2 * tr_sqrt))


# --- feature-space FID ----------------------------------------------------------


@dataclass(frozen=True)
class FeatureExtractorSpec:
    kind: str = "seeded_random_convnet"  # or trained_discriminator_trunk
    seed: int = 1234
    feature_dim: int = 64
    base_filters: int = 16

    def describe(self):
        return {"kind": self.kind, "seed": self.seed, "feature_dim": self.feature_dim,
                "base_filters": self.base_filters}


class FeatureExtractor:
    """Fixed convolutional trunk followed by a fixed random projection.

    The seeded variant uses the discriminator trunk with He-scaled random
    kernels and no normalization; the trained variant reuses a supplied
    discriminator's trunk in eval mode.
    """

    def __init__(self, spec: FeatureExtractorSpec, image_size: int, trunk: NetworkParams | None = None):
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        if spec.kind == "trained_discriminator_trunk":
            if trunk is None:
                raise ValueError("trained_discriminator_trunk extractor needs a discriminator")
            self.net = trunk
        elif spec.kind == "seeded_random_convnet":
            arch = ArchitectureSpec(image_size=image_size, base_filters=spec.base_filters, latent_dim=1)
            net = build_discriminator(arch, spec.seed, dtype=np.float64)
            for k, v in net.params.items():
                if k.endswith("/kernel"):
                    fan_in = v.shape[1] * v.shape[2] * v.shape[3]
                    v[...] = rng.standard_normal(v.shape) * np.sqrt(2.0 / fan_in)
            # identity normalization: eval mode with zero mean / unit variance stats
            self.net = net
        else:
            raise ValueError(f"unknown feature extractor kind {spec.kind!r}")
        flat = self._trunk(np.zeros((1, 3, image_size, image_size))).shape[1]
        self.projection = None
        if spec.feature_dim < flat:
            self.projection = rng.standard_normal((flat, spec.feature_dim)) / np.sqrt(flat)

    def _trunk(self, images):
        return trunk_features(self.net, Tensor(np.asarray(images, dtype=self.net.dtype)), "eval").data

    def __call__(self, images, batch=128):
        images = np.asarray(images)
        feats = [self._trunk(images[i:i + batch]).astype(np.float64) for i in range(0, len(images), batch)]
        f = np.concatenate(feats)
        return f @ self.projection if self.projection is not None else f


def gaussian_fit(features, regularize=1e-6):
    """Mean and covariance; adds ``regularize * I`` when samples do not exceed the dimension."""
    features = np.asarray(features, dtype=np.float64)
    n, dim = features.shape
    mu = features.mean(axis=0)
    cov = np.cov(features, rowvar=False) if n > 1 else np.zeros((dim, dim))
    cov = np.atleast_2d(cov)
    flagged = n <= dim
    if flagged:
        cov = cov + regularize * np.eye(dim)
    return mu, cov, flagged


def fid_score(real_images, gen_images, fx: FeatureExtractorSpec = FeatureExtractorSpec(),
              extractor: FeatureExtractor | None = None, return_details=False):
    """Frechet distance between Gaussian fits of extractor features ([-1, 1] NCHW images)."""
    real_images, gen_images = np.asarray(real_images), np.asarray(gen_images)
    if len(real_images) == 0 or len(gen_images) == 0:
        raise DataError("fid_score: both image sets must be non-empty")
    extractor = extractor or FeatureExtractor(fx, real_images.shape[-1])
    mu1, c1, f1 = gaussian_fit(extractor(real_images))
    mu2, c2, f2 = gaussian_fit(extractor(gen_images))
    if f1 or f2:
        warnings.warn("fid_score: fewer samples than feature dimensions; covariance regularized", stacklevel=2)
    value = frechet_distance(mu1, c1, mu2, c2)
    if return_details:
        return value, {"regularized": bool(f1 or f2), "n_real": len(real_images), "n_gen": len(gen_images),
                       "extractor": extractor.spec.describe()}
    return value


# --- discriminator score ----------------------------------------------------------


def discriminator_score(real_images, gen_images, arch: ArchitectureSpec, seed: int = 0,
                        train_steps: int = 200, batch_size: int = 16, return_details=False):
    """Mean output of a freshly trained discriminator on held-out generated images.

    Each set is split in half by a seeded permutation. A new discriminator is
    trained with Adam to tell the real half from the generated half, on
    batches that mix both classes (the network is then evaluated in eval mode,
    so its running statistics must describe the mixture). 0 means every
    held-out generated image was judged fake.
    """
    real_images = np.asarray(real_images, dtype=np.float32)
    gen_images = np.asarray(gen_images, dtype=np.float32)
    half = batch_size // 2
    for label, imgs in (("real", real_images), ("generated", gen_images)):
        if len(imgs) < 2 * max(half, 1):
            raise DataError(f"discriminator_score: {label} set of {len(imgs)} too small to split "
                             f"into train/held-out halves with batch {batch_size}")
    rng = np.random.default_rng([seed, 7])
    pr, pg = rng.permutation(len(real_images)), rng.permutation(len(gen_images))
    r_train = real_images[pr[: len(pr) // 2]]
    g_train, g_held = gen_images[pg[: len(pg) // 2]], gen_images[pg[len(pg) // 2:]]

    net = build_discriminator(arch, seed)
    state = AdamState.for_params(net.params)
    sr = BatchSchedule(len(r_train), half, seed, stream=11)
    sg = BatchSchedule(len(g_train), half, seed, stream=12)
    for step in range(train_steps):
        batch = np.concatenate([r_train[sr.indices_at(step)], g_train[sg.indices_at(step)]])
        p = forward(net, batch, "train", trainable=True)
        loss = L.adversarial_d_loss(p[:half], p[half:])
        adam_step(net.params, backward(loss, net.tensors), state)
    scores = np.concatenate([forward(net, g_held[i:i + 64], "eval").data[:, 0]
                             for i in range(0, len(g_held), 64)])
    value = float(np.mean(scores))
    if return_details:
        return value, {"train_steps": train_steps, "n_held_out": len(g_held), "seed": seed}
    return value
