"""EvalReport assembly and serialization for a trained state."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..data import FactorRecord, render_factors, to_tensor, to_unit
from ..trainer import TrainState, direction_names
from .analysis import _numpy_fn, pairwise_distance_correlation
from .metrics import FeatureExtractor, FeatureExtractorSpec, discriminator_score, fid_score, pixel_mse, ssim

METRICS = ("ssim", "pixel_mse", "fid", "discriminator_score", "r2_pixel", "r2_latent")
TARGET_DOMAIN = {"xy": "grid", "yx": "beads"}


@dataclass
class EvalOptions:
    metrics: tuple = METRICS
    seed: int = 0
    dscore_train_steps: int = 200
    extractor: FeatureExtractorSpec = field(default_factory=FeatureExtractorSpec)

    def __post_init__(self):
        bad = set(self.metrics) - set(METRICS)
        if bad:
            raise ValueError(f"unknown metrics {sorted(bad)}; choose from {list(METRICS)}")


@dataclass
class EvalReport:
    ssim_mean: float | None = None
    pixel_mse_mean: float | None = None
    frechet_distance: float | None = None
    discriminator_score: float | None = None
    r2_pixel: float | None = None
    r2_latent: float | None = None
    sample_counts: dict = field(default_factory=dict)
    extractor: dict = field(default_factory=dict)
    per_direction: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    seed: int = 0

    def headline(self):
        return {"ssim_mean": self.ssim_mean, "pixel_mse_mean": self.pixel_mse_mean,
                "frechet_distance": self.frechet_distance, "discriminator_score": self.discriminator_score,
                "r2_pixel": self.r2_pixel, "r2_latent": self.r2_latent}

    def check(self):
        """Range invariants; returns a list of violations (empty when valid)."""
        bad = []
        h = self.headline()
        if h["ssim_mean"] is not None and not -1 <= h["ssim_mean"] <= 1:
            bad.append("ssim_mean")
        if h["discriminator_score"] is not None and not 0 <= h["discriminator_score"] <= 1:
            bad.append("discriminator_score")
        for k in ("r2_pixel", "r2_latent"):
            if h[k] is not None and not 0 <= h[k] <= 1:
                bad.append(k)
        if h["frechet_distance"] is not None and h["frechet_distance"] < 0:
            bad.append("frechet_distance")
        return bad

    def to_json(self):
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return None
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, list):
                return [clean(x) for x in v]
            return v
        return json.dumps(clean(asdict(self)), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def _mean(values):
    vals = [v for v in values if v is not None and math.isfinite(v)]
    return float(np.mean(vals)) if vals else None


def evaluate_direction(generator, siamese, source, target, target_factors=None,
                       options: EvalOptions = EvalOptions(), extractor=None, target_domain=None):
    """Metrics for one direction; images are [-1, 1] NCHW arrays."""
    source = np.asarray(source, dtype=np.float32)
    target = np.asarray(target, dtype=np.float32)
    gen = _numpy_fn(generator)(source)
    out, flags = {}, []
    m = options.metrics
    if ("ssim" in m or "pixel_mse" in m) and target_factors is not None:
        d = source.shape[-1]
        truth = to_tensor(np.stack([render_factors(r, target_domain, d) for r in target_factors]))
        gu, tu = to_unit(gen), to_unit(truth)
        if "ssim" in m:
            out["ssim"] = float(np.mean([ssim(a, b) for a, b in zip(gu, tu)]))
        if "pixel_mse" in m:
            out["pixel_mse"] = float(np.mean([pixel_mse(a, b) for a, b in zip(gu, tu)]))
    elif "ssim" in m or "pixel_mse" in m:
        flags.append("no paired ground truth: ssim/pixel_mse skipped")
    if "fid" in m:
        value, info = fid_score(target, gen, options.extractor, extractor=extractor, return_details=True)
        out["fid"] = value
        if info["regularized"]:
            flags.append("fid covariance regularized (samples <= feature dim)")
    if "discriminator_score" in m:
        out["discriminator_score"] = discriminator_score(target, gen, generator.arch, options.seed,
                                                         options.dscore_train_steps)
    if "r2_pixel" in m:
        res = pairwise_distance_correlation(to_unit(source), to_unit(gen), "pixel")
        out["r2_pixel"] = res.r2
        if not res.ok:
            flags.append(f"r2_pixel: {res.flag}")
    if "r2_latent" in m:
        res = pairwise_distance_correlation(source, gen, "latent", siamese=siamese)
        out["r2_latent"] = res.r2
        if not res.ok:
            flags.append(f"r2_latent: {res.flag}")
    return out, flags


def evaluate_state(state: TrainState, x, y, x_factors=None, y_factors=None,
                   options: EvalOptions = EvalOptions()) -> EvalReport:
    """Full report over the trained directions; headline values are direction means."""
    x, y = np.asarray(x, dtype=np.float32), np.asarray(y, dtype=np.float32)
    names = direction_names(state.config)
    fx = FeatureExtractor(options.extractor, x.shape[-1]) if "fid" in options.metrics else None
    report = EvalReport(seed=options.seed, extractor=options.extractor.describe())
    data = {"xy": (x, y, x_factors), "yx": (y, x, y_factors)}
    for direction, (g_name, _, s_name) in names.items():
        src, tgt, factors = data[direction]
        vals, flags = evaluate_direction(state.nets[g_name], state.nets[s_name], src, tgt, factors,
                                         options, fx, TARGET_DOMAIN[direction])
        report.per_direction[direction] = vals
        report.flags += [f"{direction}: {f}" for f in flags]
        report.sample_counts[direction] = {"source": len(src), "target": len(tgt)}
    key = {"ssim_mean": "ssim", "pixel_mse_mean": "pixel_mse", "frechet_distance": "fid",
           "discriminator_score": "discriminator_score", "r2_pixel": "r2_pixel", "r2_latent": "r2_latent"}
    for attr, k in key.items():
        setattr(report, attr, _mean(v.get(k) for v in report.per_direction.values()))
    return report


def factors_or_none(records):
    if records is None:
        return None
    return [r if isinstance(r, FactorRecord) else FactorRecord.from_dict(r) for r in records]
