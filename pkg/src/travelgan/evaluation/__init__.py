"""Quantitative metrics and analysis tools for trained translators."""

from .analysis import (DistanceCorrelation, ManipulationReport, PCAResult, cell_change_scores, embed,
                       manipulation_consistency, pairwise_distance_correlation, pca_projection, pearson,
                       salience_map)
from .metrics import (FeatureExtractor, FeatureExtractorSpec, discriminator_score, fid_score,
                      frechet_distance, gaussian_fit, gaussian_window, pixel_mse, ssim)
from .report import METRICS, EvalOptions, EvalReport, evaluate_direction, evaluate_state

__all__ = [
    "DistanceCorrelation", "ManipulationReport", "PCAResult", "cell_change_scores", "embed",
    "manipulation_consistency", "pairwise_distance_correlation", "pca_projection", "pearson", "salience_map",
    "FeatureExtractor", "FeatureExtractorSpec", "discriminator_score", "fid_score", "frechet_distance",
    "gaussian_fit", "gaussian_window", "pixel_mse", "ssim",
    "METRICS", "EvalOptions", "EvalReport", "evaluate_direction", "evaluate_state",
]
