"""Analytic instruments: distance correlation, PCA of the siamese space,
salience maps and the manipulation-consistency detector."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist
from scipy.stats import spearmanr

from ..data import BoardGeometry, DataError, to_unit
from ..diffcore.tensor import Tensor, backward
from ..networks import NetworkParams, forward


def _as_fn(generator):
    """NetworkParams -> eval-mode forward; callables are passed through."""
    if isinstance(generator, NetworkParams):
        return lambda x: forward(generator, x, "eval")
    return generator


def _numpy_fn(generator, batch=64):
    fn = _as_fn(generator)

    def run(x):
        x = np.asarray(x)
        outs = []
        for i in range(0, len(x), batch):
            y = fn(Tensor(x[i:i + batch]))
            outs.append(y.data if isinstance(y, Tensor) else np.asarray(y))
        return np.concatenate(outs)
    return run


# --- pairwise distances ----------------------------------------------------------


@dataclass
class DistanceCorrelation:
    r2: float
    r: float
    n_pairs: int
    dist_a: np.ndarray = field(repr=False)
    dist_b: np.ndarray = field(repr=False)
    flag: str | None = None  # "constant_distances" when r is undefined

    @property
    def ok(self):
        return self.flag is None


def pearson(a, b):
    """Pearson correlation, or nan when either input is constant."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ac, bc = a - a.mean(), b - b.mean()
    den = np.sqrt((ac @ ac) * (bc @ bc))
    if den == 0:
        return float("nan")
    return float(np.clip((ac @ bc) / den, -1.0, 1.0))


def embed(siamese: NetworkParams, images, batch=64):
    """Siamese latents of [-1, 1] images (eval mode)."""
    images = np.asarray(images, dtype=siamese.dtype)
    return np.concatenate([forward(siamese, images[i:i + batch], "eval").data
                           for i in range(0, len(images), batch)]).astype(np.float64)


def pairwise_distance_correlation(set_a, set_b, space="pixel", siamese=None, siamese_b=None):
    """Squared Pearson correlation of within-set pairwise L2 distances.

    ``set_a[i]`` is paired with ``set_b[i]``. In pixel space the arrays are
    taken as given (rescale first if a particular range is wanted); in latent
    space both sets are embedded with ``siamese`` (``siamese_b`` for the
    second set if given) before distances are taken.
    """
    a, b = np.asarray(set_a), np.asarray(set_b)
    if len(a) != len(b):
        raise DataError(f"pairwise_distance_correlation: unequal counts {len(a)} vs {len(b)}")
    if len(a) < 3:
        raise DataError(f"pairwise_distance_correlation: need at least 3 items, got {len(a)}")
    if space == "latent":
        if siamese is None:
            raise ValueError("latent space needs a siamese network")
        a, b = embed(siamese, a), embed(siamese_b or siamese, b)
    elif space != "pixel":
        raise ValueError(f"unknown distance space {space!r}")
    da = pdist(a.reshape(len(a), -1).astype(np.float64))
    db = pdist(b.reshape(len(b), -1).astype(np.float64))
    r = pearson(da, db)
    if np.isnan(r):
        return DistanceCorrelation(float("nan"), r, len(da), da, db, "constant_distances")
    return DistanceCorrelation(r * r, r, len(da), da, db)


# --- PCA -----------------------------------------------------------------------


@dataclass
class PCAResult:
    points: np.ndarray  # (n, k)
    components: np.ndarray  # (k, D), unit rows
    explained_variance: np.ndarray  # (k,)
    explained_ratio: np.ndarray  # (k,)
    mean: np.ndarray
    rank_deficient: bool = False

    def transform(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components.T


def pca_projection(latents, k=2) -> PCAResult:
    """Top-``k`` principal components of ``latents`` (n, D).

    Components come from the eigendecomposition of the sample covariance
    (computed through an SVD of the centred data, which shares its
    eigenvectors). Each component's sign is fixed so that its
    largest-magnitude coordinate is positive. Components beyond the data's
    rank are zeroed and the result is flagged.
    """
    x = np.asarray(latents, dtype=np.float64)
    n, dim = x.shape
    if n <= k:
        raise ValueError(f"pca_projection: need more than {k} points, got {n}")
    mean = x.mean(axis=0)
    xc = x - mean
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    var_all = s ** 2 / (n - 1)
    tol = (s[0] if s.size else 0.0) * max(n, dim) * np.finfo(np.float64).eps
    comps = np.zeros((k, dim))
    var = np.zeros(k)
    m = min(k, len(s))
    for i in range(m):
        if s[i] <= tol:
            continue
        v = vt[i]
        j = np.argmax(np.abs(v))
        comps[i] = v if v[j] > 0 else -v
        var[i] = var_all[i]
    total = var_all.sum()
    ratio = var / total if total > 0 else np.zeros(k)
    return PCAResult(xc @ comps.T, comps, var, ratio, mean, bool(np.count_nonzero(var) < k))


# --- salience --------------------------------------------------------------------


def salience_map(generator, image, tile: int = 256) -> np.ndarray:
    """Per-input-pixel L2 norm of the generator Jacobian.

    For input pixel (h, w) the value is the norm of dG(x)[o] / dx[c, h, w]
    over every output element o and input channel c. The Jacobian is formed
    exactly: each pass stacks ``tile`` copies of the input, copy t probing
    one output element, and one backward pass yields those ``tile`` rows.
    NetworkParams generators run in eval mode so that copies are
    independent.
    """
    fn = _as_fn(generator)
    x = np.asarray(image)
    if x.ndim != 3:
        raise ValueError(f"salience_map: expected one (C, H, W) image, got {x.shape}")
    probe = fn(Tensor(x[None]))
    n_out = probe.data[0].size
    sq = np.zeros(x.shape, dtype=np.float64)
    for start in range(0, n_out, tile):
        idx = np.arange(start, min(start + tile, n_out))
        batch = Tensor(np.repeat(x[None], len(idx), axis=0), requires_grad=True)
        out = fn(batch).reshape(len(idx), -1)
        pick = out.data.dtype.type(1)
        sel = np.zeros(out.shape, dtype=out.dtype)
        sel[np.arange(len(idx)), idx] = pick
        loss = (out * Tensor(sel)).sum()
        g = backward(loss, {"x": batch})["x"].astype(np.float64)
        sq += (g * g).sum(axis=0)
    return np.sqrt(sq.sum(axis=0))


# --- manipulation consistency -------------------------------------------------------


@dataclass
class ManipulationReport:
    manipulated: list
    detected: list
    accuracy: float
    rank_correlation: float
    chance_level: float
    at_chance: bool
    cell_scores: np.ndarray = field(repr=False)

    @property
    def detections(self):
        return len(self.detected)

    def to_dict(self):
        rc = None if np.isnan(self.rank_correlation) else self.rank_correlation
        return {"manipulated": [list(c) for c in self.manipulated], "detected": [list(c) for c in self.detected],
                "accuracy": self.accuracy, "rank_correlation": rc, "chance_level": self.chance_level,
                "at_chance": self.at_chance}


def cell_change_scores(out, base_out, geo: BoardGeometry):
    """Mean absolute difference per board cell, (grid, grid)."""
    diff = np.abs(np.asarray(out, dtype=np.float64) - np.asarray(base_out, dtype=np.float64))
    scores = np.zeros((geo.grid, geo.grid))
    for r in range(geo.grid):
        for c in range(geo.grid):
            y0, y1, x0, x1 = geo.cell_box(r, c)
            scores[r, c] = diff[..., y0:y1, x0:x1].mean()
    return scores


def manipulation_consistency(generator, sequence, factor_path, base_image) -> ManipulationReport:
    """Localize each frame's strongest output change against the base output.

    ``sequence`` holds [-1, 1] frames (N, C, d, d), ``factor_path`` the moved
    cell of each frame and ``base_image`` the frame-free base. The detected
    cell is the argmax of per-cell mean absolute difference, ties going to
    the lowest row and then the lowest column. The rank correlation is
    Spearman's between row-major indices of manipulated and detected cells
    (nan when either is constant). ``at_chance`` is set when accuracy does
    not exceed 1 / num_cells.
    """
    frames = np.asarray(sequence)
    if len(frames) != len(factor_path):
        raise ValueError(f"{len(frames)} frames but {len(factor_path)} path cells")
    run = _numpy_fn(generator)
    outs = run(np.concatenate([np.asarray(base_image)[None], frames]).astype(frames.dtype))
    base_out, outs = to_unit(outs[0]), to_unit(outs[1:])
    geo = BoardGeometry(frames.shape[-1])
    detected, all_scores = [], []
    for o in outs:
        s = cell_change_scores(o, base_out, geo)
        flat = int(np.argmax(s))  # first maximum in row-major order
        detected.append(divmod(flat, geo.grid))
        all_scores.append(s)
    path = [tuple(map(int, c)) for c in factor_path]
    hits = sum(d == p for d, p in zip(detected, path))
    accuracy = hits / len(path) if path else float("nan")
    rc = float("nan")
    if len(path) >= 2:
        a = [r * geo.grid + c for r, c in path]
        b = [r * geo.grid + c for r, c in detected]
        if len(set(a)) > 1 and len(set(b)) > 1:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                rc = float(spearmanr(a, b).statistic)
    chance = 1.0 / (geo.grid * geo.grid)
    return ManipulationReport(path, detected, accuracy, rc, chance,
                              bool(not accuracy > chance + 1e-12), np.array(all_scores))
