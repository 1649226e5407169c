"""Image ingestion, synthetic bead/grid domains and seeded batch sampling.

The two synthetic domains render the same latent factors (which cells of a
3x3 board are occupied, and a palette) in different styles:

* beads: anti-aliased discs threaded on horizontal rods over a dark board,
  any occupancy pattern allowed;
* grid: light squares in a dark lattice, occupancy restricted to
  4-connected patterns (a crossword-like constraint).

Every renderer accepts every factor record, which makes paired ground truth
available for evaluation even though training is unpaired.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

DOMAINS = ("beads", "grid")
GRID = 3

# per palette: three object colours (RGB 0-255)
PALETTES = (
    ((230, 80, 60), (240, 200, 70), (90, 170, 230)),
    ((120, 220, 110), (230, 120, 200), (250, 250, 250)),
    ((250, 150, 50), (80, 110, 240), (200, 230, 90)),
    ((210, 210, 220), (240, 90, 120), (60, 200, 190)),
)
BACKGROUNDS = {
    "beads": ((48, 32, 24), (30, 36, 52), (40, 44, 30)),
    "grid": ((18, 18, 22), (28, 22, 36), (14, 26, 24)),
}
ROD = (150, 120, 80)
LATTICE = (70, 70, 80)


class DataError(ValueError):
    """Unreadable input, empty dataset, or invalid synthetic configuration."""


@dataclass
class FactorRecord:
    cells: list  # [(row, col), ...] in object order
    centroids: list  # [(y, x), ...] pixel coordinates, same order
    count: int
    palette: int
    background: int

    def to_dict(self):
        d = asdict(self)
        d["cells"] = [list(c) for c in self.cells]
        d["centroids"] = [list(c) for c in self.centroids]
        return d

    @classmethod
    def from_dict(cls, d):
        return cls([tuple(c) for c in d["cells"]], [tuple(c) for c in d["centroids"]],
                   int(d["count"]), int(d["palette"]), int(d["background"]))


@dataclass(frozen=True)
class BoardGeometry:
    image_size: int = 32
    grid: int = GRID

    @property
    def cell(self):
        return self.image_size // self.grid

    @property
    def offset(self):
        return (self.image_size - self.cell * self.grid) // 2

    def cell_box(self, row, col):
        """(y0, y1, x0, x1) pixel bounds of a cell, half-open."""
        y0 = self.offset + row * self.cell
        x0 = self.offset + col * self.cell
        return y0, y0 + self.cell, x0, x0 + self.cell

    def centroid(self, row, col):
        y0, y1, x0, x1 = self.cell_box(row, col)
        return ((y0 + y1 - 1) / 2.0, (x0 + x1 - 1) / 2.0)

    def check_cell(self, row, col):
        if not (0 <= row < self.grid and 0 <= col < self.grid):
            raise DataError(f"cell ({row}, {col}) outside the {self.grid}x{self.grid} board")


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "beads"
    count: int = 512
    seed: int = 0
    image_size: int = 32
    min_objects: int = 3
    max_objects: int = 6

    def __post_init__(self):
        if self.kind not in DOMAINS:
            raise DataError(f"unknown synthetic domain {self.kind!r}")
        if self.count < 0:
            raise DataError(f"count must be non-negative, got {self.count}")
        capacity = GRID * GRID
        if not 0 <= self.min_objects <= self.max_objects:
            raise DataError(f"bad object range [{self.min_objects}, {self.max_objects}]")
        if self.max_objects > capacity:
            raise DataError(f"max_objects {self.max_objects} exceeds grid capacity {capacity}")


# --- rendering -----------------------------------------------------------


def _fill(img, color):
    img[...] = np.asarray(color, dtype=np.float64)


def _render_beads(rec: FactorRecord, geo: BoardGeometry):
    d = geo.image_size
    img = np.empty((d, d, 3))
    _fill(img, BACKGROUNDS["beads"][rec.background])
    rod_w = max(1, geo.cell // 8)
    for r in range(geo.grid):
        cy = int(round(geo.centroid(r, 0)[0]))
        img[cy - rod_w // 2: cy - rod_w // 2 + rod_w, geo.offset: geo.offset + geo.cell * geo.grid] = ROD
    yy, xx = np.mgrid[0:d, 0:d].astype(np.float64)
    radius = 0.38 * geo.cell
    palette = PALETTES[rec.palette]
    for k, (r, c) in enumerate(rec.cells):
        cy, cx = geo.centroid(r, c)
        dist = np.hypot(yy - cy, xx - cx)
        alpha = np.clip(radius + 0.5 - dist, 0.0, 1.0)[..., None]
        img = img * (1 - alpha) + alpha * np.asarray(palette[k % len(palette)], dtype=np.float64)
    return img


def _render_grid(rec: FactorRecord, geo: BoardGeometry):
    d = geo.image_size
    img = np.empty((d, d, 3))
    _fill(img, BACKGROUNDS["grid"][rec.background])
    for r in range(geo.grid):
        for c in range(geo.grid):
            y0, y1, x0, x1 = geo.cell_box(r, c)
            img[y0:y1, x0] = LATTICE
            img[y0:y1, x1 - 1] = LATTICE
            img[y0, x0:x1] = LATTICE
            img[y1 - 1, x0:x1] = LATTICE
    tint = np.asarray(PALETTES[rec.palette][0], dtype=np.float64)
    light = 0.65 * 255 + 0.35 * tint
    for r, c in rec.cells:
        y0, y1, x0, x1 = geo.cell_box(r, c)
        img[y0 + 1:y1 - 1, x0 + 1:x1 - 1] = light
    return img


RENDERERS = {"beads": _render_beads, "grid": _render_grid}


def render_factors(rec: FactorRecord, domain: str, image_size: int = 32) -> np.ndarray:
    """Render a factor record in ``domain`` as a uint8 (d, d, 3) image."""
    geo = BoardGeometry(image_size)
    for r, c in rec.cells:
        geo.check_cell(r, c)
    img = RENDERERS[domain](rec, geo)
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


def _connected_cells(rng, k, grid):
    cells = [(int(rng.integers(grid)), int(rng.integers(grid)))]
    while len(cells) < k:
        frontier = sorted({(r + dr, c + dc) for r, c in cells
                           for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1))
                           if 0 <= r + dr < grid and 0 <= c + dc < grid} - set(cells))
        cells.append(frontier[int(rng.integers(len(frontier)))])
    return cells


def sample_factors(spec: DatasetSpec, rng) -> FactorRecord:
    geo = BoardGeometry(spec.image_size)
    k = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    if spec.kind == "grid":
        cells = _connected_cells(rng, k, geo.grid) if k else []
    else:
        flat = rng.choice(geo.grid * geo.grid, size=k, replace=False)
        cells = [(int(i) // geo.grid, int(i) % geo.grid) for i in flat]
    return FactorRecord(cells=cells, centroids=[geo.centroid(r, c) for r, c in cells], count=k,
                        palette=int(rng.integers(len(PALETTES))),
                        background=int(rng.integers(len(BACKGROUNDS[spec.kind]))))


def gen_domain(spec: DatasetSpec):
    """Images (uint8, N x d x d x 3) and factor records of a synthetic domain."""
    rng = np.random.default_rng([spec.seed, DOMAINS.index(spec.kind)])
    records = [sample_factors(spec, rng) for _ in range(spec.count)]
    d = spec.image_size
    images = np.stack([render_factors(r, spec.kind, d) for r in records]) if records else \
        np.zeros((0, d, d, 3), dtype=np.uint8)
    return images, records


def gen_beads_domain(spec: DatasetSpec):
    return gen_domain(DatasetSpec(**{**asdict(spec), "kind": "beads"}))


def gen_grid_domain(spec: DatasetSpec):
    return gen_domain(DatasetSpec(**{**asdict(spec), "kind": "grid"}))


def manipulation_sequence(base: FactorRecord, cell_path, domain: str = "grid", image_size: int = 32):
    """Frames with one extra object moved along ``cell_path`` over a fixed base.

    The moving object is drawn after the base objects, so it keeps one
    palette colour throughout. Path cells must be free in the base record.
    """
    geo = BoardGeometry(image_size)
    occupied = set(map(tuple, base.cells))
    frames = []
    for r, c in cell_path:
        geo.check_cell(r, c)
        if (r, c) in occupied:
            raise DataError(f"path cell ({r}, {c}) is occupied in the base record")
        cells = list(base.cells) + [(r, c)]
        rec = FactorRecord(cells, [geo.centroid(*rc) for rc in cells], len(cells), base.palette, base.background)
        frames.append(render_factors(rec, domain, image_size))
    return frames


def full_board_path(grid: int = GRID):
    """Row-major path through every cell of the board."""
    return [(r, c) for r in range(grid) for c in range(grid)]


def empty_record(palette=0, background=0):
    return FactorRecord([], [], 0, palette, background)


# --- tensors <-> images ----------------------------------------------------


def to_tensor(images) -> np.ndarray:
    """uint8 (N, d, d, 3) or (d, d, 3) -> float32 NCHW / CHW in [-1, 1]."""
    arr = np.asarray(images, dtype=np.float32) / 127.5 - 1.0
    return np.ascontiguousarray(np.moveaxis(arr, -1, -3))


def to_uint8(tensors) -> np.ndarray:
    """Inverse of ``to_tensor`` with rounding and clipping."""
    arr = (np.asarray(tensors, dtype=np.float64) + 1.0) * 127.5
    return np.clip(np.round(np.moveaxis(arr, -3, -1)), 0, 255).astype(np.uint8)


def to_unit(tensors) -> np.ndarray:
    """[-1, 1] -> [0, 1] (float64), layout unchanged."""
    return (np.asarray(tensors, dtype=np.float64) + 1.0) / 2.0


# --- folders ---------------------------------------------------------------


def center_crop(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    s = min(h, w)
    y0, x0 = (h - s) // 2, (w - s) // 2
    return img[y0:y0 + s, x0:x0 + s]


def _interp_weights(n_in, n_out):
    # half-pixel centres: output i samples input coordinate (i + 0.5) * n_in / n_out - 0.5
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def bilinear_resize(img: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of an (H, W, C) float image to (size, size, C).

    Sample positions use half-pixel centres and are clamped to the image, so
    edge pixels replicate. Rows are interpolated first, then columns.
    """
    img = np.asarray(img, dtype=np.float64)
    ylo, yhi, fy = _interp_weights(img.shape[0], size)
    xlo, xhi, fx = _interp_weights(img.shape[1], size)
    rows = img[ylo] * (1 - fy)[:, None, None] + img[yhi] * fy[:, None, None]
    return rows[:, xlo] * (1 - fx)[None, :, None] + rows[:, xhi] * fx[None, :, None]


def load_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except Exception as exc:  # PIL raises a variety of types
        raise DataError(f"cannot decode image {path}: {exc}") from exc


def load_image_folder(path, d: int):
    """PNG files of a folder as CHW float32 tensors in [-1, 1], sorted by filename.

    Returns ``(tensors, manifest)`` where the manifest lists the filenames.
    """
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"image folder {root} does not exist")
    files = sorted(p for p in root.iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise DataError(f"image folder {root} contains no PNG files")
    out = []
    for f in files:
        img = center_crop(load_png(f)).astype(np.float64)
        if img.shape[0] != d:
            img = bilinear_resize(img, d)
        out.append((img / 127.5 - 1.0).transpose(2, 0, 1).astype(np.float32))
    return out, {"files": [f.name for f in files], "image_size": d}


def save_png(img_uint8, path):
    Image.fromarray(np.asarray(img_uint8, dtype=np.uint8)).save(path, format="PNG", optimize=False)


def export_domain(images, records, folder):
    """Write ``00000.png ...`` plus ``factors.json`` (one record per image)."""
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    names = []
    for i, img in enumerate(images):
        name = f"{i:05d}.png"
        save_png(img, folder / name)
        names.append(name)
    manifest = [{"file": n, **r.to_dict()} for n, r in zip(names, records)]
    (folder / "factors.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return names


def load_factors(folder):
    path = Path(folder) / "factors.json"
    if not path.exists():
        return None
    return [FactorRecord.from_dict(d) for d in json.loads(path.read_text())]


# --- batching ----------------------------------------------------------------


@dataclass(frozen=True)
class BatchSchedule:
    """Epoch-wise seeded permutations with the remainder batch dropped.

    Batch indices are a pure function of (seed, stream, step), so a stream
    can be resumed at any step.
    """

    size: int
    batch_size: int
    seed: int
    stream: int = 0
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.batch_size < 1 or self.size < self.batch_size:
            raise DataError(f"dataset of {self.size} items cannot fill a batch of {self.batch_size}")

    @property
    def batches_per_epoch(self):
        return self.size // self.batch_size

    def permutation(self, epoch):
        if epoch not in self._cache:
            self._cache.clear()
            rng = np.random.default_rng([self.seed & (2 ** 64 - 1), self.stream, epoch])
            self._cache[epoch] = rng.permutation(self.size)
        return self._cache[epoch]

    def indices_at(self, step):
        epoch, k = divmod(step, self.batches_per_epoch)
        return self.permutation(epoch)[k * self.batch_size:(k + 1) * self.batch_size]


def batch_sampler(dataset, batch_size, seed, start_step=0, stream=0):
    """Endless deterministic stream of batches drawn from ``dataset``."""
    data = np.asarray(dataset)
    sched = BatchSchedule(len(data), batch_size, seed, stream)
    step = start_step
    while True:
        yield data[sched.indices_at(step)]
        step += 1
