"""Paired-image datasets whose mutual information is known exactly.

Glyph datasets place one procedurally drawn character per alphabet either in
a spatial grid or stacked along the channel axis; ``y`` always shows the next
character (cyclically) of the one shown in ``x``, so I(x; y) equals the
latent entropy, sum_i ln l_i. The shapes dataset is a flat 2-D scene with the
factor cardinalities of Shapes3D, rendered from the two extreme views.
"""
from __future__ import annotations

import colorsys
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
SHAPES_CARDINALITIES = (10, 10, 10, 4, 6, 15)
SHAPES_VIEWS = (0, 14)
OMNIGLOT_TOP9 = (55, 52, 48, 47, 46, 43, 42, 41, 41)


class IngestionError(OSError):
    pass


@dataclass
class GlyphDatasetSpec:
    alphabet_sizes: list[int]
    layout: str = "stacked"
    grid: tuple[int, int] | None = None
    cell_px: int = 32
    n_samples: int = 1024
    seed: int = 0
    jitter: float = 0.0
    distortion: float = 0.0

    def __post_init__(self):
        self.alphabet_sizes = [int(s) for s in self.alphabet_sizes]
        if any(s < 1 for s in self.alphabet_sizes):
            raise ValueError("alphabet sizes must be positive")
        if self.layout not in ("spatial", "stacked"):
            raise ValueError(f"unknown layout {self.layout!r}")
        if self.layout == "spatial":
            if self.grid is None:
                self.grid = (1, len(self.alphabet_sizes))
            self.grid = tuple(int(g) for g in self.grid)
            if self.grid[0] * self.grid[1] != len(self.alphabet_sizes):
                raise ValueError(
                    f"grid {self.grid} holds {self.grid[0] * self.grid[1]} cells "
                    f"but {len(self.alphabet_sizes)} alphabets were given"
                )
        if self.n_samples < 1 or self.cell_px < 4:
            raise ValueError("n_samples must be >= 1 and cell_px >= 4")
        if self.jitter < 0 or self.distortion < 0:
            raise ValueError("jitter and distortion must be nonnegative")

    @property
    def image_shape(self) -> tuple[int, int, int]:
        k, c = len(self.alphabet_sizes), self.cell_px
        if self.layout == "stacked":
            return (c, c, k)
        m, n = self.grid
        return (c * m, c * n, 1)


@dataclass
class ShapesDatasetSpec:
    n_samples: int = 1024
    seed: int = 0
    image_px: int = 32
    factor_cardinalities: tuple[int, ...] = SHAPES_CARDINALITIES

    def __post_init__(self):
        if tuple(self.factor_cardinalities) != SHAPES_CARDINALITIES:
            raise ValueError(f"shapes factors are fixed at {SHAPES_CARDINALITIES}")
        self.factor_cardinalities = SHAPES_CARDINALITIES
        if self.n_samples < 1 or self.image_px < 8:
            raise ValueError("n_samples must be >= 1 and image_px >= 8")


@dataclass
class PairDataset:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    mi_certificate: float
    factor_cardinalities: list[int]
    spec: dict = field(default_factory=dict)

    def __len__(self):
        return self.x.shape[0]

    def save(self, path) -> None:
        header = {
            "spec": self.spec,
            "seed": self.spec.get("seed"),
            "mi_certificate": self.mi_certificate,
            "factor_cardinalities": list(self.factor_cardinalities),
            "format_version": FORMAT_VERSION,
        }
        with open(path, "wb") as fh:
            np.savez_compressed(fh, x=self.x, y=self.y, z=self.z, header=np.array(json.dumps(header)))

    @classmethod
    def load(cls, path) -> "PairDataset":
        with np.load(path, allow_pickle=False) as arc:
            header = json.loads(str(arc["header"]))
            if header.get("format_version") != FORMAT_VERSION:
                raise ValueError(f"unsupported dataset format {header.get('format_version')!r}")
            return cls(arc["x"], arc["y"], arc["z"], float(header["mi_certificate"]),
                       header["factor_cardinalities"], header["spec"])


def mi_of_spec(spec) -> float:
    """Analytic I(x; y) in nats for a glyph spec, shapes spec, or list of alphabet sizes."""
    if isinstance(spec, ShapesDatasetSpec):
        return float(sum(math.log(c) for c in spec.factor_cardinalities[:5]))
    sizes = spec.alphabet_sizes if isinstance(spec, GlyphDatasetSpec) else spec
    return float(sum(math.log(s) for s in sizes))


# -- glyph rendering ---------------------------------------------------------

N_STROKE_POINTS = 5


def _stroke_points(alphabet_id: int, char_id: int) -> np.ndarray:
    """Control points (in cell units) of the pen trace for one character."""
    rng = np.random.default_rng([alphabet_id, char_id, 0x67])
    return rng.uniform(0.15, 0.85, size=(N_STROKE_POINTS, 2))


def _draw_strokes(points: np.ndarray, cell_px: int) -> np.ndarray:
    """Rasterize polylines; ``points`` is (..., N_STROKE_POINTS, 2) in cell units."""
    lead = points.shape[:-2]
    pts = points.reshape(-1, N_STROKE_POINTS, 2) * cell_px
    grid = np.stack(np.meshgrid(np.arange(cell_px), np.arange(cell_px), indexing="ij"), -1).reshape(-1, 2) + 0.5
    dist = np.full((pts.shape[0], grid.shape[0]), np.inf)
    for s in range(N_STROKE_POINTS - 1):
        a, b = pts[:, s, None, :], pts[:, s + 1, None, :]
        ab = b - a
        t = np.clip(((grid - a) * ab).sum(-1) / np.maximum((ab * ab).sum(-1), 1e-12), 0.0, 1.0)
        dist = np.minimum(dist, np.linalg.norm(grid - (a + t[..., None] * ab), axis=-1))
    width = cell_px / 24.0
    img = np.clip(1.0 + width - dist, 0.0, 1.0)
    return img.reshape(*lead, cell_px, cell_px)


def _base_glyph(alphabet_id: int, char_id: int, cell_px: int) -> np.ndarray:
    return _draw_strokes(_stroke_points(alphabet_id, char_id), cell_px)


def render_glyph(alphabet_id: int, char_id: int, cell_px: int = 32, jitter_seed: int = 0,
                 jitter: float = 0.0, alphabet_size: int | None = None) -> np.ndarray:
    """Draw character ``char_id`` of alphabet ``alphabet_id`` as a (cell_px, cell_px, 1) image.

    The stroke pattern is a fixed function of (alphabet_id, char_id); ``jitter``
    adds uniform pixel noise in [-jitter, jitter] drawn from ``jitter_seed``.
    """
    if char_id < 0 or (alphabet_size is not None and char_id >= alphabet_size):
        raise ValueError(f"char_id {char_id} out of range for alphabet of size {alphabet_size}")
    img = _base_glyph(alphabet_id, char_id, cell_px)
    if jitter > 0:
        noise = np.random.default_rng(jitter_seed).uniform(-jitter, jitter, size=img.shape)
        img = np.clip(img + noise, 0.0, 1.0)
    return img[..., None]


def _glyph_bank(alphabet_sizes: Sequence[int], cell_px: int) -> list[np.ndarray]:
    return [np.stack([_base_glyph(i, c, cell_px) for c in range(size)])
            for i, size in enumerate(alphabet_sizes)]


def _render_cells(codes: np.ndarray, spec: GlyphDatasetSpec, rng: np.random.Generator) -> list[np.ndarray]:
    """One (n, c, c) array of drawn characters per alphabet."""
    cells = []
    for i, size in enumerate(spec.alphabet_sizes):
        protos = np.stack([_stroke_points(i, c) for c in range(size)])
        pts = protos[codes[:, i]]
        if spec.distortion > 0:
            pts = pts + rng.normal(scale=spec.distortion, size=pts.shape)
        cells.append(_draw_strokes(pts, spec.cell_px))
    return cells


def _compose(cells: list[np.ndarray], spec: GlyphDatasetSpec) -> np.ndarray:
    if spec.layout == "stacked":
        return np.stack(cells, axis=-1)
    c = spec.cell_px
    m, cols = spec.grid
    out = np.zeros((cells[0].shape[0], c * m, c * cols, 1))
    for i, cell in enumerate(cells):
        r, q = divmod(i, cols)
        out[:, r * c:(r + 1) * c, q * c:(q + 1) * c, 0] = cell
    return out


def generate_glyph_pairs(spec: GlyphDatasetSpec) -> PairDataset:
    """Sample z uniformly, draw character z_i in x and (z_i + 1) mod l_i in y.

    With ``distortion`` > 0 every drawing (x and y separately) perturbs the
    character's stroke control points, like different people writing it.
    """
    sizes = np.array(spec.alphabet_sizes, dtype=np.int64)
    rng = np.random.default_rng(spec.seed)
    z = rng.integers(0, sizes, size=(spec.n_samples, sizes.size)) if sizes.size else \
        np.zeros((spec.n_samples, 0), dtype=np.int64)
    x = _compose(_render_cells(z, spec, rng), spec)
    y = _compose(_render_cells((z + 1) % sizes, spec, rng), spec)
    if spec.jitter > 0:
        x = np.clip(x + rng.uniform(-spec.jitter, spec.jitter, size=x.shape), 0.0, 1.0)
        y = np.clip(y + rng.uniform(-spec.jitter, spec.jitter, size=y.shape), 0.0, 1.0)
    return PairDataset(
        x.astype(np.float32), y.astype(np.float32), z, mi_of_spec(spec),
        list(spec.alphabet_sizes), {"family": "glyph", **asdict(spec)},
    )


def decode_glyphs(images: np.ndarray, spec: GlyphDatasetSpec) -> np.ndarray:
    """Nearest-neighbour character indices against jitter-free renders."""
    bank = _glyph_bank(spec.alphabet_sizes, spec.cell_px)
    c = spec.cell_px
    codes = np.zeros((images.shape[0], len(bank)), dtype=np.int64)
    for i, glyphs in enumerate(bank):
        if spec.layout == "stacked":
            cells = images[..., i]
        else:
            r, q = divmod(i, spec.grid[1])
            cells = images[:, r * c:(r + 1) * c, q * c:(q + 1) * c, 0]
        d = ((cells[:, None] - glyphs[None]) ** 2).sum(axis=(2, 3))
        codes[:, i] = d.argmin(axis=1)
    return codes


def independent_pairs(dataset: PairDataset, seed: int = 0) -> PairDataset:
    """Break the pairing by permuting y; the generating process then has zero MI."""
    perm = np.random.default_rng(seed).permutation(len(dataset))
    spec = dict(dataset.spec, shuffled_seed=seed)
    return PairDataset(dataset.x, dataset.y[perm], dataset.z, 0.0,
                       list(dataset.factor_cardinalities), spec)


# -- shapes --------------------------------------------------------------------

def _hue_rgb(index: int, n: int) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(index / n, 0.85, 0.9))


def render_shapes_scene(factors: Sequence[int], image_px: int = 32) -> np.ndarray:
    """Render one (object hue, wall hue, floor hue, shape, size, view) scene as (px, px, 3)."""
    obj, wall, floor, shape, size, view = (int(f) for f in factors)
    px = image_px
    n_views = SHAPES_CARDINALITIES[5]
    rows, cols = np.meshgrid(np.arange(px) + 0.5, np.arange(px) + 0.5, indexing="ij")
    tilt = (view / (n_views - 1) - 0.5) * 0.6
    horizon = px * 0.6 + tilt * (cols - px / 2)
    img = np.where((rows >= horizon)[..., None], _hue_rgb(floor, 10), _hue_rgb(wall, 10))

    cx = px / 2 + (view / (n_views - 1) - 0.5) * px * 0.4
    cy = px * 0.55
    radius = px * (0.12 + 0.03 * size)
    u = (cols - cx) / radius
    v = (rows - cy) / radius
    # the view also foreshortens the object horizontally
    u = u / (1.0 - 0.35 * abs(view / (n_views - 1) - 0.5) * 2)
    if shape == 0:
        mask = (np.abs(u) <= 1) & (np.abs(v) <= 1)
    elif shape == 1:
        mask = u ** 2 + v ** 2 <= 1
    elif shape == 2:
        mask = (v <= 1) & (v >= -1) & (np.abs(u) <= (v + 1) / 2)
    else:
        mask = np.abs(u) + np.abs(v) <= 1
    img = np.where(mask[..., None], _hue_rgb(obj, 10), img)
    return img


def generate_shapes_pairs(spec: ShapesDatasetSpec) -> PairDataset:
    rng = np.random.default_rng(spec.seed)
    z = rng.integers(0, SHAPES_CARDINALITIES[:5], size=(spec.n_samples, 5))
    x = np.stack([render_shapes_scene((*f, SHAPES_VIEWS[0]), spec.image_px) for f in z])
    y = np.stack([render_shapes_scene((*f, SHAPES_VIEWS[1]), spec.image_px) for f in z])
    return PairDataset(
        x.astype(np.float32), y.astype(np.float32), z, mi_of_spec(spec),
        list(SHAPES_CARDINALITIES[:5]),
        {"family": "shapes", **{k: v for k, v in asdict(spec).items()}},
    )


def generate(spec) -> PairDataset:
    if isinstance(spec, ShapesDatasetSpec):
        return generate_shapes_pairs(spec)
    return generate_glyph_pairs(spec)


# -- real omniglot ---------------------------------------------------------------

@dataclass
class OmniglotAlphabet:
    name: str
    characters: list[Path]

    @property
    def size(self) -> int:
        return len(self.characters)


def load_omniglot(directory_path) -> list[OmniglotAlphabet]:
    """Scan an Omniglot ``alphabet/character/*.png`` tree, largest alphabet first.

    ``images_background``/``images_evaluation`` container folders are merged.
    """
    root = Path(directory_path)
    if not root.is_dir():
        raise IngestionError(f"omniglot directory not found: {root}")
    candidates = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        if sub.name.startswith("images_"):
            candidates.extend(sorted(p for p in sub.iterdir() if p.is_dir()))
        else:
            candidates.append(sub)
    table = []
    for alpha in candidates:
        chars = sorted(c for c in alpha.iterdir() if c.is_dir() and any(c.glob("*.png")))
        if not chars:
            logger.warning("skipping %s: no character folders with png samples", alpha)
            continue
        table.append(OmniglotAlphabet(alpha.name, chars))
    if not table:
        raise IngestionError(f"no omniglot alphabets found under {root}")
    table.sort(key=lambda a: (-a.size, a.name))
    return table
