"""Synthetic tagged/cine phantoms, unpaired datasets, normalization and PNG IO."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import ConfigError, DataError, NoReferenceError


class Modality(str, enum.Enum):
    TAGGED = "TAGGED"
    CINE = "CINE"
    SYNTH_OUT = "SYNTH_OUT"


@dataclass
class Image:
    """Single-channel image with pixels in [-1, 1]."""

    pixels: np.ndarray
    modality: Modality = Modality.CINE

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 2:
            raise ValueError(f"image must be 2-D, got shape {self.pixels.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class PhantomSpec:
    canvas_size: int = 64
    n_shapes: int = 4
    # shape count per phantom is drawn uniformly from [min_shapes, n_shapes]
    min_shapes: int = 1
    shape_intensity_range: tuple[float, float] = (0.35, 1.0)
    tag_period: float = 6.0
    tag_depth: float = 0.6
    tag_angle: float = 0.0
    noise_std: float = 0.02
    edge_softness: float = 0.08
    # dim tissue floor; an exactly black field makes SSIM hinge on sub-gray-level offsets
    background_level: float = 0.1

    def validate(self) -> None:
        if self.canvas_size < 16:
            raise ConfigError(f"canvas_size must be >= 16, got {self.canvas_size}")
        if not 1 <= self.min_shapes <= self.n_shapes:
            raise ConfigError(
                f"need 1 <= min_shapes <= n_shapes, got min_shapes={self.min_shapes}, n_shapes={self.n_shapes}"
            )
        lo, hi = self.shape_intensity_range
        if not 0.0 < lo <= hi <= 1.0:
            raise ConfigError(f"shape_intensity_range must satisfy 0 < lo <= hi <= 1, got {(lo, hi)}")
        if self.tag_period < 2.0:
            raise ConfigError(f"tag_period must be >= 2 pixels, got {self.tag_period}")
        if not 0.0 <= self.tag_depth <= 1.0:
            raise ConfigError(f"tag_depth must be in [0, 1], got {self.tag_depth}")
        if self.noise_std < 0.0:
            raise ConfigError(f"noise_std must be >= 0, got {self.noise_std}")
        if not 0.0 <= self.background_level < lo:
            raise ConfigError(f"background_level must be in [0, {lo}), got {self.background_level}")
        if self.edge_softness <= 0.0:
            raise ConfigError(f"edge_softness must be > 0, got {self.edge_softness}")

    @property
    def n_count_classes(self) -> int:
        return self.n_shapes - self.min_shapes + 1


# -- normalization -----------------------------------------------------------

def normalize(raw, modality: Modality = Modality.CINE) -> Image:
    """Map a [0, 255] array linearly onto [-1, 1]."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size and (not np.all(np.isfinite(raw)) or raw.min() < 0.0 or raw.max() > 255.0):
        raise ValueError(f"raw values must lie in [0, 255], got range [{raw.min()}, {raw.max()}]")
    return Image(raw / 127.5 - 1.0, modality)


def denormalize(img: Image | np.ndarray) -> np.ndarray:
    pixels = img.pixels if isinstance(img, Image) else np.asarray(img)
    return np.clip((np.asarray(pixels, dtype=np.float64) + 1.0) * 127.5, 0.0, 255.0)


def to_uint8(img: Image | np.ndarray) -> np.ndarray:
    return np.rint(denormalize(img)).astype(np.uint8)


# -- phantoms ----------------------------------------------------------------

def stripe_field(spec: PhantomSpec, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Multiplicative tag modulation 1 - depth*(0.5 + 0.5*cos(2*pi*axis/period))."""
    h, w = shape or (spec.canvas_size, spec.canvas_size)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    theta = math.radians(spec.tag_angle)
    # angle 0 -> axis is the row coordinate, i.e. horizontal stripes
    axis = yy * math.cos(theta) + xx * math.sin(theta)
    return 1.0 - spec.tag_depth * (0.5 + 0.5 * np.cos(2.0 * math.pi * axis / spec.tag_period))


def _structure(spec: PhantomSpec, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    s = spec.canvas_size
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    canvas = np.full((s, s), spec.background_level)
    count = int(rng.integers(spec.min_shapes, spec.n_shapes + 1))
    lo, hi = spec.shape_intensity_range
    for _ in range(count):
        cy, cx = rng.uniform(0.2 * s, 0.8 * s, size=2)
        a, b = rng.uniform(0.07 * s, 0.2 * s, size=2)
        phi = rng.uniform(0.0, math.pi)
        level = rng.uniform(lo, hi)
        dy, dx = yy - cy, xx - cx
        u = dx * math.cos(phi) + dy * math.sin(phi)
        v = -dx * math.sin(phi) + dy * math.cos(phi)
        r = np.sqrt((u / a) ** 2 + (v / b) ** 2)
        blob = level / (1.0 + np.exp(np.clip((r - 1.0) / spec.edge_softness, -60.0, 60.0)))
        canvas = np.maximum(canvas, blob)
    return canvas, count


def generate_phantom_pair(spec: PhantomSpec, seed: int, *, return_count: bool = False):
    """Generate a (cine, tagged) pair sharing one anatomy.

    The cine image is a max-composition of soft-edged ellipses on a dark
    background of ``background_level``. The tagged image is the same canvas multiplied by
    ``stripe_field(spec)`` plus Gaussian noise, clipped to the valid range.
    Output is a pure function of ``(spec, seed)``.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    unit, count = _structure(spec, rng)
    tagged = unit * stripe_field(spec)
    if spec.noise_std > 0:
        tagged = tagged + rng.normal(0.0, spec.noise_std, size=tagged.shape)
    tagged = np.clip(tagged, 0.0, 1.0)
    cine_img = Image(unit * 2.0 - 1.0, Modality.CINE)
    tagged_img = Image(tagged * 2.0 - 1.0, Modality.TAGGED)
    if return_count:
        return cine_img, tagged_img, count
    return cine_img, tagged_img


# -- datasets ----------------------------------------------------------------

# generation-seed offsets per split; splits never share seeds
_SPLIT_OFFSETS = {"train_tagged": 0, "train_cine": 1_000_000, "val": 2_000_000, "eval": 3_000_000}
_SEED_STRIDE = 10_000_000


def split_seeds(seed: int, split: str, n: int) -> list[int]:
    base = seed * _SEED_STRIDE + _SPLIT_OFFSETS[split]
    return [base + i for i in range(n)]


@dataclass
class UnpairedDataset:
    tagged_items: list[Image]
    cine_items: list[Image]
    eval_pairs: list[tuple[Image, Image]] = field(default_factory=list)
    val_pairs: list[tuple[Image, Image]] = field(default_factory=list)
    tagged_seeds: list[int] = field(default_factory=list)
    cine_seeds: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.tagged_items or not self.cine_items:
            raise DataError("dataset needs at least one tagged and one cine training image")

    @property
    def paired_eval_map(self) -> dict[int, Image] | None:
        """Eval-tagged index -> ground-truth cine. Never handed to the trainer."""
        if not self.eval_pairs:
            return None
        return {i: cine for i, (_, cine) in enumerate(self.eval_pairs)}

    def require_eval_pairs(self) -> list[tuple[Image, Image]]:
        if not self.eval_pairs:
            raise NoReferenceError()
        return self.eval_pairs

    @property
    def image_side(self) -> int:
        return self.tagged_items[0].height


def build_unpaired_dataset(spec: PhantomSpec, n_train_tagged: int, n_train_cine: int,
                           n_eval_pairs: int, seed: int, n_val_pairs: int = 0) -> UnpairedDataset:
    spec.validate()
    if n_train_tagged < 1 or n_train_cine < 1:
        raise ConfigError("training counts must be >= 1")
    if n_eval_pairs < 0 or n_val_pairs < 0:
        raise ConfigError("pair counts must be >= 0")
    t_seeds = split_seeds(seed, "train_tagged", n_train_tagged)
    c_seeds = split_seeds(seed, "train_cine", n_train_cine)
    tagged = [generate_phantom_pair(spec, s)[1] for s in t_seeds]
    cine = [generate_phantom_pair(spec, s)[0] for s in c_seeds]
    val = [tuple(reversed(generate_phantom_pair(spec, s))) for s in split_seeds(seed, "val", n_val_pairs)]
    ev = [tuple(reversed(generate_phantom_pair(spec, s))) for s in split_seeds(seed, "eval", n_eval_pairs)]
    return UnpairedDataset(tagged, cine, eval_pairs=ev, val_pairs=val, tagged_seeds=t_seeds, cine_seeds=c_seeds)


class UnpairedStreams:
    """Independently shuffled tagged and cine index streams.

    Each epoch draws one permutation per stream from its own generator; the
    shorter stream is tiled with further permutations to match the longer.
    """

    def __init__(self, n_tagged: int, n_cine: int, batch_size: int,
                 rng_tagged: np.random.Generator, rng_cine: np.random.Generator):
        self.n_tagged, self.n_cine, self.batch_size = n_tagged, n_cine, batch_size
        self.rng_tagged, self.rng_cine = rng_tagged, rng_cine

    @property
    def iterations_per_epoch(self) -> int:
        return math.ceil(max(self.n_tagged, self.n_cine) / self.batch_size)

    @staticmethod
    def _order(n: int, total: int, rng: np.random.Generator) -> np.ndarray:
        reps = math.ceil(total / n)
        return np.concatenate([rng.permutation(n) for _ in range(reps)])[:total]

    def epoch(self):
        total = self.iterations_per_epoch * self.batch_size
        order_t = self._order(self.n_tagged, total, self.rng_tagged)
        order_c = self._order(self.n_cine, total, self.rng_cine)
        for i in range(self.iterations_per_epoch):
            sl = slice(i * self.batch_size, (i + 1) * self.batch_size)
            yield order_t[sl], order_c[sl]


# -- disk IO -----------------------------------------------------------------

def write_png(img: Image | np.ndarray, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(to_uint8(img), mode="L").save(path, format="PNG")


def read_png(path: str | Path, modality: Modality = Modality.CINE) -> Image:
    path = Path(path)
    try:
        with PILImage.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return normalize(arr, modality)


def save_dataset(ds: UnpairedDataset, out_dir: str | Path) -> Path:
    """Write PNGs plus ``dataset.idx`` and, when pairs exist, ``pairs.idx`` / ``val_pairs.idx``."""
    out = Path(out_dir)
    lines = []
    for i, img in enumerate(ds.tagged_items):
        rel = f"train/tagged_{i:05d}.png"
        write_png(img, out / rel)
        lines.append(f"{rel} TAGGED")
    for i, img in enumerate(ds.cine_items):
        rel = f"train/cine_{i:05d}.png"
        write_png(img, out / rel)
        lines.append(f"{rel} CINE")
    (out / "dataset.idx").write_text("\n".join(lines) + "\n")
    for name, pairs, sub in (("pairs.idx", ds.eval_pairs, "eval"), ("val_pairs.idx", ds.val_pairs, "val")):
        idx = out / name
        if not pairs:
            idx.unlink(missing_ok=True)
            continue
        rows = []
        for i, (t, c) in enumerate(pairs):
            rt, rc = f"{sub}/tagged_{i:05d}.png", f"{sub}/cine_{i:05d}.png"
            write_png(t, out / rt)
            write_png(c, out / rc)
            rows.append(f"{rt} {rc}")
        idx.write_text("\n".join(rows) + "\n")
    return out


def _read_pairs(root: Path, name: str) -> list[tuple[Image, Image]]:
    idx = root / name
    if not idx.exists():
        return []
    pairs = []
    for n, line in enumerate(idx.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DataError(f"{idx}:{n}: expected '<tagged_relpath> <cine_relpath>'")
        pairs.append((read_png(root / parts[0], Modality.TAGGED), read_png(root / parts[1], Modality.CINE)))
    return pairs


def load_dataset(root: str | Path) -> UnpairedDataset:
    root = Path(root)
    manifest = root / "dataset.idx"
    if not manifest.exists():
        raise DataError(f"missing manifest {manifest}")
    tagged, cine = [], []
    for n, line in enumerate(manifest.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2 or parts[1] not in ("TAGGED", "CINE"):
            raise DataError(f"{manifest}:{n}: expected '<relpath> <TAGGED|CINE>'")
        mod = Modality(parts[1])
        (tagged if mod is Modality.TAGGED else cine).append(read_png(root / parts[0], mod))
    return UnpairedDataset(tagged, cine, eval_pairs=_read_pairs(root, "pairs.idx"),
                           val_pairs=_read_pairs(root, "val_pairs.idx"))
