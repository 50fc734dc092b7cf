"""Mean L1, SSIM, PSNR and Inception Score, plus report assembly.

Conventions (stored in every report):
  * L1/SSIM/PSNR are computed on the [0, 255] scale of the denormalized images.
  * SSIM: 11x11 Gaussian window (sigma 1.5), valid region only, C1=(0.01*255)^2,
    C2=(0.03*255)^2.
  * PSNR of identical images is +inf; reports store it capped at 99 dB.
  * Aggregate dispersion is the standard error of the mean; IS dispersion is the
    std over splits.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from scipy.signal import convolve2d
from torch import nn

from .data import Image, PhantomSpec, denormalize, generate_phantom_pair
from .errors import NoReferenceError

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
DATA_RANGE = 255.0

CONVENTIONS = {
    "scale": "RAW255 (denormalized, clamped to [0, 255])",
    "l1": "mean absolute difference per pixel",
    "ssim_window": f"{SSIM_WINDOW}x{SSIM_WINDOW} gaussian, sigma={SSIM_SIGMA}, valid region",
    "ssim_constants": "C1=(0.01*255)^2, C2=(0.03*255)^2",
    "psnr": f"10*log10(255^2/MSE); zero MSE capped at {PSNR_CAP} dB",
    "aggregate_dispersion": "standard error of the mean",
    "is_dispersion": "population std over splits",
    "is_classifier": "shape-count probe CNN trained on cine phantoms",
}


def _raw(x) -> np.ndarray:
    return denormalize(x)


def _check_same(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def mean_l1(a: Image, b: Image, scale: str = "RAW255") -> float:
    ra, rb = _raw(a), _raw(b)
    _check_same(ra, rb)
    d = float(np.abs(ra - rb).mean())
    if scale == "RAW255":
        return d
    if scale == "UNIT":
        return d / 255.0
    raise ValueError(f"unknown scale {scale!r}")


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a: Image, b: Image) -> float:
    x, y = _raw(a), _raw(b)
    _check_same(x, y)
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    w = gaussian_window()

    def filt(z):
        return convolve2d(z, w, mode="valid")

    c1 = (0.01 * DATA_RANGE) ** 2
    c2 = (0.03 * DATA_RANGE) ** 2
    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x * mu_x
    syy = filt(y * y) - mu_y * mu_y
    sxy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return float((num / den).mean())


def psnr(a: Image, b: Image) -> float:
    x, y = _raw(a), _raw(b)
    _check_same(x, y)
    mse = float(((x - y) ** 2).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(DATA_RANGE ** 2 / mse)


# -- inception score -----------------------------------------------------------

def inception_score_from_probs(probs: np.ndarray, n_splits: int) -> tuple[float, float]:
    probs = np.asarray(probs, dtype=np.float64)
    n = probs.shape[0]
    if n_splits < 1 or n < n_splits:
        raise ValueError(f"need at least n_splits={n_splits} images, got {n}")
    scores = []
    for k in range(n_splits):
        part = probs[k * n // n_splits:(k + 1) * n // n_splits]
        marginal = part.mean(axis=0, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(part > 0, part * (np.log(part) - np.log(marginal)), 0.0)
        scores.append(math.exp(terms.sum(axis=1).mean()))
    return float(np.mean(scores)), float(np.std(scores))


def inception_score(images: Sequence[Image], classifier: Callable, n_splits: int = 5) -> tuple[float, float]:
    """IS = exp(mean KL(p(y|x) || p(y))) per split; returns (mean, std) over splits."""
    if len(images) < n_splits:
        raise ValueError(f"need at least n_splits={n_splits} images, got {len(images)}")
    return inception_score_from_probs(classifier(images), n_splits)


class ShapeCountNet(nn.Module):
    def __init__(self, n_classes: int, width: int = 16):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(1, width, 3, 2, 1), nn.ReLU(),
            nn.Conv2d(width, 2 * width, 3, 2, 1), nn.ReLU(),
            nn.Conv2d(2 * width, 2 * width, 3, 2, 1), nn.ReLU(),
            nn.AdaptiveAvgPool2d(1), nn.Flatten(),
            nn.Linear(2 * width, n_classes),
        )

    def forward(self, x):
        return self.net(x)


class ShapeCountProbe:
    """Stand-in for the inception network: classifies phantoms by shape count."""

    def __init__(self, net: ShapeCountNet):
        self.net = net.eval()

    def __call__(self, images: Sequence[Image]) -> np.ndarray:
        x = torch.as_tensor(np.stack([im.pixels for im in images]), dtype=torch.float32)[:, None]
        with torch.no_grad():
            return torch.softmax(self.net(x), dim=1).double().numpy()


def train_probe(spec: PhantomSpec, n_images: int = 800, epochs: int = 8, seed: int = 0,
                seed_offset: int = 9_000_000) -> ShapeCountProbe:
    """Fit the shape-count probe on clean cine phantoms from a reserved seed range."""
    gen = torch.Generator().manual_seed(seed)
    xs, ys = [], []
    for i in range(n_images):
        cine, _, count = generate_phantom_pair(spec, seed_offset + seed * n_images + i, return_count=True)
        xs.append(cine.pixels)
        ys.append(count - spec.min_shapes)
    x = torch.as_tensor(np.stack(xs), dtype=torch.float32)[:, None]
    y = torch.as_tensor(ys)
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        net = ShapeCountNet(spec.n_count_classes)
    opt = torch.optim.Adam(net.parameters(), lr=3e-3)
    for _ in range(epochs):
        for idx in torch.randperm(n_images, generator=gen).split(32):
            opt.zero_grad()
            nn.functional.cross_entropy(net(x[idx]), y[idx]).backward()
            opt.step()
    return ShapeCountProbe(net)


# -- reports ---------------------------------------------------------------------

METRIC_KEYS = ("l1", "ssim", "psnr")


@dataclass
class MetricsReport:
    per_image: list[dict]
    aggregate: dict
    inception_score: dict | None
    n_images: int
    conventions: dict = field(default_factory=lambda: dict(CONVENTIONS))
    label: str = ""

    @classmethod
    def from_rows(cls, rows: list[dict], inception: tuple[float, float] | None = None, label: str = ""):
        agg = {}
        for key in METRIC_KEYS:
            vals = np.array([r[key] for r in rows], dtype=np.float64)
            sem = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
            agg[key] = {"mean": float(vals.mean()), "sem": sem}
        is_rec = None if inception is None else {"mean": inception[0], "std": inception[1]}
        return cls(rows, agg, is_rec, len(rows), label=label)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_json(cls, text_or_path) -> "MetricsReport":
        p = Path(text_or_path) if not str(text_or_path).lstrip().startswith("{") else None
        data = json.loads(p.read_text() if p else text_or_path)
        return cls(**data)

    def to_markdown(self) -> str:
        return render_table({self.label or "method": self})


def _fmt(rec: dict | None, key: str, digits: int) -> str:
    if rec is None:
        return "n/a"
    return f"{rec['mean']:.{digits}f}±{rec[key]:.{digits}f}"


def render_table(reports: dict[str, MetricsReport]) -> str:
    lines = ["| Methods | L1 ↓ | SSIM ↑ | PSNR ↑ | IS ↑ |", "|---|---|---|---|---|"]
    for name, r in reports.items():
        lines.append(
            f"| {name} | {_fmt(r.aggregate['l1'], 'sem', 2)} | {_fmt(r.aggregate['ssim'], 'sem', 4)} "
            f"| {_fmt(r.aggregate['psnr'], 'sem', 2)} | {_fmt(r.inception_score, 'std', 2)} |"
        )
    return "\n".join(lines) + "\n"


def compare_reports(proposed: MetricsReport, baseline: MetricsReport) -> dict[str, float]:
    """Signed per-metric delta, proposed minus baseline."""
    delta = {k: proposed.aggregate[k]["mean"] - baseline.aggregate[k]["mean"] for k in METRIC_KEYS}
    if proposed.inception_score and baseline.inception_score:
        delta["is"] = proposed.inception_score["mean"] - baseline.inception_score["mean"]
    return delta


def render_delta(delta: dict[str, float]) -> str:
    keys = list(delta)
    return ("| metric | " + " | ".join(keys) + " |\n|---|" + "---|" * len(keys) + "\n"
            "| delta | " + " | ".join(f"{delta[k]:+.4f}" for k in keys) + " |\n")


def montage(*images: Image) -> np.ndarray:
    """Side-by-side panel in [-1, 1], e.g. (input, output, ground truth)."""
    return np.concatenate([im.pixels for im in images], axis=1)


def evaluate(translator: Callable[[Image], Image], eval_pairs: Sequence[tuple[Image, Image]],
             probe: Callable | None = None, n_splits: int = 5, label: str = "",
             montage_dir: str | Path | None = None) -> MetricsReport:
    """Translate each tagged eval image and score it against its ground-truth cine."""
    if not eval_pairs:
        raise NoReferenceError()
    rows, outputs = [], []
    for i, (tagged, cine) in enumerate(eval_pairs):
        out = translator(tagged)
        outputs.append(out)
        p = psnr(out, cine)
        rows.append({"index": i, "l1": mean_l1(out, cine), "ssim": ssim(out, cine),
                     "psnr": min(p, PSNR_CAP)})
        if montage_dir is not None:
            from .data import write_png
            write_png(montage(tagged, out, cine), Path(montage_dir) / f"montage_{i:05d}.png")
    inception = None
    if probe is not None and len(outputs) >= n_splits:
        inception = inception_score(outputs, probe, n_splits)
    return MetricsReport.from_rows(rows, inception, label=label)
