"""Method comparison on synthetic phantoms: train each method per seed and evaluate."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, METHODS
from .data import build_unpaired_dataset
from .metrics import MetricsReport, evaluate, render_table, train_probe
from .models import translate
from .trainer import best_translator, fit

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    method: str
    seed: int
    report: MetricsReport
    seconds: float


def run_one(cfg: ExperimentConfig, probe=None, out_dir: str | Path | None = None) -> RunResult:
    """Generate the seed's dataset, train ``cfg.method`` and evaluate on held-out pairs."""
    cfg = cfg.resolved()
    d = cfg.data
    ds = build_unpaired_dataset(cfg.phantom, d.n_train_tagged, d.n_train_cine, d.n_eval_pairs,
                                cfg.seed, n_val_pairs=d.n_val_pairs)
    t0 = time.time()
    state, _ = fit(cfg.train, ds, out_dir=out_dir)
    net = best_translator(state) if cfg.eval.use_best else state.nets.G_TC
    report = evaluate(lambda x: translate(net, x), ds.require_eval_pairs(), probe=probe,
                      n_splits=cfg.eval.n_splits, label=f"{cfg.method}/seed{cfg.seed}")
    return RunResult(cfg.method, cfg.seed, report, time.time() - t0)


def run_comparison(base: ExperimentConfig, seeds=(0, 1, 2), methods=METHODS, out_dir=None) -> list[RunResult]:
    probe = train_probe(base.phantom, base.eval.probe_images, base.eval.probe_epochs, seed=0)
    results = []
    for seed in seeds:
        for method in methods:
            sub = None if out_dir is None else Path(out_dir) / f"{method}_seed{seed}"
            res = run_one(replace(base, method=method, seed=seed), probe=probe, out_dir=sub)
            log.info("%s seed %d: ssim %.4f psnr %.2f (%.0fs)", method, seed,
                     res.report.aggregate["ssim"]["mean"], res.report.aggregate["psnr"]["mean"], res.seconds)
            results.append(res)
    return results


def summarize(results: list[RunResult]) -> dict[str, dict[str, float]]:
    """Mean over seeds of each method's aggregate metrics."""
    out = {}
    for method in dict.fromkeys(r.method for r in results):
        rs = [r for r in results if r.method == method]
        out[method] = {k: float(np.mean([r.report.aggregate[k]["mean"] for r in rs])) for k in ("l1", "ssim", "psnr")}
        iss = [r.report.inception_score["mean"] for r in rs if r.report.inception_score]
        if iss:
            out[method]["is"] = float(np.mean(iss))
    return out


def per_seed_table(results: list[RunResult]) -> str:
    return render_table({r.report.label: r.report for r in results})
