"""Round-based training with the alternating translator / structure-module protocol.

Each iteration runs four phases in order:

    P1  translator: update {G_TC, G_CT} on adversarial + cycle loss, plus the
        feature-consistency loss on case-A patch pairs (f, C frozen)
    P2  discriminators: update D_C, then D_T
    P3  classifier: update C on the combination cross-entropy (f frozen)
    P4  encoder: update f on KL-to-uniform + feature consistency (G_TC, C frozen)

Every phase clears all gradients first, so after a phase only its own
parameter group holds gradients.
"""
from __future__ import annotations

import contextlib
import copy
import csv
import io
import json
import logging
import math
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import losses as L
from .config import TrainConfig, config_hash, from_dict, to_dict
from .data import Image, UnpairedDataset, UnpairedStreams
from .errors import CheckpointError, DataError, NumericError
from .metrics import ssim
from .models import NETWORK_NAMES, NetworkBundle, UNetTranslator, build_bundle, build_translator, translate
from .patches import N_POS, PairCase, grid_window, sample_slots, slot_pos, slot_source, Source, combo_of

log = logging.getLogger(__name__)

LOSS_NAMES = ("l_cycle", "l_adv_g", "l_d_c", "l_d_t", "l_ce", "l_kl", "l_feat")
CURVE_COLUMNS = ("epoch", "iter") + LOSS_NAMES
OPT_GROUPS = {"G": ("G_TC", "G_CT"), "D_T": ("D_T",), "D_C": ("D_C",), "f": ("f",), "C": ("C",)}
RNG_NAMES = ("tagged", "cine", "pairs")
CHECKPOINT_FORMAT = "structcycle-ckpt-v1"


@dataclass
class TrainState:
    config: TrainConfig
    nets: NetworkBundle
    optimizers: dict[str, torch.optim.Adam]
    rngs: dict[str, np.random.Generator]
    epoch: int = 0
    iteration: int = 0
    best: dict = field(default_factory=lambda: {"epoch": -1, "ssim": -math.inf})
    best_weights: dict | None = None
    val_history: list = field(default_factory=list)


def _rng_seed(seed: int, name: str) -> int:
    return seed * 1000 + 500 + RNG_NAMES.index(name)


def init_state(config: TrainConfig) -> TrainState:
    config.validate()
    nets = build_bundle(config.model, config.seed)
    optimizers = {
        group: torch.optim.Adam([p for n in members for p in getattr(nets, n).parameters()],
                                lr=config.learning_rate, betas=tuple(config.optimizer_moment_params))
        for group, members in OPT_GROUPS.items()
    }
    rngs = {name: np.random.default_rng(_rng_seed(config.seed, name)) for name in RNG_NAMES}
    return TrainState(config, nets, optimizers, rngs)


@contextlib.contextmanager
def frozen(*modules):
    """Disable parameter gradients for the duration of the block."""
    saved = [(p, p.requires_grad) for m in modules for p in m.parameters()]
    for p, _ in saved:
        p.requires_grad_(False)
    try:
        yield
    finally:
        for p, flag in saved:
            p.requires_grad_(flag)


def clear_grads(nets: NetworkBundle) -> None:
    for _, net in nets.items():
        for p in net.parameters():
            p.grad = None


def _check(value, name: str, phase: str):
    if not torch.isfinite(value).all():
        raise NumericError(f"non-finite {name} in phase {phase}")


# -- patch pairs ----------------------------------------------------------------

@dataclass
class PairBatch:
    """Sampled slot pairs for a batch: image index, two slots, case and combo label per row."""

    image: np.ndarray
    slot_a: np.ndarray
    slot_b: np.ndarray
    cases: list
    labels: np.ndarray

    @property
    def case_a(self) -> np.ndarray:
        return np.array([c is PairCase.A_SAME_POS_CROSS_MOD for c in self.cases], dtype=bool)


def sample_pair_batch(batch_size: int, cfg: TrainConfig, rng: np.random.Generator) -> PairBatch:
    img, sa, sb, cases, labels = [], [], [], [], []
    for b in range(batch_size):
        for _ in range(cfg.pairs_per_image):
            i, j, case = sample_slots(rng, cfg.sampler_mode)
            img.append(b)
            sa.append(i)
            sb.append(j)
            cases.append(case)
            labels.append(int(combo_of(slot_source(i), slot_source(j))))
    y = np.eye(3)[labels]
    return PairBatch(np.array(img), np.array(sa), np.array(sb), cases, y)


def crop_slots(tagged, output, image_idx, slots):
    """Gather grid patches (N, 1, p, p) from either the tagged input or the translated output."""
    side = tagged.shape[-1]
    crops = []
    for b, s in zip(image_idx, slots):
        src = tagged if slot_source(int(s)) is Source.INPUT_TAGGED else output
        rows, cols = grid_window(slot_pos(int(s)), side)
        crops.append(src[int(b), :, rows, cols])
    return torch.stack(crops)


def case_a_crops(tagged, output, pairs: PairBatch):
    """(tagged patch, output patch) for every case-A pair, same grid position."""
    mask = pairs.case_a
    side = tagged.shape[-1]
    t_crops, o_crops = [], []
    for b, s in zip(pairs.image[mask], pairs.slot_a[mask]):
        rows, cols = grid_window(slot_pos(int(s)), side)
        t_crops.append(tagged[int(b), :, rows, cols])
        o_crops.append(output[int(b), :, rows, cols])
    if not t_crops:
        return None, None
    return torch.stack(t_crops), torch.stack(o_crops)


# -- phases ----------------------------------------------------------------------

def _feat_active(state: TrainState) -> bool:
    c = state.config
    return c.use_structure and c.loss_weights.w_feat > 0 and state.epoch >= c.feat_warmup_epochs


def _encoder_active(state: TrainState) -> bool:
    c = state.config
    return c.use_structure and c.structure_phases and state.epoch >= c.feat_warmup_epochs


def _classifier_active(state: TrainState) -> bool:
    c = state.config
    return c.use_structure and c.structure_phases


def translator_phase(state: TrainState, xt, xc, pairs: PairBatch | None):
    """P1. Returns (report, fake cine, fake tagged), fakes detached."""
    cfg, nets, w = state.config, state.nets, state.config.loss_weights
    clear_grads(nets)
    zero = xt.new_zeros(())
    with frozen(nets.D_T, nets.D_C, nets.f, nets.C):
        fake_c = nets.G_TC(xt)
        l_adv = L.gen_adv_loss(nets.D_C(fake_c), cfg.adv_form)
        l_cycle, fake_t = zero, None
        if cfg.use_cycle:
            l_cycle = L.cycle_l1(xt, nets.G_CT(fake_c))
            fake_t = nets.G_CT(nets.G_TC(xc)) if cfg.eq3_literal else nets.G_CT(xc)
            l_adv = l_adv + L.gen_adv_loss(nets.D_T(fake_t), cfg.adv_form)
        total = w.w_adv * l_adv + w.w_cycle * l_cycle
        l_feat = zero
        if pairs is not None and _feat_active(state):
            t_crops, o_crops = case_a_crops(xt, fake_c, pairs)
            if t_crops is not None:
                l_feat = L.feature_l1(nets.f(o_crops), nets.f(t_crops).detach())
                total = total + w.w_feat * l_feat
        _check(total, "translator loss", "P1")
        total.backward()
    state.optimizers["G"].step()
    report = {"l_cycle": l_cycle.item(), "l_adv_g": l_adv.item(), "l_feat": l_feat.item()}
    return report, fake_c.detach(), None if fake_t is None else fake_t.detach()


def discriminator_phase(state: TrainState, xt, xc, fake_c, fake_t):
    """P2. D_C on real vs generated cine, then D_T on real vs generated tagged."""
    cfg, nets = state.config, state.nets
    clear_grads(nets)
    l_dc = L.disc_loss(nets.D_C(xc), nets.D_C(fake_c), cfg.adv_form)
    _check(l_dc, "D_C loss", "P2")
    l_dc.backward()
    state.optimizers["D_C"].step()
    l_dt = xt.new_zeros(())
    if cfg.use_cycle and fake_t is not None:
        l_dt = L.disc_loss(nets.D_T(xt), nets.D_T(fake_t), cfg.adv_form)
        _check(l_dt, "D_T loss", "P2")
        l_dt.backward()
        state.optimizers["D_T"].step()
    return {"l_d_c": l_dc.item(), "l_d_t": l_dt.item()}


def _pair_logits(nets: NetworkBundle, xt, fake_c, pairs: PairBatch):
    a = crop_slots(xt, fake_c, pairs.image, pairs.slot_a)
    b = crop_slots(xt, fake_c, pairs.image, pairs.slot_b)
    feats = nets.f(torch.cat([a, b]))
    fa, fb = feats[: len(a)], feats[len(a):]
    return fa, fb


def classifier_phase(state: TrainState, xt, fake_c, pairs: PairBatch):
    """P3. C learns the modality combination from frozen encoder features."""
    nets = state.nets
    clear_grads(nets)
    with torch.no_grad():
        fa, fb = _pair_logits(nets, xt, fake_c, pairs)
    logits = nets.C(torch.cat([fa, fb], dim=1))
    l_ce = L.combo_ce(logits, torch.as_tensor(pairs.labels, dtype=logits.dtype))
    _check(l_ce, "combination cross-entropy", "P3")
    l_ce.backward()
    state.optimizers["C"].step()
    return {"l_ce": l_ce.item()}


def encoder_phase(state: TrainState, xt, fake_c, pairs: PairBatch):
    """P4. f pushes C toward uniform and aligns case-A features; C and G_TC frozen."""
    nets, w = state.nets, state.config.loss_weights
    clear_grads(nets)
    xt, fake_c = xt.detach(), fake_c.detach()
    with frozen(nets.C, nets.G_TC):
        fa, fb = _pair_logits(nets, xt, fake_c, pairs)
        l_kl = L.kl_to_uniform(nets.C(torch.cat([fa, fb], dim=1)))
        total = w.w_kl * l_kl
        l_feat = xt.new_zeros(())
        mask = torch.as_tensor(pairs.case_a)
        if w.w_feat > 0 and bool(mask.any()):
            # case-A pairs are ordered (tagged, output) by slot numbering
            l_feat = L.feature_l1(fb[mask], fa[mask])
            total = total + w.w_feat * l_feat
        _check(total, "encoder loss", "P4")
        total.backward()
    state.optimizers["f"].step()
    return {"l_kl": l_kl.item(), "l_feat_f": l_feat.item()}


@contextlib.contextmanager
def _phase(name: str):
    try:
        yield
    except ValueError as exc:
        if "non-finite" in str(exc):
            raise NumericError(f"phase {name}: {exc}") from exc
        raise


def train_iteration(state: TrainState, batch_tagged, batch_cine) -> dict:
    """Run P1..P4 once and return the seven named losses. Inactive terms report 0."""
    report = dict.fromkeys(LOSS_NAMES, 0.0)
    pairs = None
    if state.config.use_structure and (_feat_active(state) or _classifier_active(state)):
        pairs = sample_pair_batch(batch_tagged.shape[0], state.config, state.rngs["pairs"])
    with _phase("P1"):
        r1, fake_c, fake_t = translator_phase(state, batch_tagged, batch_cine, pairs)
    report.update(r1)
    with _phase("P2"):
        report.update(discriminator_phase(state, batch_tagged, batch_cine, fake_c, fake_t))
    if _classifier_active(state):
        with _phase("P3"):
            report.update(classifier_phase(state, batch_tagged, fake_c, pairs))
    if _encoder_active(state):
        with _phase("P4"):
            report.update({"l_kl": encoder_phase(state, batch_tagged, fake_c, pairs)["l_kl"]})
    clear_grads(state.nets)
    state.iteration += 1
    return report


# -- fit --------------------------------------------------------------------------

def stack_images(images: list[Image], dtype=torch.float32):
    return torch.as_tensor(np.stack([im.pixels for im in images]), dtype=dtype)[:, None]


def validation_ssim(net: UNetTranslator, pairs) -> float:
    return float(np.mean([ssim(translate(net, t), c) for t, c in pairs]))


def fit(config: TrainConfig, dataset: UnpairedDataset, out_dir: str | Path | None = None,
        state: TrainState | None = None, val_pairs=None) -> tuple[TrainState, list[dict]]:
    """Train until ``config.epochs`` epochs are complete, resuming from ``state`` if given.

    Validation pairs default to ``dataset.val_pairs``; evaluation pairs are never used.
    """
    config.validate()
    state = state if state is not None else init_state(config)
    if dataset.image_side != config.image_side:
        raise DataError(f"dataset side {dataset.image_side} != configured image_side {config.image_side}")
    val_pairs = dataset.val_pairs if val_pairs is None else val_pairs
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    tagged, cine = stack_images(dataset.tagged_items), stack_images(dataset.cine_items)
    streams = UnpairedStreams(len(tagged), len(cine), config.batch_size, state.rngs["tagged"], state.rngs["cine"])
    curve: list[dict] = []
    curve_path = out / "curves.csv" if out is not None else None
    if curve_path is not None and (state.epoch == 0 or not curve_path.exists()):
        curve_path.write_text(",".join(CURVE_COLUMNS) + "\n")
    for net in (n for _, n in state.nets.items()):
        net.train()
    while state.epoch < config.epochs:
        epoch_rows = []
        for it, (ti, ci) in enumerate(streams.epoch()):
            report = train_iteration(state, tagged[ti], cine[ci])
            epoch_rows.append({"epoch": state.epoch, "iter": it, **report})
        state.epoch += 1
        curve.extend(epoch_rows)
        if curve_path is not None:
            with curve_path.open("a", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS)
                w.writerows(epoch_rows)
        if val_pairs and config.val_every and state.epoch % config.val_every == 0:
            score = validation_ssim(state.nets.G_TC, val_pairs)
            state.val_history.append([state.epoch, score])
            log.info("epoch %d val ssim %.4f", state.epoch, score)
            if score > state.best["ssim"]:
                state.best = {"epoch": state.epoch, "ssim": score}
                state.best_weights = copy.deepcopy(state.nets.G_TC.state_dict())
                if out is not None:
                    save_checkpoint(state, out / "best.ckpt")
        if out is not None and config.checkpoint_every and state.epoch % config.checkpoint_every == 0:
            save_checkpoint(state, out / f"epoch_{state.epoch:04d}.ckpt")
    if out is not None:
        save_checkpoint(state, out / "last.ckpt")
    return state, curve


def best_translator(state: TrainState) -> UNetTranslator:
    """G_TC at the best validation epoch, or the current G_TC when no validation ran."""
    if state.best_weights is None:
        return state.nets.G_TC
    net = build_translator(state.config.model)
    net.load_state_dict(state.best_weights)
    return net.eval()


# -- checkpoints --------------------------------------------------------------------

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def _npy_bytes(t: torch.Tensor) -> bytes:
    buf = io.BytesIO()
    np.save(buf, t.detach().cpu().numpy(), allow_pickle=False)
    return buf.getvalue()


def _write_entry(zf: zipfile.ZipFile, name: str, data: bytes):
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def _rng_state_json(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def save_checkpoint(state: TrainState, path: str | Path) -> Path:
    """Zip archive: ``meta.json`` plus one ``.npy`` entry per tensor, fixed timestamps."""
    path = Path(path)
    tensors: dict[str, torch.Tensor] = {}
    for name, net in state.nets.items():
        for k, v in net.state_dict().items():
            tensors[f"net/{name}/{k}"] = v
    opt_meta = {}
    for group, opt in state.optimizers.items():
        sd = opt.state_dict()
        opt_meta[group] = {"param_groups": sd["param_groups"], "state_keys": {}}
        for idx, st in sd["state"].items():
            opt_meta[group]["state_keys"][str(idx)] = sorted(st)
            for k, v in st.items():
                tensors[f"opt/{group}/{idx}/{k}"] = torch.as_tensor(v)
    if state.best_weights is not None:
        for k, v in state.best_weights.items():
            tensors[f"best/G_TC/{k}"] = v
    cfg_dict = to_dict(state.config)
    meta = {
        "format": CHECKPOINT_FORMAT,
        "config": cfg_dict,
        "config_hash": config_hash(state.config),
        "seed": state.config.seed,
        "epoch": state.epoch,
        "iteration": state.iteration,
        "best": {"epoch": state.best["epoch"],
                 "ssim": None if math.isinf(state.best["ssim"]) else state.best["ssim"]},
        "val_history": state.val_history,
        "rngs": {k: _rng_state_json(r) for k, r in state.rngs.items()},
        "optimizers": opt_meta,
        "tensors": sorted(tensors),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        with zipfile.ZipFile(tmp, "w") as zf:
            _write_entry(zf, "meta.json", json.dumps(meta, sort_keys=True, indent=1).encode())
            for name in sorted(tensors):
                _write_entry(zf, f"tensors/{name}.npy", _npy_bytes(tensors[name]))
        tmp.replace(path)
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def _open_archive(path: Path):
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        zf = zipfile.ZipFile(path)
        meta = json.loads(zf.read("meta.json"))
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, OSError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if meta.get("format") != CHECKPOINT_FORMAT:
        zf.close()
        raise CheckpointError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
    return zf, meta


def _read_tensor(zf: zipfile.ZipFile, name: str) -> torch.Tensor:
    try:
        arr = np.load(io.BytesIO(zf.read(f"tensors/{name}.npy")), allow_pickle=False)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint missing or corrupt tensor {name}: {exc}") from exc
    return torch.from_numpy(arr.copy())


def read_meta(path: str | Path) -> dict:
    zf, meta = _open_archive(Path(path))
    zf.close()
    return meta


def load_checkpoint(path: str | Path, expected_hash: str | None = None, force: bool = False) -> TrainState:
    path = Path(path)
    zf, meta = _open_archive(path)
    with zf:
        if expected_hash is not None and meta["config_hash"] != expected_hash and not force:
            raise CheckpointError(
                f"{path}: config hash mismatch (checkpoint {meta['config_hash']}, expected {expected_hash}); "
                "use --force to load anyway"
            )
        config = from_dict(TrainConfig, meta["config"])
        state = init_state(config)
        for name, net in state.nets.items():
            sd = {k: _read_tensor(zf, f"net/{name}/{k}") for k in net.state_dict()}
            net.load_state_dict(sd)
        for group, opt in state.optimizers.items():
            om = meta["optimizers"][group]
            st = {int(idx): {k: _read_tensor(zf, f"opt/{group}/{idx}/{k}") for k in keys}
                  for idx, keys in om["state_keys"].items()}
            groups = [dict(g, betas=tuple(g["betas"])) for g in om["param_groups"]]
            opt.load_state_dict({"state": st, "param_groups": groups})
        for name, rng in state.rngs.items():
            rng.bit_generator.state = meta["rngs"][name]
        state.epoch, state.iteration = meta["epoch"], meta["iteration"]
        best = meta["best"]
        state.best = {"epoch": best["epoch"], "ssim": -math.inf if best["ssim"] is None else best["ssim"]}
        state.val_history = [list(r) for r in meta.get("val_history", [])]
        best_keys = [n for n in meta["tensors"] if n.startswith("best/G_TC/")]
        if best_keys:
            state.best_weights = {n[len("best/G_TC/"):]: _read_tensor(zf, n) for n in best_keys}
    return state


def load_translator(path: str | Path, which: str = "last") -> UNetTranslator:
    """Rebuild G_TC alone. Only the translator's tensors are read from the archive."""
    zf, meta = _open_archive(Path(path))
    with zf:
        config = from_dict(TrainConfig, meta["config"])
        net = build_translator(config.model)
        prefix = "best/G_TC/" if which == "best" and any(n.startswith("best/G_TC/") for n in meta["tensors"]) \
            else "net/G_TC/"
        net.load_state_dict({k: _read_tensor(zf, prefix + k) for k in net.state_dict()})
    return net.eval()
