import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from skimage.metrics import structural_similarity

from structcycle.data import Image, PhantomSpec, build_unpaired_dataset, denormalize, normalize
from structcycle.errors import NoReferenceError
from structcycle.metrics import (
    PSNR_CAP, MetricsReport, compare_reports, evaluate, inception_score, inception_score_from_probs,
    mean_l1, psnr, render_delta, render_table, ssim, train_probe,
)


def raw_image(rng, shape=(32, 32), lo=40, hi=200):
    return normalize(rng.uniform(lo, hi, size=shape))


def offset(img, delta):
    return normalize(denormalize(img) + delta)


def test_mean_l1_examples(rng):
    a = raw_image(rng)
    assert mean_l1(a, a) == 0.0
    assert mean_l1(a, offset(a, 16)) == pytest.approx(16.0, abs=1e-9)
    b = raw_image(rng)
    assert mean_l1(a, b, "UNIT") * 255 == pytest.approx(mean_l1(a, b, "RAW255"), abs=1e-6)
    with pytest.raises(ValueError):
        mean_l1(a, b, "bogus")


def test_shape_mismatch(rng):
    with pytest.raises(ValueError, match="shape"):
        psnr(raw_image(rng, (16, 16)), raw_image(rng, (16, 17)))


def test_ssim_self_and_symmetry(rng):
    a, b = raw_image(rng), raw_image(rng)
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


def test_ssim_matches_skimage(rng):
    a = raw_image(rng, (48, 48), 0, 255)
    b = normalize(np.clip(denormalize(a) + rng.normal(0, 20, (48, 48)), 0, 255))
    ref = structural_similarity(denormalize(a), denormalize(b), gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False, data_range=255)
    assert ssim(a, b) == pytest.approx(ref, abs=1e-9)


def test_ssim_inverted_below_noisy(rng):
    a = raw_image(rng, (48, 48), 0, 255)
    inverted = normalize(255 - denormalize(a))
    noisy = normalize(np.clip(denormalize(a) + rng.normal(0, 3, a.pixels.shape), 0, 255))
    assert ssim(a, inverted) < 0.5 * ssim(a, noisy)


def test_ssim_too_small():
    with pytest.raises(ValueError, match="window"):
        ssim(Image(np.zeros((8, 8))), Image(np.zeros((8, 8))))


def test_psnr_examples(rng):
    a = raw_image(rng)
    p16 = psnr(a, offset(a, 16))
    assert p16 == pytest.approx(10 * math.log10(255 ** 2 / 256), abs=1e-9)
    assert p16 == pytest.approx(24.05, abs=0.01)
    assert psnr(a, offset(a, 8)) - p16 == pytest.approx(20 * math.log10(2), abs=1e-9)
    assert psnr(a, a) == math.inf


def test_is_identical_distributions():
    probs = np.tile([0.2, 0.5, 0.3], (20, 1))
    mean, std = inception_score_from_probs(probs, 4)
    assert mean == pytest.approx(1.0, abs=1e-12) and std == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("k", [2, 4, 7])
def test_is_distinct_onehots(k):
    probs = np.eye(k)[np.arange(3 * k) % k]
    mean, _ = inception_score_from_probs(probs, 3)
    assert mean == pytest.approx(k, rel=1e-12)


@given(arrays(np.float64, (12, 4), elements=st.floats(1e-3, 1.0)), st.integers(1, 4))
def test_is_bounds(raw, splits):
    probs = raw / raw.sum(axis=1, keepdims=True)
    mean, _ = inception_score_from_probs(probs, splits)
    assert 1.0 - 1e-9 <= mean <= 4 + 1e-9


def test_is_needs_enough_images():
    with pytest.raises(ValueError):
        inception_score([Image(np.zeros((4, 4)))] * 2, lambda ims: np.ones((len(ims), 2)) / 2, n_splits=3)


def test_is_with_callable_classifier():
    ims = [Image(np.full((4, 4), v)) for v in (-1.0, 0.0, 1.0)] * 2
    onehot = lambda images: np.eye(3)[[int(round(im.pixels[0, 0])) + 1 for im in images]]
    assert inception_score(ims, onehot, n_splits=2)[0] == pytest.approx(3.0)


def test_probe_beats_chance():
    spec = PhantomSpec()
    probe = train_probe(spec, n_images=400, epochs=6, seed=0)
    from structcycle.data import generate_phantom_pair
    hits = 0
    for s in range(200):
        cine, _, count = generate_phantom_pair(spec, 123_000 + s, return_count=True)
        hits += int(np.argmax(probe([cine])[0]) == count - spec.min_shapes)
    assert hits / 200 > 1.5 / spec.n_count_classes


def test_evaluate_identity_on_untagged_dataset():
    spec = PhantomSpec(tag_depth=0.0, noise_std=0.0)
    ds = build_unpaired_dataset(spec, 1, 1, 6, seed=0)
    report = evaluate(lambda x: x, ds.require_eval_pairs(), probe=lambda ims: np.full((len(ims), 2), 0.5),
                      n_splits=2)
    assert report.n_images == 6 == len(report.per_image)
    for row in report.per_image:
        assert row["l1"] == 0.0 and row["ssim"] == pytest.approx(1.0, abs=1e-9) and row["psnr"] == PSNR_CAP
    assert report.inception_score["mean"] == pytest.approx(1.0)
    for key in ("l1", "ssim", "psnr"):
        vals = [r[key] for r in report.per_image]
        assert report.aggregate[key]["mean"] == pytest.approx(np.mean(vals))
        assert report.aggregate[key]["sem"] == pytest.approx(np.std(vals, ddof=1) / np.sqrt(len(vals)))
    assert "standard error" in report.conventions["aggregate_dispersion"]


def test_evaluate_without_pairs():
    with pytest.raises(NoReferenceError):
        evaluate(lambda x: x, [])


def test_report_round_trip_and_rendering(tmp_path, rng):
    pairs = [(raw_image(rng), raw_image(rng)) for _ in range(4)]
    a = evaluate(lambda x: x, pairs, label="a")
    b = evaluate(lambda x: offset(x, 5), pairs, label="b", montage_dir=tmp_path / "m")
    assert len(list((tmp_path / "m").glob("*.png"))) == 4
    a.to_json(tmp_path / "a.json")
    back = MetricsReport.from_json(tmp_path / "a.json")
    assert back.aggregate == a.aggregate and back.per_image == a.per_image
    table = render_table({"a": a, "b": b})
    assert table.splitlines()[0].startswith("| Methods | L1")
    delta = compare_reports(a, b)
    for key in ("l1", "ssim", "psnr"):
        assert delta[key] == pytest.approx(a.aggregate[key]["mean"] - b.aggregate[key]["mean"])
    assert "delta" in render_delta(delta)


def test_metrics_reproducible(rng):
    a, b = raw_image(rng), raw_image(rng)
    assert ssim(a, b) == ssim(a, b) and psnr(a, b) == psnr(a, b) and mean_l1(a, b) == mean_l1(a, b)
