import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from structcycle.data import (
    Image, Modality, PhantomSpec, UnpairedStreams, build_unpaired_dataset, denormalize,
    generate_phantom_pair, load_dataset, normalize, read_png, save_dataset, stripe_field,
)
from structcycle.errors import ConfigError, NoReferenceError


def test_zero_tag_depth_gives_identical_images():
    cine, tagged = generate_phantom_pair(PhantomSpec(tag_depth=0.0, noise_std=0.0), seed=7)
    assert np.array_equal(cine.pixels, tagged.pixels)


def test_horizontal_stripes_are_constant_along_rows():
    field = stripe_field(PhantomSpec(tag_angle=0.0))
    assert field.var(axis=1).max() < 1e-12
    assert field.var(axis=0).max() > 1e-3


def test_different_seeds_give_different_structure():
    spec = PhantomSpec()
    a, _ = generate_phantom_pair(spec, 7)
    b, _ = generate_phantom_pair(spec, 8)
    assert np.abs(a.pixels - b.pixels).mean() > 0


def test_generation_is_deterministic():
    spec = PhantomSpec()
    c1, t1 = generate_phantom_pair(spec, 11)
    c2, t2 = generate_phantom_pair(spec, 11)
    assert c1.pixels.tobytes() == c2.pixels.tobytes()
    assert t1.pixels.tobytes() == t2.pixels.tobytes()


def test_pixels_in_normalized_range_and_modalities():
    cine, tagged = generate_phantom_pair(PhantomSpec(noise_std=0.2), 3)
    for img in (cine, tagged):
        assert img.pixels.min() >= -1 and img.pixels.max() <= 1
        assert img.height == img.width == 64
    assert cine.modality is Modality.CINE and tagged.modality is Modality.TAGGED


@pytest.mark.parametrize("depth", [0.3, 0.6, 1.0])
def test_tagged_over_cine_recovers_stripe_field(depth):
    spec = PhantomSpec(tag_depth=depth, noise_std=0.0)
    cine, tagged = generate_phantom_pair(spec, 5)
    rc, rt = denormalize(cine), denormalize(tagged)
    mask = rc > 0.1
    assert mask.sum() > 100
    np.testing.assert_allclose(rt[mask] / rc[mask], stripe_field(spec)[mask], atol=1e-6)


@pytest.mark.parametrize("kwargs, word", [
    ({"tag_period": 1.5}, "tag_period"),
    ({"tag_depth": 1.2}, "tag_depth"),
    ({"tag_depth": -0.1}, "tag_depth"),
    ({"noise_std": -1.0}, "noise_std"),
    ({"n_shapes": 0}, "n_shapes"),
    ({"canvas_size": 8}, "canvas_size"),
])
def test_invalid_spec_names_the_bound(kwargs, word):
    with pytest.raises(ConfigError, match=word):
        generate_phantom_pair(PhantomSpec(**kwargs), 0)


def test_dataset_counts():
    ds = build_unpaired_dataset(PhantomSpec(), 4, 4, 2, seed=0)
    assert len(ds.tagged_items) == 4 and len(ds.cine_items) == 4 and len(ds.eval_pairs) == 2
    assert set(ds.paired_eval_map) == {0, 1}


def test_training_seeds_are_disjoint():
    for seed in range(3):
        ds = build_unpaired_dataset(PhantomSpec(), 7, 5, 3, seed=seed, n_val_pairs=2)
        assert not set(ds.tagged_seeds) & set(ds.cine_seeds)


def test_dataset_is_deterministic():
    a = build_unpaired_dataset(PhantomSpec(), 3, 2, 1, seed=4)
    b = build_unpaired_dataset(PhantomSpec(), 3, 2, 1, seed=4)
    for x, y in zip(a.tagged_items + a.cine_items, b.tagged_items + b.cine_items):
        assert np.array_equal(x.pixels, y.pixels)


def test_no_eval_pairs_means_no_reference():
    ds = build_unpaired_dataset(PhantomSpec(), 2, 2, 0, seed=0)
    assert ds.paired_eval_map is None
    with pytest.raises(NoReferenceError, match="no reference"):
        ds.require_eval_pairs()


def test_normalize_examples():
    assert np.all(normalize(np.full((4, 4), 127.5)).pixels == 0.0)
    img = normalize(np.full((4, 4), 255.0))
    assert np.all(img.pixels == 1.0)
    assert np.all(denormalize(img) == 255.0)


@pytest.mark.parametrize("bad", [-1.0, 256.0, np.nan])
def test_normalize_rejects_out_of_range(bad):
    raw = np.zeros((3, 3))
    raw[1, 1] = bad
    with pytest.raises(ValueError):
        normalize(raw)


@given(arrays(np.float64, (8, 8), elements=st.floats(0.0, 255.0)))
def test_normalize_round_trip(raw):
    np.testing.assert_allclose(denormalize(normalize(raw)), raw, atol=1e-6)


def test_png_round_trip_within_one_step(tmp_path, rng):
    raw = rng.uniform(0, 255, size=(16, 16))
    from structcycle.data import write_png
    write_png(normalize(raw), tmp_path / "x.png")
    back = denormalize(read_png(tmp_path / "x.png"))
    assert np.abs(back - raw).max() <= 1.0


def test_streams_are_uncorrelated():
    n = 400
    streams = UnpairedStreams(n, n, 16, np.random.default_rng(0), np.random.default_rng(1))
    t, c = map(np.concatenate, zip(*streams.epoch()))
    assert sorted(t) == list(range(n)) and sorted(c) == list(range(n))
    r = np.corrcoef(t, c)[0, 1]
    assert abs(r) < 3 / np.sqrt(n)


def test_streams_tile_shorter_list():
    streams = UnpairedStreams(10, 3, 4, np.random.default_rng(0), np.random.default_rng(1))
    batches = list(streams.epoch())
    assert len(batches) == 3
    c = np.concatenate([b[1] for b in batches])
    assert len(c) == 12 and set(c) == {0, 1, 2}


def test_save_and_load_dataset(tmp_path):
    ds = build_unpaired_dataset(PhantomSpec(), 3, 2, 2, seed=0, n_val_pairs=1)
    save_dataset(ds, tmp_path)
    lines = (tmp_path / "dataset.idx").read_text().splitlines()
    assert len(lines) == 5
    assert all(line.split()[1] in ("TAGGED", "CINE") for line in lines)
    assert len((tmp_path / "pairs.idx").read_text().splitlines()) == 2
    back = load_dataset(tmp_path)
    assert len(back.tagged_items) == 3 and len(back.cine_items) == 2
    assert len(back.eval_pairs) == 2 and len(back.val_pairs) == 1
    assert np.abs(denormalize(back.tagged_items[0]) - denormalize(ds.tagged_items[0])).max() <= 0.5 + 1e-9


def test_image_requires_2d():
    with pytest.raises(ValueError):
        Image(np.zeros((2, 2, 2)))
