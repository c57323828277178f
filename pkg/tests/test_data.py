import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from focusdepth.data import (AugmentConfig, DataError, DatasetManifest, SceneEntry, SceneSample, SliceEntry,
                             augment, coc_radius, generate_synthetic_dataset, load_scene, load_split,
                             read_manifest, read_pfm, read_png, render_focal_stack, write_manifest, write_pfm,
                             write_png)
from focusdepth.data.augment import AugmentDraw, apply_draw
from focusdepth.data.render import DEPTH_RANGE, disk_blur, random_scene
from focusdepth.scpm import FocalStack
from focusdepth.tensor import ShapeError, Tensor


def _tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


class TestPfm:
    @given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2 ** 31 - 1))
    def test_roundtrip_float32_exact(self, tmp_path_factory, H, W, seed):
        arr = np.random.default_rng(seed).uniform(0, 10, size=(H, W)).astype(np.float32)
        path = tmp_path_factory.mktemp("pfm") / "d.pfm"
        write_pfm(path, arr)
        np.testing.assert_array_equal(read_pfm(path), arr)

    def test_header_and_row_order(self, tmp_path):
        arr = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
        write_pfm(tmp_path / "d.pfm", arr[None])
        raw = (tmp_path / "d.pfm").read_bytes()
        assert raw.startswith(b"Pf\n2 2\n-1.0\n")
        # bottom row is stored first
        assert np.frombuffer(raw[-16:], "<f4").tolist() == [3.0, 4.0, 1.0, 2.0]

    def test_big_endian_read(self, tmp_path):
        body = np.array([[5.0, 6.0]], dtype=">f4").tobytes()
        (tmp_path / "b.pfm").write_bytes(b"Pf\n2 1\n1.0\n" + body)
        assert read_pfm(tmp_path / "b.pfm").tolist() == [[5.0, 6.0]]

    @pytest.mark.parametrize("payload", [b"P6\n2 2\n-1\n", b"Pf\n2 2\n-1.0\n" + b"\0" * 8, b"Pf\n1 1\n0\n" + b"\0" * 4])
    def test_malformed(self, tmp_path, payload):
        (tmp_path / "x.pfm").write_bytes(payload)
        with pytest.raises(DataError):
            read_pfm(tmp_path / "x.pfm")

    def test_missing(self, tmp_path):
        with pytest.raises(DataError):
            read_pfm(tmp_path / "none.pfm")

    def test_multichannel_rejected(self, tmp_path):
        with pytest.raises(ShapeError):
            write_pfm(tmp_path / "x.pfm", np.zeros((2, 3, 3)))


class TestPng:
    def test_roundtrip_8bit(self, tmp_path, rng):
        img = np.rint(rng.uniform(size=(3, 5, 4)) * 255) / 255
        write_png(tmp_path / "a.png", img)
        np.testing.assert_allclose(read_png(tmp_path / "a.png"), img, atol=1e-12)

    def test_grey_expands_to_rgb(self, tmp_path):
        write_png(tmp_path / "g.png", np.full((1, 2, 2), 1.0))
        assert read_png(tmp_path / "g.png").shape == (3, 2, 2)

    def test_undecodable(self, tmp_path):
        (tmp_path / "bad.png").write_bytes(b"not an image")
        with pytest.raises(DataError):
            read_png(tmp_path / "bad.png")


class TestManifest:
    def test_roundtrip(self, tmp_path):
        m = DatasetManifest("train", [SceneEntry("s0", "s0/rgb.png", "s0/depth.pfm",
                                                 [SliceEntry("s0/a.png", 1.0), SliceEntry("s0/b.png", 2.0)])])
        write_manifest(tmp_path / "m.json", m)
        back = read_manifest(tmp_path / "m.json")
        assert back.to_dict() == m.to_dict()
        assert back.root == tmp_path

    @pytest.mark.parametrize("doc", [
        {"version": 2, "split": "train", "scenes": []},
        {"version": 1, "split": "val", "scenes": []},
        {"version": 1, "split": "train", "scenes": [{"id": "a", "rgb": "x", "depth": "y", "slices": []}]},
        {"version": 1, "split": "train", "scenes": [], "extra": 1},
        {"version": 1, "split": "train", "scenes": [
            {"id": "a", "rgb": "x", "depth": "y", "slices": [{"path": "p", "focus": 0}]}]},
    ])
    def test_schema_violations(self, tmp_path, doc):
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(DataError):
            read_manifest(tmp_path / "m.json")

    def test_mixed_slice_counts(self, tmp_path):
        sl = [{"path": "p", "focus": 1.0}]
        doc = {"version": 1, "split": "train", "scenes": [
            {"id": "a", "rgb": "x", "depth": "y", "slices": sl},
            {"id": "b", "rgb": "x", "depth": "y", "slices": sl * 2}]}
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(DataError, match="mixes"):
            read_manifest(tmp_path / "m.json")

    def test_invalid_json_and_missing(self, tmp_path):
        (tmp_path / "m.json").write_text("{")
        with pytest.raises(DataError):
            read_manifest(tmp_path / "m.json")
        with pytest.raises(DataError):
            read_manifest(tmp_path / "nothing.json")

    def test_entry_lookup(self, tiny_dataset):
        _, train, _ = tiny_dataset
        assert train.entry("train_0001").id == "train_0001"
        with pytest.raises(DataError):
            train.entry("nope")


class TestLoading:
    def test_load_split(self, tiny_dataset):
        _, train, _ = tiny_dataset
        samples = load_split(train)
        assert len(samples) == 3
        s = samples[0]
        assert s.rgb.shape == (3, 16, 16) and s.depth.shape == (1, 16, 16) and len(s.stack) == 4
        assert s.valid_mask.all()

    def test_missing_slice_file(self, tiny_dataset, tmp_path):
        root, train, _ = tiny_dataset
        entry = train.scenes[0]
        broken = SceneEntry(entry.id, entry.rgb, entry.depth, [SliceEntry("missing.png", 1.0)])
        with pytest.raises(DataError):
            load_scene(broken, root)

    def test_size_mismatch(self, tiny_dataset, tmp_path):
        root, train, _ = tiny_dataset
        write_png(tmp_path / "small.png", np.zeros((3, 8, 8)))
        entry = train.scenes[0]
        broken = SceneEntry(entry.id, entry.rgb, entry.depth, [SliceEntry(str(tmp_path / "small.png"), 1.0)])
        with pytest.raises(DataError, match="slice 0"):
            load_scene(broken, root)

    def test_sample_validation(self, rng):
        stack = FocalStack([Tensor(np.zeros((3, 4, 4)))], [1.0])
        with pytest.raises(ShapeError):
            SceneSample(Tensor(np.zeros((3, 4, 4))), stack, Tensor(np.zeros((1, 5, 4))))
        with pytest.raises(ValueError):
            SceneSample(Tensor(np.zeros((3, 4, 4))), stack, Tensor(-np.ones((1, 4, 4))))


class TestRenderer:
    def test_coc_radius(self):
        assert coc_radius(2.0, 2.0, 16.0, 6.0) == 0.0
        assert coc_radius(1.0, 2.0, 4.0, 6.0) == pytest.approx(2.0)
        assert coc_radius(1.0, 4.0, 100.0, 6.0) == 6.0
        with pytest.raises(ValueError):
            coc_radius(0.0, 1.0, 1.0, 1.0)

    def test_in_focus_slice_equals_all_in_focus(self, rng):
        aif = rng.uniform(size=(3, 12, 12))
        depth = np.full((1, 12, 12), 2.0)
        stack = render_focal_stack(aif, depth, [1.0, 2.0, 3.5])
        np.testing.assert_array_equal(stack.slices[1].data, aif)
        assert not np.allclose(stack.slices[0].data, aif)

    def test_in_focus_pixels_are_untouched(self, rng):
        aif = rng.uniform(size=(3, 10, 10))
        depth = np.full((1, 10, 10), 3.0)
        depth[0, :, :5] = 1.5
        s = render_focal_stack(aif, depth, [1.5]).slices[0].data
        np.testing.assert_array_equal(s[:, :, :5], aif[:, :, :5])

    def test_blur_preserves_constant_image(self):
        img = np.full((3, 9, 9), 0.4)
        out = disk_blur(img, np.full((9, 9), 3.0))
        np.testing.assert_allclose(out, 0.4, atol=1e-15)

    def test_blur_is_mean_over_disk(self, rng):
        img = rng.uniform(size=(1, 7, 7))
        out = disk_blur(img, np.full((7, 7), 1.0))
        # radius 1 disk: centre plus 4-neighbours
        centre = (img[0, 3, 3] + img[0, 2, 3] + img[0, 4, 3] + img[0, 3, 2] + img[0, 3, 4]) / 5
        assert out[0, 3, 3] == pytest.approx(centre)
        corner = (img[0, 0, 0] + img[0, 1, 0] + img[0, 0, 1]) / 3
        assert out[0, 0, 0] == pytest.approx(corner)

    def test_blur_increases_with_defocus(self, rng):
        aif = rng.uniform(size=(3, 16, 16))
        depth = np.full((1, 16, 16), 1.0)
        stack = render_focal_stack(aif, depth, [1.0, 1.5, 3.0])
        energy = [np.abs(np.diff(s.data, axis=2)).mean() for s in stack.slices]
        assert energy[0] > energy[1] > energy[2]

    def test_rejects_bad_inputs(self, rng):
        with pytest.raises(ValueError):
            render_focal_stack(np.zeros((3, 4, 4)), np.zeros((1, 4, 4)), [1.0])
        with pytest.raises(ValueError):
            render_focal_stack(np.zeros((3, 4, 4)), np.ones((1, 4, 4)), [])

    def test_random_scene_ranges(self, rng):
        aif, depth = random_scene(rng, 16, 16)
        assert aif.min() >= 0 and aif.max() <= 1
        assert depth.min() >= DEPTH_RANGE[0] and depth.max() <= DEPTH_RANGE[1]
        np.testing.assert_array_equal(depth.astype(np.float32).astype(np.float64), depth)

    def test_synth_is_bitwise_deterministic(self, tmp_path):
        generate_synthetic_dataset(2, 16, 16, 3, 5, tmp_path / "a")
        generate_synthetic_dataset(2, 16, 16, 3, 5, tmp_path / "b")
        generate_synthetic_dataset(2, 16, 16, 3, 6, tmp_path / "c")
        assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")
        assert _tree_digest(tmp_path / "a") != _tree_digest(tmp_path / "c")

    def test_synth_rejects_bad_sizes(self, tmp_path):
        with pytest.raises(ValueError):
            generate_synthetic_dataset(1, 20, 16, 3, 0, tmp_path)

    def test_synth_focus_spacing(self, tiny_dataset):
        _, train, _ = tiny_dataset
        focus = [s.focus for s in train.scenes[0].slices]
        np.testing.assert_allclose(focus, np.linspace(*DEPTH_RANGE, 4))


def _sample(rng, H=8, W=8):
    stack = FocalStack([Tensor(rng.uniform(size=(3, H, W))) for _ in range(2)], [1.0, 2.0])
    return SceneSample(Tensor(rng.uniform(size=(3, H, W))), stack, Tensor(rng.uniform(1, 4, size=(1, H, W))))


class TestAugment:
    def test_double_flip_is_identity(self, rng):
        s = _sample(rng)
        flip = AugmentDraw(True, 0.0, 1.0, 1.0, 1.0)
        back = apply_draw(apply_draw(s, flip), flip)
        np.testing.assert_array_equal(back.rgb.data, s.rgb.data)
        np.testing.assert_array_equal(back.depth.data, s.depth.data)
        for a, b in zip(back.stack.slices, s.stack.slices):
            np.testing.assert_array_equal(a.data, b.data)

    def test_flip_mirrors_every_component(self, rng):
        s = _sample(rng)
        out = apply_draw(s, AugmentDraw(True, 0.0, 1.0, 1.0, 1.0))
        np.testing.assert_array_equal(out.depth.data, s.depth.data[:, :, ::-1])
        np.testing.assert_array_equal(out.stack.slices[1].data, s.stack.slices[1].data[:, :, ::-1])

    def test_identity_draw(self, rng):
        s = _sample(rng)
        out = apply_draw(s, AugmentDraw(False, 0.0, 1.0, 1.0, 1.0))
        np.testing.assert_array_equal(out.rgb.data, s.rgb.data)

    def test_rotation_marks_new_pixels_invalid_and_keeps_depth_values(self, rng):
        s = _sample(rng, 16, 16)
        out = apply_draw(s, AugmentDraw(False, 5.0, 1.0, 1.0, 1.0))
        d = out.depth.data
        assert (d == 0).any()
        assert set(np.unique(d[d > 0])) <= set(np.unique(s.depth.data))

    def test_colour_jitter_leaves_depth(self, rng):
        s = _sample(rng)
        out = apply_draw(s, AugmentDraw(False, 0.0, 1.3, 0.7, 1.2))
        np.testing.assert_array_equal(out.depth.data, s.depth.data)
        assert out.rgb.data.min() >= 0 and out.rgb.data.max() <= 1
        assert not np.allclose(out.rgb.data, s.rgb.data)

    def test_seeded_augment_is_deterministic(self, rng):
        s = _sample(rng)
        cfg = AugmentConfig(seed=3)
        np.testing.assert_array_equal(augment(s, cfg).rgb.data, augment(s, cfg).rgb.data)

    @pytest.mark.parametrize("kw", [dict(flip_prob=1.5), dict(rotate_range_deg=(5, -5)), dict(jitter_range=(0, 1))])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            AugmentConfig(**kw)
