import numpy as np
import pytest

from segattn import scenes
from segattn.errors import HmatFormatError


class TestGenerate:
    def test_same_seed_byte_identical(self):
        a = scenes.generate_scene(9, 64, 64)
        b = scenes.generate_scene(9, 64, 64)
        assert np.array_equal(a.image.data, b.image.data)
        assert np.array_equal(a.labels, b.labels)

    def test_dims_agree_and_values_bounded(self):
        s = scenes.generate_scene(1, 64, 96)
        assert s.image.dims == (3, 64, 96)
        assert s.labels.shape == (64, 96)
        assert s.image.data.min() >= 0.0 and s.image.data.max() <= 1.0
        assert s.labels.max() < scenes.NUM_CLASSES

    def test_every_class_covers_one_percent_on_average(self):
        fractions = np.zeros(scenes.NUM_CLASSES)
        n = 100
        for seed in range(n):
            lab = scenes.generate_scene(seed, 64, 64).labels
            fractions += np.bincount(lab.reshape(-1), minlength=scenes.NUM_CLASSES) / lab.size
        assert (fractions / n >= 0.01).all(), fractions / n

    def test_geometry_limits(self):
        with pytest.raises(ValueError):
            scenes.generate_scene(0, 24, 64)
        with pytest.raises(ValueError):
            scenes.generate_scene(0, 64, 65)


class TestAugment:
    def test_forced_flip_is_involution(self):
        s = scenes.generate_scene(3, 64, 64)
        once = scenes.augment(s, 0, force_flip=True, force_scale=1.0)
        twice = scenes.augment(once, 0, force_flip=True, force_scale=1.0)
        assert np.array_equal(twice.image.data, s.image.data)
        assert np.array_equal(twice.labels, s.labels)

    def test_unit_scale_full_crop_is_identity(self):
        s = scenes.generate_scene(4, 64, 64)
        out = scenes.augment(s, 0, force_flip=False, force_scale=1.0)
        assert np.array_equal(out.image.data, s.image.data)
        assert np.array_equal(out.labels, s.labels)

    def test_flip_preserves_class_histogram(self):
        s = scenes.generate_scene(5, 64, 64)
        out = scenes.augment(s, 0, force_flip=True, force_scale=1.0)
        want = np.bincount(s.labels.reshape(-1), minlength=6)
        got = np.bincount(out.labels.reshape(-1), minlength=6)
        assert np.array_equal(want, got)

    def test_no_new_class_ids(self):
        s = scenes.generate_scene(6, 64, 64)
        present = set(np.unique(s.labels))
        for seed in range(10):
            out = scenes.augment(s, seed, crop_h=32, crop_w=32, scale_range=(0.5, 2.0))
            assert set(np.unique(out.labels)) <= present
            assert out.labels.shape == (32, 32)

    def test_impossible_crop_rejected(self):
        s = scenes.generate_scene(7, 64, 64)
        with pytest.raises(ValueError):
            scenes.augment(s, 0, force_scale=0.5, crop_h=64, crop_w=64)

    def test_deterministic_in_seed(self):
        s = scenes.generate_scene(8, 64, 64)
        a = scenes.augment(s, 42, crop_h=48, crop_w=48)
        b = scenes.augment(s, 42, crop_h=48, crop_w=48)
        assert np.array_equal(a.image.data, b.image.data)
        assert np.array_equal(a.labels, b.labels)


class TestPersistence:
    def test_round_trip_bit_identical(self, tmp_path):
        s = scenes.generate_scene(11, 64, 64)
        scenes.save_scene(tmp_path, 0, s)
        back = scenes.load_scene(tmp_path, 0)
        assert np.array_equal(back.image.data, s.image.data)
        assert back.image.dtype == "f32"
        assert back.labels.dtype == np.uint8
        assert np.array_equal(back.labels, s.labels)

    def test_truncated_file_is_format_error(self, tmp_path):
        s = scenes.generate_scene(12, 64, 64)
        scenes.save_scene(tmp_path, 0, s)
        path = tmp_path / "scene_00000.img.hmat"
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(HmatFormatError):
            scenes.load_scene(tmp_path, 0)

    def test_dataset_directory_layout(self, tmp_path):
        scenes.write_dataset(tmp_path / "d", 3, 64, 64, base_seed=100)
        files = sorted(p.name for p in (tmp_path / "d").iterdir())
        assert "manifest.txt" in files
        assert "scene_00000.img.hmat" in files and "scene_00002.lbl.hmat" in files
        manifest = (tmp_path / "d" / "manifest.txt").read_text()
        assert "count = 3" in manifest and "palette:" in manifest
        data = scenes.read_dataset(tmp_path / "d")
        assert len(data) == 3
        want = scenes.generate_scene(101, 64, 64)
        assert np.array_equal(data[1].labels, want.labels)
