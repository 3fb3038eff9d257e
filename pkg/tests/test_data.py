"""Frame I/O, manifests, splits, distortions, and corpus generation."""

import numpy as np
import pytest

from blindvq import data as dat
from blindvq.data import (
    DistortionSpec,
    FrameFormatError,
    ManifestError,
    ManifestRecord,
)


class TestPpm:
    def test_handcrafted_red_fixture(self, tmp_path):
        # 2x2 P6, every pixel (255, 0, 0)
        raw = b"P6\n2 2\n255\n" + bytes([255, 0, 0] * 4)
        p = tmp_path / "frame_000001.ppm"
        p.write_bytes(raw)
        img = dat.read_ppm(p)
        assert img.shape == (2, 2, 3)
        assert np.all(img[:, :, 0] == 255) and np.all(img[:, :, 1:] == 0)
        rec = ManifestRecord("c", ".", 2, 2, 2, 3.0)
        (tmp_path / "frame_000002.ppm").write_bytes(raw)
        clip = dat.read_frames(tmp_path, rec)
        assert np.all(clip.frames.data[:, 0] == 1.0)
        assert np.all(clip.frames.data[:, 1:] == 0.0)

    def test_roundtrip_bit_exact(self, tmp_path, rng):
        img = rng.integers(0, 256, size=(5, 7, 3)).astype(np.uint8)
        dat.write_ppm(tmp_path / "x.ppm", img)
        np.testing.assert_array_equal(dat.read_ppm(tmp_path / "x.ppm"), img)

    def test_missing_frame_names_file(self, tmp_path):
        raw = b"P6\n2 2\n255\n" + bytes(12)
        (tmp_path / "frame_000001.ppm").write_bytes(raw)
        rec = ManifestRecord("c", ".", 2, 2, 2, 3.0)
        with pytest.raises(FrameFormatError, match="frame_000002.ppm"):
            dat.read_frames(tmp_path, rec)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.ppm"
        p.write_bytes(b"P5\n2 2\n255\n" + bytes(4))
        with pytest.raises(FrameFormatError, match="magic"):
            dat.read_ppm(p)

    def test_unsupported_maxval(self, tmp_path):
        p = tmp_path / "deep.ppm"
        p.write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
        with pytest.raises(FrameFormatError, match="maxval"):
            dat.read_ppm(p)

    def test_short_pixel_data(self, tmp_path):
        p = tmp_path / "short.ppm"
        p.write_bytes(b"P6\n2 2\n255\n" + bytes(5))
        with pytest.raises(FrameFormatError, match="short"):
            dat.read_ppm(p)

    def test_clip_roundtrip_after_quantization(self, tmp_path, rng):
        frames = rng.uniform(0, 1, size=(4, 3, 6, 6))
        dat.write_clip_frames(tmp_path / "c0", frames)
        rec = ManifestRecord("c0", "c0", 4, 6, 6, 2.0)
        back = dat.read_frames(tmp_path, rec).frames.data
        quantized = np.round(frames * 255.0) / 255.0
        np.testing.assert_array_equal(back, quantized)
        # a second write/read cycle is the identity
        dat.write_clip_frames(tmp_path / "c1", back)
        rec1 = ManifestRecord("c1", "c1", 4, 6, 6, 2.0)
        np.testing.assert_array_equal(dat.read_frames(tmp_path, rec1).frames.data, back)


class TestManifest:
    def _write(self, tmp_path, body):
        p = tmp_path / "manifest.csv"
        p.write_text(body, encoding="utf-8")
        return p

    def test_54_rows(self, tmp_path):
        rows = [dat.MANIFEST_HEADER] + [
            f"clip_{i:03d},clip_{i:03d},8,32,32,{1.0 + (i % 5)}" for i in range(54)
        ]
        recs = dat.load_manifest(self._write(tmp_path, "\n".join(rows) + "\n"))
        assert len(recs) == 54
        assert recs[0].id == "clip_000" and recs[-1].mos == pytest.approx(1.0 + 53 % 5)

    def test_empty_data_section(self, tmp_path):
        assert dat.load_manifest(self._write(tmp_path, dat.MANIFEST_HEADER + "\n")) == []

    def test_mos_out_of_range_names_row(self, tmp_path):
        body = "\n".join(
            [dat.MANIFEST_HEADER, "a,a,8,32,32,3", "b,b,8,32,32,3", "c,c,8,32,32,7"]
        )
        with pytest.raises(ManifestError, match="row 3"):
            dat.load_manifest(self._write(tmp_path, body))

    def test_duplicate_id(self, tmp_path):
        body = "\n".join([dat.MANIFEST_HEADER, "a,a,8,32,32,3", "a,b,8,32,32,3"])
        with pytest.raises(ManifestError, match="duplicate"):
            dat.load_manifest(self._write(tmp_path, body))

    def test_missing_column(self, tmp_path):
        body = "\n".join([dat.MANIFEST_HEADER, "a,a,8,32,32"])
        with pytest.raises(ManifestError, match="6 columns"):
            dat.load_manifest(self._write(tmp_path, body))

    def test_bad_header(self, tmp_path):
        with pytest.raises(ManifestError, match="header"):
            dat.load_manifest(self._write(tmp_path, "id,mos\n"))

    def test_odd_frame_count(self, tmp_path):
        body = "\n".join([dat.MANIFEST_HEADER, "a,a,7,32,32,3"])
        with pytest.raises(ManifestError, match="even"):
            dat.load_manifest(self._write(tmp_path, body))

    def test_write_read_roundtrip(self, tmp_path):
        recs = [ManifestRecord(f"c{i}", f"c{i}", 8, 16, 16, 1.0 + i) for i in range(4)]
        p = tmp_path / "m.csv"
        dat.write_manifest(p, recs)
        assert dat.load_manifest(p) == recs


class TestSplit:
    def _records(self, n):
        return [ManifestRecord(f"c{i}", f"c{i}", 8, 32, 32, 3.0) for i in range(n)]

    def test_counts_54(self):
        a = dat.split(self._records(54), seed=1)
        counts = {k: sum(1 for v in a.values() if v == k) for k in ("train", "val", "test")}
        assert counts == {"train": 32, "val": 11, "test": 11}

    def test_counts_5(self):
        a = dat.split(self._records(5), seed=1)
        counts = {k: sum(1 for v in a.values() if v == k) for k in ("train", "val", "test")}
        assert counts == {"train": 3, "val": 1, "test": 1}

    def test_determinism_and_seed_sensitivity(self):
        recs = self._records(20)
        assert dat.split(recs, seed=5) == dat.split(recs, seed=5)
        diffs = sum(dat.split(recs, seed=5) != dat.split(recs, seed=s) for s in range(6, 12))
        assert diffs > 0

    def test_partition_law_randomized(self, rng):
        for _ in range(500):
            n = int(rng.integers(3, 60))
            recs = self._records(n)
            a = dat.split(recs, seed=int(rng.integers(0, 10_000)))
            assert sorted(a.keys()) == sorted(r.id for r in recs)
            assert set(a.values()) <= {"train", "val", "test"}

    def test_too_few_records(self):
        with pytest.raises(ValueError):
            dat.split(self._records(2))


class TestDistortions:
    def _image(self, rng, size=16):
        return rng.uniform(0, 1, size=(3, size, size))

    @pytest.mark.parametrize("kind", dat.DISTORTION_KINDS)
    def test_level_zero_is_identity(self, kind, rng):
        img = self._image(rng)
        out = dat.distort_image(img, DistortionSpec(kind, 0.0, seed=3))
        assert np.array_equal(out, img)

    def test_blur_keeps_constant_images(self):
        img = np.full((3, 12, 12), 0.37)
        out = dat.distort_image(img, DistortionSpec("gaussian_blur", 0.8))
        np.testing.assert_allclose(out, img, atol=1e-12)

    def test_noise_is_seed_deterministic(self, rng):
        img = self._image(rng)
        spec = DistortionSpec("gaussian_noise", 0.5, seed=99)
        a = dat.distort_image(img, spec)
        b = dat.distort_image(img, spec)
        assert np.array_equal(a, b)
        c = dat.distort_image(img, DistortionSpec("gaussian_noise", 0.5, seed=100))
        assert not np.array_equal(a, c)

    def test_contrast_formula(self, rng):
        img = self._image(rng)
        out = dat.distort_image(img, DistortionSpec("contrast_reduction", 0.25))
        np.testing.assert_allclose(out, 0.5 + 0.75 * (img - 0.5), atol=1e-15)

    def test_output_in_unit_range(self, rng):
        img = self._image(rng)
        for kind in dat.DISTORTION_KINDS:
            out = dat.distort_image(img, DistortionSpec(kind, 1.0, seed=5))
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_level_out_of_range(self):
        with pytest.raises(ValueError):
            DistortionSpec("gaussian_blur", 1.5)

    def test_blur_reduces_laplacian_energy_monotonically(self):
        # mean |Laplacian| of a textured image is non-increasing in level
        rng = np.random.default_rng(11)
        img = dat._render_pattern(rng, 1, 24)[0]

        def lap_energy(x):
            inner = x[:, 1:-1, 1:-1]
            lap = (
                x[:, :-2, 1:-1] + x[:, 2:, 1:-1] + x[:, 1:-1, :-2] + x[:, 1:-1, 2:]
                - 4.0 * inner
            )
            return np.abs(lap).mean()

        energies = [
            lap_energy(dat.distort_image(img, DistortionSpec("gaussian_blur", lvl)))
            for lvl in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
        ]
        assert all(b <= a + 1e-12 for a, b in zip(energies, energies[1:]))


class TestSynthCorpus:
    def test_default_count_and_labels(self, tmp_path):
        manifest = dat.synth_corpus(tmp_path / "corpus", n_clips=6, frames_per_clip=4, size=8, seed=3)
        recs = dat.load_manifest(manifest)
        assert len(recs) == 6
        for r in recs:
            assert 1.0 <= r.mos <= 5.0
            clip = dat.read_frames(tmp_path / "corpus", r)
            assert clip.frames.shape == (4, 3, 8, 8)

    def test_pseudo_mos_endpoints(self):
        # the label mapping pins 5 at level 0 and 1 at level 1
        assert 5.0 - 4.0 * 0.0 == 5.0
        assert 5.0 - 4.0 * 1.0 == 1.0

    def test_regeneration_is_byte_identical(self, tmp_path):
        m1 = dat.synth_corpus(tmp_path / "a", n_clips=4, frames_per_clip=4, size=8, seed=7)
        m2 = dat.synth_corpus(tmp_path / "b", n_clips=4, frames_per_clip=4, size=8, seed=7)
        assert m1.read_bytes() == m2.read_bytes()
        for rel in sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.ppm")):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_different_seed_differs(self, tmp_path):
        m1 = dat.synth_corpus(tmp_path / "a", n_clips=3, frames_per_clip=4, size=8, seed=1)
        m2 = dat.synth_corpus(tmp_path / "b", n_clips=3, frames_per_clip=4, size=8, seed=2)
        assert m1.read_bytes() != m2.read_bytes()

    def test_odd_frame_count_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            dat.synth_corpus(tmp_path / "x", n_clips=2, frames_per_clip=5, size=8, seed=0)

    def test_stills_are_labeled_and_deterministic(self):
        a = dat.synth_stills(n_images=5, size=8, seed=2)
        b = dat.synth_stills(n_images=5, size=8, seed=2)
        assert len(a) == 5
        for (img_a, lab_a), (img_b, lab_b) in zip(a, b):
            assert np.array_equal(img_a, img_b) and lab_a == lab_b
            assert 1.0 <= lab_a <= 5.0
