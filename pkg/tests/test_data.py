import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occuage import data as D
from occuage import spectra
from occuage.errors import DomainError, FormatError


class TestNormalization:
    def test_endpoints(self):
        raw = np.zeros((2, 2, 3), dtype=np.uint8)
        assert np.all(D.normalize_image(raw).data == -1.0)
        raw255 = np.full((2, 2, 3), 255, dtype=np.uint8)
        assert np.all(np.abs(D.normalize_image(raw255).data - 1.0) <= 1 / 255)

    def test_midpoint(self):
        raw = np.full((1, 1, 3), 128, dtype=np.uint8)
        assert D.normalize_image(raw).data[0, 0, 0, 0] == pytest.approx(128 / 127.5 - 1, abs=1e-6)

    def test_wrong_channel_count(self):
        with pytest.raises(FormatError):
            D.normalize_image(np.zeros((4, 4, 1), dtype=np.uint8))

    def test_denormalize_endpoints(self):
        img = np.array([[[-1.0]], [[0.0]], [[1.0]]], dtype=np.float32)
        out = D.denormalize_image(img)
        assert out[0, 0, 0] == 0 and out[0, 0, 2] == 255

    def test_out_of_range_clamps(self):
        img = np.full((3, 1, 1), 1.5, dtype=np.float32)
        assert np.all(D.denormalize_image(img) == 255)

    def test_round_trip_all_bytes(self):
        raw = np.arange(256, dtype=np.uint8).reshape(16, 16)
        raw = np.stack([raw, raw, raw], axis=2)
        back = D.denormalize_image(D.normalize_image(raw))
        np.testing.assert_array_equal(back, raw)


class TestManifest:
    def write(self, tmp_path, text):
        path = tmp_path / "manifest.txt"
        path.write_text(text, encoding="utf-8")
        return path

    def test_five_occupations(self, tmp_path):
        lines = [f"occupation occ{i}" for i in range(1, 6)]
        lines += [
            f"sample path=occ{i}/old/a.png role=occupational occupation=occ{i} age=old"
            for i in range(1, 6)
        ]
        lines.append("sample path=young/old/y.png role=young age=old")
        m = D.load_manifest(self.write(tmp_path, "\n".join(lines)))
        assert m.condition_count == 5
        assert m.occupation_index("occ3") == 3
        assert len(m.entries) == 6

    def test_unknown_occupation_names_row(self, tmp_path):
        text = (
            "occupation doctor\n"
            "sample path=a.png role=occupational occupation=pilot age=old\n"
        )
        with pytest.raises(FormatError, match=r"line 2.*'pilot'"):
            D.load_manifest(self.write(tmp_path, text))

    def test_duplicate_paths_preserved_in_order(self, tmp_path):
        text = (
            "occupation doctor\n"
            "sample path=a.png role=young age=old\n"
            "sample path=a.png role=young age=middle\n"
            "sample path=a.png role=occupational occupation=doctor age=old\n"
        )
        m = D.load_manifest(self.write(tmp_path, text))
        assert [e.path for e in m.entries] == ["a.png"] * 3
        assert [e.age_group for e in m.entries] == ["old", "middle", "old"]

    def test_missing_file(self, tmp_path):
        with pytest.raises(FormatError, match="not found"):
            D.load_manifest(tmp_path / "nope.txt")

    @pytest.mark.parametrize(
        "bad,fragment",
        [
            ("junk a=b\n", "unknown record"),
            ("sample path=a.png role=pilot age=old\n", "unknown role"),
            ("sample path=a.png role=young age=teen\n", "unknown age group"),
            ("sample role=young age=old\n", "missing fields"),
            ("sample path=a.png role=young age=old occupation=doctor\n", "no occupation"),
            ("occupation a\noccupation a\n", "duplicate"),
        ],
    )
    def test_malformed_rows_rejected(self, tmp_path, bad, fragment):
        with pytest.raises(FormatError, match=fragment):
            D.load_manifest(self.write(tmp_path, bad))

    def test_write_then_load_round_trip(self, tmp_path):
        m = D.Manifest(
            occupations=["doctor", "farmer"],
            entries=[
                D.ManifestEntry("young/old/y.png", "young", None, "old"),
                D.ManifestEntry("doctor/old/d.png", "occupational", "doctor", "old"),
            ],
        )
        path = tmp_path / "m.txt"
        D.write_manifest(m, path)
        back = D.load_manifest(path)
        assert back == m


class TestSynth:
    def test_deterministic(self):
        prof = D.default_profiles(3)[1]
        a = D.synth_image(prof, True, seed=7, size=32)
        b = D.synth_image(prof, True, seed=7, size=32)
        assert np.array_equal(a, b)
        young = D.synth_image(prof, False, seed=7, size=32)
        assert np.abs(a - young).max() > 0.1

    @pytest.mark.parametrize("prof", D.default_profiles(5))
    def test_grating_dominant_bin(self, prof):
        young = D.synth_image(prof, False, seed=3, size=64)
        aged = D.synth_image(prof, True, seed=3, size=64)
        assert spectra.dominant_bin(aged - young) == spectra.expected_bin(prof)

    def test_orientations_distinct(self):
        p1, p2, _ = D.default_profiles(3)
        a = D.synth_image(p1, True, seed=4, size=32)
        b = D.synth_image(p2, True, seed=4, size=32)
        assert float(((a - b) ** 2).mean()) > 0

    def test_size_validation(self):
        prof = D.default_profiles(1)[0]
        with pytest.raises(DomainError):
            D.synth_image(prof, True, seed=0, size=12)
        with pytest.raises(DomainError):
            D.synth_image(prof, True, seed=0, size=48)

    def test_values_in_range(self):
        for prof in D.default_profiles(5):
            img = D.synth_image(prof, True, seed=11, size=32)
            assert img.max() <= 1.0 and img.min() >= -1.0

    def test_sample_roles(self):
        prof = D.default_profiles(2)[1]
        aged = D.synth_sample(prof, True, seed=0, size=16)
        young = D.synth_sample(prof, False, seed=0, size=16)
        assert aged.role == "occupational" and aged.occupation == 2
        assert young.role == "young" and young.occupation is None

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10_000))
    def test_classifier_separates_profiles(self, seed):
        profiles = D.default_profiles(3, amplitude=0.3)
        train = {
            p.occupation: [D.synth_image(p, True, seed + i, 32) for i in range(6)]
            for p in profiles
        }
        clf = spectra.TextureClassifier().fit(train)
        for p in profiles:
            held_out = [D.synth_image(p, True, seed + 100 + i, 32) for i in range(4)]
            assert clf.accuracy(held_out, p.occupation) == 1.0


class TestBatchStream:
    def make_stream(self, seed=0, young=7, batch=1):
        profiles = D.default_profiles(2)
        pools = D.synth_pools(profiles, young, 3, 0, 32, seed=5)
        return D.BatchStream(pools, batch, seed)

    def test_deterministic_sequence(self):
        a = self.make_stream(seed=3)
        b = self.make_stream(seed=3)
        for i in range(a.steps_per_epoch):
            ba, bb = a.batch_at(0, i), b.batch_at(0, i)
            assert np.array_equal(ba.young.data, bb.young.data)
            for p in ba.real:
                assert np.array_equal(ba.real[p].data, bb.real[p].data)

    def test_epoch_covers_every_young_sample_once(self):
        stream = self.make_stream(seed=1, young=7)
        seen = []
        for batch in stream.epoch(0):
            seen.extend(batch.young.data)
        assert len(seen) == 7
        originals = sorted(arr.tobytes() for arr in stream.pools.young)
        assert sorted(arr.tobytes() for arr in seen) == originals

    def test_batch_size_one(self):
        stream = self.make_stream(batch=1)
        batch = stream.batch_at(0, 0)
        assert batch.young.data.shape[0] == 1
        assert all(t.data.shape[0] == 1 for t in batch.real.values())

    def test_wrong_occupation_draw_valid(self):
        stream = self.make_stream()
        for idx in range(5):
            wrong = stream.wrong_occupation_for(0, idx)
            assert set(wrong) == {1, 2}
            assert wrong[1] == 2 and wrong[2] == 1

    def test_empty_pool_rejected(self):
        pools = D.DatasetPools(young=[], real={1: [np.zeros((3, 4, 4), np.float32)]})
        with pytest.raises(DomainError, match="young"):
            D.BatchStream(pools, 1, 0)

    def test_single_occupation_rejected(self):
        img = np.zeros((3, 4, 4), np.float32)
        pools = D.DatasetPools(young=[img], real={1: [img]})
        with pytest.raises(DomainError, match="two occupations"):
            D.BatchStream(pools, 1, 0)


class TestDiscovery:
    def test_tree_discovery_and_pools(self, tmp_path):
        rng = np.random.default_rng(0)
        for occ in ("doctor", "farmer"):
            for age in ("old",):
                d = tmp_path / occ / age
                d.mkdir(parents=True)
                for i in range(2):
                    D.save_png(
                        rng.uniform(-1, 1, (3, 16, 16)).astype(np.float32),
                        d / f"{i}.png",
                    )
        yd = tmp_path / "young" / "old"
        yd.mkdir(parents=True)
        D.save_png(rng.uniform(-1, 1, (3, 16, 16)).astype(np.float32), yd / "y.png")

        manifest = D.discover_manifest(tmp_path)
        assert manifest.occupations == ["doctor", "farmer"]
        assert sum(e.role == "young" for e in manifest.entries) == 1
        pools = D.manifest_pools(manifest, tmp_path, "old")
        assert len(pools.young) == 1
        assert {p: len(v) for p, v in pools.real.items()} == {1: 2, 2: 2}

    def test_png_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.uniform(-1, 1, (3, 8, 8)).astype(np.float32)
        D.save_png(img, tmp_path / "x.png")
        back = D.load_png(tmp_path / "x.png")
        # Byte quantization bounds the reload error by one grid step.
        assert np.abs(back.data[0] - img).max() <= 1 / 127.5
