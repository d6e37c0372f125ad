import json

import numpy as np
import pytest

from wfdiff.data import (
    DataFormatError,
    DatasetManifest,
    emit_dataset,
    ingest_dataset,
    read_timeline_csv,
    write_timeline_csv,
)
from wfdiff.synth import sample_procedure

from conftest import tiny_grammar


class TestEmitDataset:
    def test_split_arithmetic(self, tmp_path):
        manifest = emit_dataset(tiny_grammar(), 10, (0.6, 0.4), seed=1, out_dir=tmp_path)
        assert len(manifest.splits["train"]) == 6
        assert len(manifest.splits["test"]) == 4

    def test_regeneration_identical(self, tmp_path):
        m1 = emit_dataset(tiny_grammar(), 6, (0.5, 0.5), seed=2, out_dir=tmp_path / "a")
        m2 = emit_dataset(tiny_grammar(), 6, (0.5, 0.5), seed=2, out_dir=tmp_path / "b")
        assert m1.to_dict() == m2.to_dict()
        assert m1.hash() == m2.hash()
        for vid in m1.video_ids():
            a = (tmp_path / "a" / "videos" / f"{vid}_obs.npy").read_bytes()
            b = (tmp_path / "b" / "videos" / f"{vid}_obs.npy").read_bytes()
            assert a == b
            a = (tmp_path / "a" / "videos" / f"{vid}.csv").read_bytes()
            b = (tmp_path / "b" / "videos" / f"{vid}.csv").read_bytes()
            assert a == b

    def test_longtail_membership_matches_variant(self, tmp_path):
        manifest = emit_dataset(tiny_grammar(), 12, (0.5, 0.5), seed=3, out_dir=tmp_path)
        for vid, variant in manifest.variant_of.items():
            assert manifest.longtail[vid] == (variant != 0)

    def test_bad_ratios_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            emit_dataset(tiny_grammar(), 4, (0.6, 0.6), seed=0, out_dir=tmp_path)

    def test_three_way_split(self, tmp_path):
        manifest = emit_dataset(tiny_grammar(), 10, (0.6, 0.2, 0.2), seed=4, out_dir=tmp_path)
        assert set(manifest.splits) == {"train", "val", "test"}
        assert sum(len(v) for v in manifest.splits.values()) == 10


class TestTimelineCsv:
    def test_roundtrip(self, tmp_path):
        tl = sample_procedure(tiny_grammar(), seed=7)
        path = tmp_path / "v.csv"
        write_timeline_csv(tl, path)
        back = read_timeline_csv(path, tl.video_id, tl.phase_names, tl.tool_names)
        np.testing.assert_array_equal(back.phase_of, tl.phase_of)
        np.testing.assert_array_equal(back.tool_active, tl.tool_active)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "v.csv"
        path.write_text("frame,phase\n0,0\n")
        with pytest.raises(DataFormatError):
            read_timeline_csv(path, "v", ("a",), ())

    def test_unknown_phase_id_rejected(self, tmp_path):
        path = tmp_path / "v.csv"
        path.write_text("frame,phase_id\n0,5\n")
        with pytest.raises(DataFormatError):
            read_timeline_csv(path, "v", ("a", "b"), ())


class TestIngest:
    def test_lossless_roundtrip(self, tmp_path):
        g = tiny_grammar()
        manifest = emit_dataset(g, 6, (0.5, 0.5), seed=5, out_dir=tmp_path)
        ds = ingest_dataset(tmp_path)
        assert ds.manifest.to_dict() == manifest.to_dict()
        assert ds.phase_names == g.phase_names
        assert ds.tool_names == g.tool_names
        for vid in manifest.video_ids():
            tl = sample_procedure(g, manifest.seeds[vid])
            np.testing.assert_array_equal(ds.videos[vid].timeline.phase_of, tl.phase_of)

    def test_length_mismatch_names_offending_video(self, tmp_path):
        emit_dataset(tiny_grammar(), 4, (0.5, 0.5), seed=6, out_dir=tmp_path)
        ds = ingest_dataset(tmp_path)
        vid = ds.manifest.video_ids()[0]
        obs_path = tmp_path / "videos" / f"{vid}_obs.npy"
        obs = np.load(obs_path)
        np.save(obs_path, obs[:-3])
        with pytest.raises(DataFormatError) as err:
            ingest_dataset(tmp_path)
        assert vid in str(err.value)

    def test_empty_directory_rejected(self, tmp_path):
        with pytest.raises(DataFormatError):
            ingest_dataset(tmp_path)

    def test_missing_video_file_rejected(self, tmp_path):
        emit_dataset(tiny_grammar(), 4, (0.5, 0.5), seed=6, out_dir=tmp_path)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        vid = manifest["splits"]["train"][0]
        (tmp_path / "videos" / f"{vid}.csv").unlink()
        with pytest.raises(DataFormatError) as err:
            ingest_dataset(tmp_path)
        assert vid in str(err.value)

    def test_manifest_roundtrip(self):
        m = DatasetManifest(
            splits={"train": ["a"], "test": ["b"]},
            variant_of={"a": 0, "b": 1},
            longtail={"a": False, "b": True},
            seeds={"a": 1, "b": 2},
            grammar_hash="x",
            dataset_seed=9,
        )
        assert DatasetManifest.from_dict(m.to_dict()) == m
