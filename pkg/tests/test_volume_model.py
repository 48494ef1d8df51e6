import gzip
import json
import struct

import nibabel as nib
import numpy as np
import pytest

from synth_eval.errors import (
    DegenerateVector, DimensionError, DimError, DuplicateItem, FormatError, IoError, UnsupportedDatatype,
)
from synth_eval.volume_model import (
    EmbeddingBatch, EmbeddingItem, FeatureMapSet, Mask2D, Modality, Slice2D, Volume3D,
    read_embeddings, read_mask_stack, read_nifti, write_embeddings, write_mask_stack, write_nifti,
)


SCL_SLOPE_OFFSET = 112


def _save(data, path, spacing=(1.0, 1.0, 1.0), slope=None, inter=None):
    img = nib.Nifti1Image(data, np.diag([*spacing, 1.0]))
    img.header.set_zooms(tuple(spacing) + (1.0,) * (data.ndim - len(spacing)))
    nib.save(img, str(path))
    if slope is not None:
        # nibabel recomputes scaling on save, so patch scl_slope/scl_inter afterwards
        raw = bytearray(path.read_bytes())
        raw[SCL_SLOPE_OFFSET:SCL_SLOPE_OFFSET + 8] = np.array([slope, inter], dtype="<f4").tobytes()
        path.write_bytes(bytes(raw))
    return path


class TestVolumeTypes:
    def test_volume_flat_order_is_x_fastest(self):
        data = np.arange(24, dtype=float).reshape((2, 3, 4), order="F")
        v = Volume3D(data)
        assert v.dims == (2, 3, 4)
        assert list(v.data.ravel(order="F")) == list(range(24))

    def test_volume_rejects_bad_shapes_and_spacing(self):
        with pytest.raises(DimensionError):
            Volume3D(np.zeros((4, 4)))
        with pytest.raises(DimensionError):
            Volume3D(np.zeros((2, 2, 2)), spacing=(1.0, 0.0, 1.0))

    def test_volume_is_immutable(self):
        v = Volume3D(np.zeros((2, 2, 2)))
        with pytest.raises(ValueError):
            v.data[0, 0, 0] = 1.0

    def test_slice_carries_metadata(self):
        v = Volume3D(np.random.default_rng(0).random((4, 5, 3)), modality=Modality.T2,
                     subject_id="s1")
        s = v.slice(2)
        assert isinstance(s, Slice2D)
        assert s.dims == (4, 5)
        assert (s.slice_index, s.modality, s.subject_id) == (2, Modality.T2, "s1")
        np.testing.assert_array_equal(s.data, v.data[:, :, 2])

    def test_mask_must_be_binary(self):
        assert Mask2D(np.array([[0, 1], [1, 1]])).count == 3
        with pytest.raises(FormatError):
            Mask2D(np.array([[0, 2], [1, 1]]))

    def test_modality_prompts_are_distinct(self):
        prompts = {m.prompt_text for m in Modality}
        assert len(prompts) == len(Modality)
        assert "fat appearing bright" in Modality.T1.prompt_text

    def test_feature_levels_must_be_3d(self):
        with pytest.raises(DimError):
            FeatureMapSet((np.zeros((2, 2)),))


class TestEmbeddingBatch:
    def test_duplicate_key_rejected(self):
        item = EmbeddingItem(np.ones(3), Modality.T1, "a", 0)
        with pytest.raises(DuplicateItem):
            EmbeddingBatch(3, (item, EmbeddingItem(np.ones(3) * 2, Modality.T1, "a", 0)))

    def test_zero_vector_rejected(self):
        with pytest.raises(DegenerateVector):
            EmbeddingBatch(2, (EmbeddingItem(np.zeros(2), Modality.T1, "a", 0),))

    def test_length_mismatch_rejected(self):
        with pytest.raises(FormatError):
            EmbeddingBatch(3, (EmbeddingItem(np.ones(2), Modality.T1, "a", 0),))

    def test_modalities_in_declaration_order(self):
        batch = EmbeddingBatch.from_arrays(np.ones((3, 2)), [Modality.T2, Modality.T1, Modality.T1c],
                                           ["a"] * 3, [0, 0, 0])
        assert batch.modalities() == [Modality.T1, Modality.T1c, Modality.T2]

    def test_json_round_trip_preserves_order_and_values(self, tmp_path, rng):
        vectors = rng.normal(size=(4, 5))
        batch = EmbeddingBatch.from_arrays(vectors, [Modality.T2, Modality.T1, Modality.T1c, Modality.T1],
                                           ["b", "a", "a", "c"], [3, 0, 0, 7])
        path = tmp_path / "emb.json"
        write_embeddings(batch, path)
        back = read_embeddings(path)
        assert [i.key for i in back.items] == [i.key for i in batch.items]
        np.testing.assert_array_equal(back.matrix(), batch.matrix())

    def test_malformed_json_reports_offset(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"dim": 2, "items": [')
        with pytest.raises(FormatError) as info:
            read_embeddings(path)
        assert info.value.offset is not None

    @pytest.mark.parametrize("bad", [float("nan"), float("inf"), float("-inf")])
    def test_non_finite_vector_rejected(self, tmp_path, bad):
        path = tmp_path / "nan.json"
        items = [{"vector": [1.0, 0.5], "modality": "T1", "subject_id": "p", "slice_index": 0},
                 {"vector": [bad, 1.0], "modality": "T2", "subject_id": "p", "slice_index": 0}]
        path.write_text(json.dumps({"dim": 2, "items": items}))
        with pytest.raises(FormatError, match="item 1"):
            read_embeddings(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(IoError):
            read_embeddings(tmp_path / "nope.json")


class TestNifti:
    def test_float32_round_trip_is_bit_exact(self, tmp_path, rng):
        data = rng.random((5, 4, 3)).astype(np.float32).astype(np.float64)
        v = Volume3D(data, spacing=(0.5, 1.0, 2.0), modality=Modality.T1c, subject_id="p7")
        path = tmp_path / "p7_T1c.nii.gz"
        write_nifti(v, path)
        back = read_nifti(path)
        np.testing.assert_array_equal(back.data, v.data)
        assert back.spacing == (0.5, 1.0, 2.0)
        assert back.modality is Modality.T1c
        assert back.subject_id == "p7"

    @pytest.mark.parametrize("dtype", [np.int16, np.uint8])
    def test_integer_types_with_scaling(self, tmp_path, dtype):
        raw = np.arange(24, dtype=dtype).reshape((2, 3, 4))
        path = _save(raw, tmp_path / "v.nii", slope=2.0, inter=-1.0)
        back = read_nifti(path)
        np.testing.assert_array_equal(back.data, raw.astype(np.float64) * 2.0 - 1.0)

    def test_spacing_ignores_orientation(self, tmp_path):
        path = _save(np.zeros((2, 2, 2), dtype=np.float32), tmp_path / "v.nii", spacing=(1.5, 1.5, 3.0))
        assert read_nifti(path).spacing == (1.5, 1.5, 3.0)

    def test_unsupported_datatype(self, tmp_path):
        path = _save(np.zeros((2, 2, 2), dtype=np.float64), tmp_path / "v.nii")
        with pytest.raises(UnsupportedDatatype) as info:
            read_nifti(path)
        assert info.value.code == 64

    def test_four_dimensional_rejected(self, tmp_path):
        path = _save(np.zeros((2, 2, 2, 2), dtype=np.float32), tmp_path / "v.nii")
        with pytest.raises(DimensionError):
            read_nifti(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "short.nii"
        path.write_bytes(b"\x5c\x01\x00\x00" + b"\x00" * 100)
        with pytest.raises(FormatError) as info:
            read_nifti(path)
        assert info.value.offset == 104

    def test_bad_magic(self, tmp_path):
        path = _save(np.zeros((2, 2, 2), dtype=np.float32), tmp_path / "v.nii")
        raw = bytearray(path.read_bytes())
        raw[344:348] = b"xxxx"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError) as info:
            read_nifti(path)
        assert info.value.offset == 344

    def test_big_endian_rejected(self, tmp_path):
        path = _save(np.zeros((2, 2, 2), dtype=np.float32), tmp_path / "v.nii")
        raw = bytearray(path.read_bytes())
        raw[0:4] = (348).to_bytes(4, "big")
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="Big-endian"):
            read_nifti(path)

    def test_gzip_and_plain_read_the_same(self, tmp_path, rng):
        data = rng.random((3, 3, 3)).astype(np.float32)
        plain = _save(data, tmp_path / "v.nii")
        gz = tmp_path / "w.nii.gz"
        gz.write_bytes(gzip.compress(plain.read_bytes()))
        np.testing.assert_array_equal(read_nifti(plain).data, read_nifti(gz).data)

    def test_written_header_layout(self, tmp_path):
        path = tmp_path / "zeros.nii"
        write_nifti(Volume3D(np.zeros((2, 2, 2))), path, sidecar=False)
        raw = path.read_bytes()
        assert len(raw) == 352 + 8 * 4
        assert struct.unpack_from("<i", raw, 0)[0] == 348
        dims = struct.unpack_from("<8h", raw, 40)
        assert dims[:4] == (3, 2, 2, 2)
        assert struct.unpack_from("<h", raw, 70)[0] == 16
        assert struct.unpack_from("<h", raw, 72)[0] == 32
        assert struct.unpack_from("<3f", raw, 80) == (1.0, 1.0, 1.0)
        assert struct.unpack_from("<f", raw, 108)[0] == 352.0
        assert raw[344:348] == b"n+1\x00"
        assert raw[352:] == bytes(32)

    def test_sidecar_written(self, tmp_path):
        path = tmp_path / "s_T2.nii.gz"
        write_nifti(Volume3D(np.ones((2, 2, 2)), modality=Modality.T2, subject_id="s"), path)
        meta = json.loads((tmp_path / "s_T2.json").read_text())
        assert meta == {"modality": "T2", "subject_id": "s"}

    def test_mask_stack_round_trip(self, tmp_path, small_phantom):
        path = tmp_path / "mask.nii.gz"
        write_mask_stack(small_phantom.masks, path)
        back = read_mask_stack(path)
        assert len(back) == len(small_phantom.masks)
        for a, b in zip(back, small_phantom.masks):
            np.testing.assert_array_equal(a.data, b.data)
