import numpy as np
import pytest

from synth_eval.errors import ParamError
from synth_eval.metrics import cosine_similarity
from synth_eval.phantom import (
    PHANTOM_MODALITIES, PhantomSpec, TissueTable, generate_embeddings, generate_phantom,
    standard_phantom,
)
from synth_eval.volume_model import Modality


def test_standard_phantom_spec():
    spec = standard_phantom(5)
    assert spec.dims == (64, 64, 24)
    assert spec.spacing == (1.0, 1.0, 1.0)
    assert spec.n_structures == 6
    assert spec.lesion
    assert spec.seed == 5


@pytest.mark.parametrize("kwargs", [
    {"dims": (15, 16, 4)},
    {"dims": (16, 16, 3)},
    {"n_structures": 0},
    {"n_structures": 17},
    {"spacing": (1.0, 0.0, 1.0)},
])
def test_invalid_specs(kwargs):
    with pytest.raises(ParamError):
        PhantomSpec(**kwargs)


def test_same_seed_is_bit_identical(small_phantom):
    again = generate_phantom(PhantomSpec(dims=(32, 32, 6), seed=3, n_structures=5, lesion=True))
    for m in PHANTOM_MODALITIES:
        np.testing.assert_array_equal(again.volumes[m].data, small_phantom.volumes[m].data)
    for a, b in zip(again.masks, small_phantom.masks):
        np.testing.assert_array_equal(a.data, b.data)


def test_different_seed_differs(small_phantom):
    other = generate_phantom(PhantomSpec(dims=(32, 32, 6), seed=4, n_structures=5, lesion=True))
    assert not np.array_equal(other.volumes[Modality.T1].data, small_phantom.volumes[Modality.T1].data)


def test_volumes_share_geometry_and_are_normalized(standard):
    dims = {v.dims for v in standard.volumes.values()}
    assert dims == {(64, 64, 24)}
    for modality, v in standard.volumes.items():
        assert v.modality is modality
        assert v.data.min() == 0.0
        assert v.data.max() == 1.0


def test_one_mask_per_slice(standard):
    assert len(standard.masks) == 24
    assert all(m.dims == (64, 64) for m in standard.masks)


def test_lesion_mask_marks_lesion_voxels(standard):
    assert any(m.count > 0 for m in standard.masks)
    stacked = np.stack([m.data for m in standard.masks], axis=2).astype(bool)
    np.testing.assert_array_equal(stacked, standard.lesion_voxels())


def test_lesion_enhances_on_t1c_before_shading(standard):
    lesion = standard.lesion_voxels()
    t1 = standard.unshaded(Modality.T1)[lesion]
    t1c = standard.unshaded(Modality.T1c)[lesion]
    assert lesion.any()
    assert np.all(t1c > t1)


def test_contrast_orderings_hold_at_every_voxel(standard):
    table = standard.tissue_table
    t1 = standard.unshaded(Modality.T1)
    t2 = standard.unshaded(Modality.T2)
    name_of = standard.label_names
    for label, name in name_of.items():
        region = standard.labels == label
        if not region.any():
            continue
        if table.classes[name] == "fluid":
            assert np.all(t2[region] > t1[region])
        if table.classes[name] == "fat":
            assert np.all(t1[region] > t2[region])
    assert table.structures_of("fluid")


def test_no_lesion_means_empty_masks():
    p = generate_phantom(PhantomSpec(dims=(16, 16, 4), seed=1, n_structures=2, lesion=False))
    assert all(m.count == 0 for m in p.masks)
    assert not p.lesion_voxels().any()


def test_tissue_table_check_rejects_inverted_fluid():
    table = TissueTable(
        intensities={"csf": {Modality.T1: 0.8, Modality.T1c: 0.8, Modality.T2: 0.2}},
        classes={"csf": "fluid"},
    )
    with pytest.raises(ParamError):
        table.check()


def _mean_pairwise(batch, same):
    """Brute-force mean cosine over pairs selected by ``same(a, b)``."""
    items = batch.items
    total, count = 0.0, 0
    for i in range(len(items)):
        for j in range(i + 1, len(items)):
            if same(items[i], items[j]):
                total += cosine_similarity(items[i].vector, items[j].vector)
                count += 1
    return total / count


class TestEmbeddings:
    spec = PhantomSpec(dims=(16, 16, 6), seed=11)

    def test_layout(self):
        batch = generate_embeddings(self.spec, 8, 1.0, 0.2, subjects=("a", "b"))
        assert batch.dim == 8
        assert len(batch) == 2 * 6 * 3
        assert batch.items[0].key == ("a", 0, "T1")
        assert batch.items[3].key == ("a", 1, "T1")

    def test_deterministic(self):
        a = generate_embeddings(self.spec, 8, 1.0, 0.2)
        b = generate_embeddings(self.spec, 8, 1.0, 0.2)
        np.testing.assert_array_equal(a.matrix(), b.matrix())

    def test_without_modality_offset_slices_cluster(self):
        batch = generate_embeddings(self.spec, 16, 1.0, 0.0)
        for i in range(0, len(batch), 3):
            a, b, c = batch.items[i:i + 3]
            assert cosine_similarity(a.vector, b.vector) > 0.99
            assert cosine_similarity(a.vector, c.vector) > 0.99

    def test_without_slice_signal_modalities_cluster(self):
        batch = generate_embeddings(self.spec, 16, 0.0, 1.0)
        by_modality = {}
        for item in batch.items:
            by_modality.setdefault(item.modality, []).append(item.vector)
        for vectors in by_modality.values():
            for v in vectors[1:]:
                assert cosine_similarity(vectors[0], v) > 0.99

    def test_intra_slice_exceeds_inter_slice(self):
        batch = generate_embeddings(self.spec, 16, 1.0, 0.2, noise_scale=0.01)
        intra = _mean_pairwise(batch, lambda a, b: a.slice_index == b.slice_index)
        inter = _mean_pairwise(batch, lambda a, b: a.slice_index != b.slice_index)
        assert intra > inter

    def test_dim_must_be_at_least_two(self):
        with pytest.raises(ParamError):
            generate_embeddings(self.spec, 1, 1.0, 0.2)
