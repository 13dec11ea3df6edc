import numpy as np
import pytest

from petphys.errors import DomainError
from petphys.phantom import (
    BACKGROUND,
    CSF,
    GRAY,
    LESION_CLASSES,
    WHITE,
    PhantomSpec,
    fov_mask,
    generate,
    generate_dataset,
    generate_volume,
    region_noise_target,
    split_sizes,
)
from petphys.rng import Rng


class TestSpec:
    def test_defaults(self):
        s = PhantomSpec()
        assert (s.size, s.voxel_size, s.lesion_probability) == (128, 2.0, 0.3)

    @pytest.mark.parametrize("kw", [{"size": 4}, {"lesion_probability": 1.5}, {"num_ellipses": 0}])
    def test_invalid(self, kw):
        with pytest.raises(DomainError):
            PhantomSpec(**kw)

    def test_mri_range_checked(self):
        prof = dict(PhantomSpec().contrast_profile)
        prof["white"] = (0.3, 1.2, 0.3)
        with pytest.raises(DomainError):
            PhantomSpec(contrast_profile=prof)


class TestGenerate:
    def test_deterministic(self):
        a = generate(PhantomSpec(size=32, seed=4))
        b = generate(PhantomSpec(size=32, seed=4))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.data, y.data)

    def test_seed_changes_layout(self):
        a = generate(PhantomSpec(size=32, seed=4))[0]
        b = generate(PhantomSpec(size=32, seed=5))[0]
        assert not np.array_equal(a.data, b.data)

    def test_ranges_and_support(self):
        pet, t1, t2, tissue = generate(PhantomSpec(size=48, seed=1))
        outside = ~fov_mask(48)
        for im in (pet, t1, t2):
            assert np.all(im.data[outside] == 0)
        assert pet.data.min() >= 0
        assert 0 <= t1.data.min() and t1.data.max() <= 1
        assert 0 <= t2.data.min() and t2.data.max() <= 1
        labels = set(np.unique(tissue.data).astype(int))
        assert {BACKGROUND, WHITE, GRAY, CSF} <= labels

    def test_gray_brighter_than_white_in_pet(self):
        pet, _, _, tissue = generate(PhantomSpec(size=64, seed=2))
        t = tissue.data
        assert pet.data[t == GRAY].mean() > pet.data[t == WHITE].mean()

    def test_csf_bright_in_t2(self):
        _, t1, t2, tissue = generate(PhantomSpec(size=64, seed=2))
        csf = tissue.data == CSF
        assert t2.data[csf].mean() > t1.data[csf].mean()

    def test_no_lesions_when_disabled(self):
        for s in range(5):
            _, _, _, tissue = generate_volume(PhantomSpec(size=32, seed=s, lesion_probability=0.0), 5)
            for t in tissue:
                assert not np.isin(t.data, LESION_CLASSES).any()

    def test_lesion_probability_one_keeps_layout(self):
        a = generate(PhantomSpec(size=32, seed=8, lesion_probability=0.0))[3].data
        b = generate(PhantomSpec(size=32, seed=8, lesion_probability=1.0))[3].data
        # lesions only relabel voxels, so the non-lesion voxels agree
        keep = ~np.isin(b, LESION_CLASSES)
        np.testing.assert_array_equal(a[keep], b[keep])

    def test_volume_slices_vary(self):
        pet = generate_volume(PhantomSpec(size=32, seed=3), 4)[0]
        assert len(pet) == 4
        assert not np.array_equal(pet[0].data, pet[1].data)

    def test_voxel_size_carried(self):
        assert generate(PhantomSpec(size=16, voxel_size=4.0))[0].voxel_size == 4.0


class TestDataset:
    @pytest.mark.parametrize("n,want", [(30, (21, 3, 6)), (10, (7, 1, 2)), (3, (1, 1, 1))])
    def test_split_sizes(self, n, want):
        assert split_sizes(n) == want

    def test_too_few(self):
        with pytest.raises(DomainError):
            split_sizes(2)

    def test_disjoint_and_deterministic(self):
        d = generate_dataset(10, PhantomSpec(size=16), seed=1, num_slices=2)
        ids = [s.index for s in d.train + d.val + d.test]
        assert sorted(ids) == list(range(10))
        d2 = generate_dataset(10, PhantomSpec(size=16), seed=1, num_slices=2)
        assert [s.index for s in d2.test] == [s.index for s in d.test]
        np.testing.assert_array_equal(d.test[0].pet[1].data, d2.test[0].pet[1].data)


class TestRegionNoise:
    def test_per_class_std(self):
        labels = np.repeat(np.arange(3), 20000).reshape(3, 20000).astype(float)
        clean = np.ones_like(labels)
        out = region_noise_target(clean, labels, {0: 0.0, 1: 0.1, 2: 0.3}, Rng(0))
        resid = out.data - clean
        assert np.all(resid[0] == 0)
        np.testing.assert_allclose(resid[1].std(), 0.1, rtol=0.03)
        np.testing.assert_allclose(resid[2].std(), 0.3, rtol=0.03)
