import numpy as np
import pytest

from oracles import psnr_reference
from petphys.errors import ConfigError, DomainError, GeometryError
from petphys.phantom import PhantomSpec, generate
from petphys.projector import ProjectorGeometry, get_projector, make_partition
from petphys.recon import ReconConfig, gaussian_smooth, mlem, osem, poisson_loglik, resolve_partition
from petphys.tensor import Image


@pytest.fixture(scope="module")
def phantom32():
    pet = generate(PhantomSpec(size=32, voxel_size=4.0, seed=5))[0]
    geom = ProjectorGeometry.for_image(32, 32, 4.0, 40)
    return geom, pet


class TestConfig:
    def test_defaults(self):
        c = ReconConfig()
        assert (c.num_iterations, c.num_subsets, c.psf_fwhm, c.post_smooth_fwhm) == (3, 21, 4.0, 4.0)

    def test_collects_problems(self):
        with pytest.raises(ConfigError) as e:
            ReconConfig(num_iterations=0, psf_fwhm=-1.0, init_value=0.0)
        assert len(e.value.problems) == 3

    def test_partition_snaps(self):
        assert resolve_partition(ProjectorGeometry.for_image(8, 8, 1.0, 180), 21).num_subsets == 20
        assert resolve_partition(ProjectorGeometry.for_image(8, 8, 1.0, 90), 21).num_subsets == 18


class TestSmoothing:
    def test_zero_fwhm_is_identity(self):
        im = Image(np.random.default_rng(0).random((6, 6)), 2.0)
        assert gaussian_smooth(im, 0.0) is im

    def test_preserves_constant(self):
        out = gaussian_smooth(Image(np.full((10, 10), 3.0), 2.0), 6.0)
        np.testing.assert_allclose(out.data, 3.0)

    def test_sigma_from_fwhm(self):
        x = np.zeros((41, 41))
        x[20, 20] = 1.0
        out = gaussian_smooth(x, 2.0 * np.sqrt(2 * np.log(2)) * 3.0, 1.5)
        # sigma = 3 mm at 1.5 mm voxels -> 2 voxels
        prof = out[20] / out[20].sum()
        var = np.sum(prof * (np.arange(41) - 20.0) ** 2)
        assert var == pytest.approx(4.0, rel=1e-3)

    def test_array_needs_voxel(self):
        with pytest.raises(DomainError):
            gaussian_smooth(np.zeros((4, 4)), 1.0)


class TestMlem:
    def test_likelihood_monotone(self, phantom32):
        geom, pet = phantom32
        y = get_projector(geom).fp(pet.data) * 5.0
        P = get_projector(geom)
        values = []
        mlem(geom, y, 15, callback=lambda it, x: values.append(poisson_loglik(P.fp(x), y)))
        assert len(values) == 15
        assert np.all(np.diff(values) >= -1e-9 * abs(values[0]))

    def test_total_counts_preserved(self, phantom32):
        # one EM step keeps sum(A x) equal to sum(y) on the sensitivity-weighted image
        geom, pet = phantom32
        P = get_projector(geom)
        y = P.fp(pet.data)
        x = mlem(geom, y, 1)
        assert P.fp(x.data).sum() == pytest.approx(y.sum(), rel=1e-6)

    def test_nonnegative_and_finite(self, phantom32):
        geom, pet = phantom32
        x = mlem(geom, get_projector(geom).fp(pet.data), 4)
        assert np.all(x.data >= 0) and np.all(np.isfinite(x.data))

    def test_zero_sinogram(self, phantom32):
        geom, _ = phantom32
        x = mlem(geom, np.zeros(geom.sino_shape), 2)
        np.testing.assert_array_equal(x.data, 0.0)


class TestOsem:
    def test_noiseless_quality(self, phantom32):
        geom, pet = phantom32
        y = get_projector(geom).fp(pet.data)
        cfg = ReconConfig(num_iterations=4, num_subsets=10, psf_fwhm=0.0, post_smooth_fwhm=0.0)
        x = osem(geom, None, y, cfg)
        assert psnr_reference(x.data, pet.data) > 25.0

    def test_one_subset_matches_mlem(self, phantom32):
        geom, pet = phantom32
        y = get_projector(geom).fp(pet.data)
        cfg = ReconConfig(num_iterations=3, num_subsets=1, psf_fwhm=0.0, post_smooth_fwhm=0.0)
        np.testing.assert_allclose(osem(geom, None, y, cfg).data, mlem(geom, y, 3).data)

    def test_psf_runs(self, phantom32):
        geom, pet = phantom32
        y = get_projector(geom).fp(pet.data)
        x = osem(geom, make_partition(geom.num_angles, 4), y, ReconConfig(num_iterations=2, psf_fwhm=6.0))
        assert x.shape == pet.shape and np.all(np.isfinite(x.data))

    def test_negative_counts(self, phantom32):
        geom, _ = phantom32
        y = np.zeros(geom.sino_shape)
        y[0, 0] = -1
        with pytest.raises(DomainError):
            osem(geom, None, y, ReconConfig())

    def test_shape_mismatch(self, phantom32):
        geom, _ = phantom32
        with pytest.raises(GeometryError):
            osem(geom, None, np.zeros((3, 3)), ReconConfig())

    def test_loglik_zero_counts(self):
        assert poisson_loglik([2.0, 1.0], [0.0, 0.0]) == -3.0
