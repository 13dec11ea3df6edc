import csv
import json

import numpy as np
import pytest
from scipy import stats

from oracles import psnr_reference
from petphys.errors import DomainError, ShapeError
from petphys.metrics import PSNR_CAP, MetricReport, paired_ttest, psnr, ssim

skm = pytest.importorskip("skimage.metrics")


class TestPsnr:
    def test_closed_form_20db(self):
        ref = np.zeros((10, 10))
        ref[0, 0] = 10.0
        # peak 10, uniform error 1 -> 20 dB
        test = ref + 1.0
        assert psnr(test, ref) == pytest.approx(20.0)

    def test_matches_oracle(self):
        rng = np.random.default_rng(0)
        ref = rng.random((16, 16))
        test = ref + 0.05 * rng.standard_normal(ref.shape)
        assert psnr(test, ref) == pytest.approx(psnr_reference(test, ref))

    def test_identical_capped(self):
        x = np.random.default_rng(1).random((5, 5)) + 0.1
        assert psnr(x, x) == PSNR_CAP

    def test_nonpositive_peak(self):
        with pytest.raises(DomainError):
            psnr(np.zeros((3, 3)), np.zeros((3, 3)))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            psnr(np.ones((3, 3)), np.ones((3, 4)))


class TestSsim:
    def _pair(self, seed, noise=0.1):
        rng = np.random.default_rng(seed)
        ref = np.cumsum(rng.random((40, 36)), axis=1)
        return ref + noise * ref.std() * rng.standard_normal(ref.shape), ref

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_skimage(self, seed):
        test, ref = self._pair(seed)
        want = skm.structural_similarity(test, ref, data_range=ref.max() - ref.min(), gaussian_weights=True,
                                         sigma=1.5, use_sample_covariance=False)
        assert ssim(test, ref) == pytest.approx(want, abs=1e-10)

    def test_identical_is_one(self):
        _, ref = self._pair(3)
        assert ssim(ref, ref) == pytest.approx(1.0)

    def test_noise_lowers(self):
        lo = ssim(*self._pair(4, noise=0.5))
        hi = ssim(*self._pair(4, noise=0.05))
        assert lo < hi < 1.0

    def test_joint_range_symmetric(self):
        a, b = self._pair(5)
        assert ssim(a, b, joint_range=True) == pytest.approx(ssim(b, a, joint_range=True))

    def test_too_small(self):
        with pytest.raises(DomainError):
            ssim(np.ones((8, 8)), np.ones((8, 8)))

    def test_flat_reference(self):
        with pytest.raises(DomainError):
            ssim(np.ones((16, 16)), np.ones((16, 16)))


class TestTTest:
    def test_matches_scipy(self):
        rng = np.random.default_rng(7)
        a = rng.normal(0, 1, 25)
        b = a + rng.normal(0.3, 0.5, 25)
        t, p = paired_ttest(a, b)
        ref = stats.ttest_rel(a, b)
        assert t == pytest.approx(ref.statistic)
        assert p == pytest.approx(ref.pvalue)

    def test_degenerate(self):
        a = np.arange(5.0)
        with pytest.raises(DomainError):
            paired_ttest(a, a + 2.0)
        with pytest.raises(DomainError):
            paired_ttest([1.0], [2.0])

    def test_null_p_values_uniform(self):
        rng = np.random.default_rng(8)
        ps = [paired_ttest(rng.normal(size=12), rng.normal(size=12))[1] for _ in range(2000)]
        assert stats.kstest(ps, "uniform").pvalue > 1e-3

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            paired_ttest([1.0, 2.0], [1.0, 2.0, 3.0])


class TestReport:
    def test_summary_and_io(self, tmp_path):
        rng = np.random.default_rng(9)
        a, b = MetricReport("a"), MetricReport("b")
        for _ in range(4):
            ref = np.cumsum(rng.random((16, 16)), axis=0)
            a.add(ref + 0.1 * rng.standard_normal(ref.shape), ref)
            b.add(ref + 0.3 * rng.standard_normal(ref.shape), ref)
        out = a.compare(b)
        assert out["psnr"]["p"] is not None
        assert a.summary()["n"] == 4
        a.write_json(tmp_path / "m.json")
        a.write_csv(tmp_path / "m.csv")
        loaded = json.loads((tmp_path / "m.json").read_text())
        assert loaded["psnr"] == a.psnr
        rows = list(csv.DictReader(open(tmp_path / "m.csv")))
        assert [float(r["psnr_db"]) for r in rows] == a.psnr

    def test_degenerate_comparison_recorded(self):
        a, b = MetricReport("a", [1.0, 2.0], [0.5, 0.6]), MetricReport("b", [1.0, 2.0], [0.4, 0.5])
        out = a.compare(b)
        assert out["psnr"]["p"] is None and "error" in out["psnr"]
