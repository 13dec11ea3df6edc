import csv

import numpy as np
import pytest

from petphys import pvol
from petphys.errors import ConfigError
from petphys.experiments import (
    REPORT_COLUMNS,
    ExperimentPlan,
    dose_rng,
    parse_variant,
    run_ablation,
    run_dose_sweep,
    slice_values,
    table_lookup,
)

TINY = {"num_subjects": 3, "num_slices": 2, "image_size": 16, "voxel_size": 16.0, "num_angles": 12,
        "modes": ["SU", "MSE"], "calibration_references": 1, "seed": 1,
        "network": {"widths": [2, 3, 4]}, "train": {"epochs": 2, "lr_init": 0.003}, "uq": {"num_passes": 2}}


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    return run_dose_sweep(ExperimentPlan.from_dict(TINY), str(out)), out


class TestPlan:
    def test_defaults(self):
        p = ExperimentPlan()
        assert p.doses == ["LD", "vLD", "uLD"] and p.train.epochs == 40

    def test_collects_every_problem(self):
        with pytest.raises(ConfigError) as e:
            ExperimentPlan.from_dict({"num_subjects": 1, "image_size": 30, "bogus": 1, "train": {"epochs": 0}})
        text = " ".join(e.value.problems)
        assert "bogus" in text and "epochs" in text

    def test_unknown_dose_and_mode(self):
        with pytest.raises(ConfigError) as e:
            ExperimentPlan(doses=["XD"], modes=["SU", "L1"])
        assert len(e.value.problems) >= 2

    def test_round_trip(self):
        p = ExperimentPlan.from_dict(TINY)
        assert ExperimentPlan.from_dict(p.to_dict()) == p

    def test_variant_parsing(self):
        assert parse_variant("MSE-uni") == ("MSE", True)
        assert parse_variant("SU") == ("SU", False)
        with pytest.raises(ConfigError):
            parse_variant("MSE+X")

    def test_dose_streams_distinct(self):
        a = dose_rng(0, 1, "LD").uniform(4)
        assert not np.array_equal(a, dose_rng(0, 1, "uLD").uniform(4))
        assert not np.array_equal(a, dose_rng(0, 2, "LD").uniform(4))
        np.testing.assert_array_equal(a, dose_rng(0, 1, "LD").uniform(4))


class TestSweep:
    def test_table_complete(self, tiny_run):
        res, _ = tiny_run
        assert len(res["table"]) == 6
        assert set(res["count_scales"]) == {"LD", "vLD", "uLD"}
        assert res["count_scales"]["LD"] > res["count_scales"]["vLD"] > res["count_scales"]["uLD"]

    def test_delta_only_off_training_dose(self, tiny_run):
        res, _ = tiny_run
        assert table_lookup(res, "SU", "LD")["delta_psnr"] is None
        row, base = table_lookup(res, "SU", "uLD"), table_lookup(res, "SU", "LD")
        assert row["delta_psnr"] == pytest.approx(base["psnr_mean"] - row["psnr_mean"])

    def test_slice_values_match_summary(self, tiny_run):
        res, _ = tiny_run
        vals = slice_values(res, "MSE", "vLD")
        assert np.mean(vals) == pytest.approx(table_lookup(res, "MSE", "vLD")["psnr_mean"])

    def test_files(self, tiny_run):
        res, out = tiny_run
        rows = list(csv.reader(open(out / "report.csv")))
        assert tuple(rows[0]) == REPORT_COLUMNS
        assert len(rows) == 7
        data, _, meta = pvol.read_array(out / "volumes" / "SU_uLD.pvol")
        assert data.shape[1] == 6 and data.shape[2:] == (16, 16)

    def test_comparisons_cover_pairs(self, tiny_run):
        res, _ = tiny_run
        keys = {(c["dose"], c["a"], c["b"], c["metric"]) for c in res["comparisons"]}
        assert ("uLD", "SU", "MSE", "psnr") in keys and len(keys) == 6

    def test_single_dose_has_no_delta(self, tmp_path):
        plan = ExperimentPlan.from_dict({**TINY, "doses": ["uLD"], "modes": ["MSE"]})
        res = run_dose_sweep(plan, str(tmp_path))
        assert [r["delta_psnr"] for r in res["table"]] == [None]

    def test_ablation_rejects_unknown_modes(self):
        with pytest.raises(ConfigError):
            run_ablation(ExperimentPlan.from_dict({**TINY, "modes": ["U"]}))

    def test_unimodal_variant_runs(self, tmp_path):
        plan = ExperimentPlan.from_dict({**TINY, "doses": ["LD"], "modes": ["MSE-uni"]})
        res = run_ablation(plan, str(tmp_path))
        assert table_lookup(res, "MSE-uni", "LD")["n"] == 2

    def test_rerun_identical(self, tiny_run, tmp_path):
        _, out = tiny_run
        run_dose_sweep(ExperimentPlan.from_dict(TINY), str(tmp_path))
        assert (out / "report.csv").read_bytes() == (tmp_path / "report.csv").read_bytes()
