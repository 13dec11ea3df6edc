"""Scripted experiments: dose-robustness sweep, ablation ladder, variance recovery.

A sweep builds a synthetic cohort, reconstructs a noiseless standard-dose
(SD) reference per slice, calibrates count scales for every requested dose
level against that reference, trains one network per loss mode on the
lowest-noise inputs only, and scores every trained network on every dose
level of the held-out subjects.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import zlib
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import pvol
from .dose import DOSE_TARGETS_DB, calibrate_scale, simulate_counts
from .errors import ConfigError, DomainError, TrainingError
from .losses import LOSS_MODES, LossConfig
from .metrics import MetricReport, PSNR_CAP, PSNR_PEAK_CONVENTION, SSIM_RANGE_CONVENTION, paired_ttest
from .micronet import MicroNet, MicroNetConfig, TrainConfig, TrainingData, predict, stack_inputs, train
from .phantom import (BACKGROUND, CLASS_NAMES, CSF, GRAY, WHITE, PhantomSpec, generate_dataset,
                      region_noise_target)
from .projector import ProjectorGeometry, get_projector
from .recon import ReconConfig, osem, resolve_partition
from .rng import Rng
from .uq import UqConfig, containment_fraction, mc_infer, q_maps, uncertainty_map

log = logging.getLogger(__name__)

TRAIN_DOSE = "LD"
UNIMODAL_SUFFIX = "-uni"
REPORT_COLUMNS = ("mode", "dose", "n", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std",
                  "delta_psnr", "delta_ssim", "sigma_brain_mean", "containment")


def parse_variant(label: str):
    """``"MSE-uni"`` -> ``("MSE", True)``; plain loss modes are multimodal."""
    unimodal = label.endswith(UNIMODAL_SUFFIX)
    mode = label[: -len(UNIMODAL_SUFFIX)] if unimodal else label
    if mode not in LOSS_MODES:
        raise ConfigError(f"unknown mode {label!r}; expected one of {LOSS_MODES}, optionally with {UNIMODAL_SUFFIX!r}")
    return mode, unimodal


def _sub(cls, d, where, problems):
    names = {f.name for f in fields(cls)}
    extra = sorted(set(d) - names)
    if extra:
        problems.append(f"{where}: unknown keys {extra}")
        d = {k: v for k, v in d.items() if k in names}
    if "widths" in d:
        d = dict(d, widths=tuple(d["widths"]))
    try:
        return cls(**d)
    except ConfigError as exc:
        problems.extend(f"{where}.{p}" for p in exc.problems)
    except (TypeError, ValueError) as exc:
        problems.append(f"{where}: {exc}")
    return None


@dataclass
class ExperimentPlan:
    """Everything a sweep needs.  Defaults are a desk-scale run."""

    num_subjects: int = 30
    num_slices: int = 16
    image_size: int = 128
    voxel_size: float = 2.0
    num_ellipses: int = 6
    lesion_probability: float = 0.3
    num_angles: int = 180
    doses: list = field(default_factory=lambda: ["LD", "vLD", "uLD"])
    targets_db: dict = field(default_factory=lambda: dict(DOSE_TARGETS_DB))
    modes: list = field(default_factory=lambda: ["SU", "MSE", "MSE+E", "MSE+S"])
    seed: int = 0
    calibration_references: int = 6
    calibration_tolerance_db: float = 0.25
    recon: ReconConfig = field(default_factory=ReconConfig)
    network: MicroNetConfig = field(default_factory=MicroNetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    uq: UqConfig = field(default_factory=UqConfig)
    output_dir: str = "sweep_out"
    write_volumes: bool = True

    NESTED = {"recon": ReconConfig, "network": MicroNetConfig, "train": TrainConfig, "loss": LossConfig,
              "uq": UqConfig}

    def __post_init__(self):
        problems = []
        if self.num_subjects < 3:
            problems.append("num_subjects must be >= 3")
        if self.num_slices < 1:
            problems.append("num_slices must be >= 1")
        if self.image_size < 16 or self.image_size % 4:
            problems.append("image_size must be a multiple of 4 and >= 16")
        if not self.doses:
            problems.append("doses must list at least one dose level")
        for d in self.doses:
            if d not in self.targets_db:
                problems.append(f"dose {d!r} has no target in targets_db")
        if TRAIN_DOSE not in self.targets_db:
            problems.append(f"targets_db must define the training dose {TRAIN_DOSE!r}")
        if not self.modes:
            problems.append("modes must list at least one loss mode")
        for m in self.modes:
            try:
                parse_variant(m)
            except ConfigError as exc:
                problems.append(str(exc))
        if len(set(self.modes)) != len(self.modes):
            problems.append("modes contains duplicates")
        if self.calibration_references < 1:
            problems.append("calibration_references must be >= 1")
        if problems:
            raise ConfigError(problems)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        problems = []
        d = dict(d)
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            problems.append(f"unknown plan keys {unknown}")
        kw = {k: v for k, v in d.items() if k in names and k not in cls.NESTED}
        for key, sub in cls.NESTED.items():
            if key in d:
                kw[key] = _sub(sub, dict(d[key]), key, problems)
        if problems:
            raise ConfigError(problems)
        return cls(**kw)

    @classmethod
    def from_json(cls, path) -> "ExperimentPlan":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.to_dict() if hasattr(v, "to_dict") else v
        return out

    def geometry(self) -> ProjectorGeometry:
        return ProjectorGeometry.for_image(self.image_size, self.image_size, self.voxel_size, self.num_angles)

    def phantom_template(self) -> PhantomSpec:
        return PhantomSpec(self.image_size, self.num_ellipses, 0, lesion_probability=self.lesion_probability,
                           voxel_size=self.voxel_size)


# ---------------------------------------------------------------- cohort
@dataclass
class SubjectData:
    index: int
    split: str
    activity: np.ndarray      # (S, H, W) phantom, normalised with the SD scale
    sd: np.ndarray            # noiseless reconstruction, max 1
    t1: np.ndarray
    t2: np.ndarray
    tissue: np.ndarray
    doses: dict = field(default_factory=dict)   # label -> (S, H, W) reconstructions


def _noiseless_recon(geom, partition, activity, cfg):
    P = get_projector(geom)
    return np.stack([osem(geom, partition, P.fp(a), cfg).data for a in activity])


def prepare_subject(index, split, pet, t1, t2, tissue, geom, partition, recon_cfg) -> SubjectData:
    """Reconstruct the noiseless SD reference and normalise it (and the phantom) to peak 1."""
    act = np.stack([np.asarray(p, dtype=np.float64) for p in pet])
    sd = _noiseless_recon(geom, partition, act, recon_cfg)
    k = 1.0 / sd.max()
    return SubjectData(index, split, act * k, sd * k, np.stack([np.asarray(p) for p in t1]),
                       np.stack([np.asarray(p) for p in t2]), np.stack([np.asarray(p) for p in tissue]))


def build_cohort(plan: ExperimentPlan):
    """Phantoms plus SD references, normalised so every subject's SD peaks at 1."""
    geom = plan.geometry()
    partition = resolve_partition(geom, plan.recon.num_subsets)
    ds = generate_dataset(plan.num_subjects, plan.phantom_template(), plan.seed, plan.num_slices)
    cohort = [prepare_subject(s.index, split, s.pet, s.t1, s.t2, s.tissue, geom, partition, plan.recon)
              for split, subjects in ds.splits().items() for s in subjects]
    log.info("cohort of %d subjects built", len(cohort))
    return geom, partition, cohort


def calibrate_labels(geom, partition, subjects, targets: dict, recon_cfg, seed: int, tolerance_db=0.25,
                     trace=None):
    """Count scale per label in ``targets`` (label -> dB), fitted on each subject's central slice."""
    refs = [s.activity[len(s.activity) // 2] for s in subjects]
    cmp = [s.sd[len(s.sd) // 2] for s in subjects]
    scales = {}
    for label, target in targets.items():
        steps = [] if trace is not None else None
        scales[label] = calibrate_scale(geom, partition, refs, target, recon_cfg, Rng(seed, stream_id=41),
                                        compare_to=cmp, tolerance_db=tolerance_db, trace=steps)
        if trace is not None:
            trace[label] = steps
        log.info("dose %s: count scale %.6g", label, scales[label])
    return scales


def calibrate_doses(plan, geom, partition, cohort, trace=None):
    """Count scale per dose label, fitted on central slices of training subjects."""
    train = [s for s in cohort if s.split == "train"][: plan.calibration_references]
    labels = list(dict.fromkeys([TRAIN_DOSE, *plan.doses]))
    return calibrate_labels(geom, partition, train, {k: plan.targets_db[k] for k in labels}, plan.recon,
                            plan.seed, plan.calibration_tolerance_db, trace)


def simulate_subject_dose(geom, partition, subject: SubjectData, scale: float, recon_cfg, rng: Rng):
    """Low-count reconstructions of every slice, in SD-normalised units; slice ``i`` uses ``rng.spawn(i)``."""
    out = []
    for i, a in enumerate(subject.activity):
        counts = simulate_counts(geom, a, scale, rng.spawn(i))
        out.append(osem(geom, partition, counts, recon_cfg).data / scale)
    return np.stack(out)


def dose_rng(seed: int, subject_index: int, label: str) -> Rng:
    return Rng(seed, stream_id=43).spawn(subject_index).spawn(_stream(label))


def simulate_cohort_doses(plan, geom, partition, cohort, scales):
    """Fill ``subject.doses`` with per-slice low-count reconstructions.

    Training and validation subjects only receive the training dose.
    """
    labels = list(dict.fromkeys([TRAIN_DOSE, *plan.doses]))
    for s in cohort:
        for label in (labels if s.split == "test" else [TRAIN_DOSE]):
            s.doses[label] = simulate_subject_dose(geom, partition, s, scales[label], plan.recon,
                                                   dose_rng(plan.seed, s.index, label))


def _inputs(s: SubjectData, dose: str, unimodal: bool):
    return stack_inputs(list(s.doses[dose]), list(s.t1), list(s.t2), unimodal=unimodal)


def _training_data(cohort, unimodal):
    def pick(split):
        subs = [s for s in cohort if s.split == split]
        return (np.concatenate([_inputs(s, TRAIN_DOSE, unimodal) for s in subs]),
                np.concatenate([s.sd for s in subs]))
    return TrainingData(*pick("train"), *pick("val"))


def _stream(label: str) -> int:
    return zlib.crc32(label.encode())


# ---------------------------------------------------------------- sweep
@dataclass
class Cell:
    mode: str
    dose: str
    report: MetricReport
    sigma_brain_mean: float | None = None
    containment: float | None = None
    slices: list = field(default_factory=list)   # (subject, slice) per metric entry


def _train_variant(plan, geom, cohort, label):
    mode, unimodal = parse_variant(label)
    in_ch = 5 if unimodal else 15
    netcfg = MicroNetConfig(**{**plan.network.to_dict(), "in_channels": in_ch,
                               "widths": tuple(plan.network.widths)})
    tcfg = TrainConfig(**{**plan.train.to_dict(), "loss_mode": mode})
    data = _training_data(cohort, unimodal)
    log.info("training %s on %d slices", label, len(data.x_train))
    return train(data, MicroNet(netcfg), tcfg, geom, plan.loss)


def _evaluate_variant(plan, net, cohort, label, out_dir):
    mode, unimodal = parse_variant(label)
    hetero = mode in ("U", "SU")
    cells = {}
    for dose in plan.doses:
        cell = Cell(label, dose, MetricReport(f"{label}@{dose}"))
        sig_sum, sig_n = 0.0, 0
        q1_all, q2_all, vol = [], [], []
        rng = Rng(plan.seed, stream_id=_stream(f"mc/{label}/{dose}"))
        for s in (s for s in cohort if s.split == "test"):
            x = _inputs(s, dose, unimodal)
            mc = mc_infer(net, x, plan.uq.num_passes, rng.spawn(s.index))
            for i in range(len(x)):
                cell.report.add(mc.y_mean[i], s.sd[i])
                cell.slices.append((s.index, i))
            sigma = uncertainty_map(mc.c_mean)
            q1, q2, bm1, bm2 = q_maps(sigma, np.abs(mc.y_mean - s.sd), plan.uq)
            brain = s.tissue > BACKGROUND
            sig_sum += float(sigma[brain].sum())
            sig_n += int(brain.sum())
            q1_all.append(q1)
            q2_all.append(q2)
            if out_dir is not None and plan.write_volumes:
                vol.append(np.stack([mc.y_mean, sigma, q1, q2, bm1, bm2], axis=1))
        if hetero:
            cell.sigma_brain_mean = sig_sum / max(sig_n, 1)
            c = containment_fraction(np.concatenate(q1_all), np.concatenate(q2_all))
            cell.containment = None if math.isnan(c) else c
        if vol:
            vdir = os.path.join(out_dir, "volumes")
            os.makedirs(vdir, exist_ok=True)
            meta = {"mode": label, "dose": dose, "channels": ["y_mean", "sigma", "q1", "q2", "bm1", "bm2"],
                    "delta_r": plan.uq.delta_r, "delta_u": plan.uq.delta_u, "mc_passes": plan.uq.num_passes,
                    "intensity_units": "SD reference normalised to max 1 per subject",
                    "slices": [list(t) for t in cell.slices]}
            pvol.write_array(os.path.join(vdir, f"{label}_{dose}.pvol"), np.concatenate(vol), plan.voxel_size, meta)
        cells[dose] = cell
    return cells


def _input_baseline(plan, cohort):
    out = {}
    for dose in plan.doses:
        rep = MetricReport(f"input@{dose}")
        for s in (s for s in cohort if s.split == "test"):
            for a, b in zip(s.doses[dose], s.sd):
                rep.add(a, b)
        out[dose] = rep.summary()
    return out


def _comparisons(plan, cells):
    out = []
    ok = [m for m in plan.modes if m in cells]
    for dose in plan.doses:
        for i, a in enumerate(ok):
            for b in ok[i + 1 :]:
                ra, rb = cells[a][dose].report, cells[b][dose].report
                for metric in ("psnr", "ssim"):
                    va, vb = getattr(ra, metric), getattr(rb, metric)
                    row = {"dose": dose, "a": a, "b": b, "metric": metric,
                           "mean_diff": float(np.mean(np.subtract(va, vb)))}
                    try:
                        row["t"], row["p"] = paired_ttest(va, vb)
                    except DomainError as exc:
                        row["t"] = row["p"] = None
                        row["error"] = str(exc)
                    out.append(row)
    return out


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_reports(out_dir, plan, result):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
    with open(os.path.join(out_dir, "report.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for row in result["table"]:
            w.writerow([_fmt(row[c]) for c in REPORT_COLUMNS])
    with open(os.path.join(out_dir, "slices.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "dose", "subject", "slice", "psnr_db", "ssim"])
        for row in result["slices"]:
            w.writerow([_fmt(v) for v in row])


def run_dose_sweep(plan: ExperimentPlan, out_dir: str | None = None, progress=None) -> dict:
    """Train every mode on the training dose, evaluate all doses, write reports.

    Returns the report dictionary (also written as ``report.json``).  A mode
    whose training diverges is listed under ``failures`` and the sweep moves
    on.
    """
    out_dir = out_dir if out_dir is not None else plan.output_dir
    geom, partition, cohort = build_cohort(plan)
    trace = {}
    scales = calibrate_doses(plan, geom, partition, cohort, trace)
    simulate_cohort_doses(plan, geom, partition, cohort, scales)
    cells, logs, failures = {}, {}, {}
    for label in plan.modes:
        try:
            net, history = _train_variant(plan, geom, cohort, label)
        except TrainingError as exc:
            log.warning("mode %s failed: %s", label, exc)
            failures[label] = {"epoch": exc.epoch, "message": str(exc)}
            continue
        logs[label] = history
        cells[label] = _evaluate_variant(plan, net, cohort, label, out_dir)
        if progress is not None:
            progress(label, cells[label])

    has_delta = TRAIN_DOSE in plan.doses and len(plan.doses) > 1
    table, slices = [], []
    for label in (m for m in plan.modes if m in cells):
        base = cells[label].get(TRAIN_DOSE) if has_delta else None
        for dose in plan.doses:
            cell = cells[label][dose]
            summ = cell.report.summary()
            delta_p = delta_s = None
            if base is not None and dose != TRAIN_DOSE:
                bsum = base.report.summary()
                delta_p = bsum["psnr_mean"] - summ["psnr_mean"]
                delta_s = bsum["ssim_mean"] - summ["ssim_mean"]
            table.append({"mode": label, "dose": dose, "n": summ["n"], "psnr_mean": summ["psnr_mean"],
                          "psnr_std": summ["psnr_std"], "ssim_mean": summ["ssim_mean"],
                          "ssim_std": summ["ssim_std"], "delta_psnr": delta_p, "delta_ssim": delta_s,
                          "sigma_brain_mean": cell.sigma_brain_mean, "containment": cell.containment})
            for (subj, i), p, s in zip(cell.slices, cell.report.psnr, cell.report.ssim):
                slices.append([label, dose, subj, i, p, s])
    result = {
        "plan": plan.to_dict(),
        "geometry": geom.to_metadata(),
        "count_scales": scales,
        "calibration_trace": {k: [[a, b] for a, b in v] for k, v in trace.items()},
        "input_baseline": _input_baseline(plan, cohort),
        "table": table,
        "comparisons": _comparisons(plan, cells),
        "training_logs": logs,
        "failures": failures,
        "slices": slices,
        "conventions": {"psnr": PSNR_PEAK_CONVENTION, "psnr_cap_db": PSNR_CAP, "ssim": SSIM_RANGE_CONVENTION,
                        "degradation": f"metric({TRAIN_DOSE}) - metric(dose)",
                        "uq_thresholds_units": "SD reference normalised to max 1 per subject"},
    }
    if out_dir:
        _write_reports(out_dir, plan, result)
    return result


ABLATION_LADDER = ("SU", "MSE-uni", "MSE", "MSE+E", "MSE+S")


def run_ablation(plan: ExperimentPlan, out_dir: str | None = None, progress=None) -> dict:
    """The dose sweep over the ablation ladder; plan modes outside the ladder are rejected."""
    bad = [m for m in plan.modes if m not in ABLATION_LADDER]
    if bad:
        raise ConfigError(f"ablation modes must come from {ABLATION_LADDER}; got {bad}")
    return run_dose_sweep(plan, out_dir, progress)


def table_lookup(result: dict, mode: str, dose: str) -> dict:
    for row in result["table"]:
        if row["mode"] == mode and row["dose"] == dose:
            return row
    raise KeyError((mode, dose))


def slice_values(result: dict, mode: str, dose: str, metric: str = "psnr"):
    col = 4 if metric == "psnr" else 5
    return [r[col] for r in result["slices"] if r[0] == mode and r[1] == dose]


# ---------------------------------------------------------------- variance recovery
DEFAULT_REGION_SIGMA = {BACKGROUND: 0.02, WHITE: 0.05, GRAY: 0.12, CSF: 0.2}


@dataclass
class RecoveryConfig:
    """Denoising-free regression with a known, tissue-dependent noise level."""

    num_subjects: int = 6
    num_slices: int = 6
    image_size: int = 32
    region_sigma: dict = field(default_factory=lambda: dict(DEFAULT_REGION_SIGMA))
    min_region_voxels: int = 100
    seed: int = 3
    network: MicroNetConfig = field(default_factory=MicroNetConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=150, lr_init=1e-2, loss_mode="U"))

    def to_dict(self):
        d = asdict(self)
        d["region_sigma"] = {CLASS_NAMES[k]: v for k, v in self.region_sigma.items()}
        d["network"] = self.network.to_dict()
        return d


def run_variance_recovery(cfg: RecoveryConfig) -> dict:
    """Train with the heteroscedastic loss on ``clean + N(0, sigma(region)^2)``.

    Inputs are the clean multimodal stacks, so the mean is easy and the
    network must place its variance head on the per-region noise level.
    Regions with fewer than ``min_region_voxels`` test voxels are left out
    of the correlation.
    """
    template = PhantomSpec(cfg.image_size, lesion_probability=0.0, voxel_size=256.0 / cfg.image_size)
    ds = generate_dataset(cfg.num_subjects, template, cfg.seed, cfg.num_slices)

    def arrays(subjects, stream):
        xs, ys, ts = [], [], []
        for j, s in enumerate(subjects):
            xs.append(stack_inputs(s.pet, s.t1, s.t2))
            for i, (p, t) in enumerate(zip(s.pet, s.tissue)):
                ys.append(np.asarray(region_noise_target(p, t, cfg.region_sigma, Rng(cfg.seed, stream).spawn(j * 1000 + i))))
                ts.append(np.asarray(t))
        return np.concatenate(xs), np.stack(ys), np.stack(ts)

    xt, yt, _ = arrays(ds.train, 1)
    xv, yv, _ = arrays(ds.val, 2)
    xs, _, ts = arrays(ds.test, 3)
    net, history = train(TrainingData(xt, yt, xv, yv), MicroNet(cfg.network), cfg.train)
    _, c = predict(net, xs)
    sigma_hat = np.sqrt(c)
    regions = []
    for cls, true_sigma in sorted(cfg.region_sigma.items()):
        sel = ts == cls
        if sel.sum() >= cfg.min_region_voxels:
            regions.append({"region": CLASS_NAMES[cls], "voxels": int(sel.sum()), "sigma_true": float(true_sigma),
                            "sigma_pred": float(sigma_hat[sel].mean())})
    if len(regions) < 3:
        raise DomainError("fewer than three regions have enough voxels for a correlation")
    r = float(np.corrcoef([g["sigma_pred"] for g in regions], [g["sigma_true"] for g in regions])[0, 1])
    return {"pearson_r": r, "regions": regions, "training_log": history, "config": cfg.to_dict()}
