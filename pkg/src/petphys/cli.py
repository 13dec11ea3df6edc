"""Command-line pipeline: every stage reads and writes PVOL files.

Typical chain::

    petphys phantom --n 3 --seed 7 --out ph
    petphys project --input ph/subject_000.pvol --out sino
    petphys osem --input sino/sinogram.pvol --reference ph/subject_000.pvol --out rec
    petphys calibrate --inputs ph/subject_*.pvol --seed 1 --out cal
    petphys simulate-dose --input ph/subject_000.pvol --calibration cal/calibration.json --dose uLD --seed 2 --out ld
    petphys train --data ph --calibration cal/calibration.json --seed 3 --out model
    petphys infer --model model/model.pnet --subject ph/subject_000.pvol --pet ld/lowdose.pvol --seed 4 --out inf
    petphys uq --prediction inf/prediction.pvol --reference ld/lowdose.pvol --out uq
    petphys evaluate --test inf/prediction.pvol --reference ld/lowdose.pvol --out ev
    petphys sweep --plan plan.json --seed 0 --out sweep
"""
from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys
from dataclasses import fields

import numpy as np

from . import pvol
from .dose import DOSE_TARGETS_DB
from .errors import ConfigError, PetPhysError
from .experiments import (ExperimentPlan, calibrate_labels, prepare_subject, run_ablation,
                          run_dose_sweep, simulate_subject_dose, dose_rng)
from .losses import LossConfig
from .metrics import MetricReport, psnr
from .micronet import MicroNet, MicroNetConfig, TrainConfig, TrainingData, load, save, stack_inputs, train
from .phantom import CLASS_NAMES, PhantomSpec, generate_dataset
from .projector import ProjectorGeometry, get_projector
from .recon import ReconConfig, osem, resolve_partition
from .rng import Rng
from .tensor import SLICE_OFFSETS
from .uq import UqConfig, containment_fraction, mc_infer, q_maps, uncertainty_map

log = logging.getLogger("petphys")

SECTIONS = {
    "recon": ReconConfig,
    "loss": LossConfig,
    "train": TrainConfig,
    "network": MicroNetConfig,
    "uq": UqConfig,
}
PHANTOM_KEYS = {"size": 128, "num_ellipses": 6, "lesion_probability": 0.3, "voxel_size": 2.0, "num_slices": 16}
GEOMETRY_KEYS = {"num_angles": 180, "bin_size": None}
SUBJECT_CHANNELS = ["PET", "T1", "T2", "tissue"]


# ---------------------------------------------------------------- config
def load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return cfg


def resolve(raw: dict, wanted, overrides=None):
    """Build the config sections a command consumes; report every bad key at once."""
    overrides = overrides or {}
    problems, out = [], {}
    known = set(SECTIONS) | {"phantom", "geometry", "plan"}
    for key in sorted(set(raw) - known):
        problems.append(f"unknown config section {key!r}")
    for name in wanted:
        section = {**dict(raw.get(name, {})), **{k: v for k, v in overrides.get(name, {}).items() if v is not None}}
        if name in SECTIONS:
            cls = SECTIONS[name]
            names = {f.name for f in fields(cls)}
            bad = sorted(set(section) - names)
            if bad:
                problems.append(f"{name}: unknown keys {bad}")
                section = {k: v for k, v in section.items() if k in names}
            if "widths" in section:
                section["widths"] = tuple(section["widths"])
            try:
                out[name] = cls(**section)
            except ConfigError as exc:
                problems.extend(f"{name}.{p}" for p in exc.problems)
            except (TypeError, ValueError) as exc:
                problems.append(f"{name}: {exc}")
        else:
            defaults = {"phantom": PHANTOM_KEYS, "geometry": GEOMETRY_KEYS}[name]
            bad = sorted(set(section) - set(defaults))
            if bad:
                problems.append(f"{name}: unknown keys {bad}")
            out[name] = {**defaults, **{k: v for k, v in section.items() if k in defaults}}
    if problems:
        raise ConfigError(problems)
    return out


def _to_jsonable(v):
    return v.to_dict() if hasattr(v, "to_dict") else v


def write_snapshot(out_dir, args, sections):
    snap = {
        "command": args.command,
        "seed": getattr(args, "seed", None),
        "threads": args.threads,
        "arguments": {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "threads")},
        "config": {k: _to_jsonable(v) for k, v in sections.items()},
    }
    with open(os.path.join(out_dir, "config.resolved.json"), "w") as fh:
        json.dump(snap, fh, indent=2, sort_keys=True, default=str)


def _need_seed(args):
    if args.seed is None:
        raise ConfigError(f"{args.command} is stochastic and needs --seed")
    if args.seed < 0:
        raise ConfigError("--seed must be a nonnegative integer")
    return args.seed


def _subject_files(paths):
    files = []
    for p in paths:
        hits = sorted(glob.glob(p)) if any(ch in p for ch in "*?[") else [p]
        if not hits:
            raise FileNotFoundError(f"no files match {p}")
        files.extend(hits)
    return files


def _read_subject(path):
    data, vs, meta = pvol.read_array(path)
    if data.shape[1] != len(SUBJECT_CHANNELS):
        raise ConfigError(f"{path}: expected {len(SUBJECT_CHANNELS)} channels (PET, T1, T2, tissue)")
    return data, vs, meta


def _geometry(data, vs, geo):
    return ProjectorGeometry.for_image(data.shape[-1], data.shape[-2], vs, geo["num_angles"], geo["bin_size"])


def _summary(line):
    print(line)


# ---------------------------------------------------------------- commands
def cmd_phantom(args, raw):
    seed = _need_seed(args)
    sec = resolve(raw, ["phantom"], {"phantom": {"size": args.size, "num_slices": args.slices}})
    ph = sec["phantom"]
    template = PhantomSpec(ph["size"], ph["num_ellipses"], 0, lesion_probability=ph["lesion_probability"],
                           voxel_size=ph["voxel_size"])
    ds = generate_dataset(args.n, template, seed, ph["num_slices"])
    listing = {}
    for split, subjects in ds.splits().items():
        for s in subjects:
            data = np.stack([np.stack([np.asarray(a) for a in ch]) for ch in (s.pet, s.t1, s.t2, s.tissue)], axis=1)
            name = f"subject_{s.index:03d}.pvol"
            pvol.write_array(os.path.join(args.out, name), data, ph["voxel_size"],
                             {"subject": s.index, "subject_seed": s.seed, "split": split,
                              "channels": SUBJECT_CHANNELS, "classes": list(CLASS_NAMES)})
            listing[name] = split
    with open(os.path.join(args.out, "dataset.json"), "w") as fh:
        json.dump({"seed": seed, "subjects": listing}, fh, indent=2, sort_keys=True)
    _summary(f"wrote {args.n} subjects ({ph['size']}x{ph['size']}, {ph['num_slices']} slices) to {args.out}")
    return sec


def cmd_project(args, raw):
    sec = resolve(raw, ["geometry"], {"geometry": {"num_angles": args.angles}})
    data, vs, meta = pvol.read_array(args.input)
    geom = _geometry(data, vs, sec["geometry"])
    sino = get_projector(geom).fp(data[:, 0])
    pvol.write_array(os.path.join(args.out, "sinogram.pvol"), sino[:, None], geom.bin_size,
                     {"geometry": geom.to_metadata(), "source": os.path.basename(args.input)})
    _summary(f"projected {len(sino)} slices to {geom.num_angles}x{geom.num_bins} sinograms")
    return sec


def cmd_osem(args, raw):
    sec = resolve(raw, ["recon"], {"recon": {"num_iterations": args.iterations, "num_subsets": args.subsets}})
    data, _, meta = pvol.read_array(args.input)
    if "geometry" not in meta:
        raise ConfigError(f"{args.input}: sinogram metadata lacks geometry")
    geom = ProjectorGeometry.from_metadata(meta["geometry"])
    partition = resolve_partition(geom, sec["recon"].num_subsets)
    recon = np.stack([osem(geom, partition, s[0], sec["recon"]).data for s in data])
    out_meta = {"geometry": geom.to_metadata(), "recon": sec["recon"].to_dict(), "num_subsets_used": partition.num_subsets}
    line = f"reconstructed {len(recon)} slices ({sec['recon'].num_iterations} it x {partition.num_subsets} subsets)"
    if args.reference:
        ref, _, _ = pvol.read_array(args.reference)
        values = [psnr(a, b) for a, b in zip(recon, ref[:, 0])]
        out_meta["psnr_db"] = values
        with open(os.path.join(args.out, "metrics.json"), "w") as fh:
            json.dump({"psnr_db": values, "psnr_mean_db": float(np.mean(values))}, fh, indent=2)
        line += f"; mean PSNR {np.mean(values):.2f} dB"
    pvol.write_array(os.path.join(args.out, "recon.pvol"), recon[:, None], geom.voxel_size, out_meta)
    _summary(line)
    return sec


def _prepare(path, geo, recon_cfg, index=0, split="test"):
    data, vs, meta = _read_subject(path)
    geom = _geometry(data, vs, geo)
    partition = resolve_partition(geom, recon_cfg.num_subsets)
    s = prepare_subject(meta.get("subject", index), meta.get("split", split), data[:, 0], data[:, 1], data[:, 2],
                        data[:, 3], geom, partition, recon_cfg)
    return s, geom, partition, vs


def cmd_calibrate(args, raw):
    seed = _need_seed(args)
    sec = resolve(raw, ["geometry", "recon"], {"geometry": {"num_angles": args.angles}})
    files = _subject_files(args.inputs)
    subjects, geom, partition = [], None, None
    for i, f in enumerate(files):
        s, geom, partition, _ = _prepare(f, sec["geometry"], sec["recon"], i)
        subjects.append(s)
    targets = {args.label: args.target} if args.target is not None else {d: DOSE_TARGETS_DB[d] for d in args.doses}
    trace = {}
    scales = calibrate_labels(geom, partition, subjects, targets, sec["recon"], seed, args.tolerance, trace)
    with open(os.path.join(args.out, "calibration.json"), "w") as fh:
        json.dump({"count_scales": scales, "targets_db": targets, "geometry": geom.to_metadata(),
                   "trace": trace, "references": [os.path.basename(f) for f in files]}, fh, indent=2, sort_keys=True)
    _summary("; ".join(f"{k}: scale {v:.6g} for {targets[k]:g} dB" for k, v in scales.items()))
    return sec


def _scale_for(args, label):
    if args.scale is not None:
        return args.scale
    if not args.calibration:
        raise ConfigError("give either --scale or --calibration")
    with open(args.calibration) as fh:
        cal = json.load(fh)
    if label not in cal["count_scales"]:
        raise ConfigError(f"calibration file has no scale for {label!r}")
    return cal["count_scales"][label]


def cmd_simulate_dose(args, raw):
    seed = _need_seed(args)
    sec = resolve(raw, ["geometry", "recon"], {"geometry": {"num_angles": args.angles}})
    s, geom, partition, vs = _prepare(args.input, sec["geometry"], sec["recon"])
    scale = _scale_for(args, args.dose)
    low = simulate_subject_dose(geom, partition, s, scale, sec["recon"], dose_rng(seed, s.index, args.dose))
    vals = [psnr(a, b) for a, b in zip(low, s.sd)]
    pvol.write_array(os.path.join(args.out, "lowdose.pvol"), np.stack([low, s.sd], axis=1), vs,
                     {"channels": ["low_dose", "sd_reference"], "dose": args.dose, "count_scale": scale,
                      "psnr_db": vals, "intensity_units": "SD reference normalised to max 1",
                      "subject": s.index, "geometry": geom.to_metadata()})
    _summary(f"{args.dose} at count scale {scale:.6g}: mean PSNR {np.mean(vals):.2f} dB against SD")
    return sec


def cmd_train(args, raw):
    seed = _need_seed(args)
    sec = resolve(raw, ["geometry", "recon", "loss", "train", "network"],
                  {"geometry": {"num_angles": args.angles},
                   "train": {"loss_mode": args.mode, "epochs": args.epochs, "seed": seed}})
    with open(os.path.join(args.data, "dataset.json")) as fh:
        listing = json.load(fh)["subjects"]
    subjects, geom, partition = [], None, None
    for i, (name, split) in enumerate(sorted(listing.items())):
        s, geom, partition, _ = _prepare(os.path.join(args.data, name), sec["geometry"], sec["recon"], i, split)
        subjects.append(s)
    scale = _scale_for(args, "LD")
    for s in subjects:
        if s.split in ("train", "val"):
            s.doses["LD"] = simulate_subject_dose(geom, partition, s, scale, sec["recon"], dose_rng(seed, s.index, "LD"))

    def split(name):
        sel = [s for s in subjects if s.split == name]
        if not sel:
            raise ConfigError(f"dataset has no {name} subjects")
        return (np.concatenate([stack_inputs(list(s.doses["LD"]), list(s.t1), list(s.t2)) for s in sel]),
                np.concatenate([s.sd for s in sel]))

    data = TrainingData(*split("train"), *split("val"))
    net_cfg = MicroNetConfig(**{**sec["network"].to_dict(), "widths": tuple(sec["network"].widths), "seed": seed})
    net, history = train(data, MicroNet(net_cfg), sec["train"], geom, sec["loss"])
    save(os.path.join(args.out, "model.pnet"), net, {"loss_mode": sec["train"].loss_mode,
                                                     "geometry": geom.to_metadata()})
    with open(os.path.join(args.out, "training_log.json"), "w") as fh:
        json.dump(history, fh, indent=2, sort_keys=True)
    best = max(history, key=lambda r: r["val_ssim"])
    _summary(f"trained {sec['train'].loss_mode} for {len(history)} epochs ({net.num_params} parameters); "
             f"best val SSIM {best['val_ssim']:.4f} at epoch {best['epoch']}")
    return sec


def cmd_infer(args, raw):
    seed = _need_seed(args)
    sec = resolve(raw, ["uq"], {"uq": {"num_passes": args.passes}})
    net, extra = load(args.model)
    subj, vs, _ = _read_subject(args.subject)
    low, _, _ = pvol.read_array(args.pet)
    x = stack_inputs(list(low[:, 0]), list(subj[:, 1]), list(subj[:, 2]),
                     unimodal=net.config.in_channels == len(SLICE_OFFSETS))
    mc = mc_infer(net, x, sec["uq"].num_passes, Rng(seed, stream_id=51), retain=args.retain_passes)
    pvol.write_array(os.path.join(args.out, "prediction.pvol"), np.stack([mc.y_mean, mc.c_mean, mc.y_spread], axis=1),
                     vs, {"channels": ["y_mean", "c_mean", "y_spread"], "mc_passes": sec["uq"].num_passes,
                          "loss_mode": extra.get("loss_mode")})
    if args.retain_passes:
        per = np.stack([np.stack([y, c], axis=1) for y, c in mc.passes], axis=1).reshape(-1, 2, *mc.y_mean.shape[1:])
        pvol.write_array(os.path.join(args.out, "passes.pvol"), per, vs,
                         {"channels": ["y", "c"], "layout": "slice-major, pass-minor",
                          "mc_passes": sec["uq"].num_passes})
    _summary(f"MC inference with {sec['uq'].num_passes} passes on {len(x)} slices")
    return sec


def cmd_uq(args, raw):
    sec = resolve(raw, ["uq"], {"uq": {"delta_r": args.delta_r, "delta_u": args.delta_u}})
    pred, vs, meta = pvol.read_array(args.prediction)
    ref, _, _ = pvol.read_array(args.reference)
    ref = ref[:, args.reference_channel]
    sigma = uncertainty_map(pred[:, 1])
    q1, q2, bm1, bm2 = q_maps(sigma, np.abs(pred[:, 0] - ref), sec["uq"])
    frac = containment_fraction(q1, q2)
    pvol.write_array(os.path.join(args.out, "uq.pvol"), np.stack([sigma, q1, q2, bm1, bm2], axis=1), vs,
                     {"channels": ["sigma", "q1", "q2", "bm1", "bm2"], "delta_r": sec["uq"].delta_r,
                      "delta_u": sec["uq"].delta_u, "intensity_units": "SD reference normalised to max 1"})
    stats = {"containment_q1_in_q2": None if np.isnan(frac) else frac, "sigma_mean": float(sigma.mean()),
             "bm1_voxels": int(bm1.sum()), "bm2_voxels": int(bm2.sum())}
    with open(os.path.join(args.out, "uq.json"), "w") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
    _summary(f"mean sigma {stats['sigma_mean']:.4g}; Q1 in Q2 containment {stats['containment_q1_in_q2']}")
    return sec


def cmd_evaluate(args, raw):
    test, _, _ = pvol.read_array(args.test)
    ref, _, _ = pvol.read_array(args.reference)
    rep = MetricReport(os.path.basename(args.test))
    for a, b in zip(test[:, args.test_channel], ref[:, args.reference_channel]):
        rep.add(a, b)
    if args.compare:
        other, _, _ = pvol.read_array(args.compare)
        orep = MetricReport(os.path.basename(args.compare))
        for a, b in zip(other[:, args.test_channel], ref[:, args.reference_channel]):
            orep.add(a, b)
        rep.compare(orep)
    rep.write_json(os.path.join(args.out, "metrics.json"))
    rep.write_csv(os.path.join(args.out, "metrics.csv"))
    s = rep.summary()
    _summary(f"PSNR {s['psnr_mean']:.2f} dB, SSIM {s['ssim_mean']:.4f} over {s['n']} slices")
    return {}


def cmd_sweep(args, raw):
    plan_dict = load_config(args.plan) if args.plan else dict(raw.get("plan", {}))
    if args.seed is not None:
        plan_dict["seed"] = args.seed
    if "seed" not in plan_dict:
        raise ConfigError("sweep is stochastic and needs --seed or a plan seed")
    plan = ExperimentPlan.from_dict(plan_dict)
    runner = run_ablation if args.ablation else run_dose_sweep
    result = runner(plan, args.out)
    _summary(f"sweep over {len(plan.modes)} modes x {len(plan.doses)} doses written to {args.out}")
    for row in result["table"]:
        print(f"  {row['mode']:>8} {row['dose']:>4}  PSNR {row['psnr_mean']:.2f} dB  SSIM {row['ssim_mean']:.4f}")
    return {"plan": plan}


# ---------------------------------------------------------------- parser
KEYS_HELP = {
    "phantom": "config keys: phantom.{size, num_ellipses, lesion_probability, voxel_size, num_slices}",
    "project": "config keys: geometry.{num_angles, bin_size}",
    "osem": "config keys: recon.{num_iterations, num_subsets, psf_fwhm, post_smooth_fwhm, init_value, epsilon_div}",
    "calibrate": "config keys: geometry.{num_angles, bin_size}, recon.*",
    "simulate-dose": "config keys: geometry.{num_angles, bin_size}, recon.*",
    "train": ("config keys: geometry.*, recon.*, loss.{epsilon, tau, lambda_s, lambda_e, lambda_s_mse}, "
              "train.{epochs, lr_init, weight_decay, batch_size, loss_mode, seed, cosine_annealing, beta1, beta2, "
              "adam_eps}, network.{in_channels, widths, dropout_p, bn_momentum, seed}"),
    "infer": "config keys: uq.num_passes",
    "uq": "config keys: uq.{delta_r, delta_u}",
    "evaluate": "consumes no config keys",
    "sweep": "config keys: plan.* (or --plan file); see ExperimentPlan for the field list",
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with config sections")
    common.add_argument("--seed", type=int, help="base seed (required by stochastic commands)")
    common.add_argument("--threads", type=int, help="thread count (default: $PETPHYS_THREADS or all cores)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="petphys", description="Low-dose PET simulation, training and uncertainty tools.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_, description=help_, epilog=KEYS_HELP[name])
        sp.set_defaults(func=func)
        return sp

    sp = add("phantom", cmd_phantom, "generate synthetic multimodal subjects")
    sp.add_argument("--n", type=int, required=True, help="number of subjects (>= 3)")
    sp.add_argument("--size", type=int, help="grid size (overrides phantom.size)")
    sp.add_argument("--slices", type=int, help="slices per subject (overrides phantom.num_slices)")

    sp = add("project", cmd_project, "forward-project the PET channel of a subject")
    sp.add_argument("--input", required=True)
    sp.add_argument("--angles", type=int, help="overrides geometry.num_angles")

    sp = add("osem", cmd_osem, "reconstruct sinograms with OSEM")
    sp.add_argument("--input", required=True)
    sp.add_argument("--reference", help="subject file to score against (PSNR)")
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--subsets", type=int)

    sp = add("calibrate", cmd_calibrate, "find count scales that hit target PSNRs")
    sp.add_argument("--inputs", nargs="+", required=True, help="subject files or glob patterns")
    sp.add_argument("--doses", nargs="+", default=["LD", "vLD", "uLD"], choices=sorted(DOSE_TARGETS_DB))
    sp.add_argument("--target", type=float, help="single custom target in dB (instead of --doses)")
    sp.add_argument("--label", default="custom", help="label for --target")
    sp.add_argument("--tolerance", type=float, default=0.25, help="dB")
    sp.add_argument("--angles", type=int)

    sp = add("simulate-dose", cmd_simulate_dose, "simulate and reconstruct reduced-count data")
    sp.add_argument("--input", required=True)
    sp.add_argument("--dose", default="LD")
    sp.add_argument("--scale", type=float, help="count scale (instead of --calibration)")
    sp.add_argument("--calibration", help="calibration.json from the calibrate command")
    sp.add_argument("--angles", type=int)

    sp = add("train", cmd_train, "train a network on simulated LD inputs")
    sp.add_argument("--data", required=True, help="directory written by the phantom command")
    sp.add_argument("--mode", choices=["U", "SU", "MSE", "MSE+S", "MSE+E"])
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--scale", type=float, help="LD count scale (instead of --calibration)")
    sp.add_argument("--calibration")
    sp.add_argument("--angles", type=int)

    sp = add("infer", cmd_infer, "Monte-Carlo dropout inference")
    sp.add_argument("--model", required=True)
    sp.add_argument("--subject", required=True, help="subject file supplying the MRI channels")
    sp.add_argument("--pet", required=True, help="low-dose file from simulate-dose")
    sp.add_argument("--passes", type=int, help="overrides uq.num_passes")
    sp.add_argument("--retain-passes", action="store_true", help="also write every pass")

    sp = add("uq", cmd_uq, "uncertainty and thresholded Q maps")
    sp.add_argument("--prediction", required=True)
    sp.add_argument("--reference", required=True)
    sp.add_argument("--reference-channel", type=int, default=1)
    sp.add_argument("--delta-r", type=float)
    sp.add_argument("--delta-u", type=float)

    sp = add("evaluate", cmd_evaluate, "PSNR / SSIM (and paired t-test) against a reference")
    sp.add_argument("--test", required=True)
    sp.add_argument("--reference", required=True)
    sp.add_argument("--compare", help="second prediction file for a paired t-test")
    sp.add_argument("--test-channel", type=int, default=0)
    sp.add_argument("--reference-channel", type=int, default=1)

    sp = add("sweep", cmd_sweep, "dose-robustness sweep or ablation ladder")
    sp.add_argument("--plan", help="plan JSON (defaults to the config's plan section)")
    sp.add_argument("--ablation", action="store_true")
    return p


def thread_count(args) -> int:
    if args.threads is not None:
        n = args.threads
    elif os.environ.get("PETPHYS_THREADS"):
        try:
            n = int(os.environ["PETPHYS_THREADS"])
        except ValueError:
            raise ConfigError("PETPHYS_THREADS must be an integer") from None
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise ConfigError("thread count must be >= 1")
    return n


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        from threadpoolctl import threadpool_limits

        args.threads = thread_count(args)
        raw = load_config(args.config)
        os.makedirs(args.out, exist_ok=True)
        with threadpool_limits(limits=args.threads):
            sections = args.func(args, raw)
        write_snapshot(args.out, args, sections or {})
    except PetPhysError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
