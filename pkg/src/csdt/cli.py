"""Command-line pipeline: phantom generation through the evaluation report.

Subcommands
-----------
phantom   write synthetic DWI subject stacks plus a split manifest
mask      draw one variable-density sampling mask as JSON
train     run the training harness from a JSON config and a data directory
recon     reconstruct an undersampled stack (deterministic full-depth pass)
ensemble  stochastic ensemble reconstruction: mean and uncertainty std maps
fit       tensor fit and FA/MD/HA maps from a stack (or reconstructed images)
eval      compare fitted recon maps against ground-truth maps, emit a report

Every command is a pure function of its flags, seeds and input files, so
rerunning one produces byte-identical outputs. Exit codes: 0 success,
1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import struct
import sys
from dataclasses import replace

import numpy as np

from . import container
from .autodiff import no_grad
from .cascade import CascadeConfig, CascadeModel, load_model, save_model, reconstruct_ensemble
from .kspace import undersample, zero_filled
from .masks import MaskSpec, generate_mask, save_mask, load_mask
from .metrics import EvalReport, psnr, rmse_masked, ha_rmse
from .optim import NonFiniteGradientError
from .phantom import Dataset, PhantomSpec, default_protocol, make_dataset, save_dwi, load_dwi
from .training import TrainConfig, NonFiniteLossError, train
from . import dtfit

_CHUNK = 8  # frames per forward pass; bounds conv buffer memory


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: error: {message}")


def _splits(text):
    parts = text.split(",")
    if len(parts) != 3:
        raise _UsageError(f"--subjects wants train,val,test counts, got {text!r}")
    return tuple(int(p) for p in parts)


def cmd_phantom(args):
    base = PhantomSpec(
        shape=(args.size, args.size),
        center=(args.size / 2.0, args.size / 2.0),
        noise_std=args.noise_std,
    )
    protocol = default_protocol(args.directions, args.bvalue, args.averages)
    ds = make_dataset(_splits(args.subjects), base=base, protocol=protocol, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    manifest = {}
    for split in ("train", "val", "test"):
        names = []
        for i, stack in enumerate(getattr(ds, split)):
            name = f"{split}{i:03d}.csdt"
            save_dwi(stack, os.path.join(args.out, name))
            names.append(name)
        manifest[split] = names
    manifest["seed"] = args.seed
    with open(os.path.join(args.out, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"wrote {sum(len(v) for v in manifest.values() if isinstance(v, list))} "
          f"subjects to {args.out}")
    return 0


def cmd_mask(args):
    spec = MaskSpec(ny=args.ny, uf=args.uf, sigma_fraction=args.sigma_fraction,
                    center_lines=args.center_lines, seed=args.seed)
    mask = generate_mask(spec)
    save_mask(mask, args.out, spec)
    print(f"wrote mask with {mask.num_sampled}/{mask.ny} lines "
          f"(effective uf {mask.effective_uf:.2f}) to {args.out}")
    return 0


def _load_manifest_split(data_dir, split):
    with open(os.path.join(data_dir, "manifest.json")) as f:
        manifest = json.load(f)
    return [load_dwi(os.path.join(data_dir, name)) for name in manifest[split]]


def _cascade_config(d):
    d = dict(d)
    if d.get("dilations") is not None:
        d["dilations"] = tuple(d["dilations"])
    return CascadeConfig(**d)


def _train_config(d):
    d = dict(d)
    if "uf_range" in d:
        d["uf_range"] = tuple(d["uf_range"])
    return TrainConfig(**d)


def cmd_train(args):
    with open(args.config) as f:
        doc = json.load(f)
    model = CascadeModel.build(_cascade_config(doc.get("model", {})),
                               seed=int(doc.get("model_seed", 0)))
    config = _train_config(doc.get("train", {}))
    data = Dataset(
        train=_load_manifest_split(args.data, "train"),
        val=_load_manifest_split(args.data, "val"),
        test=[],
    )
    os.makedirs(args.out, exist_ok=True)
    model, log = train(model, data, config, checkpoint_dir=args.out)
    save_model(model, os.path.join(args.out, "checkpoint.csdt"))
    with open(os.path.join(args.out, "log.jsonl"), "w") as f:
        f.write(log.to_jsonl())
    best = max(r["val_psnr"] for r in log.records)
    print(f"trained {config.epochs} epochs; best validation PSNR {best:.2f} dB; "
          f"checkpoint in {args.out}", file=sys.stderr)
    wall = sum(r["wall_time"] for r in log.records)
    print(f"wall time {wall:.1f}s", file=sys.stderr)
    return 0


def _recon_frames(model, frames, lines):
    """Deterministic reconstruction of (F, H, W) complex frames, chunked."""
    outs = []
    with no_grad():
        for lo in range(0, frames.shape[0], _CHUNK):
            y = undersample(frames[lo:lo + _CHUNK], lines)
            out = model.forward(None, y, lines, mode="deterministic")
            outs.append(out.data.astype(np.float64))
    return np.concatenate(outs, axis=0)


def cmd_recon(args):
    stack = load_dwi(args.input)
    mask = load_mask(args.mask)
    frames = stack.frames()
    if args.checkpoint:
        model = load_model(args.checkpoint)
        rec = _recon_frames(model, frames, mask.lines)
        rec_c = rec[:, 0] + 1j * rec[:, 1]
    else:
        rec_c = zero_filled(undersample(frames, mask.lines), mask.lines)
    shape = stack.images.shape
    rec_c = rec_c.reshape(shape)
    entries = {
        "recon.real": rec_c.real.astype(np.float64),
        "recon.imag": rec_c.imag.astype(np.float64),
        "magnitude": np.abs(rec_c),
    }
    container.write_container(args.out, entries)
    if args.pgm:
        container.write_pgm(str(args.out) + ".pgm", np.abs(rec_c[0, 0]))
    label = args.checkpoint if args.checkpoint else "zero-filled"
    print(f"reconstructed {frames.shape[0]} frames ({label}) to {args.out}")
    return 0


def cmd_ensemble(args):
    stack = load_dwi(args.input)
    mask = load_mask(args.mask)
    model = load_model(args.checkpoint)
    frames = stack.frames()
    rng = np.random.default_rng(args.seed)
    means, stds = [], []
    for lo in range(0, frames.shape[0], _CHUNK):
        y = undersample(frames[lo:lo + _CHUNK], mask.lines)
        res = reconstruct_ensemble(model, y, mask.lines, k=args.samples, rng=rng)
        means.append(res.mean.astype(np.float64))
        stds.append(res.std.astype(np.float64))
    e, a, h, w = stack.images.shape
    entries = {
        "mean": np.concatenate(means).reshape(e, a, h, w),
        "std": np.concatenate(stds).reshape(e, a, h, w),
    }
    container.write_container(args.out, entries)
    if args.pgm:
        container.write_pgm(str(args.out) + ".mean.pgm", entries["mean"][0, 0])
        container.write_pgm(str(args.out) + ".std.pgm", entries["std"][0, 0])
    print(f"ensemble of {args.samples} stochastic passes to {args.out}")
    return 0


def cmd_fit(args):
    stack = load_dwi(args.dwi)
    if args.images:
        rec = container.read_container(args.images)
        images = rec["recon.real"] + 1j * rec["recon.imag"]
        if images.shape != stack.images.shape:
            raise ValueError(
                f"{args.images} images {images.shape} do not match stack "
                f"{stack.images.shape}"
            )
        stack = replace(stack, images=images)
    field = dtfit.fit_tensor(stack)
    mets = dtfit.tensor_metrics(field, stack.spec.center)
    entries = {
        "d6": field.d6,
        "s0": field.s0,
        "valid": field.valid.astype(np.float64),
        "fa": mets.fa,
        "md": mets.md,
        "ha": mets.ha,
        "evals": mets.evals,
        "mask": stack.mask.astype(np.float64),
        "center": np.asarray(stack.spec.center, dtype=np.float64),
        "magnitude": np.abs(stack.images),
    }
    container.write_container(args.out, entries)
    if args.pgm:
        container.write_pgm(str(args.out) + ".fa.pgm", mets.fa)
        container.write_pgm(str(args.out) + ".ha.pgm", mets.ha)
    print(f"fitted tensors on {int(field.valid.sum())} pixels to {args.out}")
    return 0


def _eval_pairs(recon_path, gt_path):
    if os.path.isdir(recon_path) != os.path.isdir(gt_path):
        raise ValueError("--recon and --gt must both be files or both directories")
    if not os.path.isdir(recon_path):
        name = os.path.splitext(os.path.basename(recon_path))[0]
        return [(name, recon_path, gt_path)]
    pairs = []
    for name in sorted(os.listdir(recon_path)):
        if not name.endswith(".csdt"):
            continue
        gt_file = os.path.join(gt_path, name)
        if not os.path.exists(gt_file):
            raise ValueError(f"no ground-truth file matching {name} in {gt_path}")
        pairs.append((os.path.splitext(name)[0], os.path.join(recon_path, name), gt_file))
    if not pairs:
        raise ValueError(f"no .csdt files in {recon_path}")
    return pairs


def _subject_metrics(recon_entries, gt_entries, mask_override):
    values = {}
    rmag = recon_entries.get("magnitude")
    gmag = gt_entries.get("magnitude")
    if rmag is not None and gmag is not None:
        if rmag.shape != gmag.shape:
            raise ValueError(f"magnitude shapes differ: {rmag.shape} vs {gmag.shape}")
        flat_r = rmag.reshape(-1, *rmag.shape[-2:])
        flat_g = gmag.reshape(-1, *gmag.shape[-2:])
        values["psnr"] = float(np.mean(
            [psnr(fr, fg) for fr, fg in zip(flat_r, flat_g)]
        ))
    if all(k in recon_entries and k in gt_entries for k in ("fa", "md", "ha")):
        if mask_override is not None:
            mask = mask_override
        elif "mask" in gt_entries:
            mask = gt_entries["mask"] > 0.5
        else:
            raise ValueError("no myocardium mask available for map RMSE")
        values["fa_rmse"] = rmse_masked(recon_entries["fa"], gt_entries["fa"], mask)
        values["md_rmse"] = rmse_masked(recon_entries["md"], gt_entries["md"], mask)
        values["ha_rmse"] = ha_rmse(recon_entries["ha"], gt_entries["ha"], mask)
    return values


def cmd_eval(args):
    mask_override = None
    if args.mask:
        mask_override = container.read_container(args.mask)["mask"] > 0.5
    report = EvalReport(model_label=args.model_label, uf_label=args.uf_label)
    for name, recon_file, gt_file in _eval_pairs(args.recon, args.gt):
        recon_entries = container.read_container(recon_file)
        gt_entries = container.read_container(gt_file)
        report.add_subject(name, **_subject_metrics(recon_entries, gt_entries, mask_override))
    with open(args.report, "w") as f:
        f.write(report.to_json())
    text = report.to_text()
    if args.table:
        with open(args.table, "w") as f:
            f.write(text)
    else:
        print(text, end="")
    return 0


def build_parser():
    parser = _Parser(prog="csdt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate synthetic DWI subjects")
    p.add_argument("--subjects", required=True, help="train,val,test counts (e.g. 20,4,4)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--directions", type=int, default=12)
    p.add_argument("--bvalue", type=float, default=1000.0)
    p.add_argument("--averages", type=int, default=4)
    p.add_argument("--noise-std", type=float, default=0.0)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("mask", help="draw a variable-density sampling mask")
    p.add_argument("--ny", type=int, required=True)
    p.add_argument("--uf", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--center-lines", type=int, default=1)
    p.add_argument("--sigma-fraction", type=float, default=0.25)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("train", help="train a cascade from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="directory written by `csdt phantom`")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("recon", help="reconstruct an undersampled stack")
    p.add_argument("--checkpoint", default=None,
                   help="trained model; omit for the zero-filled baseline")
    p.add_argument("--input", required=True, help="DWI stack container")
    p.add_argument("--mask", required=True, help="mask JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--pgm", action="store_true")
    p.set_defaults(func=cmd_recon)

    p = sub.add_parser("ensemble", help="stochastic ensemble mean + uncertainty")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("-K", "--samples", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--pgm", action="store_true")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("fit", help="tensor fit and FA/MD/HA maps")
    p.add_argument("--dwi", required=True, help="stack with the protocol and truth")
    p.add_argument("--images", default=None,
                   help="recon container whose images replace the stack's")
    p.add_argument("--out", required=True)
    p.add_argument("--pgm", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="evaluation report from fitted maps")
    p.add_argument("--recon", required=True, help="fit output (file or directory)")
    p.add_argument("--gt", required=True, help="ground-truth fit output (file or directory)")
    p.add_argument("--mask", default=None, help="container overriding the myocardium mask")
    p.add_argument("--report", required=True, help="JSON report path")
    p.add_argument("--table", default=None, help="text table path (default: stdout)")
    p.add_argument("--model-label", default="recon")
    p.add_argument("--uf-label", default="")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as err:
        print(err, file=sys.stderr)
        return 1
    except SystemExit as err:  # --help and friends
        return int(err.code or 0)
    try:
        return args.func(args)
    except _UsageError as err:
        print(err, file=sys.stderr)
        return 1
    except (NonFiniteLossError, NonFiniteGradientError, FloatingPointError,
            np.linalg.LinAlgError) as err:
        print(f"csdt: numeric failure: {err}", file=sys.stderr)
        return 3
    except (OSError, ValueError, KeyError, json.JSONDecodeError, struct.error) as err:
        print(f"csdt: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
