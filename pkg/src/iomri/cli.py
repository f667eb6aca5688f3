"""Command-line pipeline: ``iomri <subcommand> ...``.

Every run writes a ``<output>.provenance.json`` record next to its primary
output. Failures exit with status 2 and print ``error[<category>]: message``
on stderr.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import IomriError, MissingFileError, OutputExistsError, UsageError

log = logging.getLogger("iomri")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# helpers

def _sidecar_files(base):
    p = Path(base)
    if p.suffix in (".json", ".raw"):
        p = p.with_suffix("")
    return [p.with_name(p.name + ".json"), p.with_name(p.name + ".raw")]


def _fresh(*paths):
    for p in paths:
        if Path(p).exists():
            raise OutputExistsError(f"{p} already exists; outputs are never overwritten")


def _fresh_volume(base):
    _fresh(*_sidecar_files(base))


def _require(base):
    for p in _sidecar_files(base):
        if not p.exists():
            raise MissingFileError(f"{p} not found")


def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _file_records(paths):
    out = []
    for p in paths:
        files = [Path(p)] if Path(p).is_file() else _sidecar_files(p)
        out += [{"path": str(f), "sha256": _digest(f)} for f in files if f.exists()]
    return out


def _versions():
    import numba
    import scipy
    return {"iomri": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def _provenance(base, argv, args, inputs, outputs, extra=None):
    path = Path(str(Path(base).with_suffix("") if Path(base).suffix in (".json", ".raw", ".csv", ".png")
                    else base) + ".provenance.json")
    _fresh(path)
    params = {k: v for k, v in vars(args).items() if k != "func"}
    record = {"argv": list(argv), "command": params.get("command"), "parameters": params,
              "inputs": _file_records(inputs), "outputs": _file_records(outputs),
              "versions": _versions()}
    if extra:
        record.update(extra)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _parent(path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)


def _suffixed(base, suffix):
    p = Path(base)
    if p.suffix in (".json", ".raw"):
        p = p.with_suffix("")
    return p.with_name(p.name + suffix)


# ---------------------------------------------------------------------------
# subcommands

def cmd_phantom(args, argv):
    from .io import write_volume
    from .phantom import PhantomSpec, generate_phantom, phantom_kspace

    spec = PhantomSpec(extents=tuple(args.extents), fov_mm=tuple(args.fov_mm),
                       noise_sigma=args.noise, seed=args.seed)
    truth = _suffixed(args.out, "_truth")
    _fresh_volume(args.out)
    _fresh_volume(truth)
    k = phantom_kspace(spec, encode_z=not args.no_z_encode)
    write_volume(k, args.out)
    write_volume(generate_phantom(spec), truth)
    _provenance(args.out, argv, args, [], [args.out, truth])
    print(f"wrote {args.out} {k.data.shape} and {truth}")


def cmd_mask_gen(args, argv):
    from .io import write_mask
    from .plotting import save_image
    from .sampling import poisson_disc_mask

    _fresh_volume(args.out)
    mask = poisson_disc_mask(tuple(args.extents), args.accel, args.calib_fraction,
                             seed=args.seed, style=args.style)
    write_mask(mask, args.out)
    outputs = [args.out]
    if args.png:
        png = _suffixed(args.out, ".png")
        _fresh(png)
        save_image(mask.keep.astype(float), png, f"R = {mask.measured_R:.2f}")
        outputs.append(png)
    _provenance(args.out, argv, args, [], outputs)
    print(f"target R {args.accel}, measured R {mask.measured_R:.4f}")


def cmd_emulate(args, argv):
    from .emulation import emulate_acquisition, protocol_preset
    from .io import read_volume, write_mask, write_volume

    _require(args.input)
    spec = protocol_preset(args.preset)
    res = args.res if args.res is not None else float(np.mean(spec.target_res_mm))
    accel = args.accel if args.accel is not None else spec.acceleration_choices[0]
    mask_out, target_out = _suffixed(args.out, "_mask"), _suffixed(args.out, "_target")
    for p in (args.out, mask_out, target_out):
        _fresh_volume(p)
    pair = emulate_acquisition(read_volume(args.input), res, accel, seed=args.seed,
                               style=args.style, calib_fraction=spec.calib_fraction)
    write_volume(pair.input_kspace, args.out)
    write_mask(pair.mask, mask_out)
    write_volume(pair.target_image, target_out)
    _provenance(args.out, argv, args, [args.input], [args.out, mask_out, target_out],
                {"emulation": pair.provenance})
    print(f"emulated {pair.provenance['achieved_res_mm']} mm at R={accel} "
          f"(measured {pair.provenance['measured_acceleration']:.3f})")


def _target_grid(args, kspace):
    if args.target_extents:
        return tuple(args.target_extents)
    if args.target_res is not None:
        from .emulation import resolution_extents
        return resolution_extents(kspace.fov_mm[1:], args.target_res)
    src = kspace.provenance.get("emulation", {}).get("source_extents_yx")
    return tuple(src) if src else None


def cmd_recon(args, argv):
    from .io import checkpoint_exists, load_model, read_mask, read_volume, write_volume
    from .plotting import save_image
    from .recon import reconstruct_cs, reconstruct_dl, reconstruct_zero_filled
    from .errors import MissingModelError

    if args.method == "dl":
        if not args.checkpoint or not checkpoint_exists(args.checkpoint):
            raise MissingModelError("recon dl needs an existing --checkpoint")
    for p in args.input:
        _require(p)
    _require(args.mask)
    _fresh_volume(args.out)
    repeats = [read_volume(p) for p in args.input]
    mask = read_mask(args.mask)
    grid = _target_grid(args, repeats[0])
    z_enc = {"auto": None, "yes": True, "no": False}[args.z_encoded]
    inputs = list(args.input) + [args.mask]
    if args.method == "zf":
        img = reconstruct_zero_filled(repeats, mask, grid, z_enc)
    elif args.method == "cs":
        img = reconstruct_cs(repeats, mask, grid, z_enc, args.lam, args.iters, args.levels, args.wavelet)
    else:
        img = reconstruct_dl(load_model(args.checkpoint), repeats, mask, grid, z_enc)
        inputs.append(args.checkpoint)
    write_volume(img, args.out)
    outputs = [args.out]
    if args.png:
        png = _suffixed(args.out, ".png")
        _fresh(png)
        save_image(img.data[img.data.shape[0] // 2], png, args.method)
        outputs.append(png)
    _provenance(args.out, argv, args, inputs, outputs)
    print(f"{args.method} reconstruction {img.data.shape} at {img.spacing_mm[1:]} mm")


def cmd_train(args, argv):
    from .emulation import protocol_preset
    from .io import save_model
    from .phantom import phantom_slices
    from .plotting import training_curve
    from .unrolled.training import train_model, training_preset

    out = Path(args.out)
    ckpt = out / "model"
    log_csv = out / "training_log.csv"
    _fresh_volume(ckpt)
    _fresh(log_csv)
    cfg = training_preset(args.preset, epochs=args.epochs, lr=args.lr, batch=args.batch,
                          cascades=args.cascades, channels=args.channels, seed=args.seed,
                          examples_per_epoch=args.examples_per_epoch)
    spec = protocol_preset(args.protocol or args.preset)
    slices = phantom_slices(args.train_slices + args.val_slices, seed=args.seed,
                            extents_yx=(args.extent, args.extent), spacing_mm=args.spacing)
    model, history = train_model(slices[:args.train_slices], slices[args.train_slices:], spec, cfg,
                                 callback=lambda r: print(
                                     f"epoch {r['epoch']:3d}  train {r['train_loss']:.5f}  "
                                     f"val {r['val_loss']:.5f}  lr {r['lr']:.2e}", flush=True))
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, cfg, ckpt, best_epoch=history["best_epoch"],
               extra={"protocol": spec.name, "train_slices": args.train_slices,
                      "val_slices": args.val_slices})
    with open(log_csv, "x", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_loss", "lr", "steps"],
                           lineterminator="\n")
        w.writeheader()
        w.writerows(history["epochs"])
    outputs = [ckpt, log_csv]
    curve = out / "training_curve.png"
    if not curve.exists():
        training_curve(history["epochs"], curve)
        outputs.append(curve)
    _provenance(ckpt, argv, args, [], outputs, {"best_epoch": history["best_epoch"]})
    print(f"best epoch {history['best_epoch']}; checkpoint {ckpt}")


def cmd_eval_metrics(args, argv):
    from .io import read_volume
    from .metrics import nmse, psnr, ssim

    _require(args.reference)
    ref = read_volume(args.reference)
    recons = []
    for item in args.recon:
        method, sep, path = item.partition("=")
        if not sep:
            raise UsageError(f"--recon expects METHOD=PATH, got {item!r}")
        _require(path)
        recons.append((method, path, read_volume(path)))
    _fresh(args.out)
    _parent(args.out)
    rows = 0
    with open(args.out, "x", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["volume_id", "method", "slice", "ssim", "psnr", "nmse"])
        for method, _, img in recons:
            if img.data.shape != ref.data.shape:
                from .errors import InvalidArgumentError
                raise InvalidArgumentError(
                    f"{method}: extents {img.data.shape} differ from reference {ref.data.shape}")
            for z in range(ref.data.shape[0]):
                r = ref.data[z].astype(np.float64)
                x = img.data[z].astype(np.float64)
                peak = float(r.max())
                if peak <= 0:
                    continue
                w.writerow([args.volume_id, method, z, f"{ssim(x, r):.6f}",
                            f"{psnr(x, r, peak):.4f}", f"{nmse(x, r):.6e}"])
                rows += 1
    _provenance(args.out, argv, args, [args.reference] + [p for _, p, _ in recons], [args.out])
    print(f"wrote {rows} rows to {args.out}")


def cmd_bias_correct(args, argv):
    from .biasfield import bias_field_correct
    from .io import read_volume, write_volume
    from .volume import ImageVolume

    _require(args.input)
    img = read_volume(args.input)
    if not isinstance(img, ImageVolume):
        from .errors import FormatError
        raise FormatError(f"{args.input} is not a magnitude image volume")
    field_out = _suffixed(args.out, "_field")
    _fresh_volume(args.out)
    _fresh_volume(field_out)
    res = bias_field_correct(img, degree=args.degree)
    write_volume(res.corrected, args.out)
    write_volume(ImageVolume(res.field, img.spacing_mm), field_out)
    _provenance(args.out, argv, args, [args.input], [args.out, field_out])
    print(f"field range {res.field[res.mask].min():.3f} .. {res.field[res.mask].max():.3f}")


def cmd_study_assign(args, argv):
    from .study import assign_blinding, write_assignments

    if args.ids_file:
        ids = [line.strip() for line in Path(args.ids_file).read_text().splitlines() if line.strip()]
    elif args.ids:
        ids = args.ids
    else:
        ids = [f"P{i + 1:03d}" for i in range(args.n)]
    _fresh(args.out)
    _parent(args.out)
    assignments = assign_blinding(ids, args.seed)
    write_assignments(args.out, assignments)
    _provenance(args.out, argv, args, [args.ids_file] if args.ids_file else [], [args.out])
    print(f"assigned {len(assignments)} patients")


def cmd_study_analyze(args, argv):
    from .plotting import preference_bar_chart
    from .study import (preference_csv, preference_text, read_assignments, read_preferences,
                        read_scores, summarize_scores, table_csv, table_text, tally_preferences)

    for p in (args.assignments, args.scores, args.preferences):
        if p and not Path(p).exists():
            raise MissingFileError(f"{p} not found")
    out = Path(args.out)
    files = {"table_txt": out / "table1.txt", "table_csv": out / "table1.csv",
             "pref_csv": out / "preferences.csv", "pref_png": out / "preferences.png"}
    _fresh(*files.values())
    out.mkdir(parents=True, exist_ok=True)
    assignments = read_assignments(args.assignments)
    written = []
    if args.preferences:
        tallies = tally_preferences(read_preferences(args.preferences), assignments)
        text = preference_text(tallies)
        sys.stdout.write(text)
        files["pref_csv"].write_text(preference_csv(tallies))
        preference_bar_chart(tallies, files["pref_png"])
        written += [files["pref_csv"], files["pref_png"]]
    if args.scores:
        rows = summarize_scores(read_scores(args.scores), assignments)
        text = table_text(rows)
        sys.stdout.write("\n" + text)
        files["table_txt"].write_text(text)
        files["table_csv"].write_text(table_csv(rows))
        written += [files["table_txt"], files["table_csv"]]
    inputs = [p for p in (args.assignments, args.scores, args.preferences) if p]
    _provenance(out / "report", argv, args, inputs, written)


# ---------------------------------------------------------------------------
# parser

def build_parser():
    p = _Parser(prog="iomri", description="Intraoperative MRI reconstruction toolkit.")
    p.add_argument("--version", action="version", version=f"iomri {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("phantom", help="simulate a fully sampled two-coil phantom")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--extents", type=int, nargs=3, default=[8, 256, 256], metavar=("Z", "Y", "X"))
    s.add_argument("--fov-mm", type=float, nargs=3, default=[14.0, 220.0, 220.0])
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--no-z-encode", action="store_true", help="store 2-D k-space per slice")
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("mask-gen", help="variable-density Poisson-disc mask")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--extents", type=int, nargs=2, default=[256, 256], metavar=("Y", "X"))
    s.add_argument("--accel", type=float, required=True)
    s.add_argument("--style", default="styleA", choices=["styleA", "styleB"])
    s.add_argument("--calib-fraction", type=float, default=0.08)
    s.add_argument("--png", action="store_true")
    s.set_defaults(func=cmd_mask_gen)

    s = sub.add_parser("emulate", help="emulate a low-resolution accelerated acquisition")
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--preset", default="desk", choices=["imri-t1", "imri-flair", "desk"])
    s.add_argument("--res", type=float, help="in-plane resolution in mm (default: preset midpoint)")
    s.add_argument("--accel", type=float, help="acceleration (default: first preset choice)")
    s.add_argument("--style", default="styleA", choices=["styleA", "styleB"])
    s.set_defaults(func=cmd_emulate)

    s = sub.add_parser("recon", help="zero-filled, compressed-sensing or cascade reconstruction")
    s.add_argument("method", choices=["zf", "cs", "dl"])
    s.add_argument("--input", required=True, nargs="+", help="k-space volume(s); repeats are averaged")
    s.add_argument("--mask", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--checkpoint")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--target-res", type=float, help="zero-pad to this in-plane resolution (mm)")
    g.add_argument("--target-extents", type=int, nargs=2, metavar=("Y", "X"))
    s.add_argument("--z-encoded", default="auto", choices=["auto", "yes", "no"])
    s.add_argument("--lambda", dest="lam", type=float, default=5e-3)
    s.add_argument("--iters", type=int, default=50)
    s.add_argument("--levels", type=int, default=3)
    s.add_argument("--wavelet", default="db4", choices=["db4", "haar"])
    s.add_argument("--png", action="store_true")
    s.set_defaults(func=cmd_recon)

    s = sub.add_parser("train", help="train the cascade on synthetic phantom slices")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--preset", default="desk", choices=["desk", "full"])
    s.add_argument("--protocol", choices=["imri-t1", "imri-flair", "desk"])
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch", type=int)
    s.add_argument("--cascades", type=int)
    s.add_argument("--channels", type=int)
    s.add_argument("--examples-per-epoch", type=int)
    s.add_argument("--train-slices", type=int, default=64)
    s.add_argument("--val-slices", type=int, default=8)
    s.add_argument("--extent", type=int, default=96)
    s.add_argument("--spacing", type=float, default=0.6875)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval-metrics", help="per-slice SSIM, PSNR and NMSE against a reference")
    s.add_argument("--reference", required=True)
    s.add_argument("--recon", required=True, nargs="+", metavar="METHOD=PATH")
    s.add_argument("--volume-id", default="volume")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval_metrics)

    s = sub.add_parser("bias-correct", help="polynomial bias-field correction")
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--degree", type=int, default=4)
    s.set_defaults(func=cmd_bias_correct)

    s = sub.add_parser("study", help="blinded reader study")
    ss = s.add_subparsers(dest="study_command", required=True, parser_class=_Parser)
    a = ss.add_parser("assign", help="blind A/B assignment per patient")
    a.add_argument("--out", required=True)
    a.add_argument("--seed", type=int, required=True)
    src = a.add_mutually_exclusive_group(required=True)
    src.add_argument("--ids", nargs="+")
    src.add_argument("--ids-file")
    src.add_argument("--n", type=int)
    a.set_defaults(func=cmd_study_assign)
    a = ss.add_parser("analyze", help="unblind, tally preferences, summarize scores")
    a.add_argument("--assignments", required=True)
    a.add_argument("--scores")
    a.add_argument("--preferences")
    a.add_argument("--out", required=True, help="report directory")
    a.set_defaults(func=cmd_study_analyze)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args, argv)
    except IomriError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
