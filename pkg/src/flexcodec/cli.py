"""Command line interface.

Subcommands: train, finetune-encoder, edit, compress, decompress, rd-sweep,
roi, md-sweep, histogram, ablate.  A YAML config file supplies defaults for
any flag (--config); explicit flags win.  FLEXCODEC_HOME sets the default
output root.  Every command is deterministic under --seed and writes a
manifest next to its outputs.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import torch
import yaml

from . import bitstream, data, experiments
from .editing import EditConfig, edit, edit_multidistortion, edit_roi
from .errors import RangeCoderUnavailable
from .models import CodecModel
from .objectives import EditTarget, mse_distortion, psnr
from .range_coding import get_coder
from .training import (
    ADMISSIBLE_LAMBDAS,
    LAMBDA0_DEFAULT,
    LAMBDA_PRIME_DEFAULT,
    TrainConfig,
    finetune_encoder,
    train_amortized,
)

HOME_ENV = "FLEXCODEC_HOME"


def _out_root():
    return os.environ.get(HOME_ENV, "runs")


def _out_dir(args, name):
    out = getattr(args, "out", None) or os.path.join(_out_root(), name)
    os.makedirs(out, exist_ok=True)
    return out


def _edit_config(args):
    return EditConfig(
        iterations=args.iterations,
        seed=args.seed,
        adaptive_delta=not getattr(args, "naive", False),
        grid_search_enabled=not (getattr(args, "naive", False)
                                 or getattr(args, "no_grid", False)),
        relaxation=getattr(args, "relaxation", "sga"),
    )


def _load_inputs(args):
    """(name, tensor) pairs from --image, --images, or --synthetic."""
    if getattr(args, "image", None):
        p = Path(args.image)
        return [(p.stem, data.load_image(p))]
    if getattr(args, "images", None):
        root = Path(args.images)
        paths = sorted(q for q in root.iterdir()
                       if q.suffix.lower() in (".png", ".ppm"))
        if not paths:
            raise SystemExit(f"no PNG/PPM images in {root}")
        return [(q.stem, data.load_image(q)) for q in paths]
    n = getattr(args, "synthetic", 0)
    if n:
        size = getattr(args, "size", 128)
        return [(f"synthetic{i}", data.synthetic_image(size, size, seed=args.seed + i))
                for i in range(n)]
    raise SystemExit("need --image, --images, or --synthetic")


def _training_patches(args):
    if getattr(args, "images", None):
        images = [img for _, img in _load_inputs(args)]
    else:
        count = getattr(args, "synthetic", 0) or 8
        images = data.synthetic_corpus(count, 192, 192, seed=args.seed)
    return data.extract_patches(images, args.patch_size, args.patches, seed=args.seed)


def cmd_train(args):
    out = _out_dir(args, "train")
    cfg = TrainConfig(lambda0=args.lambda0, epochs=args.epochs,
                      batch_size=args.batch_size, learning_rate=args.lr,
                      patch_size=args.patch_size, seed=args.seed)
    patches = _training_patches(args)
    ckpt = args.checkpoint or os.path.join(out, "model.pt")
    model = train_amortized(patches, cfg, checkpoint_path=ckpt,
                            log_path=os.path.join(out, "train_log.csv"))
    experiments.write_manifest(out, "train", args.seed, model, vars(args) | {"checkpoint": ckpt})
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_finetune(args):
    out = _out_dir(args, "finetune")
    base = CodecModel.load(args.model)
    cfg = TrainConfig(lambda0=base.lambda_train or LAMBDA0_DEFAULT, epochs=args.epochs,
                      batch_size=args.batch_size, learning_rate=args.lr,
                      patch_size=args.patch_size, seed=args.seed)
    patches = _training_patches(args)
    ckpt = args.checkpoint or os.path.join(out, "model_ft.pt")
    tuned = finetune_encoder(base, args.lambda_prime, cfg, patches,
                             checkpoint_path=ckpt,
                             log_path=os.path.join(out, "finetune_log.csv"))
    experiments.write_manifest(out, "finetune-encoder", args.seed, tuned,
                               vars(args) | {"checkpoint": ckpt})
    print(f"checkpoint: {ckpt} (decoder id {tuned.theta_id().hex()})")
    return 0


def cmd_edit(args):
    out = _out_dir(args, "edit")
    model = CodecModel.load(args.model)
    config = _edit_config(args)
    inputs = _load_inputs(args)
    lambdas = args.lam or list(ADMISSIBLE_LAMBDAS)
    rows, _ = experiments.rd_sweep(inputs, model, lambdas, config, out)
    for name, x in inputs:
        for lam in lambdas:
            row = next(r for r in rows
                       if r["image"] == name and float(r["lam"]) == float(lam))
            print(f"{name} lam={lam}: bpp {float(row['bpp']):.4f} "
                  f"psnr {float(row['psnr']):.2f}")
    experiments.write_manifest(out, "edit", args.seed, model,
                               {"lambdas": lambdas, "iterations": args.iterations})
    return 0


def _require_coder():
    coder = get_coder()
    if coder is None:
        raise SystemExit("range coder binary not found; build it or set "
                         "FLEXCODEC_RANGECODER (theoretical rates work without it)")
    return coder


def cmd_compress(args):
    coder = _require_coder()
    model = CodecModel.load(args.model)
    name, x = _load_inputs(args)[0]
    padded, h, w = data.pad_to_multiple(x)
    config = _edit_config(args)
    if args.target_bpp:
        target = EditTarget(lambda_targets=(("mse", args.lam[0] if args.lam else 0.015),),
                            rate_target_bpp=args.target_bpp)
    else:
        target = EditTarget(lambda_targets=(("mse", args.lam[0] if args.lam else 0.015),))
    result = edit(padded, model, target, config)
    blob = bitstream.compress(result, model, coder, height=h, width=w)
    out_path = args.stream or f"{name}.cedt"
    Path(out_path).write_bytes(blob)
    bpp = len(blob) * 8 / (h * w)
    recon = bitstream.finalize_image(result.recon, h, w)
    actual_psnr = psnr(float(mse_distortion(x, recon)))
    print(f"{out_path}: {len(blob)} bytes, {bpp:.4f} bpp (actual), "
          f"psnr {actual_psnr:.2f} dB")
    if args.metrics:
        with open(args.metrics, "w") as f:
            json.dump({"bytes": len(blob), "bpp_actual": bpp,
                       "bpp_theoretical": result.metrics.rate_bpp,
                       "psnr": actual_psnr, "delta_y": result.steps.delta_y,
                       "delta_z": result.steps.delta_z}, f, indent=2)
    return 0


def cmd_decompress(args):
    coder = _require_coder()
    model = CodecModel.load(args.model)
    blob = Path(args.stream).read_bytes()
    decoded = bitstream.decompress(blob, model, coder)
    data.save_image(decoded.image, args.output)
    msg = f"{args.output}: {decoded.header.width}x{decoded.header.height}"
    if args.original:
        x = data.load_image(args.original)
        msg += f", psnr {psnr(float(mse_distortion(x, decoded.image))):.2f} dB"
    print(msg)
    return 0


def cmd_rd_sweep(args):
    out = _out_dir(args, "rd_sweep")
    model = CodecModel.load(args.model)
    inputs = _load_inputs(args)
    lambdas = args.lam or list(ADMISSIBLE_LAMBDAS)
    config = _edit_config(args)
    _, agg = experiments.rd_sweep(inputs, model, lambdas, config, out)
    experiments.plot_rd(os.path.join(out, "rd_aggregate.csv"),
                        os.path.join(out, "rd_curve.png"))
    experiments.write_manifest(out, "rd-sweep", args.seed, model,
                               {"lambdas": lambdas, "iterations": args.iterations})
    for row in agg:
        print(f"lam={row['lam']}: bpp {row['mean_bpp']:.4f} psnr {row['mean_psnr']:.2f}")
    return 0


def cmd_roi(args):
    out = _out_dir(args, "roi")
    model = CodecModel.load(args.model)
    name, x = _load_inputs(args)[0]
    h, w = x.shape[-2], x.shape[-1]
    if args.roi:
        with_map = data.load_image(args.roi).mean(dim=1)[0] / 255.0
        roi = with_map.clamp(0, 1)
    else:
        roi = torch.zeros(h, w)
        roi[:, : w // 2] = 1.0  # demo half-plane
    config = _edit_config(args)
    result = edit_roi(x, model, roi, args.lam[0] if args.lam else 0.015, config)
    inside, outside = experiments.roi_bit_share(result, model,
                                                (roi >= 0.5).float())
    recon = bitstream.finalize_image(result.recon, h, w)
    data.save_image(recon, os.path.join(out, f"{name}_roi.png"))
    mask = roi >= 0.5
    err = (x[0] - recon[0]) ** 2
    mse_in = float(err[:, mask].mean())
    mse_out = float(err[:, ~mask].mean()) if (~mask).any() else 0.0
    report = {"bpp": result.metrics.rate_bpp, "bits_in_roi": inside,
              "bits_out_roi": outside, "mse_in_roi": mse_in, "mse_out_roi": mse_out}
    with open(os.path.join(out, "roi_report.json"), "w") as f:
        json.dump(report, f, indent=2)
    experiments.write_manifest(out, "roi", args.seed, model, report)
    print(json.dumps(report, indent=2))
    return 0


def cmd_md_sweep(args):
    out = _out_dir(args, "md_sweep")
    model = CodecModel.load(args.model)
    name, x = _load_inputs(args)[0]
    config = _edit_config(args)
    rows = []
    for lp in args.lambda_p:
        res = edit_multidistortion(x, model, args.lambda_d, lp, args.target_bpp, config)
        rows.append({"image": name, "lambda_p": lp, "bpp": res.metrics.rate_bpp,
                     "mse": res.metrics.mse, "psnr": res.metrics.psnr,
                     "perceptual": res.metrics.perceptual})
        print(f"lambda_p={lp}: bpp {res.metrics.rate_bpp:.4f} mse {res.metrics.mse:.2f} "
              f"perceptual {res.metrics.perceptual:.4f}")
    experiments._write_csv(os.path.join(out, "md_sweep.csv"),
                           ["image", "lambda_p", "bpp", "mse", "psnr", "perceptual"], rows)
    experiments.write_manifest(out, "md-sweep", args.seed, model,
                               {"lambda_d": args.lambda_d, "lambda_p": args.lambda_p,
                                "target_bpp": args.target_bpp})
    return 0


def cmd_histogram(args):
    out = _out_dir(args, "histogram")
    model = CodecModel.load(args.model)
    name, x = _load_inputs(args)[0]
    config = _edit_config(args)
    hists = experiments.latent_histogram(
        x, model, args.lam[0] if args.lam else 0.0016, config,
        out_csv=os.path.join(out, f"{name}_histogram.csv"))
    for mode, bins in hists.items():
        print(f"{mode}: bin0 mass {bins[0]:.4f}")
    experiments.write_manifest(out, "histogram", args.seed, model, {"image": name})
    return 0


def cmd_ablate(args):
    out = _out_dir(args, "ablate")
    model = CodecModel.load(args.model)
    inputs = _load_inputs(args)
    config = _edit_config(args)
    finetuned = CodecModel.load(args.finetuned) if args.finetuned else None
    lam0 = model.lambda_train or LAMBDA0_DEFAULT
    report = experiments.ablation_driver(
        args.mode, inputs, model, config, lam0,
        seeds=tuple(range(args.n_seeds)), finetuned=finetuned,
        out_path=os.path.join(out, f"ablation_{args.mode}.json"))
    experiments.write_manifest(out, "ablate", args.seed, model, {"mode": args.mode})
    print(f"{args.mode}: {'PASS' if report['pass'] else 'FAIL'}")
    return 0 if report["pass"] else 1


def _add_io_args(p, images=True):
    p.add_argument("--config", help="YAML file of flag defaults")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory")
    if images:
        p.add_argument("--image", help="single input image (PNG/PPM)")
        p.add_argument("--images", help="directory of input images")
        p.add_argument("--synthetic", type=int, default=0,
                       help="generate N seeded synthetic inputs")
        p.add_argument("--size", type=int, default=128,
                       help="synthetic image side length")


def _add_edit_args(p):
    p.add_argument("--model", required=True, help="model checkpoint")
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--lam", type=float, action="append",
                   help="distortion weight(s); repeatable")
    p.add_argument("--naive", action="store_true",
                   help="freeze both steps at 1, no grid search")
    p.add_argument("--no-grid", dest="no_grid", action="store_true",
                   help="keep the hyper step fixed at 1")
    p.add_argument("--relaxation", choices=("sga", "aun"), default="sga")


def _add_train_args(p):
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--patches", type=int, default=800)
    p.add_argument("--patch-size", dest="patch_size", type=int, default=64)
    p.add_argument("--checkpoint", help="checkpoint output path")


def build_parser():
    parser = argparse.ArgumentParser(prog="flexcodec")
    subs = parser.add_subparsers(dest="command", required=True)
    created = {}

    def sub(name, fn, images=True):
        p = subs.add_parser(name)
        _add_io_args(p, images=images)
        p.set_defaults(func=fn)
        created[name] = p
        return p

    p = sub("train", cmd_train)
    _add_train_args(p)
    p.add_argument("--lambda0", type=float, default=LAMBDA0_DEFAULT)

    p = sub("finetune-encoder", cmd_finetune)
    _add_train_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--lambda-prime", dest="lambda_prime", type=float,
                   default=LAMBDA_PRIME_DEFAULT)

    p = sub("edit", cmd_edit)
    _add_edit_args(p)

    p = sub("compress", cmd_compress)
    _add_edit_args(p)
    p.add_argument("--stream", help="output .cedt path")
    p.add_argument("--target-bpp", dest="target_bpp", type=float)
    p.add_argument("--metrics", help="metrics JSON output path")

    p = sub("decompress", cmd_decompress, images=False)
    p.add_argument("--model", required=True)
    p.add_argument("--stream", required=True, help="input .cedt path")
    p.add_argument("--output", required=True, help="output image path")
    p.add_argument("--original", help="original image for PSNR report")

    p = sub("rd-sweep", cmd_rd_sweep)
    _add_edit_args(p)

    p = sub("roi", cmd_roi)
    _add_edit_args(p)
    p.add_argument("--roi", help="grayscale ROI map image; default half-plane")

    p = sub("md-sweep", cmd_md_sweep)
    _add_edit_args(p)
    p.add_argument("--lambda-d", dest="lambda_d", type=float, default=0.015)
    p.add_argument("--lambda-p", dest="lambda_p", type=float, action="append",
                   default=None)
    p.add_argument("--target-bpp", dest="target_bpp", type=float, required=False)

    p = sub("histogram", cmd_histogram)
    _add_edit_args(p)

    p = sub("ablate", cmd_ablate)
    _add_edit_args(p)
    p.add_argument("--mode", required=True,
                   choices=("adaptive_delta", "sga_vs_aun", "budget",
                            "encoder_ft", "no_grid_search"))
    p.add_argument("--finetuned", help="fine-tuned encoder checkpoint")
    p.add_argument("--n-seeds", dest="n_seeds", type=int, default=1)

    return parser, created


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    overrides = {}
    if known.config:
        with open(known.config) as f:
            loaded = yaml.safe_load(f) or {}
        overrides = {str(k).replace("-", "_"): v for k, v in loaded.items()}

    parser, subparsers = build_parser()
    for p in subparsers.values():
        p.set_defaults(**overrides)
    args = parser.parse_args(argv)

    torch.manual_seed(args.seed)
    if getattr(args, "lambda_p", None) is None and args.command == "md-sweep":
        args.lambda_p = [0.1, 0.5, 1.0]
    try:
        return args.func(args)
    except RangeCoderUnavailable as e:
        raise SystemExit(str(e))


if __name__ == "__main__":
    sys.exit(main())
