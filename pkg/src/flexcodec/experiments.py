"""Experiment drivers: R-D sweeps, latent histograms, paired ablations.

Drivers are pure orchestration over the editing engine: they take named
images, run edits, and emit CSVs plus a manifest.  Plots are rendered only
from the CSVs so every figure can be regenerated offline.
"""

import csv
import hashlib
import json
import os
from dataclasses import replace

import torch

from .editing import amortized_baseline, edit
from .objectives import EditTarget
from .quantization import round_half_away


def config_hash(obj):
    """Stable 8-byte hash of a jsonable config description."""
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.blake2b(blob, digest_size=8).hexdigest()


def write_manifest(out_dir, command, seed, model, extra=None):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "command": command,
        "seed": seed,
        "model_id": model.model_id().hex(),
        "theta_id": model.theta_id().hex(),
        "config_hash": config_hash(extra or {}),
        "config": extra or {},
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, default=str)
    return path


def _write_csv(path, fieldnames, rows):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fieldnames)
        w.writeheader()
        w.writerows(rows)


_RD_FIELDS = ["image", "lam", "bpp", "psnr", "mse", "rd_cost", "delta_y", "delta_z"]


def _load_journal(path):
    done = {}
    if os.path.exists(path):
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                done[(row["image"], float(row["lam"]))] = row
    return done


def rd_sweep(images, model, lambdas, config, out_dir):
    """Edit every image at every lambda; per-pair CSV plus aggregate.

    images: list of (name, tensor).  Resumable: pairs already present in the
    journal CSV are skipped on rerun.  Aggregate PSNR is the mean of
    per-image PSNRs, not the PSNR of pooled MSE.
    """
    os.makedirs(out_dir, exist_ok=True)
    journal_path = os.path.join(out_dir, "rd_journal.csv")
    done = _load_journal(journal_path)

    rows = []
    for name, x in images:
        for lam in lambdas:
            key = (name, float(lam))
            if key in done:
                rows.append(done[key])
                continue
            target = EditTarget(lambda_targets=(("mse", float(lam)),))
            res = edit(x, model, target, config)
            row = {
                "image": name, "lam": float(lam),
                "bpp": res.metrics.rate_bpp, "psnr": res.metrics.psnr,
                "mse": res.metrics.mse, "rd_cost": res.metrics.rd_cost,
                "delta_y": res.steps.delta_y, "delta_z": res.steps.delta_z,
            }
            rows.append(row)
            done[key] = row
            _write_csv(journal_path, _RD_FIELDS, list(done.values()))
            print(f"rd-sweep {name} lam={lam}: bpp {row['bpp']:.4f} "
                  f"psnr {row['psnr']:.2f}", flush=True)

    agg = []
    for lam in lambdas:
        sel = [r for r in rows if float(r["lam"]) == float(lam)]
        agg.append({
            "lam": float(lam),
            "mean_bpp": sum(float(r["bpp"]) for r in sel) / len(sel),
            "mean_psnr": sum(float(r["psnr"]) for r in sel) / len(sel),
            "images": len(sel),
        })
    _write_csv(os.path.join(out_dir, "rd_sweep.csv"), _RD_FIELDS, rows)
    _write_csv(os.path.join(out_dir, "rd_aggregate.csv"),
               ["lam", "mean_bpp", "mean_psnr", "images"], agg)
    return rows, agg


def plot_rd(aggregate_csv, out_png):
    """R-D curve from the aggregate CSV alone."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    pts = []
    with open(aggregate_csv, newline="") as f:
        for row in csv.DictReader(f):
            pts.append((float(row["mean_bpp"]), float(row["mean_psnr"])))
    pts.sort()
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot([p[0] for p in pts], [p[1] for p in pts], "o-")
    ax.set_xlabel("bits per pixel")
    ax.set_ylabel("PSNR (dB)")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def normalized_bins(symbols, steps_delta, sigma, limit=8):
    """Mass per integer bin of (dequantized symbol / sigma), bin width 1."""
    norm = (symbols.float() * steps_delta) / sigma
    bins = round_half_away(norm).clamp(-limit, limit).to(torch.int64).flatten()
    total = bins.numel()
    counts = torch.bincount(bins + limit, minlength=2 * limit + 1)
    return {b - limit: float(counts[b]) / total for b in range(2 * limit + 1)}


def latent_histogram(x, model, lam, config, out_csv=None, limit=8):
    """Fig-style latent histograms: pre-edit, naive edit, enhanced edit.

    The quantized main latent is normalized by its conditional sigma (the
    conditional mean is zero) and binned at width 1.
    """
    target = EditTarget(lambda_targets=(("mse", float(lam)),))

    def sigma_for(symbols_z, delta_z):
        with torch.no_grad():
            _, sigma = model.hyper_synthesize(symbols_z.float() * delta_z)
        return sigma

    out = {}
    base = amortized_baseline(x, model, target)
    out["pre"] = normalized_bins(base.symbols_y, base.steps.delta_y,
                                 sigma_for(base.symbols_z, base.steps.delta_z), limit)

    naive_cfg = replace(config, adaptive_delta=False, grid_search_enabled=False)
    naive = edit(x, model, target, naive_cfg)
    out["naive"] = normalized_bins(naive.symbols_y, naive.steps.delta_y,
                                   sigma_for(naive.symbols_z, naive.steps.delta_z), limit)

    enh = edit(x, model, target, config)
    out["enhanced"] = normalized_bins(enh.symbols_y, enh.steps.delta_y,
                                      sigma_for(enh.symbols_z, enh.steps.delta_z), limit)

    if out_csv:
        rows = [{"mode": mode, "bin": b, "mass": mass}
                for mode, bins in out.items() for b, mass in sorted(bins.items())]
        _write_csv(out_csv, ["mode", "bin", "mass"], rows)
    return out


def _median(vals):
    s = sorted(vals)
    n = len(s)
    return s[n // 2] if n % 2 else 0.5 * (s[n // 2 - 1] + s[n // 2])


def _edit_cost(x, model, target, config):
    return edit(x, model, target, config).metrics.rd_cost


def _seeded_costs(x, model, target, config, seeds):
    return [_edit_cost(x, model, target, replace(config, seed=s)) for s in seeds]


def ablation_driver(mode, images, model, config, lambda0, seeds=(0,),
                    finetuned=None, out_path=None):
    """Paired comparisons behind the ablation claims; returns a report dict.

    modes: adaptive_delta (enhanced vs naive at lambda0/8), sga_vs_aun (at
    5*lambda0), budget (cost vs iteration budget), encoder_ft (short-budget
    high-rate edit from base vs fine-tuned encoder), no_grid_search (searched
    vs fixed hyper step at lambda0).
    """
    report = {"mode": mode, "lambda0": lambda0, "per_image": []}

    for name, x in images:
        if mode == "adaptive_delta":
            target = EditTarget(lambda_targets=(("mse", lambda0 / 8),))
            naive_cfg = replace(config, adaptive_delta=False, grid_search_enabled=False)
            a = _median(_seeded_costs(x, model, target, config, seeds))
            b = _median(_seeded_costs(x, model, target, naive_cfg, seeds))
            entry = {"image": name, "enhanced": a, "naive": b, "pass": a <= b}
        elif mode == "sga_vs_aun":
            target = EditTarget(lambda_targets=(("mse", 5 * lambda0),))
            aun_cfg = replace(config, relaxation="aun")
            a = _median(_seeded_costs(x, model, target, config, seeds))
            b = _median(_seeded_costs(x, model, target, aun_cfg, seeds))
            entry = {"image": name, "sga": a, "aun": b, "pass": a <= b}
        elif mode == "budget":
            target = EditTarget(lambda_targets=(("mse", lambda0),))
            curve = {}
            for iters in (50, 100, 200, config.iterations):
                cfg = replace(config, iterations=iters)
                curve[iters] = _edit_cost(x, model, target, cfg)
            entry = {"image": name, "cost_by_budget": curve,
                     "pass": curve[config.iterations] <= curve[50]}
        elif mode == "encoder_ft":
            if finetuned is None:
                raise ValueError("encoder_ft mode needs the fine-tuned model")
            target = EditTarget(lambda_targets=(("mse", 5 * lambda0),))
            short = replace(config, iterations=max(1, config.iterations // 10))
            base_costs, ft_costs = [], []
            for s in seeds:
                cfg = replace(short, seed=s)
                r0 = edit(x, model, target, cfg, encoder_variant="base")
                r1 = edit(x, model, target, cfg, encoder_variant="finetuned",
                          finetuned=finetuned)
                base_costs.append(r0.metrics.rd_cost)
                ft_costs.append(r1.metrics.rd_cost)
            a, b = _median(ft_costs), _median(base_costs)
            entry = {"image": name, "finetuned": a, "base": b, "pass": a <= b}
        elif mode == "no_grid_search":
            target = EditTarget(lambda_targets=(("mse", lambda0),))
            fixed_cfg = replace(config, grid_search_enabled=False)
            searched = _edit_cost(x, model, target, config)
            fixed = _edit_cost(x, model, target, fixed_cfg)
            entry = {"image": name, "searched": searched, "fixed": fixed,
                     "delta": fixed - searched, "pass": searched <= fixed + 1e-9}
        else:
            raise ValueError(f"unknown ablation mode {mode!r}")
        report["per_image"].append(entry)
        print(f"ablate[{mode}] {name}: {entry}", flush=True)

    report["pass"] = all(e["pass"] for e in report["per_image"])
    if out_path:
        with open(out_path, "w") as f:
            json.dump(report, f, indent=2)
    return report


def roi_bit_share(result, model, roi_mask):
    """Mean bits per pixel inside vs outside a binary ROI.

    The spatial bit map lives on the main-latent grid; the mask is pooled to
    that grid with a 0.5 threshold.
    """
    from .objectives import symbol_rate_maps

    with torch.no_grad():
        rates = symbol_rate_maps(result.symbols_y.float(), result.symbols_z.float(),
                                 result.steps.delta_y, result.steps.delta_z, model)
        bit_map = rates.spatial()[0]
    grid_mask = torch.nn.functional.adaptive_avg_pool2d(
        roi_mask[None, None].float(), bit_map.shape
    )[0, 0] >= 0.5
    inside = float(bit_map[grid_mask].mean()) if grid_mask.any() else 0.0
    outside = float(bit_map[~grid_mask].mean()) if (~grid_mask).any() else 0.0
    return inside, outside
