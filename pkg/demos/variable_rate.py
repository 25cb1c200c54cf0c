"""One trained model, any rate: edit the latents toward five lambda targets.

The model was trained for a single rate-distortion weight.  Editing the
latent codes and quantization steps at inference time moves the same
bitstream format anywhere on the rate axis; this script sweeps targets from
an eighth of the training weight to five times it and writes the resulting
curve.
"""

from pathlib import Path

from flexcodec.editing import EditConfig, amortized_baseline
from flexcodec.experiments import plot_rd, rd_sweep
from flexcodec.objectives import EditTarget

from common import base_parser, demo_image, load_or_train


def main():
    args = base_parser(__doc__).parse_args()
    model = load_or_train(args.checkpoint)
    lam0 = model.lambda_train or 0.015
    x = demo_image()
    out = Path(args.out_dir)

    base = amortized_baseline(x, model, EditTarget(lambda_targets=(("mse", lam0),)))
    print(f"training target lambda={lam0}: "
          f"{base.metrics.rate_bpp:.3f} bpp, {base.metrics.psnr:.2f} dB without editing")

    lambdas = [lam0 * f for f in (0.125, 0.5, 1.0, 2.0, 5.0)]
    cfg = EditConfig(iterations=args.iterations, seed=0)
    rows, _ = rd_sweep([("demo", x)], model, lambdas, cfg, str(out))
    for r in rows:
        print(f"lambda={r['lam']:<8.4g} {r['bpp']:.3f} bpp  {r['psnr']:.2f} dB  "
              f"steps ({r['delta_y']:.3f}, {r['delta_z']:.2f})")
    plot_rd(out / "rd_aggregate.csv", out / "variable_rate.png")
    print(f"curve written to {out / 'variable_rate.png'}")


if __name__ == "__main__":
    main()
