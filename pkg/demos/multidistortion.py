"""Trade pixel fidelity for structure at a fixed rate.

The editing objective accepts several distortion terms at once; here a
gradient-magnitude term stands in for a perceptual metric.  Sweeping its
weight at a pinned bpp target shows MSE and the structural term trading off
against each other while the rate stays put.
"""

from flexcodec.editing import EditConfig, amortized_baseline, edit_multidistortion
from flexcodec.objectives import EditTarget

from common import base_parser, demo_image, load_or_train


def main():
    args = base_parser(__doc__).parse_args()
    model = load_or_train(args.checkpoint)
    lam0 = model.lambda_train or 0.015
    x = demo_image()

    base = amortized_baseline(x, model, EditTarget(lambda_targets=(("mse", lam0),)))
    target_bpp = base.metrics.rate_bpp
    print(f"rate target pinned at the model's own operating point: {target_bpp:.3f} bpp")

    print(f"{'lambda_p':>9} {'bpp':>7} {'mse':>8} {'perceptual':>11}")
    for lp in (0.0, 0.1, 0.5, 1.0):
        cfg = EditConfig(iterations=args.iterations, grid_search_enabled=False,
                         seed=0)
        res = edit_multidistortion(x, model, lam0, lp, target_bpp, cfg)
        m = res.metrics
        # the metric is only tracked when its weight is nonzero
        perceptual = "-" if m.perceptual is None else f"{m.perceptual:.4f}"
        print(f"{lp:>9.2f} {m.rate_bpp:>7.3f} {m.mse:>8.1f} {perceptual:>11}")


if __name__ == "__main__":
    main()
