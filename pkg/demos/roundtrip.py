"""Edit, write real bytes, decode them back: the full codec loop.

Everything upstream works on theoretical rates; this script needs the
external range coder binary (cargo build --release in rangecoder/) and shows
that the written file matches the theoretical accounting and decodes to the
encoder's exact reconstruction.
"""

import numpy as np

from flexcodec import bitstream
from flexcodec.editing import EditConfig, edit
from flexcodec.objectives import EditTarget
from flexcodec.range_coding import get_coder

from common import base_parser, demo_image, load_or_train


def main():
    args = base_parser(__doc__).parse_args()
    coder = get_coder()
    if coder is None:
        raise SystemExit("range coder binary not found; "
                         "run: cargo build --release --manifest-path rangecoder/Cargo.toml")
    model = load_or_train(args.checkpoint)
    lam0 = model.lambda_train or 0.015
    x = demo_image()
    h, w = x.shape[-2], x.shape[-1]

    cfg = EditConfig(iterations=args.iterations, seed=0)
    res = edit(x, model, EditTarget(lambda_targets=(("mse", 2 * lam0),)), cfg)
    blob = bitstream.compress(res, model, coder, h, w)

    z_ids, y_ids, tables = bitstream.stream_table_ids(res, model)
    syms = np.concatenate([res.symbols_z.numpy().astype(np.int64).ravel(),
                           res.symbols_y.numpy().astype(np.int64).ravel()])
    theory = bitstream.theoretical_rate_report(
        syms, np.concatenate([z_ids, y_ids]), tables)

    pixels = h * w
    print(f"edited stream : {res.metrics.rate_bpp:.4f} bpp theoretical, "
          f"{res.metrics.psnr:.2f} dB")
    print(f"written file  : {len(blob)} bytes "
          f"({8 * len(blob) / pixels:.4f} bpp including the "
          f"{bitstream.HEADER_LEN}-byte header)")
    print(f"table account : {theory / 8:.0f} bytes theoretical payload")

    decoded = bitstream.decompress(blob, model, coder)
    same_symbols = (bool((decoded.symbols_y == res.symbols_y).all())
                    and bool((decoded.symbols_z == res.symbols_z).all()))
    same_image = bool((decoded.image
                       == bitstream.finalize_image(res.recon, h, w)).all())
    print(f"decode        : symbols identical {same_symbols}, "
          f"image identical {same_image}")


if __name__ == "__main__":
    main()
