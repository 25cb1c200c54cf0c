"""Shared plumbing for the demo scripts: checkpoint loading and test images.

Every demo accepts --checkpoint; when the file is missing a small model is
trained on synthetic patches and cached there, so the demos work out of the
box on a fresh clone (training takes tens of minutes once, later runs reuse
the checkpoint).
"""

import argparse
from pathlib import Path

import torch

from flexcodec.data import extract_patches, synthetic_corpus, synthetic_image
from flexcodec.models import CodecModel
from flexcodec.training import TrainConfig, train_amortized

DEFAULT_CHECKPOINT = Path(__file__).resolve().parent.parent / "artifacts" / "model_l015.pt"


def base_parser(description):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--checkpoint", default=str(DEFAULT_CHECKPOINT),
                   help="codec checkpoint; trained and cached here if missing")
    p.add_argument("--iterations", type=int, default=400,
                   help="editing budget per run (2000 reproduces full quality)")
    p.add_argument("--out-dir", default="runs/demo",
                   help="directory for CSV and plot outputs")
    return p


def load_or_train(path, lambda0=0.015, epochs=150, seed=7):
    path = Path(path)
    if path.exists():
        return CodecModel.load(path)
    print(f"no checkpoint at {path}, training a small model (one-time)")
    torch.manual_seed(seed)
    images = synthetic_corpus(8, 192, 192, seed=seed)
    patches = extract_patches(images, 64, 800, seed=seed)
    cfg = TrainConfig(lambda0=lambda0, epochs=epochs, batch_size=16, seed=seed)
    return train_amortized(patches, cfg, checkpoint_path=str(path))


def demo_image(size=128, seed=200):
    return synthetic_image(size, size, seed=seed)
