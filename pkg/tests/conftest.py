"""Shared fixtures.

Trained models are expensive, so they are built once and cached under
artifacts/ at the repo root; delete that directory to retrain.  Unit tests
use tiny untrained models and never touch the cache.
"""

from pathlib import Path

import pytest
import torch

from flexcodec.data import synthetic_corpus, synthetic_image, extract_patches
from flexcodec.models import CodecModel
from flexcodec.training import TrainConfig, finetune_encoder, train_amortized

ARTIFACTS = Path(__file__).resolve().parent.parent / "artifacts"

DESK_SEED = 7
DESK_LAMBDA0 = 0.015
DESK_LAMBDA_PRIME = 0.075


@pytest.fixture()
def tiny_model():
    """Small untrained model; cheap forward passes for contract tests."""
    torch.manual_seed(0)
    m = CodecModel(n=16, m=24, m_hyper=16)
    m.eval()
    for p in m.parameters():
        p.requires_grad_(False)
    return m


@pytest.fixture()
def tiny_image():
    return synthetic_image(64, 64, seed=3)


@pytest.fixture(scope="session")
def corpus():
    """Acceptance corpus: three 64px images plus one textured 128px image."""
    images = [(f"im64_{i}", synthetic_image(64, 64, seed=100 + i)) for i in range(3)]
    images.append(("im128_tex", synthetic_image(128, 128, seed=200)))
    return images


def _train_desk_model(path):
    torch.manual_seed(DESK_SEED)
    images = synthetic_corpus(8, 192, 192, seed=DESK_SEED)
    patches = extract_patches(images, 64, 800, seed=DESK_SEED)
    cfg = TrainConfig(lambda0=DESK_LAMBDA0, epochs=150, batch_size=16, seed=DESK_SEED)
    return train_amortized(patches, cfg, checkpoint_path=str(path))


def _finetune_desk_model(base, path):
    torch.manual_seed(DESK_SEED + 1)
    images = synthetic_corpus(8, 192, 192, seed=DESK_SEED)
    patches = extract_patches(images, 64, 800, seed=DESK_SEED)
    cfg = TrainConfig(lambda0=DESK_LAMBDA0, epochs=30, batch_size=16, seed=DESK_SEED)
    return finetune_encoder(base, DESK_LAMBDA_PRIME, cfg, patches,
                            checkpoint_path=str(path))


@pytest.fixture(scope="session")
def desk_model():
    ARTIFACTS.mkdir(exist_ok=True)
    path = ARTIFACTS / "model_l015.pt"
    if path.exists():
        return CodecModel.load(path)
    return _train_desk_model(path)


@pytest.fixture(scope="session")
def desk_finetuned(desk_model):
    ARTIFACTS.mkdir(exist_ok=True)
    path = ARTIFACTS / "model_ft075.pt"
    if path.exists():
        return CodecModel.load(path)
    return _finetune_desk_model(desk_model, path)
