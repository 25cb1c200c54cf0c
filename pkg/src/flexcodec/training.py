"""Desk-scale amortized training and encoder-only fine-tuning.

Training minimizes bits-per-pixel plus lambda0 times MSE with both latents
relaxed by additive uniform noise at step 1.  Fine-tuning re-optimizes only
the encoder transforms at a higher-rate trade-off, leaving every decoder-side
parameter bit-identical.
"""

import csv
import math
from dataclasses import dataclass

import torch

from .errors import TrainDivergedError
from .models import CodecModel
from .objectives import mse_distortion, symbol_rate_maps
from .quantization import aun_relax

ADMISSIBLE_LAMBDAS = (0.0016, 0.0032, 0.0075, 0.015, 0.03, 0.045, 0.08)

# canonical trade-offs: base model for editing, encoder fine-tune target
LAMBDA0_DEFAULT = 0.015
LAMBDA_PRIME_DEFAULT = 0.075


@dataclass
class TrainConfig:
    lambda0: float = LAMBDA0_DEFAULT
    epochs: int = 40
    batch_size: int = 16
    learning_rate: float = 1e-4
    patch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.lambda0 not in ADMISSIBLE_LAMBDAS:
            raise ValueError(
                f"lambda0 {self.lambda0} not in admissible set {ADMISSIBLE_LAMBDAS}"
            )
        # 0 epochs is the no-op fine-tune case
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


def amortized_loss(model, batch, lam, rng):
    """Noisy-relaxation training loss on one batch: bpp + lam * MSE."""
    y, z = model.analyze(batch)
    y_noisy = aun_relax(y, rng)
    z_noisy = aun_relax(z, rng)
    rates = symbol_rate_maps(y_noisy, z_noisy, 1.0, 1.0, model)
    pixels = batch.shape[0] * batch.shape[-2] * batch.shape[-1]
    bpp = rates.bits / pixels
    x_bar = model.synthesize(y_noisy)
    mse = mse_distortion(batch, x_bar)
    return bpp + lam * mse, float(bpp.detach()), float(mse.detach())


def _as_tensor(dataset):
    if isinstance(dataset, torch.Tensor):
        return dataset.float()
    return torch.stack([torch.as_tensor(p, dtype=torch.float32) for p in dataset])


def _run_epochs(model, params, data, lam, cfg, log_path, label):
    opt = torch.optim.Adam(params, lr=cfg.learning_rate)
    rng = torch.Generator()
    rng.manual_seed(cfg.seed)
    n = data.shape[0]
    rows = []
    for epoch in range(cfg.epochs):
        order = torch.randperm(n, generator=rng)
        sums = [0.0, 0.0, 0.0]
        batches = 0
        for start in range(0, n, cfg.batch_size):
            batch = data[order[start:start + cfg.batch_size]]
            loss, bpp, mse = amortized_loss(model, batch, lam, rng)
            loss_val = float(loss.detach())
            if not math.isfinite(loss_val):
                raise TrainDivergedError(epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            sums[0] += loss_val
            sums[1] += bpp
            sums[2] += mse
            batches += 1
        rows.append((epoch, sums[0] / batches, sums[1] / batches, sums[2] / batches))
        print(f"{label} epoch {epoch}: loss {rows[-1][1]:.4f} "
              f"bpp {rows[-1][2]:.4f} mse {rows[-1][3]:.2f}", flush=True)
    if log_path:
        with open(log_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "loss", "bpp", "mse"])
            w.writerows(rows)
    return rows


def train_amortized(dataset, cfg, model=None, checkpoint_path=None, log_path=None):
    """Train the full model; returns it in eval mode with lambda_train set."""
    torch.manual_seed(cfg.seed)
    if model is None:
        model = CodecModel(lambda_train=cfg.lambda0)
    model.train()
    data = _as_tensor(dataset)
    _run_epochs(model, list(model.parameters()), data, cfg.lambda0, cfg,
                log_path, f"train[l={cfg.lambda0}]")
    model.eval()
    model.lambda_train = cfg.lambda0
    if checkpoint_path:
        model.save(checkpoint_path)
    return model


ENCODER_PREFIXES = ("analysis.", "hyper_analysis.")


def finetune_encoder(model, lambda_prime, cfg, dataset, checkpoint_path=None,
                     log_path=None):
    """Encoder-only fine-tune at lambda_prime; decoder stays bit-identical.

    Returns a new model whose theta_id equals the input's.
    """
    tuned = CodecModel(n=model.n, m=model.m, m_hyper=model.m_hyper,
                       in_channels=model.in_channels, sigma_floor=model.sigma_floor,
                       lambda_train=lambda_prime)
    tuned.load_state_dict(model.state_dict())
    theta_before = tuned.theta_id()

    encoder_params = []
    for name, p in tuned.named_parameters():
        if name.startswith(ENCODER_PREFIXES):
            encoder_params.append(p)
        else:
            p.requires_grad_(False)

    if cfg.epochs > 0:
        tuned.train()
        data = _as_tensor(dataset)
        _run_epochs(tuned, encoder_params, data, lambda_prime, cfg,
                    log_path, f"finetune[l={lambda_prime}]")
    tuned.eval()
    for p in tuned.parameters():
        p.requires_grad_(False)

    assert tuned.theta_id() == theta_before, "decoder parameters moved during fine-tune"
    if checkpoint_path:
        tuned.save(checkpoint_path)
    return tuned
