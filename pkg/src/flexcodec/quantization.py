"""Quantization machinery.

Hard rounding with an explicit tie rule, the uniform-noise relaxation used
during training, the stochastic Gumbel relaxation used during latent editing,
step-size parameterized quantize/dequantize, and evaluation of interval
probabilities under an arbitrary quantization step.
"""

import math
from dataclasses import dataclass

import torch

# Step-size grid searched for the hyper-latent, and the clamp range for the
# gradient-optimized main-latent step (log parameterized).
DELTA_Z_CANDIDATES = tuple(2.0 ** e for e in (-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5))
LOG_DELTA_MIN = math.log(2.0 ** -2)
LOG_DELTA_MAX = math.log(2.0 ** 2)

# Probability floor applied inside log terms (bounds the rate, keeps gradients
# finite) and the fractional-part clamp before atanh (atanh(1) is infinite).
PMF_FLOOR = 1e-9
FRAC_EPS = 1e-4

# Hard upper bound on the annealing temperature, independent of config.
TAU_CAP = 0.5


@dataclass
class SgaConfig:
    """Temperature schedule for stochastic Gumbel annealing.

    tau(k) = min(TAU_CAP, tau0 * exp(-decay * (k - offset_k))), floored at
    tau_min.  offset_k is 700 for full-budget edits and 100 for short budgets.
    """

    tau0: float = 0.5
    decay: float = 1e-3
    offset_k: int = 700
    tau_min: float = 1e-3

    def __post_init__(self):
        if self.tau0 <= 0 or self.decay <= 0 or self.tau_min <= 0:
            raise ValueError("tau0, decay, tau_min must be positive")


@dataclass
class QuantSteps:
    """Final quantization steps for the two latent tensors."""

    delta_y: float
    delta_z: float

    def __post_init__(self):
        if self.delta_y <= 0 or self.delta_z <= 0:
            raise ValueError("quantization steps must be positive")


def temperature(k, cfg):
    """Annealing temperature at iteration k under the given schedule."""
    tau = cfg.tau0 * math.exp(-cfg.decay * (k - cfg.offset_k))
    return max(cfg.tau_min, min(TAU_CAP, tau))


def round_half_away(v):
    """Round to nearest integer, ties away from zero.

    torch.round ties to even, so it cannot be used anywhere a bitstream
    depends on the rounding rule.  Returns the input dtype (integer valued).
    """
    return torch.sign(v) * torch.floor(torch.abs(v) + 0.5)


def quantize(v, delta):
    """Integer symbols round_half_away(v / delta).  Integer valued, input dtype."""
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    return round_half_away(v / delta)


def dequantize(s, delta):
    """Reconstruction grid points delta * s."""
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    return s * delta


def pmf_delta(cdf, s, delta, floor=0.0):
    """Probability that a draw quantizes to symbol s under step delta.

    cdf is any monotone cumulative distribution callable; the interval is
    [delta*s - delta/2, delta*s + delta/2].  Raw probabilities by default;
    pass floor=PMF_FLOOR when feeding a log.
    """
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    center = s * delta
    p = cdf(center + delta / 2) - cdf(center - delta / 2)
    if floor > 0:
        p = torch.clamp(p, min=floor)
    return p


def aun_relax(v, rng=None):
    """v + u with u ~ Uniform(-0.5, 0.5) i.i.d., seeded via rng."""
    u = torch.rand(v.shape, generator=rng, dtype=v.dtype, device=v.device)
    return v + (u - 0.5)


def _sga_logits(v, tau):
    """Two-point logits over {floor(v), ceil(v)}, shape v.shape + (2,).

    Rounding-down logit -atanh(frac)/tau, rounding-up logit -atanh(1-frac)/tau,
    fractional part clamped to [FRAC_EPS, 1-FRAC_EPS] before atanh.
    """
    frac = v - torch.floor(v)
    down = torch.clamp(frac, FRAC_EPS, 1.0 - FRAC_EPS)
    return torch.stack([-torch.atanh(down) / tau, -torch.atanh(1.0 - down) / tau], dim=-1)


def sga_probs(v, tau):
    """(p_floor, p_ceil) for the two-point rounding distribution at temperature tau."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    p = torch.softmax(_sga_logits(v, tau), dim=-1)
    return p[..., 0], p[..., 1]


def sga_soft(v, tau, gumbel):
    """Gumbel-softmax combination of floor(v) and ceil(v) with explicit noise.

    gumbel has shape v.shape + (2,); the same tau tempers both the rounding
    logits and the softmax.  Differentiable in v.  Exact at integer v because
    floor and ceil coincide there.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    bounds = torch.stack([torch.floor(v), torch.ceil(v)], dim=-1)
    w = torch.softmax((_sga_logits(v, tau) + gumbel) / tau, dim=-1)
    # detach the grid points: gradients flow through the weights only
    return (w * bounds.detach()).sum(dim=-1)


def sga_sample(v, tau, rng=None):
    """One stochastic rounding sample; reproducible under a seeded rng.

    torch.distributions ignores generators, so the Gumbel noise is drawn by
    hand from torch.rand.
    """
    u = torch.rand(v.shape + (2,), generator=rng, dtype=v.dtype, device=v.device)
    gumbel = -torch.log(-torch.log(torch.clamp(u, min=1e-12)))
    return sga_soft(v, tau, gumbel)
