"""Scale-hyperprior codec model.

A small four-stage analysis/synthesis pair with GDN nonlinearities, a two-stage
hyper transform, a learned factorized density for the hyper-latent, and a
zero-mean Gaussian conditional for the main latent whose scales come from the
hyper-synthesis transform.  Pixel domain is [0, 255] at the public boundary;
the transforms see [0, 1] internally.
"""

import hashlib
import os
import tempfile

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import NumericError, ShapeError

# image -> y and image -> z total downsample factors
Y_DOWN = 16
Z_DOWN = 64

_CHECKPOINT_FORMAT = "flexcodec-model"
_CHECKPOINT_VERSION = 1


def _softplus_inverse(x):
    return torch.log(torch.expm1(torch.as_tensor(x, dtype=torch.float64))).float()


class GDN(nn.Module):
    """Generalized divisive normalization, softplus-reparameterized.

    beta and gamma live in softplus space so positivity needs no projection
    step and gradients never freeze at a clamp.
    """

    def __init__(self, channels, inverse=False):
        super().__init__()
        self.inverse = inverse
        beta0 = torch.ones(channels)
        gamma0 = 0.1 * torch.eye(channels) + 1e-6
        self.beta_raw = nn.Parameter(_softplus_inverse(beta0))
        self.gamma_raw = nn.Parameter(_softplus_inverse(gamma0))

    def forward(self, x):
        beta = F.softplus(self.beta_raw)
        gamma = F.softplus(self.gamma_raw)
        c = x.shape[1]
        norm = F.conv2d(x * x, gamma.view(c, c, 1, 1).to(x.dtype), beta.to(x.dtype))
        norm = torch.sqrt(norm)
        return x * norm if self.inverse else x / norm


def _conv(cin, cout, kernel=5, stride=2):
    return nn.Conv2d(cin, cout, kernel, stride=stride, padding=kernel // 2)


def _deconv(cin, cout, kernel=5, stride=2):
    return nn.ConvTranspose2d(
        cin, cout, kernel, stride=stride, padding=kernel // 2, output_padding=stride - 1
    )


class FactorizedDensity(nn.Module):
    """Learned univariate cdf per hyper-latent channel.

    Monotone composition of depth 4 and width 3: logits(x) = L4(g3(L3(g2(L2(
    g1(L1(x)))))) with L_k(x) = softplus(H_k) x + b_k and g_k(x) = x +
    tanh(a_k) * tanh(x); cdf(x) = sigmoid(logits(x)).  Monotone because the
    matrix factors are non-negative and |tanh(a)| < 1.
    """

    def __init__(self, channels, width=3, depth=4, init_scale=10.0):
        super().__init__()
        self.channels = channels
        widths = (1,) + (width,) * (depth - 1) + (1,)
        scale = init_scale ** (1.0 / depth)
        self.matrices = nn.ParameterList()
        self.biases = nn.ParameterList()
        self.factors = nn.ParameterList()
        for k in range(depth):
            init = _softplus_inverse(1.0 / scale / widths[k + 1])
            self.matrices.append(
                nn.Parameter(torch.full((channels, widths[k + 1], widths[k]), init.item()))
            )
            self.biases.append(
                nn.Parameter(torch.empty(channels, widths[k + 1], 1).uniform_(-0.5, 0.5))
            )
            if k < depth - 1:
                self.factors.append(nn.Parameter(torch.zeros(channels, widths[k + 1], 1)))

    def _logits(self, x):
        # x: [C, 1, n]
        for k, matrix in enumerate(self.matrices):
            x = torch.bmm(F.softplus(matrix).to(x.dtype), x) + self.biases[k].to(x.dtype)
            if k < len(self.factors):
                x = x + torch.tanh(self.factors[k]).to(x.dtype) * torch.tanh(x)
        return x

    def cdf(self, x):
        """Evaluate the per-channel cdf.  x: [B, C, H, W] (or [C, n])."""
        if x.dim() == 2:
            flat = x.unsqueeze(1)
            return torch.sigmoid(self._logits(flat)).squeeze(1)
        b, c, h, w = x.shape
        flat = x.permute(1, 0, 2, 3).reshape(c, 1, b * h * w)
        out = torch.sigmoid(self._logits(flat))
        return out.reshape(c, b, h, w).permute(1, 0, 2, 3)


class CodecModel(nn.Module):
    """Transforms plus entropy models; the unit a checkpoint stores.

    phi = analysis + hyper-analysis parameters (encoder side), theta =
    synthesis + hyper-synthesis + factorized density (decoder side).  The
    conditional mean is identically zero (scale-only hyperprior).
    """

    def __init__(self, n=64, m=96, m_hyper=64, in_channels=3, sigma_floor=0.11,
                 lambda_train=None):
        super().__init__()
        self.n = n
        self.m = m
        self.m_hyper = m_hyper
        self.in_channels = in_channels
        self.sigma_floor = sigma_floor
        self.lambda_train = lambda_train

        self.analysis = nn.Sequential(
            _conv(in_channels, n), GDN(n),
            _conv(n, n), GDN(n),
            _conv(n, n), GDN(n),
            _conv(n, m),
        )
        self.synthesis = nn.Sequential(
            _deconv(m, n), GDN(n, inverse=True),
            _deconv(n, n), GDN(n, inverse=True),
            _deconv(n, n), GDN(n, inverse=True),
            _deconv(n, in_channels),
        )
        self.hyper_analysis = nn.Sequential(
            _conv(m, m_hyper, kernel=3, stride=1), nn.ReLU(inplace=True),
            _conv(m_hyper, m_hyper), nn.ReLU(inplace=True),
            _conv(m_hyper, m_hyper),
        )
        self.hyper_synthesis = nn.Sequential(
            _deconv(m_hyper, m_hyper), nn.ReLU(inplace=True),
            _deconv(m_hyper, m_hyper), nn.ReLU(inplace=True),
            _conv(m_hyper, m, kernel=3, stride=1),
        )
        self.factorized = FactorizedDensity(m_hyper)

    def analyze(self, x):
        """Image [B, C, H, W] in [0, 255] -> (y, z).  H, W divisible by 64."""
        if x.dim() != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"expected [B, {self.in_channels}, H, W], got {tuple(x.shape)}")
        if x.shape[2] % Z_DOWN or x.shape[3] % Z_DOWN:
            raise ShapeError(
                f"spatial dims must be divisible by {Z_DOWN}, got {tuple(x.shape[2:])}"
            )
        y = self.analysis(x / 255.0)
        z = self.hyper_analysis(torch.abs(y))
        return y, z

    def synthesize(self, y_hat):
        """Dequantized latent -> image in the [0, 255] domain, unclamped."""
        if not torch.isfinite(y_hat).all():
            raise NumericError("non-finite latent passed to synthesis")
        return self.synthesis(y_hat) * 255.0

    def hyper_synthesize(self, z_hat):
        """Dequantized hyper-latent -> (mu, sigma) for the conditional Gaussian."""
        raw = self.hyper_synthesis(z_hat)
        sigma = self.sigma_floor + F.softplus(raw)
        return torch.zeros_like(sigma), sigma

    def _param_digest(self, predicate):
        h = hashlib.blake2b(digest_size=8)
        state = self.state_dict()
        for name in sorted(state):
            if predicate(name):
                h.update(name.encode())
                h.update(state[name].detach().cpu().contiguous().numpy().tobytes())
        return h.digest()

    def model_id(self):
        """8-byte content hash over every parameter."""
        return self._param_digest(lambda name: True)

    def theta_id(self):
        """8-byte content hash over decoder-side parameters only.

        Streams written by a fine-tuned encoder must decode against the base
        decoder, so bitstream headers carry this rather than model_id.
        """
        decoder = ("synthesis.", "hyper_synthesis.", "factorized.")
        return self._param_digest(lambda name: name.startswith(decoder))

    def save(self, path):
        """Atomic checkpoint write; round-trips bit-exactly."""
        payload = {
            "format": _CHECKPOINT_FORMAT,
            "version": _CHECKPOINT_VERSION,
            "arch": {
                "n": self.n, "m": self.m, "m_hyper": self.m_hyper,
                "in_channels": self.in_channels, "sigma_floor": self.sigma_floor,
            },
            "lambda_train": self.lambda_train,
            "model_id": self.model_id().hex(),
            "state_dict": {k: v.cpu() for k, v in self.state_dict().items()},
        }
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as f:
                torch.save(payload, f)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path):
        payload = torch.load(path, map_location="cpu", weights_only=False)
        if not isinstance(payload, dict) or payload.get("format") != _CHECKPOINT_FORMAT:
            raise ValueError(f"{path} is not a codec checkpoint")
        if payload.get("version") != _CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
        model = cls(lambda_train=payload.get("lambda_train"), **payload["arch"])
        model.load_state_dict(payload["state_dict"])
        model.eval()
        if model.model_id().hex() != payload["model_id"]:
            raise ValueError(f"{path}: parameter hash mismatch, checkpoint corrupt")
        return model
