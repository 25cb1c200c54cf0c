"""Quantization primitives against closed-form oracles."""

import math

import pytest
import torch
from scipy.stats import norm

from flexcodec.quantization import (
    DELTA_Z_CANDIDATES,
    FRAC_EPS,
    QuantSteps,
    SgaConfig,
    aun_relax,
    dequantize,
    pmf_delta,
    quantize,
    round_half_away,
    sga_probs,
    sga_sample,
    sga_soft,
    temperature,
)


def std_normal_cdf(t):
    return torch.special.ndtr(t)


class TestRounding:
    def test_ties_away_from_zero(self):
        v = torch.tensor([0.5, -0.5, 1.5, -1.5, 2.5])
        assert round_half_away(v).tolist() == [1.0, -1.0, 2.0, -2.0, 3.0]

    def test_plain_cases(self):
        v = torch.tensor([2.4, -2.4, 0.0, 1.2])
        assert round_half_away(v).tolist() == [2.0, -2.0, 0.0, 1.0]

    def test_differs_from_banker_rounding(self):
        # torch.round ties to even; 0.5 and 2.5 expose the difference
        v = torch.tensor([0.5, 2.5])
        assert round_half_away(v).tolist() == [1.0, 3.0]
        assert torch.round(v).tolist() == [0.0, 2.0]


class TestQuantize:
    def test_example_path(self):
        s = quantize(torch.tensor([0.3]), 0.5)
        assert s.item() == 1.0
        assert dequantize(s, 0.5).item() == 0.5

    def test_delta_one_is_plain_rounding(self):
        v = torch.randn(100, generator=torch.Generator().manual_seed(0)) * 3
        assert torch.equal(quantize(v, 1.0), round_half_away(v))

    def test_negative_tie(self):
        s = quantize(torch.tensor([-0.75]), 0.5)
        assert s.item() == -2.0
        assert dequantize(s, 0.5).item() == -1.0

    def test_roundtrip_within_half_step(self):
        g = torch.Generator().manual_seed(1)
        for delta in (0.25, 0.5, 1.0, 2.0):
            v = torch.randn(500, generator=g) * 5
            err = (dequantize(quantize(v, delta), delta) - v).abs()
            assert err.max() <= delta / 2 + 1e-6

    def test_rejects_nonpositive_delta(self):
        with pytest.raises(ValueError):
            quantize(torch.zeros(3), 0.0)
        with pytest.raises(ValueError):
            dequantize(torch.zeros(3), -1.0)


class TestPmfDelta:
    def test_standard_normal_oracle(self):
        # Phi(0.75) - Phi(0.25) for s=1, delta=0.5
        expected = norm.cdf(0.75) - norm.cdf(0.25)
        p = pmf_delta(std_normal_cdf, torch.tensor([1.0]), 0.5)
        assert abs(p.item() - expected) < 1e-7
        assert abs(expected - 0.174666) < 1e-6

    def test_delta_one_is_baseline_interval(self):
        g = torch.Generator().manual_seed(2)
        for _ in range(1000):
            scale = float(torch.rand(1, generator=g)) * 10 + 0.05
            s = float(torch.randint(-20, 21, (1,), generator=g))
            cdf = lambda t: std_normal_cdf(t / scale)
            p = pmf_delta(cdf, torch.tensor([s], dtype=torch.float64), 1.0)
            base = cdf(torch.tensor(s + 0.5, dtype=torch.float64)) \
                - cdf(torch.tensor(s - 0.5, dtype=torch.float64))
            assert abs(p.item() - base.item()) < 1e-12

    def test_sums_to_one(self):
        s = torch.arange(-20, 21, dtype=torch.float64)
        total = pmf_delta(std_normal_cdf, s, 0.5).sum()
        assert abs(total.item() - 1.0) < 1e-9

    def test_continuity_in_delta(self):
        # away from bin-edge crossings a 1e-8 nudge moves the pmf by < 1e-6
        s = torch.tensor([2.0], dtype=torch.float64)
        for delta in (0.26, 0.7, 1.3, 3.7):
            p0 = pmf_delta(std_normal_cdf, s, delta)
            p1 = pmf_delta(std_normal_cdf, s, delta + 1e-8)
            assert abs(p1.item() - p0.item()) < 1e-6

    def test_gradient_wrt_delta_and_sigma(self):
        # d log pmf / d(delta, sigma) vs central differences, 1e-4 relative
        s = torch.tensor([1.0, -2.0, 0.0], dtype=torch.float64)
        delta0, sigma0 = 0.8, 1.7

        def logp(delta, sigma):
            cdf = lambda t: std_normal_cdf(t / sigma)
            return torch.log(pmf_delta(cdf, s, delta)).sum()

        delta = torch.tensor(delta0, dtype=torch.float64, requires_grad=True)
        sigma = torch.tensor(sigma0, dtype=torch.float64, requires_grad=True)
        val = logp(delta, sigma)
        val.backward()
        h = 1e-6

        def t64(v):
            return torch.tensor(v, dtype=torch.float64)

        fd_delta = (logp(t64(delta0 + h), t64(sigma0))
                    - logp(t64(delta0 - h), t64(sigma0))).item() / (2 * h)
        fd_sigma = (logp(t64(delta0), t64(sigma0 + h))
                    - logp(t64(delta0), t64(sigma0 - h))).item() / (2 * h)
        assert abs(delta.grad.item() - fd_delta) / abs(fd_delta) < 1e-4
        assert abs(sigma.grad.item() - fd_sigma) / abs(fd_sigma) < 1e-4

    def test_floor_applied(self):
        p = pmf_delta(std_normal_cdf, torch.tensor([200.0]), 1.0, floor=1e-9)
        assert p.item() == pytest.approx(1e-9)


class TestAun:
    def test_noise_bounds(self):
        v = torch.zeros(10000)
        rng = torch.Generator().manual_seed(3)
        u = aun_relax(v, rng) - v
        assert u.min() >= -0.5 and u.max() < 0.5

    def test_seeded_determinism(self):
        v = torch.randn(50, generator=torch.Generator().manual_seed(4))
        a = aun_relax(v, torch.Generator().manual_seed(5))
        b = aun_relax(v, torch.Generator().manual_seed(5))
        assert torch.equal(a, b)

    def test_zero_mean(self):
        v = torch.zeros(10 ** 6)
        u = aun_relax(v, torch.Generator().manual_seed(6))
        assert abs(u.mean().item()) < 3e-3


class TestSga:
    def test_integer_input_prob(self):
        pf, pc = sga_probs(torch.tensor([3.0]), 0.5)
        # clamp keeps atanh finite, so (1, 0) holds to the clamp's resolution
        assert pf.item() > 1 - 1e-3
        assert pc.item() < 1e-3

    def test_half_symmetry(self):
        pf, pc = sga_probs(torch.tensor([2.5]), 0.7)
        assert pf.item() == pytest.approx(0.5, abs=1e-6)
        assert pc.item() == pytest.approx(0.5, abs=1e-6)

    def test_quarter_oracle(self):
        # v = 1.25, tau = 0.5: p_floor = 0.6 / (0.6 + 1/7)
        pf, _ = sga_probs(torch.tensor([1.25]), 0.5)
        assert pf.item() == pytest.approx(0.6 / (0.6 + 1.0 / 7.0), abs=1e-6)
        assert pf.item() == pytest.approx(0.807692, abs=1e-6)

    def test_probs_normalize(self):
        g = torch.Generator().manual_seed(7)
        v = torch.randn(200, generator=g) * 4
        pf, pc = sga_probs(v, 0.3)
        assert torch.allclose(pf + pc, torch.ones_like(pf))

    def test_sample_exact_at_integers(self):
        v = torch.tensor([2.0, -3.0, 0.0])
        out = sga_sample(v, 0.4, torch.Generator().manual_seed(8))
        assert torch.equal(out, v)

    def test_small_tau_converges_to_rounding(self):
        v = torch.full((10000,), 1.2)
        out = sga_sample(v, 1e-4, torch.Generator().manual_seed(9))
        assert (out - 1.0).abs().lt(1e-3).float().mean() > 0.999

    def test_seeded_determinism(self):
        v = torch.randn(64, generator=torch.Generator().manual_seed(10))
        a = sga_sample(v, 0.5, torch.Generator().manual_seed(11))
        b = sga_sample(v, 0.5, torch.Generator().manual_seed(11))
        assert torch.equal(a, b)

    def test_sample_rounding_direction_matches_probs(self):
        # Gumbel-max: the winning grid point follows the two-point probs
        # exactly at any tau, so count samples past the bin midpoint
        v = torch.full((100000,), 0.7)
        tau = 0.8
        _, pc = sga_probs(torch.tensor([0.7]), tau)
        out = sga_sample(v, tau, torch.Generator().manual_seed(12))
        assert (out > 0).all() and (out < 1).all()
        freq_up = (out > 0.5).float().mean().item()
        se = math.sqrt(pc.item() * (1 - pc.item()) / out.numel())
        assert abs(freq_up - pc.item()) < 3 * se + 1e-4

    def test_soft_is_differentiable(self):
        v = torch.tensor([0.3, 1.6], requires_grad=True)
        g = torch.Generator().manual_seed(13)
        noise = -torch.log(-torch.log(torch.rand(v.shape + (2,), generator=g)))
        sga_soft(v, 0.5, noise).sum().backward()
        assert v.grad is not None and torch.isfinite(v.grad).all()

    def test_rejects_nonpositive_tau(self):
        with pytest.raises(ValueError):
            sga_probs(torch.tensor([0.5]), 0.0)


class TestTemperature:
    def test_at_offset(self):
        assert temperature(700, SgaConfig(offset_k=700)) == pytest.approx(0.5)

    def test_one_decay_constant_later(self):
        t = temperature(1700, SgaConfig(offset_k=700))
        assert t == pytest.approx(0.5 * math.exp(-1.0), abs=1e-12)
        assert t == pytest.approx(0.18393972058572117)

    def test_capped_before_offset(self):
        assert temperature(0, SgaConfig(offset_k=700)) == 0.5

    def test_floor(self):
        assert temperature(10 ** 7, SgaConfig(offset_k=700)) == SgaConfig().tau_min

    def test_monotone_nonincreasing(self):
        cfg = SgaConfig(offset_k=100)
        vals = [temperature(k, cfg) for k in range(0, 5000, 50)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SgaConfig(tau0=-1.0)
        with pytest.raises(ValueError):
            SgaConfig(tau_min=0.0)


class TestSteps:
    def test_candidates(self):
        assert len(DELTA_Z_CANDIDATES) == 7
        assert DELTA_Z_CANDIDATES[3] == 1.0
        assert DELTA_Z_CANDIDATES == tuple(sorted(DELTA_Z_CANDIDATES))

    def test_quant_steps_validation(self):
        QuantSteps(delta_y=1.0, delta_z=0.5)
        with pytest.raises(ValueError):
            QuantSteps(delta_y=0.0, delta_z=1.0)
