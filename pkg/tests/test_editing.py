"""Editing engine: initialization identities, determinism, grid contract."""

import numpy as np
import pytest
import torch

from flexcodec.editing import (
    EditConfig,
    FULL_BUDGET_OFFSET,
    SHORT_BUDGET_OFFSET,
    amortized_baseline,
    cost_trace_summary,
    edit,
    edit_once,
    init_state,
    resample_roi,
)
from flexcodec.errors import ConfigError, EditDivergedError
from flexcodec.objectives import EditTarget
from flexcodec.quantization import SgaConfig, round_half_away

FAST = EditConfig(iterations=10, grid_search_enabled=False)


class TestEditConfig:
    def test_defaults(self):
        cfg = EditConfig()
        assert cfg.iterations == 2000
        assert cfg.learning_rate == 5e-3
        assert len(cfg.delta_z_candidates) == 7

    def test_full_budget_offset(self):
        assert EditConfig(iterations=2000).resolve_sga().offset_k == FULL_BUDGET_OFFSET
        assert EditConfig(iterations=1000).resolve_sga().offset_k == FULL_BUDGET_OFFSET

    def test_short_budget_offset(self):
        assert EditConfig(iterations=400).resolve_sga().offset_k == SHORT_BUDGET_OFFSET
        assert EditConfig(iterations=999).resolve_sga().offset_k == SHORT_BUDGET_OFFSET

    def test_explicit_sga_wins(self):
        cfg = EditConfig(iterations=50, sga=SgaConfig(offset_k=1234))
        assert cfg.resolve_sga().offset_k == 1234

    def test_rejects_negative_iterations(self):
        with pytest.raises(ValueError):
            EditConfig(iterations=-1)

    def test_rejects_unsorted_candidates(self):
        with pytest.raises(ValueError):
            EditConfig(delta_z_candidates=(1.0, 0.5))

    def test_rejects_unknown_relaxation(self):
        with pytest.raises(ValueError):
            EditConfig(relaxation="ste")


class TestInitState:
    def test_matches_encoder(self, tiny_model, tiny_image):
        state = init_state(tiny_image, tiny_model)
        y, z = tiny_model.analyze(tiny_image)
        assert torch.equal(state.y, y)
        assert torch.equal(state.z, z)
        assert state.log_delta_y.item() == 0.0
        assert state.delta_z == 1.0

    def test_missing_finetuned_raises(self, tiny_model, tiny_image):
        with pytest.raises(ConfigError):
            init_state(tiny_image, tiny_model, encoder_variant="finetuned")

    def test_unknown_variant_raises(self, tiny_model, tiny_image):
        with pytest.raises(ConfigError):
            init_state(tiny_image, tiny_model, encoder_variant="oracle")

    def test_branch_is_independent(self, tiny_model, tiny_image):
        state = init_state(tiny_image, tiny_model, seed=5)
        b = state.branch(0.5)
        assert b.delta_z == 0.5
        assert b.seed == 5
        b.y.add_(1.0)
        assert not torch.equal(b.y, state.y)


class TestBudgetZero:
    def test_equals_amortized_baseline(self, tiny_model, tiny_image):
        target = EditTarget()
        base = amortized_baseline(tiny_image, tiny_model, target)
        state = init_state(tiny_image, tiny_model)
        zero = edit_once(state, tiny_model, tiny_image, target,
                         EditConfig(iterations=0))
        assert torch.equal(zero.symbols_y, base.symbols_y)
        assert torch.equal(zero.symbols_z, base.symbols_z)
        assert zero.steps.delta_y == 1.0
        assert zero.steps.delta_z == 1.0
        assert zero.metrics.rate_bpp == pytest.approx(base.metrics.rate_bpp)
        assert zero.metrics.mse == pytest.approx(base.metrics.mse)

    def test_baseline_symbols_are_rounded_latents(self, tiny_model, tiny_image):
        base = amortized_baseline(tiny_image, tiny_model, EditTarget())
        y, z = tiny_model.analyze(tiny_image)
        assert torch.equal(base.symbols_y.float(), round_half_away(y))
        assert torch.equal(base.symbols_z.float(), round_half_away(z))


class TestDeterminism:
    def test_same_seed_bit_identical(self, tiny_model, tiny_image):
        cfg = EditConfig(iterations=8, grid_search_enabled=False, seed=3)
        a = edit(tiny_image, tiny_model, EditTarget(), cfg)
        b = edit(tiny_image, tiny_model, EditTarget(), cfg)
        assert torch.equal(a.symbols_y, b.symbols_y)
        assert torch.equal(a.symbols_z, b.symbols_z)
        assert a.steps.delta_y == b.steps.delta_y
        assert a.loss_trace == b.loss_trace
        assert a.metrics.rd_cost == b.metrics.rd_cost

    def test_seed_changes_trajectory(self, tiny_model, tiny_image):
        a = edit(tiny_image, tiny_model, EditTarget(),
                 EditConfig(iterations=8, grid_search_enabled=False, seed=0))
        b = edit(tiny_image, tiny_model, EditTarget(),
                 EditConfig(iterations=8, grid_search_enabled=False, seed=1))
        assert a.loss_trace != b.loss_trace


class TestGridSearch:
    def test_singleton_grid_matches_fixed(self, tiny_model, tiny_image):
        fixed = edit(tiny_image, tiny_model, EditTarget(),
                     EditConfig(iterations=6, grid_search_enabled=False, seed=2))
        single = edit(tiny_image, tiny_model, EditTarget(),
                      EditConfig(iterations=6, delta_z_candidates=(1.0,), seed=2))
        assert torch.equal(fixed.symbols_y, single.symbols_y)
        assert torch.equal(fixed.symbols_z, single.symbols_z)
        assert fixed.metrics.rd_cost == single.metrics.rd_cost

    def test_argmin_contract(self, tiny_model, tiny_image):
        cfg = EditConfig(iterations=6, delta_z_candidates=(0.5, 1.0, 2.0), seed=0)
        res = edit(tiny_image, tiny_model, EditTarget(), cfg)
        assert set(res.candidate_costs) == {0.5, 1.0, 2.0}
        assert res.metrics.rd_cost == min(res.candidate_costs.values())
        assert res.steps.delta_z in (0.5, 1.0, 2.0)

    def test_candidate_costs_on_fixed_path(self, tiny_model, tiny_image):
        res = edit(tiny_image, tiny_model, EditTarget(),
                   EditConfig(iterations=4, grid_search_enabled=False))
        assert res.candidate_costs == {1.0: res.metrics.rd_cost}

    def test_naive_mode_skips_grid(self, tiny_model, tiny_image):
        res = edit(tiny_image, tiny_model, EditTarget(),
                   EditConfig(iterations=4, adaptive_delta=False))
        assert res.steps.delta_y == 1.0
        assert res.steps.delta_z == 1.0


class TestOptimization:
    def test_loss_improves(self, tiny_model, tiny_image):
        res = edit(tiny_image, tiny_model, EditTarget(),
                   EditConfig(iterations=30, grid_search_enabled=False))
        summary = cost_trace_summary(res)
        assert summary["best"] < summary["initial"]
        assert summary["improving_fraction"] > 0

    def test_metrics_come_from_hard_symbols(self, tiny_model, tiny_image):
        res = edit(tiny_image, tiny_model, EditTarget(),
                   EditConfig(iterations=10, grid_search_enabled=False))
        recon = tiny_model.synthesize(res.symbols_y.float() * res.steps.delta_y)
        assert torch.equal(res.recon, recon)
        mse = ((tiny_image - recon) ** 2).mean().item()
        assert res.metrics.mse == pytest.approx(mse, rel=1e-5)

    def test_delta_y_is_float32_exact(self, tiny_model, tiny_image):
        res = edit(tiny_image, tiny_model, EditTarget(),
                   EditConfig(iterations=10, grid_search_enabled=False))
        assert res.steps.delta_y == float(np.float32(res.steps.delta_y))

    def test_diverged_raises_with_iteration(self, tiny_model, tiny_image):
        state = init_state(tiny_image, tiny_model)
        state.y = torch.full_like(state.y, 1e20)
        with pytest.raises(EditDivergedError) as exc:
            edit_once(state, tiny_model, tiny_image, EditTarget(),
                      EditConfig(iterations=3, grid_search_enabled=False))
        assert exc.value.iteration == 0

    def test_journal_written(self, tiny_model, tiny_image, tmp_path):
        path = tmp_path / "trace.csv"
        cfg = EditConfig(iterations=5, grid_search_enabled=False,
                         trace_path=str(path))
        edit(tiny_image, tiny_model, EditTarget(), cfg)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "iteration,temperature,loss,bpp,mse"
        assert len(lines) == 6


class TestRoi:
    def test_uniform_roi_matches_plain(self, tiny_model, tiny_image):
        cfg = EditConfig(iterations=8, grid_search_enabled=False, seed=4)
        plain = edit(tiny_image, tiny_model,
                     EditTarget(lambda_targets=(("mse", 0.015),)), cfg)
        ones = edit(tiny_image, tiny_model,
                    EditTarget(lambda_targets=(("mse", 0.015),),
                               roi_map=torch.ones(64, 64)), cfg)
        assert torch.equal(plain.symbols_y, ones.symbols_y)
        assert torch.equal(plain.symbols_z, ones.symbols_z)
        assert plain.metrics.rd_cost == pytest.approx(ones.metrics.rd_cost,
                                                      rel=1e-6)

    def test_resample_identity(self):
        m = torch.rand(8, 8)
        out = resample_roi(m, 8, 8)
        assert torch.equal(out, m)

    def test_resample_nearest_blocks(self):
        m = torch.tensor([[0.0, 1.0], [1.0, 0.0]])
        out = resample_roi(m, 4, 4)
        expected = torch.tensor([
            [0.0, 0.0, 1.0, 1.0],
            [0.0, 0.0, 1.0, 1.0],
            [1.0, 1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0, 0.0],
        ])
        assert torch.equal(out, expected)


class TestTraceSummary:
    def test_oracle(self):
        s = cost_trace_summary([5.0, 4.0, 4.5, 3.0])
        assert s["initial"] == 5.0
        assert s["final"] == 3.0
        assert s["best"] == 3.0
        assert s["best_curve"] == [5.0, 4.0, 4.0, 3.0]
        assert s["improving_fraction"] == pytest.approx(2.0 / 3.0)

    def test_single_entry(self):
        s = cost_trace_summary([2.0])
        assert s["best"] == 2.0
        assert s["improving_fraction"] == 0.0

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            cost_trace_summary([])
