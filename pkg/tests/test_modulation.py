import math

import numpy as np
import pytest

from i2vlab.layout import TokenLayout
from i2vlab.modulation import (
    BiasSpec,
    BranchPolicy,
    ModulationConfig,
    Schedule,
    build_bias,
    is_active,
    modulate_logits,
    schedule_weight,
)


class TestScheduleWeight:
    def test_uniform_is_one_everywhere(self):
        for f in range(8):
            assert schedule_weight(Schedule.UNIFORM, f, 8) == 1.0
        assert schedule_weight("uniform", 0, 1) == 1.0

    def test_linear_ramp(self):
        frames = 8
        got = [schedule_weight(Schedule.LINEAR, f, frames) for f in range(frames)]
        want = [f / (frames - 1) for f in range(frames)]
        assert got == want
        assert got[0] == 0.0 and got[-1] == 1.0

    def test_log_saturating(self):
        frames = 8
        got = [schedule_weight(Schedule.LOG, f, frames) for f in range(frames)]
        want = [math.log(1 + f) / math.log(frames) for f in range(frames)]
        assert got == pytest.approx(want, rel=1e-15)
        assert got[0] == 0.0
        assert got[-1] == 1.0  # ln(1 + (F-1)) / ln(F) with F = 8
        # rises fast then flattens
        diffs = np.diff(got)
        assert (diffs > 0).all() and (np.diff(diffs) < 0).all()

    def test_log_is_base_invariant(self):
        # same ratio whichever log base you pick
        for f in range(1, 6):
            want = math.log10(1 + f) / math.log10(6)
            assert schedule_weight(Schedule.LOG, f, 6) == pytest.approx(want, rel=1e-12)

    def test_single_frame_rejects_linear_and_log(self):
        for kind in (Schedule.LINEAR, Schedule.LOG):
            with pytest.raises(ValueError):
                schedule_weight(kind, 0, 1)

    def test_frame_out_of_range(self):
        with pytest.raises(IndexError):
            schedule_weight(Schedule.UNIFORM, 8, 8)
        with pytest.raises(IndexError):
            schedule_weight(Schedule.LINEAR, -1, 8)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            schedule_weight("quadratic", 0, 4)


class TestBuildBias:
    def test_reference_rows_are_exactly_zero(self):
        lay = TokenLayout(frames=4, height=2, width=3)
        spec = build_bias(lay, gamma=0.7)
        ref = lay.reference_indices()
        assert (spec.per_query_scale[ref] == 0.0).all()
        assert spec.key_prefix_len == lay.frame_size

    def test_uniform_scale_values(self):
        lay = TokenLayout(frames=3, height=2, width=2)
        spec = build_bias(lay, gamma=0.6)
        for i in range(lay.token_count):
            f = lay.frame_of(i)
            want = 0.0 if f == 0 else -0.6
            assert spec.per_query_scale[i] == want

    def test_sign_convention(self):
        # positive gamma pushes reference logits down, negative pulls them up
        lay = TokenLayout(frames=2, height=1, width=2)
        down = build_bias(lay, gamma=1.0)
        up = build_bias(lay, gamma=-1.0)
        nonref = lay.frame_size
        assert down.per_query_scale[nonref] == -1.0
        assert up.per_query_scale[nonref] == 1.0

    def test_schedule_weights_applied_per_frame(self):
        lay = TokenLayout(frames=4, height=1, width=2)
        gamma = 0.9
        for kind in (Schedule.LINEAR, Schedule.LOG):
            spec = build_bias(lay, gamma=gamma, kind=kind)
            for i in range(lay.token_count):
                f = lay.frame_of(i)
                if f == 0:
                    assert spec.per_query_scale[i] == 0.0
                else:
                    assert spec.per_query_scale[i] == -(gamma * schedule_weight(kind, f, 4))

    def test_zero_gamma_gives_zero_spec(self):
        spec = build_bias(TokenLayout(2, 2, 2), gamma=0.0)
        assert spec.is_zero()
        assert not np.any(spec.dense())


class TestModulateLogits:
    def test_matches_dense_oracle_bitwise(self):
        rng = np.random.default_rng(0)
        lay = TokenLayout(frames=3, height=2, width=2)
        spec = build_bias(lay, gamma=1.3, kind=Schedule.LINEAR)
        logits = rng.standard_normal((lay.token_count, lay.token_count))
        got = modulate_logits(logits, spec)
        want = logits + spec.dense()
        assert (got == want).all()

    def test_head_stack_supported(self):
        rng = np.random.default_rng(1)
        lay = TokenLayout(frames=2, height=2, width=2)
        spec = build_bias(lay, gamma=0.5)
        logits = rng.standard_normal((3, lay.token_count, lay.token_count))
        got = modulate_logits(logits, spec)
        for h in range(3):
            assert (got[h] == modulate_logits(logits[h], spec)).all()

    def test_untouched_regions(self):
        rng = np.random.default_rng(2)
        lay = TokenLayout(frames=3, height=1, width=3)
        spec = build_bias(lay, gamma=2.0)
        logits = rng.standard_normal((lay.token_count, lay.token_count))
        got = modulate_logits(logits, spec)
        p = spec.key_prefix_len
        # non-reference key columns untouched, reference-query rows untouched
        assert (got[:, p:] == logits[:, p:]).all()
        assert (got[:p, :] == logits[:p, :]).all()
        assert not (got[p:, :p] == logits[p:, :p]).all()

    def test_input_not_mutated(self):
        lay = TokenLayout(frames=2, height=1, width=2)
        spec = build_bias(lay, gamma=1.0)
        logits = np.zeros((4, 4))
        modulate_logits(logits, spec)
        assert not np.any(logits)

    def test_shape_mismatch_rejected(self):
        spec = build_bias(TokenLayout(2, 2, 2), gamma=1.0)
        with pytest.raises(ValueError):
            modulate_logits(np.zeros((4, 4)), spec)


class TestIsActive:
    def test_strict_gate_lambda02_n40(self):
        active = [i for i in range(1, 41) if is_active(i, 40, 0.2)]
        assert active == [1, 2, 3, 4, 5, 6, 7]

    def test_boundary_step_excluded(self):
        # 8/40 == 0.2 exactly; strict comparison keeps it off
        assert not is_active(8, 40, 0.2)
        assert is_active(7, 40, 0.2)

    def test_zero_ratio_never_active(self):
        assert not any(is_active(i, 10, 0.0) for i in range(1, 11))

    def test_full_ratio_skips_final_step_only(self):
        active = [i for i in range(1, 11) if is_active(i, 10, 1.0)]
        assert active == list(range(1, 10))

    def test_out_of_range_steps(self):
        with pytest.raises(IndexError):
            is_active(0, 10, 0.5)
        with pytest.raises(IndexError):
            is_active(11, 10, 0.5)


class TestConfigs:
    def test_defaults(self):
        cfg = ModulationConfig()
        assert cfg.gamma == 0.6
        assert cfg.step_ratio == 0.2
        assert cfg.schedule is Schedule.UNIFORM
        assert cfg.branch_policy is BranchPolicy.CONDITIONAL_ONLY

    def test_string_coercion(self):
        cfg = ModulationConfig(schedule="log", branch_policy="both")
        assert cfg.schedule is Schedule.LOG
        assert cfg.branch_policy is BranchPolicy.BOTH_BRANCHES

    def test_step_ratio_bounds(self):
        ModulationConfig(step_ratio=0.0)
        ModulationConfig(step_ratio=1.0)
        with pytest.raises(ValueError):
            ModulationConfig(step_ratio=-0.1)
        with pytest.raises(ValueError):
            ModulationConfig(step_ratio=1.1)

    def test_bad_schedule_rejected(self):
        with pytest.raises(ValueError):
            ModulationConfig(schedule="cosine")

    def test_bias_spec_dense_layout(self):
        spec = BiasSpec(per_query_scale=np.array([0.0, 0.0, -1.5, -2.5]), key_prefix_len=2)
        dense = spec.dense()
        assert dense.shape == (4, 4)
        assert dense[2, 0] == dense[2, 1] == -1.5
        assert dense[3, 0] == dense[3, 1] == -2.5
        assert not np.any(dense[:, 2:])
