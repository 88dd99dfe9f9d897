import numpy as np
import pytest

from i2vlab.layout import TokenLayout
from i2vlab.model import ToyDiT, ToyDiTConfig
from i2vlab.modulation import BranchPolicy, ModulationConfig
from i2vlab.rng import stream
from i2vlab.sampler import (
    Condition,
    DivergenceError,
    SamplerConfig,
    cfg_combine,
    interpolate,
    replace_reference_latent,
    sample,
    scheduler_step,
    target_velocity,
)


class ConstantVelocityModel:
    """Returns a fixed velocity field; Euler then recovers z0 exactly."""

    def __init__(self, layout, velocity, out_channels=1):
        self.layout = layout
        self.out_channels = out_channels
        self.uses_reference = False
        self.velocity = velocity
        self.calls = []

    def forward(self, z, t, cond, ref_latent=None, bias=None, capture=None, step=0):
        self.calls.append((step, t, cond.is_null, bias is not None))
        return self.velocity


def _tiny_model(seed=0):
    return ToyDiT(ToyDiTConfig(frames=2, height=2, width=2, layers=1, heads=2, head_dim=4), seed=seed)


def _ref(shape=(2, 2, 1), value=0.5):
    return np.full(shape, value)


class TestPathOps:
    def test_interpolate_endpoints(self):
        rng = np.random.default_rng(0)
        z0, eps = rng.standard_normal((2, 3, 3, 1)), rng.standard_normal((2, 3, 3, 1))
        np.testing.assert_array_equal(interpolate(z0, eps, 0.0), z0)
        np.testing.assert_array_equal(interpolate(z0, eps, 1.0), eps)

    def test_interpolate_midpoint(self):
        z0 = np.zeros((1, 1, 1, 1))
        eps = np.ones((1, 1, 1, 1))
        assert interpolate(z0, eps, 0.25)[0, 0, 0, 0] == 0.25

    def test_interpolate_validation(self):
        z = np.zeros((1, 1, 1, 1))
        with pytest.raises(ValueError):
            interpolate(z, np.zeros((2, 1, 1, 1)), 0.5)
        with pytest.raises(ValueError):
            interpolate(z, z, 1.5)

    def test_target_velocity(self):
        rng = np.random.default_rng(1)
        z0, eps = rng.standard_normal(5), rng.standard_normal(5)
        np.testing.assert_array_equal(target_velocity(z0, eps), eps - z0)

    def test_velocity_is_path_derivative(self):
        rng = np.random.default_rng(2)
        z0, eps = rng.standard_normal(4), rng.standard_normal(4)
        h = 1e-6
        numeric = (interpolate(z0, eps, 0.5 + h) - interpolate(z0, eps, 0.5 - h)) / (2 * h)
        np.testing.assert_allclose(numeric, target_velocity(z0, eps), atol=1e-9)

    def test_cfg_combine(self):
        vu, vc = np.array([1.0, 0.0]), np.array([3.0, 2.0])
        np.testing.assert_array_equal(cfg_combine(vu, vc, 1.0), vc)
        np.testing.assert_array_equal(cfg_combine(vu, vc, 2.0), vu + 2.0 * (vc - vu))
        with pytest.raises(ValueError):
            cfg_combine(vu, vc, 0.5)

    def test_scheduler_step_descends(self):
        z = np.ones(3)
        v = np.full(3, 2.0)
        np.testing.assert_allclose(scheduler_step(z, v, 1.0, 0.75), z - 0.25 * v)
        with pytest.raises(ValueError):
            scheduler_step(z, v, 0.5, 0.75)

    def test_replace_reference_latent(self):
        rng = np.random.default_rng(3)
        z = rng.standard_normal((3, 2, 2, 1))
        ref = rng.standard_normal((2, 2, 1))
        out = replace_reference_latent(z, ref)
        np.testing.assert_array_equal(out[0], ref)
        np.testing.assert_array_equal(out[1:], z[1:])
        assert out is not z
        with pytest.raises(ValueError):
            replace_reference_latent(z, np.zeros((3, 3, 1)))


class TestSamplerConfig:
    def test_defaults(self):
        cfg = SamplerConfig()
        assert cfg.num_steps == 40
        assert cfg.guidance_scale == 3.5
        assert cfg.replace_reference is True

    def test_validation(self):
        with pytest.raises(ValueError):
            SamplerConfig(num_steps=0)
        with pytest.raises(ValueError):
            SamplerConfig(guidance_scale=0.9)


class TestEulerExactness:
    @pytest.mark.parametrize("n", [1, 10, 40])
    def test_constant_field_recovers_z0(self, n):
        lay = TokenLayout(2, 2, 2)
        scfg = SamplerConfig(num_steps=n, guidance_scale=1.0, seed=5, replace_reference=False)
        eps = stream(5, "sample", "init").standard_normal((2, 2, 2, 1))
        z0 = np.random.default_rng(11).standard_normal((2, 2, 2, 1))
        model = ConstantVelocityModel(lay, eps - z0)
        out = sample(model, None, Condition(0), scfg)
        np.testing.assert_allclose(out, z0, atol=1e-6)

    def test_guidance_of_equal_branches_is_identity(self):
        lay = TokenLayout(2, 2, 2)
        eps = stream(6, "sample", "init").standard_normal((2, 2, 2, 1))
        z0 = np.zeros((2, 2, 2, 1))
        model = ConstantVelocityModel(lay, eps - z0)
        out = sample(model, None, Condition(0), SamplerConfig(num_steps=7, guidance_scale=4.0, seed=6, replace_reference=False))
        np.testing.assert_allclose(out, z0, atol=1e-6)


class TestSampleLoop:
    def test_step_log_times_and_gate(self):
        model = _tiny_model()
        log = []
        scfg = SamplerConfig(num_steps=10, guidance_scale=2.0, seed=0)
        mcfg = ModulationConfig(gamma=0.6, step_ratio=0.25)
        sample(model, _ref(), Condition(1), scfg, modulation=mcfg, step_log=log)
        assert [r.step for r in log] == list(range(1, 11))
        assert log[0].t == 1.0 and log[-1].t_next == 0.0
        for r in log:
            assert r.t == pytest.approx(1.0 - (r.step - 1) / 10)
            assert r.t_next == pytest.approx(1.0 - r.step / 10)
        active = [r.step for r in log if r.modulation_active]
        assert active == [1, 2]  # 1/10 and 2/10 < 0.25, 2.5/10 boundary unreached

    def test_conditional_branch_only_by_default(self):
        model = _tiny_model()
        log = []
        mcfg = ModulationConfig(gamma=0.6, step_ratio=0.5)
        sample(model, _ref(), Condition(1), SamplerConfig(num_steps=4, guidance_scale=2.0, seed=1),
               modulation=mcfg, step_log=log)
        for r in log:
            assert r.unconditional_biased is False
            assert r.conditional_biased == r.modulation_active

    def test_both_branches_policy(self):
        model = _tiny_model()
        log = []
        mcfg = ModulationConfig(gamma=0.6, step_ratio=0.5, branch_policy=BranchPolicy.BOTH_BRANCHES)
        sample(model, _ref(), Condition(1), SamplerConfig(num_steps=4, guidance_scale=2.0, seed=1),
               modulation=mcfg, step_log=log)
        for r in log:
            assert r.unconditional_biased == r.modulation_active

    def test_zero_gamma_matches_unmodulated_bitwise(self):
        model = _tiny_model()
        scfg = SamplerConfig(num_steps=6, guidance_scale=2.0, seed=3)
        base = sample(model, _ref(), Condition(1), scfg)
        gz = sample(model, _ref(), Condition(1), scfg, modulation=ModulationConfig(gamma=0.0))
        lz = sample(model, _ref(), Condition(1), scfg, modulation=ModulationConfig(gamma=0.6, step_ratio=0.0))
        assert (base == gz).all()
        assert (base == lz).all()

    def test_modulation_changes_output(self):
        model = _tiny_model()
        scfg = SamplerConfig(num_steps=6, guidance_scale=2.0, seed=3)
        base = sample(model, _ref(), Condition(1), scfg)
        mod = sample(model, _ref(), Condition(1), scfg, modulation=ModulationConfig(gamma=2.0, step_ratio=1.0))
        assert not np.array_equal(base, mod)

    def test_determinism(self):
        model = _tiny_model()
        scfg = SamplerConfig(num_steps=5, guidance_scale=2.5, seed=9)
        a = sample(model, _ref(), Condition(0), scfg)
        b = sample(model, _ref(), Condition(0), scfg)
        assert (a == b).all()

    def test_seed_changes_output(self):
        model = _tiny_model()
        a = sample(model, _ref(), Condition(0), SamplerConfig(num_steps=5, guidance_scale=2.0, seed=1))
        b = sample(model, _ref(), Condition(0), SamplerConfig(num_steps=5, guidance_scale=2.0, seed=2))
        assert not np.array_equal(a, b)

    def test_replace_reference_pins_frame0(self):
        model = _tiny_model()
        ref = _ref(value=0.25)
        z = sample(model, ref, Condition(1), SamplerConfig(num_steps=4, guidance_scale=2.0, seed=2))
        from i2vlab.data import toy_encode

        np.testing.assert_array_equal(z[0], toy_encode(ref))

    def test_no_replace_leaves_frame0_free(self):
        model = _tiny_model()
        ref = _ref(value=0.25)
        z = sample(model, ref, Condition(1),
                   SamplerConfig(num_steps=4, guidance_scale=2.0, seed=2, replace_reference=False))
        from i2vlab.data import toy_encode

        assert not np.array_equal(z[0], toy_encode(ref))

    def test_missing_reference_rejected(self):
        model = _tiny_model()
        with pytest.raises(ValueError):
            sample(model, None, Condition(1), SamplerConfig(num_steps=2, guidance_scale=2.0, seed=0))

    def test_wrong_reference_shape_rejected(self):
        model = _tiny_model()
        with pytest.raises(ValueError):
            sample(model, np.zeros((3, 3, 1)), Condition(1),
                   SamplerConfig(num_steps=2, guidance_scale=2.0, seed=0))

    def test_divergence_raises_with_step(self):
        lay = TokenLayout(2, 2, 2)

        class ExplodingModel(ConstantVelocityModel):
            def forward(self, z, t, cond, ref_latent=None, bias=None, capture=None, step=0):
                return np.full(z.shape, np.inf) if step >= 3 else np.zeros(z.shape)

        model = ExplodingModel(lay, None)
        with pytest.raises(DivergenceError) as err:
            sample(model, None, Condition(0),
                   SamplerConfig(num_steps=5, guidance_scale=1.0, seed=0, replace_reference=False))
        assert err.value.step == 3

    def test_capture_receives_conditional_branch_only(self):
        from i2vlab.attention import AttentionCapture

        model = _tiny_model()
        cap = AttentionCapture(layout=model.layout)
        n = 3
        sample(model, _ref(), Condition(1), SamplerConfig(num_steps=n, guidance_scale=2.0, seed=0),
               capture=cap)
        layers = model.config.layers
        heads = model.config.heads
        assert len(cap) == n * layers * heads
        assert cap.total_steps == n
        assert sorted({r.step for r in cap.records}) == list(range(1, n + 1))
