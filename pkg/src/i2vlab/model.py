"""A tiny trainable spatiotemporal transformer for video flow matching.

float64 numpy end to end with handwritten backprop (verified against
finite differences in the test suite).  Architecture per block, pre-norm:

    h <- h + OutProj(MultiHeadAttend(LN(h)))
    h <- h + FC2(gelu(FC1(LN(h))))

over the full space-time token sequence (no factorized attention), with
learned absolute positional embeddings, a sinusoidal-feature time
embedding passed through a learned linear map, and a learned
condition-embedding table whose last row is the null condition used for
classifier-free guidance.  Image conditioning is channel concatenation:
the encoded reference frame is appended to every frame's channels, so
``in_channels = 2 * out_channels`` for the image-conditional model and
``in_channels = out_channels`` for its text-only twin.

Training is plain SGD on the velocity-matching MSE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionConfig, attend
from .data import toy_encode
from .layout import TokenLayout
from .rng import stream
from .sampler import Condition, interpolate, target_velocity

__all__ = [
    "ToyDiTConfig",
    "ToyDiT",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "train",
    "evaluate_loss",
]

LN_EPS = 1e-6
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


@dataclass(frozen=True)
class ToyDiTConfig:
    frames: int = 8
    height: int = 8
    width: int = 8
    in_channels: int = 2
    out_channels: int = 1
    layers: int = 4
    heads: int = 4
    head_dim: int = 8
    mlp_ratio: int = 4
    num_classes: int = 2

    def __post_init__(self) -> None:
        if min(self.layers, self.heads, self.head_dim, self.mlp_ratio) < 1:
            raise ValueError("layers, heads, head_dim and mlp_ratio must be positive")
        if self.out_channels < 1 or self.num_classes < 1:
            raise ValueError("out_channels and num_classes must be positive")
        if self.in_channels not in (self.out_channels, 2 * self.out_channels):
            raise ValueError(
                "in_channels must equal out_channels (no reference) or "
                "2*out_channels (channel-concatenated reference)"
            )
        if (self.heads * self.head_dim) % 2 != 0:
            raise ValueError("model width must be even for sin/cos time features")

    @property
    def model_dim(self) -> int:
        return self.heads * self.head_dim

    @property
    def hidden_dim(self) -> int:
        return self.mlp_ratio * self.model_dim

    @property
    def uses_reference(self) -> bool:
        return self.in_channels == 2 * self.out_channels

    @property
    def layout(self) -> TokenLayout:
        return TokenLayout(self.frames, self.height, self.width)


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x**3)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    th = np.tanh(_GELU_C * (x + _GELU_A * x**3))
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)


def _time_features(t: float, dim: int) -> np.ndarray:
    half = dim // 2
    if half == 1:
        freqs = np.ones(1)
    else:
        freqs = np.geomspace(1.0, 1000.0, half)
    angle = freqs * t
    return np.concatenate([np.sin(angle), np.cos(angle)])


def _ln_forward(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * gain + bias, xhat, inv


def _ln_backward(dout, xhat, inv, gain):
    dgain = (dout * xhat).sum(axis=0)
    dbias = dout.sum(axis=0)
    dxhat = dout * gain
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


def _split_heads(x: np.ndarray, heads: int, head_dim: int) -> np.ndarray:
    return x.reshape(x.shape[0], heads, head_dim).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    heads, tokens, head_dim = x.shape
    return x.transpose(1, 0, 2).reshape(tokens, heads * head_dim)


class ToyDiT:
    """Velocity-prediction transformer over flattened space-time tokens."""

    def __init__(self, config: ToyDiTConfig = ToyDiTConfig(), seed: int = 0):
        self.config = config
        self.params = _init_params(config, seed)
        self._attn_config = AttentionConfig(num_heads=config.heads, head_dim=config.head_dim)

    @property
    def layout(self) -> TokenLayout:
        return self.config.layout

    @property
    def out_channels(self) -> int:
        return self.config.out_channels

    @property
    def uses_reference(self) -> bool:
        return self.config.uses_reference

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def _tokens(self, z_t: np.ndarray, ref_latent: np.ndarray | None) -> np.ndarray:
        cfg = self.config
        expected = (cfg.frames, cfg.height, cfg.width, cfg.out_channels)
        z_t = np.asarray(z_t, dtype=float)
        if z_t.shape != expected:
            raise ValueError(f"latent shape {z_t.shape}, expected {expected}")
        if cfg.uses_reference:
            if ref_latent is None:
                raise ValueError("this model conditions on a reference latent")
            ref_latent = np.asarray(ref_latent, dtype=float)
            if ref_latent.shape != expected[1:]:
                raise ValueError(
                    f"reference latent shape {ref_latent.shape}, expected {expected[1:]}"
                )
            ref = np.broadcast_to(ref_latent, z_t.shape)
            x = np.concatenate([z_t, ref], axis=-1)
        else:
            x = z_t
        return x.reshape(cfg.layout.token_count, cfg.in_channels)

    def _cond_row(self, cond: Condition) -> int:
        if cond.is_null:
            return self.config.num_classes
        if not 0 <= cond.class_id < self.config.num_classes:
            raise ValueError(f"class id {cond.class_id} out of range")
        return cond.class_id

    def forward(
        self,
        z_t: np.ndarray,
        t: float,
        cond: Condition,
        ref_latent: np.ndarray | None = None,
        bias=None,
        capture=None,
        step: int = 0,
    ) -> np.ndarray:
        """Predicted velocity field, shape ``(F, H, W, out_channels)``."""
        y, _ = self._run(z_t, t, cond, ref_latent, bias, capture, step, need_cache=False)
        return y

    def loss_and_grad(
        self,
        z_t: np.ndarray,
        t: float,
        cond: Condition,
        ref_latent: np.ndarray | None,
        target: np.ndarray,
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Velocity MSE and its gradient for every parameter."""
        y, cache = self._run(z_t, t, cond, ref_latent, None, None, 0, need_cache=True)
        target = np.asarray(target, dtype=float)
        if target.shape != y.shape:
            raise ValueError(f"target shape {target.shape}, expected {y.shape}")
        diff = y - target
        loss = float(np.mean(diff**2))
        dy = (2.0 / diff.size) * diff
        grads = self._backward(dy, cache)
        return loss, grads

    def _run(self, z_t, t, cond, ref_latent, bias, capture, step, need_cache):
        cfg = self.config
        p = self.params
        if not np.isfinite(t):
            raise ValueError("t must be finite")

        x_tok = self._tokens(z_t, ref_latent)
        tfeat = _time_features(float(t), cfg.model_dim)
        temb = tfeat @ p["time.weight"] + p["time.bias"]
        row = self._cond_row(cond)
        h = x_tok @ p["input.weight"] + p["input.bias"] + p["pos"] + temb + p["cond.table"][row]

        cache = {"x_tok": x_tok, "tfeat": tfeat, "cond_row": row, "layers": []} if need_cache else None

        for layer in range(cfg.layers):
            k = f"layer{layer}"
            u1, xhat1, inv1 = _ln_forward(h, p[f"{k}.ln1.gain"], p[f"{k}.ln1.bias"])
            qkv = u1 @ p[f"{k}.attn.qkv.weight"] + p[f"{k}.attn.qkv.bias"]
            d = cfg.model_dim
            q = _split_heads(qkv[:, :d], cfg.heads, cfg.head_dim)
            kk = _split_heads(qkv[:, d : 2 * d], cfg.heads, cfg.head_dim)
            v = _split_heads(qkv[:, 2 * d :], cfg.heads, cfg.head_dim)
            out_h, weights = attend(
                q,
                kk,
                v,
                bias=bias,
                config=self._attn_config,
                capture=capture,
                step=step,
                layer=layer,
                return_weights=True,
            )
            o = _merge_heads(out_h)
            h_attn = h + (o @ p[f"{k}.attn.out.weight"] + p[f"{k}.attn.out.bias"])

            u2, xhat2, inv2 = _ln_forward(h_attn, p[f"{k}.ln2.gain"], p[f"{k}.ln2.bias"])
            m1 = u2 @ p[f"{k}.mlp.fc1.weight"] + p[f"{k}.mlp.fc1.bias"]
            g = _gelu(m1)
            h_new = h_attn + (g @ p[f"{k}.mlp.fc2.weight"] + p[f"{k}.mlp.fc2.bias"])

            if need_cache:
                cache["layers"].append(
                    {
                        "xhat1": xhat1,
                        "inv1": inv1,
                        "u1": u1,
                        "q": q,
                        "k": kk,
                        "v": v,
                        "weights": weights,
                        "o": o,
                        "xhat2": xhat2,
                        "inv2": inv2,
                        "u2": u2,
                        "m1": m1,
                        "g": g,
                    }
                )
            h = h_new

        u3, xhat3, inv3 = _ln_forward(h, p["final.ln.gain"], p["final.ln.bias"])
        y_tok = u3 @ p["output.weight"] + p["output.bias"]
        y = y_tok.reshape(cfg.frames, cfg.height, cfg.width, cfg.out_channels)
        if need_cache:
            cache.update({"xhat3": xhat3, "inv3": inv3, "u3": u3})
        return y, cache

    def _backward(self, dy: np.ndarray, cache: dict) -> dict[str, np.ndarray]:
        cfg = self.config
        p = self.params
        scale = 1.0 / math.sqrt(cfg.head_dim)
        grads = {name: np.zeros_like(arr) for name, arr in p.items()}

        dy_tok = dy.reshape(cfg.layout.token_count, cfg.out_channels)
        grads["output.weight"] += cache["u3"].T @ dy_tok
        grads["output.bias"] += dy_tok.sum(axis=0)
        du3 = dy_tok @ p["output.weight"].T
        dh, dgain, dbias = _ln_backward(du3, cache["xhat3"], cache["inv3"], p["final.ln.gain"])
        grads["final.ln.gain"] += dgain
        grads["final.ln.bias"] += dbias

        for layer in reversed(range(cfg.layers)):
            k = f"layer{layer}"
            c = cache["layers"][layer]

            # mlp branch: h_new = h_attn + fc2(gelu(fc1(ln2(h_attn))))
            dm2 = dh
            grads[f"{k}.mlp.fc2.weight"] += c["g"].T @ dm2
            grads[f"{k}.mlp.fc2.bias"] += dm2.sum(axis=0)
            dg = dm2 @ p[f"{k}.mlp.fc2.weight"].T
            dm1 = dg * _gelu_grad(c["m1"])
            grads[f"{k}.mlp.fc1.weight"] += c["u2"].T @ dm1
            grads[f"{k}.mlp.fc1.bias"] += dm1.sum(axis=0)
            du2 = dm1 @ p[f"{k}.mlp.fc1.weight"].T
            dx2, dgain2, dbias2 = _ln_backward(du2, c["xhat2"], c["inv2"], p[f"{k}.ln2.gain"])
            grads[f"{k}.ln2.gain"] += dgain2
            grads[f"{k}.ln2.bias"] += dbias2
            dh = dh + dx2

            # attention branch: h_attn = h + out_proj(attend(qkv(ln1(h))))
            grads[f"{k}.attn.out.weight"] += c["o"].T @ dh
            grads[f"{k}.attn.out.bias"] += dh.sum(axis=0)
            do = dh @ p[f"{k}.attn.out.weight"].T
            do_h = _split_heads(do, cfg.heads, cfg.head_dim)

            a = c["weights"]
            dv_h = a.transpose(0, 2, 1) @ do_h
            da = do_h @ c["v"].transpose(0, 2, 1)
            dlogits = a * (da - (da * a).sum(axis=-1, keepdims=True))
            dq_h = (dlogits @ c["k"]) * scale
            dk_h = (dlogits.transpose(0, 2, 1) @ c["q"]) * scale

            dqkv = np.concatenate(
                [_merge_heads(dq_h), _merge_heads(dk_h), _merge_heads(dv_h)], axis=1
            )
            grads[f"{k}.attn.qkv.weight"] += c["u1"].T @ dqkv
            grads[f"{k}.attn.qkv.bias"] += dqkv.sum(axis=0)
            du1 = dqkv @ p[f"{k}.attn.qkv.weight"].T
            dx1, dgain1, dbias1 = _ln_backward(du1, c["xhat1"], c["inv1"], p[f"{k}.ln1.gain"])
            grads[f"{k}.ln1.gain"] += dgain1
            grads[f"{k}.ln1.bias"] += dbias1
            dh = dh + dx1

        grads["pos"] += dh
        grads["input.weight"] += cache["x_tok"].T @ dh
        grads["input.bias"] += dh.sum(axis=0)
        dtemb = dh.sum(axis=0)
        grads["time.weight"] += np.outer(cache["tfeat"], dtemb)
        grads["time.bias"] += dtemb
        grads["cond.table"][cache["cond_row"]] += dh.sum(axis=0)
        return grads


def _init_params(cfg: ToyDiTConfig, seed: int) -> dict[str, np.ndarray]:
    rng = stream(seed, "init")
    d = cfg.model_dim
    hid = cfg.hidden_dim
    std = 0.02
    # residual-branch output projections shrink with depth for stable SGD
    res_std = std / math.sqrt(2.0 * cfg.layers)

    params: dict[str, np.ndarray] = {}
    params["input.weight"] = rng.normal(0.0, std, (cfg.in_channels, d))
    params["input.bias"] = np.zeros(d)
    params["pos"] = rng.normal(0.0, 0.01, (cfg.layout.token_count, d))
    params["time.weight"] = rng.normal(0.0, std, (d, d))
    params["time.bias"] = np.zeros(d)
    params["cond.table"] = rng.normal(0.0, std, (cfg.num_classes + 1, d))
    for layer in range(cfg.layers):
        k = f"layer{layer}"
        params[f"{k}.ln1.gain"] = np.ones(d)
        params[f"{k}.ln1.bias"] = np.zeros(d)
        params[f"{k}.attn.qkv.weight"] = rng.normal(0.0, std, (d, 3 * d))
        params[f"{k}.attn.qkv.bias"] = np.zeros(3 * d)
        params[f"{k}.attn.out.weight"] = rng.normal(0.0, res_std, (d, d))
        params[f"{k}.attn.out.bias"] = np.zeros(d)
        params[f"{k}.ln2.gain"] = np.ones(d)
        params[f"{k}.ln2.bias"] = np.zeros(d)
        params[f"{k}.mlp.fc1.weight"] = rng.normal(0.0, std, (d, hid))
        params[f"{k}.mlp.fc1.bias"] = np.zeros(hid)
        params[f"{k}.mlp.fc2.weight"] = rng.normal(0.0, res_std, (hid, d))
        params[f"{k}.mlp.fc2.bias"] = np.zeros(d)
    params["final.ln.gain"] = np.ones(d)
    params["final.ln.bias"] = np.zeros(d)
    params["output.weight"] = rng.normal(0.0, std, (d, cfg.out_channels))
    params["output.bias"] = np.zeros(cfg.out_channels)
    return params


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 800
    batch_size: int = 4
    learning_rate: float = 0.05
    p_uncond: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.p_uncond < 1.0:
            raise ValueError("p_uncond must be in [0, 1)")


@dataclass
class TrainResult:
    losses: np.ndarray

    @property
    def final_loss(self) -> float:
        return float(self.losses[-1])


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"non-finite loss or parameters at training step {step}")
        self.step = step


def train(model: ToyDiT, dataset, config: TrainConfig = TrainConfig()) -> TrainResult:
    """SGD on velocity MSE with per-example time draws, fresh noise each
    step and condition dropout to the null row."""
    idx_rng = stream(config.seed, "train", "index")
    t_rng = stream(config.seed, "train", "time")
    noise_rng = stream(config.seed, "train", "noise")
    drop_rng = stream(config.seed, "train", "dropout")

    z_all = toy_encode(dataset.videos)
    n = len(dataset)
    losses = np.empty(config.steps)
    for step in range(1, config.steps + 1):
        ids = idx_rng.integers(0, n, size=config.batch_size)
        grad_acc: dict[str, np.ndarray] | None = None
        loss_acc = 0.0
        for j in ids:
            z0 = z_all[j]
            ref = z0[0] if model.uses_reference else None
            t = float(t_rng.uniform())
            eps = noise_rng.standard_normal(z0.shape)
            z_t = interpolate(z0, eps, t)
            target = target_velocity(z0, eps)
            cond = Condition(int(dataset.labels[j]))
            if drop_rng.uniform() < config.p_uncond:
                cond = Condition.null()
            # divergence surfaces as the step check below, not a warning
            with np.errstate(over="ignore", invalid="ignore"):
                try:
                    loss, grads = model.loss_and_grad(z_t, t, cond, ref, target)
                except ValueError as exc:
                    # blown-up weights trip the NaN guard inside softmax
                    if "NaN" in str(exc):
                        raise TrainingDivergedError(step) from exc
                    raise
                loss_acc += loss
                if grad_acc is None:
                    grad_acc = grads
                else:
                    for name in grad_acc:
                        grad_acc[name] += grads[name]
        mean_loss = loss_acc / config.batch_size
        if not np.isfinite(mean_loss):
            raise TrainingDivergedError(step)
        lr = config.learning_rate / config.batch_size
        with np.errstate(over="ignore", invalid="ignore"):
            for name in model.params:
                model.params[name] -= lr * grad_acc[name]
        # loss can stay finite while the update overflows the weights
        if not all(np.isfinite(arr).all() for arr in model.params.values()):
            raise TrainingDivergedError(step)
        losses[step - 1] = mean_loss
    return TrainResult(losses=losses)


def evaluate_loss(model: ToyDiT, dataset, seed: int = 0, num_examples: int = 32) -> float:
    """Mean velocity MSE on a fixed seeded evaluation batch (no updates)."""
    idx_rng = stream(seed, "eval", "index")
    t_rng = stream(seed, "eval", "time")
    noise_rng = stream(seed, "eval", "noise")
    z_all = toy_encode(dataset.videos)
    total = 0.0
    for _ in range(num_examples):
        j = int(idx_rng.integers(0, len(dataset)))
        z0 = z_all[j]
        ref = z0[0] if model.uses_reference else None
        t = float(t_rng.uniform())
        eps = noise_rng.standard_normal(z0.shape)
        y = model.forward(interpolate(z0, eps, t), t, Condition(int(dataset.labels[j])), ref)
        total += float(np.mean((y - target_velocity(z0, eps)) ** 2))
    return total / num_examples
