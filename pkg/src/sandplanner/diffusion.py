"""Conditional v-prediction diffusion over flattened control points.

The denoiser is a small numpy MLP with hand-written backprop:

    h1 = silu([x_s | t_emb | ctx] W1 + b1 + null * e_null)
    h2 = silu(h1 W2 + b2); h3 = silu(h2 W3 + b3); v = h3 W4 + b4

``ctx`` is the standardized ``[goal | v_prev | ranges]`` vector with the
``v_prev`` slot zeroed whenever the null flag is set; the learned ``e_null``
row stands in for it.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .representations import ANCHOR_COUNT, RepresentationKind

log = logging.getLogger(__name__)

CKPT_MAGIC = b"SDPC"
CKPT_VERSION = 2
RANGE_FLOOR = 0.1
_RANGE_FEATURES = ("raw", "inverse")
LATENT_SCALE = 6.0  # meters per latent unit


class TrainingDivergedError(RuntimeError):
    pass


# ---------------------------------------------------------------- schedule


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """``alpha[s], sigma[s]`` for s = 0..S, with s = 0 the clean level (1, 0)."""

    S: int
    alpha: np.ndarray
    sigma: np.ndarray
    kind: str = "cosine"


def make_schedule(S: int = 10, kind: str = "cosine") -> NoiseSchedule:
    if S < 2:
        raise ValueError(f"need at least 2 steps, got {S}")
    s = np.arange(S + 1) / S
    if kind == "cosine":
        c = 0.008
        alpha = np.cos((s + c) / (1 + c) * math.pi / 2) / math.cos(c / (1 + c) * math.pi / 2)
        alpha = np.clip(alpha, 0.0, 1.0)
    elif kind == "linear":
        alpha = np.sqrt(1.0 - s * (1.0 - 1e-4))
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    alpha[0] = 1.0
    sigma = np.sqrt(1.0 - alpha**2)
    alpha.setflags(write=False)
    sigma.setflags(write=False)
    return NoiseSchedule(S, alpha, sigma, kind)


def _check_step(sched: NoiseSchedule, s):
    s_arr = np.asarray(s)
    if np.any(s_arr < 1) or np.any(s_arr > sched.S):
        raise ValueError(f"diffusion step must be in [1, {sched.S}]")


def _coef(arr, s, like):
    c = np.asarray(arr[np.asarray(s)], dtype=float)
    return c.reshape(c.shape + (1,) * (np.ndim(like) - c.ndim)) if c.ndim else c


def forward_noise(sched: NoiseSchedule, x0, s, eps):
    _check_step(sched, s)
    return _coef(sched.alpha, s, x0) * x0 + _coef(sched.sigma, s, x0) * eps


def v_target(sched: NoiseSchedule, x0, eps, s):
    _check_step(sched, s)
    return _coef(sched.alpha, s, x0) * eps - _coef(sched.sigma, s, x0) * x0


def predict_x0_eps(sched: NoiseSchedule, x_s, v, s):
    """Invert (x_s, v) back to (x0, eps)."""
    a, sg = _coef(sched.alpha, s, x_s), _coef(sched.sigma, s, x_s)
    return a * x_s - sg * v, sg * x_s + a * v


# ---------------------------------------------------------------- network


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 256
    temb_dim: int = 16
    latent_dim: int = 3 * ANCHOR_COUNT
    beams: int = 64
    S: int = 10
    schedule: str = "cosine"
    x0_clip: float = 2.0
    range_feature: str = "inverse"  # "raw" meters or "inverse" 1/max(d, RANGE_FLOOR)

    @property
    def ctx_dim(self) -> int:
        return 4 + self.beams

    @property
    def in_dim(self) -> int:
        return self.latent_dim + self.temb_dim + self.ctx_dim


PARAM_NAMES = ("W1", "b1", "e_null", "W2", "b2", "W3", "b3", "W4", "b4")


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    H = cfg.hidden
    return {
        "W1": (cfg.in_dim, H), "b1": (H,), "e_null": (H,),
        "W2": (H, H), "b2": (H,), "W3": (H, H), "b3": (H,),
        "W4": (H, cfg.latent_dim), "b4": (cfg.latent_dim,),
    }


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """He-style hidden weights; the output head starts at zero."""
    shapes = param_shapes(cfg)
    p = {}
    for name, shape in shapes.items():
        if name in ("W1", "W2", "W3"):
            p[name] = rng.standard_normal(shape) * math.sqrt(2.0 / shape[0])
        else:
            p[name] = np.zeros(shape)
    p["e_null"] = rng.standard_normal(shapes["e_null"]) * 0.1
    return p


def timestep_embedding(s, dim: int, S: int) -> np.ndarray:
    s = np.atleast_1d(np.asarray(s, dtype=float))
    half = dim // 2
    freqs = np.exp(-math.log(100.0) * np.arange(half) / max(half - 1, 1)) * math.pi
    ang = (s / S)[:, None] * freqs[None, :] * S / 2
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _silu(z):
    sig = 1.0 / (1.0 + np.exp(-z))
    return z * sig, sig


def mlp_forward(params, inp, null, cache=False):
    z1 = inp @ params["W1"] + params["b1"] + null[:, None] * params["e_null"]
    h1, g1 = _silu(z1)
    z2 = h1 @ params["W2"] + params["b2"]
    h2, g2 = _silu(z2)
    z3 = h2 @ params["W3"] + params["b3"]
    h3, g3 = _silu(z3)
    out = h3 @ params["W4"] + params["b4"]
    if cache:
        return out, (inp, null, z1, h1, g1, z2, h2, g2, z3, h3, g3)
    return out


def _dsilu(z, sig):
    return sig * (1.0 + z * (1.0 - sig))


def mlp_backward(params, cache, dout):
    inp, null, z1, h1, g1, z2, h2, g2, z3, h3, g3 = cache
    grads = {"W4": h3.T @ dout, "b4": dout.sum(0)}
    dz3 = (dout @ params["W4"].T) * _dsilu(z3, g3)
    grads["W3"], grads["b3"] = h2.T @ dz3, dz3.sum(0)
    dz2 = (dz3 @ params["W3"].T) * _dsilu(z2, g2)
    grads["W2"], grads["b2"] = h1.T @ dz2, dz2.sum(0)
    dz1 = (dz2 @ params["W2"].T) * _dsilu(z1, g1)
    grads["W1"], grads["b1"] = inp.T @ dz1, dz1.sum(0)
    grads["e_null"] = null @ dz1
    return grads


def vloss_and_grad(params, cfg: ModelConfig, sched: NoiseSchedule, x0, ctx, null, s, eps):
    """Mean squared v-prediction error per element, and its exact gradient."""
    x_s = forward_noise(sched, x0, s, eps)
    v = v_target(sched, x0, eps, s)
    inp = np.concatenate([x_s, timestep_embedding(s, cfg.temb_dim, cfg.S), ctx], axis=1)
    out, cache = mlp_forward(params, inp, null.astype(float), cache=True)
    diff = out - v
    loss = float(np.mean(diff**2))
    grads = mlp_backward(params, cache, 2.0 * diff / diff.size)
    return loss, grads


# ---------------------------------------------------------------- context


@dataclass
class ContextFeatures:
    goal: np.ndarray  # (n, 2) robot frame
    v_prev: np.ndarray  # (n, 2)
    v_null: np.ndarray  # (n,) bool
    ranges: np.ndarray  # (n, beams)

    def __len__(self):
        return len(self.goal)

    @classmethod
    def single(cls, goal, v_prev, ranges) -> "ContextFeatures":
        null = v_prev is None
        return cls(np.asarray(goal, float)[None, :2],
                   np.zeros((1, 2)) if null else np.asarray(v_prev, float)[None, :2],
                   np.array([null]), np.asarray(ranges, float)[None, :])

    def raw(self, range_feature: str = "raw") -> np.ndarray:
        vp = np.where(self.v_null[:, None], 0.0, self.v_prev)
        r = self.ranges
        if range_feature == "inverse":
            # near returns dominate; far ones all collapse toward zero
            r = 1.0 / np.maximum(r, RANGE_FLOOR)
        elif range_feature != "raw":
            raise ValueError(f"unknown range feature {range_feature!r}")
        return np.concatenate([self.goal, vp, r], axis=1)


@dataclass
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray
    range_feature: str = "raw"

    @classmethod
    def fit(cls, feats: ContextFeatures, range_feature: str = "raw") -> "FeatureStats":
        X = feats.raw(range_feature)
        mean, std = X.mean(0), X.std(0)
        live = ~feats.v_null
        if live.any():
            mean[2:4] = feats.v_prev[live].mean(0)
            std[2:4] = feats.v_prev[live].std(0)
        std = np.where(std < 1e-6, 1.0, std)
        return cls(mean, std, range_feature)

    def apply(self, feats: ContextFeatures) -> np.ndarray:
        X = (feats.raw(self.range_feature) - self.mean) / self.std
        X[feats.v_null, 2:4] = 0.0
        return X


def anchors_to_latent(anchors) -> np.ndarray:
    A = np.asarray(anchors, dtype=float)
    return A.reshape(A.shape[:-2] + (-1,)) / LATENT_SCALE


def latent_to_anchors(x) -> np.ndarray:
    A = np.asarray(x, dtype=float).reshape(np.shape(x)[:-1] + (ANCHOR_COUNT, 3)) * LATENT_SCALE
    A[..., 0, :] = 0.0
    A[..., 2] = 0.0
    return A


# ---------------------------------------------------------------- policy


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 150
    max_steps: int | None = None
    seed: int = 0
    holdout_fraction: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_decay: str = "cosine"  # or "none"
    # std (rad) of a random rotation applied to the heading token of each
    # training draw; 0 feeds the stored token unchanged
    token_noise: float = 0.3


@dataclass
class TrainingLog:
    epoch_loss: list[float] = field(default_factory=list)
    step_loss: list[float] = field(default_factory=list)
    holdout_loss: float | None = None
    steps: int = 0


class DiffusionPolicy:
    """Trained denoiser plus everything needed to sample from it."""

    def __init__(self, cfg: ModelConfig, params, stats: FeatureStats,
                 kind: RepresentationKind = RepresentationKind.BSPLINE, config_hash: str = ""):
        self.cfg = cfg
        self.params = params
        self.stats = stats
        self.kind = RepresentationKind(kind)
        self.config_hash = config_hash
        self.sched = make_schedule(cfg.S, cfg.schedule)
        self.last_reverse_steps = 0

    @classmethod
    def initialize(cls, cfg: ModelConfig, stats: FeatureStats | None = None, seed: int = 0, **kw):
        if stats is None:
            stats = FeatureStats(np.zeros(cfg.ctx_dim), np.ones(cfg.ctx_dim), cfg.range_feature)
        return cls(cfg, init_params(cfg, np.random.default_rng(seed)), stats, **kw)

    # -- network

    def denoise(self, x_s, ctx: ContextFeatures, s) -> np.ndarray:
        """Predicted v for latents ``x_s`` at step(s) ``s``; one context row per latent or one shared."""
        x_s = np.atleast_2d(np.asarray(x_s, dtype=float))
        if x_s.shape[1] != self.cfg.latent_dim:
            raise ValueError(f"latent dim {x_s.shape[1]} != {self.cfg.latent_dim}")
        c = self.stats.apply(ctx)
        null = ctx.v_null.astype(float)
        if c.shape[1] != self.cfg.ctx_dim:
            raise ValueError(f"context dim {c.shape[1]} != {self.cfg.ctx_dim}")
        if len(c) == 1 and len(x_s) > 1:
            c = np.repeat(c, len(x_s), axis=0)
            null = np.repeat(null, len(x_s))
        s = np.broadcast_to(np.asarray(s), (len(x_s),))
        inp = np.concatenate([x_s, timestep_embedding(s, self.cfg.temb_dim, self.cfg.S), c], axis=1)
        return mlp_forward(self.params, inp, null)

    # -- sampling

    def _reverse(self, x, ctx, start_step, rng, mode):
        sched = self.sched
        steps = 0
        for s in range(start_step, 0, -1):
            v = self.denoise(x, ctx, s)
            x0, eps = predict_x0_eps(sched, x, v, s)
            if self.cfg.x0_clip:
                x0 = np.clip(x0, -self.cfg.x0_clip, self.cfg.x0_clip)
                eps = (x - sched.alpha[s] * x0) / sched.sigma[s]
            a_prev, s_prev = sched.alpha[s - 1], sched.sigma[s - 1]
            if mode == "deterministic" or s == 1:
                x = a_prev * x0 + s_prev * eps
            elif mode == "ancestral":
                a_t = sched.alpha[s] / a_prev
                var_t = sched.sigma[s] ** 2 - a_t**2 * s_prev**2
                mean = (a_t * s_prev**2 * x + a_prev * var_t * x0) / sched.sigma[s] ** 2
                std = math.sqrt(max(var_t * s_prev**2 / sched.sigma[s] ** 2, 0.0))
                x = mean + std * rng.standard_normal(x.shape)
            else:
                raise ValueError(f"unknown sampling mode {mode!r}")
            steps += 1
        self.last_reverse_steps = steps
        return x

    def sample(self, ctx: ContextFeatures, K: int = 16, rng=None, mode: str = "ancestral",
               init_noise=None) -> np.ndarray:
        """``K`` anchor sets ``(K, 8, 3)`` from a cold start."""
        if K < 1:
            raise ValueError("K must be >= 1")
        rng = np.random.default_rng() if rng is None else rng
        x = rng.standard_normal((K, self.cfg.latent_dim)) if init_noise is None else np.array(init_noise, float)
        x = self._reverse(x, ctx, self.sched.S, rng, mode)
        return latent_to_anchors(x)

    def warm_start_sample(self, prev_anchors, ctx: ContextFeatures, K: int = 16, start_step: int = 6,
                          rng=None, mode: str = "ancestral") -> np.ndarray:
        """Re-noise a previous solution to ``start_step`` and denoise from there."""
        if not 1 <= start_step <= self.sched.S:
            raise ValueError(f"start_step must be in [1, {self.sched.S}]")
        rng = np.random.default_rng() if rng is None else rng
        x0 = np.broadcast_to(anchors_to_latent(prev_anchors), (K, self.cfg.latent_dim))
        x = forward_noise(self.sched, x0, start_step, rng.standard_normal((K, self.cfg.latent_dim)))
        x = self._reverse(x, ctx, start_step, rng, mode)
        return latent_to_anchors(x)

    # -- persistence

    def save(self, path) -> None:
        Path(path).write_bytes(checkpoint_bytes(self))

    @classmethod
    def load(cls, path) -> "DiffusionPolicy":
        return checkpoint_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------- training


def _dataset_arrays(ds):
    ctx = ContextFeatures(ds.goal, ds.v_prev, ds.v_null, ds.ranges)
    return ctx, anchors_to_latent(ds.anchors)


def evaluate_vloss(policy: DiffusionPolicy, ds, seed: int = 123, repeats: int = 4) -> float:
    """Monte Carlo v-loss on a dataset (fixed noise draws)."""
    rng = np.random.default_rng(seed)
    ctx, x0 = _dataset_arrays(ds)
    C = policy.stats.apply(ctx)
    losses = []
    for _ in range(repeats):
        s = rng.integers(1, policy.cfg.S + 1, len(x0))
        eps = rng.standard_normal(x0.shape)
        loss, _ = vloss_and_grad(policy.params, policy.cfg, policy.sched, x0, C, ctx.v_null, s, eps)
        losses.append(loss)
    return float(np.mean(losses))


def _jitter_token(C, v_prev, null, stats: FeatureStats, angle):
    c, s = np.cos(angle), np.sin(angle)
    v = np.column_stack([c * v_prev[:, 0] - s * v_prev[:, 1], s * v_prev[:, 0] + c * v_prev[:, 1]])
    C = C.copy()
    C[:, 2:4] = np.where(null[:, None], 0.0, (v - stats.mean[2:4]) / stats.std[2:4])
    return C


def train(ds, model_cfg: ModelConfig = ModelConfig(), cfg: TrainConfig = TrainConfig(),
          config_hash: str = "") -> tuple[DiffusionPolicy, TrainingLog]:
    """Adam on the v-prediction loss with uniform steps and fresh noise per sample."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(cfg.seed)
    n = len(ds)
    order = np.arange(n)
    holdout = None
    if cfg.holdout_fraction > 0:
        order = rng.permutation(n)
        n_hold = max(1, int(round(cfg.holdout_fraction * n)))
        holdout, order = order[:n_hold], order[n_hold:]
    train_ds = ds.subset(np.sort(order))
    ctx, x0_all = _dataset_arrays(train_ds)
    stats = FeatureStats.fit(ctx, model_cfg.range_feature)
    C_all = stats.apply(ctx)
    null_all = ctx.v_null
    policy = DiffusionPolicy(model_cfg, init_params(model_cfg, rng), stats, getattr(ds, "kind", "bspline"),
                             config_hash)
    params = policy.params
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v2 = {k: np.zeros_like(v) for k, v in params.items()}
    log_ = TrainingLog()
    step = 0
    bs = cfg.batch_size
    if cfg.max_steps is not None:
        total_steps = cfg.max_steps
    else:
        total_steps = cfg.epochs * max(1, math.ceil(len(x0_all) / bs))
    done = False
    epoch = 0
    while not done:
        if len(x0_all) >= bs:
            perm = rng.permutation(len(x0_all))
        else:
            # tiny datasets: one resampled full batch per epoch
            perm = rng.integers(0, len(x0_all), bs)
        losses = []
        for i in range(0, len(perm), bs):
            idx = perm[i : i + bs]
            s = rng.integers(1, model_cfg.S + 1, len(idx))
            eps = rng.standard_normal((len(idx), model_cfg.latent_dim))
            C = C_all[idx]
            if cfg.token_noise > 0:
                C = _jitter_token(C, ctx.v_prev[idx], null_all[idx], stats, rng.normal(0.0, cfg.token_noise, len(idx)))
            loss, grads = vloss_and_grad(params, model_cfg, policy.sched, x0_all[idx], C,
                                         null_all[idx], s, eps)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"loss became {loss} at step {step} (epoch {epoch})")
            step += 1
            lr = cfg.lr
            if cfg.lr_decay == "cosine":
                lr = cfg.lr * 0.5 * (1 + math.cos(math.pi * min(step - 1, total_steps) / total_steps))
            b1c = 1 - cfg.beta1**step
            b2c = 1 - cfg.beta2**step
            for k in params:
                m[k] = cfg.beta1 * m[k] + (1 - cfg.beta1) * grads[k]
                v2[k] = cfg.beta2 * v2[k] + (1 - cfg.beta2) * grads[k] ** 2
                params[k] -= lr * (m[k] / b1c) / (np.sqrt(v2[k] / b2c) + cfg.adam_eps)
            losses.append(loss)
            log_.step_loss.append(loss)
            if cfg.max_steps is not None and step >= cfg.max_steps:
                done = True
                break
        log_.epoch_loss.append(float(np.mean(losses)))
        log.debug("epoch %d loss %.5f", epoch, log_.epoch_loss[-1])
        epoch += 1
        if cfg.max_steps is None and epoch >= cfg.epochs:
            done = True
    log_.steps = step
    if holdout is not None:
        log_.holdout_loss = evaluate_vloss(policy, ds.subset(np.sort(holdout)))
    return policy, log_


# ---------------------------------------------------------------- checkpoint

_CK_HEAD = struct.Struct("<4sHIIIIIIB16s")
_SCHEDULES = ("cosine", "linear")


def checkpoint_bytes(policy: DiffusionPolicy) -> bytes:
    c = policy.cfg
    head = _CK_HEAD.pack(CKPT_MAGIC, CKPT_VERSION, c.latent_dim, c.ctx_dim, c.hidden, c.temb_dim, c.beams,
                         c.S, _SCHEDULES.index(c.schedule), policy.config_hash.encode()[:16].ljust(16, b"\0"))
    extra = struct.pack("<BdB", policy.kind.code, c.x0_clip, _RANGE_FEATURES.index(c.range_feature))
    stats = np.concatenate([policy.stats.mean, policy.stats.std]).astype("<f8").tobytes()
    blob = np.concatenate([policy.params[k].ravel() for k in PARAM_NAMES]).astype("<f8").tobytes()
    return head + extra + stats + blob


def checkpoint_from_bytes(data: bytes, expect: ModelConfig | None = None) -> DiffusionPolicy:
    magic, version, latent, ctx_dim, hidden, temb, beams, S, sched, chash = _CK_HEAD.unpack_from(data)
    if magic != CKPT_MAGIC:
        raise ValueError(f"bad checkpoint magic {magic!r}")
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = _CK_HEAD.size
    kind, clip, rf = struct.unpack_from("<BdB", data, off)
    off += struct.calcsize("<BdB")
    cfg = ModelConfig(hidden=hidden, temb_dim=temb, latent_dim=latent, beams=beams, S=S,
                      schedule=_SCHEDULES[sched], x0_clip=clip, range_feature=_RANGE_FEATURES[rf])
    if cfg.ctx_dim != ctx_dim:
        raise ValueError("checkpoint context dims are inconsistent")
    if expect is not None and (expect.hidden, expect.beams, expect.S) != (hidden, beams, S):
        raise ValueError("checkpoint architecture does not match the configured model")
    stats = np.frombuffer(data, dtype="<f8", count=2 * ctx_dim, offset=off).astype(float)
    off += 16 * ctx_dim
    flat = np.frombuffer(data, dtype="<f8", offset=off).astype(float)
    shapes = param_shapes(cfg)
    total = sum(int(np.prod(shapes[k])) for k in PARAM_NAMES)
    if flat.size != total:
        raise ValueError(f"checkpoint holds {flat.size} parameters, architecture needs {total}")
    params, i = {}, 0
    for k in PARAM_NAMES:
        size = int(np.prod(shapes[k]))
        params[k] = flat[i : i + size].reshape(shapes[k]).copy()
        i += size
    return DiffusionPolicy(cfg, params, FeatureStats(stats[:ctx_dim], stats[ctx_dim:], cfg.range_feature),
                           RepresentationKind.from_code(kind), chash.rstrip(b"\0").decode())


def model_config_dict(cfg: ModelConfig) -> dict:
    return asdict(cfg)
