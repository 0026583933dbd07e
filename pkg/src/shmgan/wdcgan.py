"""1-D Wasserstein DCGAN with gradient penalty.

Generator: five transpose convolutions (first K0=seg_len/16, s=2, p=0, then
K=4, s=2, p=1), batch-norm + ReLU after the first four and tanh at the end.
Critic: the mirror image with convolutions; leaky-ReLU + dropout after the
first layer, instance-norm + leaky-ReLU after layers 2-4, and a raw score
(or a sigmoid for the classifier) after the last.
"""
from __future__ import annotations

import contextlib
import csv
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import metrics
from .autodiff import AdamWState, Tensor, adamw_step, grad, no_grad, ops
from .autodiff import nn
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .signals import DAMAGED, Segment, stack


class ConfigError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    def __init__(self, message: str, epoch: int, step: int, checkpoint_path=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
        self.checkpoint_path = checkpoint_path


@dataclass
class GanConfig:
    seg_len: int = 1024
    z_channels: int = 100
    z_length: int = 1
    channel_widths: list[int] = field(default_factory=lambda: [256, 128, 64, 32, 1])
    lr_generator: float = 5e-6
    lr_critic: float = 2e-5
    beta1: float = 0.0
    beta2: float = 0.9
    weight_decay: float = 0.01
    critic_iters: int = 12
    lambda_gp: float = 20.0
    minibatch: int = 64
    epochs: int = 235
    critic_dropout_p: float = 0.7
    # None -> 0.1 * std of the training data
    noise_sigma0: float | None = None
    leaky_alpha: float = 0.2
    init_std: float = 0.02
    eval_interval: int = 1
    eval_samples: int = 64
    condition: int = DAMAGED
    seed: int = 0

    def __post_init__(self):
        self.channel_widths = list(self.channel_widths)
        self.validate()

    @property
    def first_kernel(self) -> int:
        return self.seg_len // 16

    def validate(self) -> None:
        problems = []
        if self.seg_len < 16 or self.seg_len % 16:
            problems.append(f"seg_len={self.seg_len} must be a positive multiple of 16 "
                            f"(output length 16*K0 with K0=seg_len/16)")
        if self.z_length != 1:
            problems.append(f"z_length must be 1 for the first transpose conv, got {self.z_length}")
        if len(self.channel_widths) != 5:
            problems.append(f"channel_widths needs 5 entries, got {len(self.channel_widths)}")
        elif self.channel_widths[-1] != 1:
            problems.append("the last generator width must be 1 (single-channel signal)")
        if any(w < 1 for w in self.channel_widths) or self.z_channels < 1:
            problems.append("channel counts must be positive")
        if self.critic_iters < 1:
            problems.append("critic_iters must be >= 1")
        if self.lambda_gp < 0:
            problems.append("lambda_gp must be >= 0")
        if self.lr_generator < 0 or self.lr_critic < 0:
            problems.append("learning rates must be non-negative")
        if self.minibatch < 1 or self.epochs < 1:
            problems.append("minibatch and epochs must be >= 1")
        if not 0.0 <= self.critic_dropout_p < 1.0:
            problems.append("critic_dropout_p must lie in [0, 1)")
        if self.noise_sigma0 is not None and self.noise_sigma0 < 0:
            problems.append("noise_sigma0 must be >= 0")
        if problems:
            raise ConfigError("; ".join(problems))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GanConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown GAN config keys: {sorted(unknown)}")
        return cls(**known)


# --------------------------------------------------------------------------
# networks

def build_generator(cfg: GanConfig, rng: np.random.Generator | None = None) -> nn.Sequential:
    cfg.validate()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    widths = [cfg.z_channels] + cfg.channel_widths
    layers: list[nn.Module] = []
    for i in range(5):
        k, s, p = (cfg.first_kernel, 2, 0) if i == 0 else (4, 2, 1)
        layers.append(nn.ConvTranspose1d(widths[i], widths[i + 1], k, s, p, rng, cfg.init_std))
        if i < 4:
            layers.append(nn.BatchNorm1d(widths[i + 1], rng, init_std=cfg.init_std))
            layers.append(nn.Activation("relu"))
        else:
            layers.append(nn.Activation("tanh"))
    return nn.Sequential(*layers)


class _Squeeze(nn.Module):
    # [B, 1, 1] critic output -> [B]
    def forward(self, x):
        return ops.reshape(x, (x.shape[0],))

    def describe(self):
        return {"type": "Squeeze"}


def build_critic(cfg: GanConfig, head: str = "score", use_dropout: bool = True,
                 rng: np.random.Generator | None = None,
                 dropout_rng: np.random.Generator | None = None) -> nn.Sequential:
    """Critic network; ``head="sigmoid"`` gives the damage classifier."""
    if head not in ("score", "sigmoid"):
        raise ConfigError(f"critic head must be 'score' or 'sigmoid', got {head!r}")
    cfg.validate()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed + 1)
    widths = [1] + cfg.channel_widths[-2::-1] + [1]   # e.g. 1,32,64,128,256,1
    a = cfg.leaky_alpha
    layers: list[nn.Module] = []
    for i in range(5):
        k, s, p = (cfg.first_kernel, 2, 0) if i == 4 else (4, 2, 1)
        layers.append(nn.Conv1d(widths[i], widths[i + 1], k, s, p, rng, cfg.init_std))
        if i == 0:
            layers.append(nn.Activation("leaky_relu", a))
            if use_dropout and cfg.critic_dropout_p > 0:
                layers.append(nn.Dropout(cfg.critic_dropout_p, dropout_rng))
        elif i < 4:
            layers.append(nn.InstanceNorm1d(widths[i + 1], rng, init_std=cfg.init_std))
            layers.append(nn.Activation("leaky_relu", a))
    layers.append(_Squeeze())
    if head == "sigmoid":
        layers.append(nn.Activation("sigmoid"))
    return nn.Sequential(*layers)


def layer_lengths(model: nn.Sequential, length: int) -> list[int]:
    """Signal length after each convolution layer, starting with the input length."""
    out = [length]
    for layer in model.layers:
        if isinstance(layer, nn.Conv1d):
            length = layer.out_len(length)
            out.append(length)
    return out


def conv_shapes(model: nn.Sequential) -> list[tuple]:
    return [tuple(layer.weight.shape) + (layer.stride, layer.padding)
            for layer in model.layers if isinstance(layer, nn.Conv1d)]


def set_dropout_rng(model: nn.Sequential, rng: np.random.Generator | None) -> None:
    for layer in model.layers:
        if isinstance(layer, nn.Dropout):
            layer.rng = rng


@contextlib.contextmanager
def frozen(params: Sequence[Tensor]):
    """Temporarily stop gradient tracking for ``params``."""
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, f in zip(params, flags):
            p.requires_grad = f


# --------------------------------------------------------------------------
# losses

def gradient_penalty(critic: Callable[[Tensor], Tensor], real, fake,
                     rng: np.random.Generator) -> Tensor:
    """mean_b (||d critic(xhat_b) / d xhat_b||_2 - 1)^2 on random interpolates.

    xhat = eps * real + (1 - eps) * fake with eps ~ U(0, 1) per example.  The
    input gradient is recorded, so the result is differentiable w.r.t. the
    critic's parameters.
    """
    real = real.data if isinstance(real, Tensor) else np.asarray(real, dtype=np.float64)
    fake = fake.data if isinstance(fake, Tensor) else np.asarray(fake, dtype=np.float64)
    if real.shape != fake.shape:
        raise ValueError(f"real {real.shape} and fake {fake.shape} must share a shape")
    eps = rng.uniform(0.0, 1.0, size=(real.shape[0],) + (1,) * (real.ndim - 1))
    xhat = Tensor(eps * real + (1.0 - eps) * fake, requires_grad=True)
    scores = critic(xhat)
    if not scores.requires_grad:
        # a critic that ignores its input has zero input gradient
        return Tensor(1.0)
    g = grad(ops.sum(scores), [xhat], create_graph=True)[xhat]
    axes = tuple(range(1, g.ndim))
    norms = ops.l2_norm(g, axis=axes)
    dev = ops.sub(norms, 1.0)
    return ops.mean(ops.mul(dev, dev))


def wgan_losses(critic_real: Tensor, critic_fake: Tensor, gp, lambda_gp: float) -> dict:
    """Critic loss E[D(fake)] - E[D(real)] + lambda*gp and generator loss -E[D(fake)]."""
    mean_real = ops.mean(critic_real)
    mean_fake = ops.mean(critic_fake)
    critic_loss = ops.add(ops.sub(mean_fake, mean_real), ops.mul(gp, lambda_gp))
    return {"critic_loss": critic_loss, "generator_loss": ops.neg(mean_fake)}


def input_noise_sigma(epoch: int, cfg: GanConfig, sigma0: float | None = None) -> float:
    """Linearly decaying std of the Gaussian noise added to the critic's real inputs."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    s0 = cfg.noise_sigma0 if sigma0 is None else sigma0
    if s0 is None:
        raise ValueError("noise sigma0 unresolved; pass sigma0 or set cfg.noise_sigma0")
    return s0 * max(0.0, 1.0 - epoch / cfg.epochs)


# --------------------------------------------------------------------------
# training

@dataclass
class EpochRecord:
    epoch: int
    critic_loss: float
    generator_loss: float
    fid_median: float
    sigma_noise: float
    wall_clock_s: float


@dataclass
class GanTrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    COLUMNS = ("epoch", "critic_loss", "generator_loss", "fid_median", "sigma_noise", "wall_clock_s")

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.COLUMNS)
            for r in self.records:
                w.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in self.COLUMNS[1:]])
        return path

    @classmethod
    def read_csv(cls, path) -> "GanTrainHistory":
        out = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                out.records.append(EpochRecord(int(row["epoch"]), *(float(row[c]) for c in cls.COLUMNS[1:])))
        return out


@dataclass
class GanState:
    """Live training objects: both networks, their optimizers and RNG streams."""
    cfg: GanConfig
    generator: nn.Sequential
    critic: nn.Sequential
    opt_g: AdamWState
    opt_c: AdamWState
    rngs: dict[str, np.random.Generator]
    sigma0: float

    def checkpoint(self, history_len: int = 0) -> Checkpoint:
        return Checkpoint(
            kind="gan", config=self.cfg.to_dict(),
            arch={"generator": self.generator.describe(), "critic": self.critic.describe()},
            weights={"generator": self.generator.state_dict(), "critic": self.critic.state_dict()},
            optimizers={"generator": self.opt_g, "critic": self.opt_c},
            rng_state={k: g.bit_generator.state for k, g in self.rngs.items()},
            extra={"sigma0": self.sigma0, "epochs_done": history_len},
        )


RNG_STREAMS = ("init", "shuffle", "noise", "gp", "z", "dropout", "eval")


def _make_rngs(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(RNG_STREAMS))
    return {name: np.random.Generator(np.random.PCG64(s)) for name, s in zip(RNG_STREAMS, children)}


def init_gan(cfg: GanConfig, data_std: float = 1.0) -> GanState:
    rngs = _make_rngs(cfg.seed)
    gen = build_generator(cfg, rngs["init"])
    critic = build_critic(cfg, "score", True, rngs["init"], rngs["dropout"])
    hyper = dict(beta1=cfg.beta1, beta2=cfg.beta2, weight_decay=cfg.weight_decay)
    sigma0 = 0.1 * data_std if cfg.noise_sigma0 is None else cfg.noise_sigma0
    return GanState(cfg, gen, critic, AdamWState(lr=cfg.lr_generator, **hyper),
                    AdamWState(lr=cfg.lr_critic, **hyper), rngs, float(sigma0))


def sample_z(cfg: GanConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((n, cfg.z_channels, cfg.z_length))


def fid_eval_hook(real, n: int = 64, seed: int = 12345) -> Callable:
    """Median per-pair FID of ``n`` fixed-noise generator outputs against random real segments."""
    if not isinstance(real, np.ndarray):
        real = stack(real)
    rng = np.random.default_rng(seed)
    pairs = rng.integers(0, real.shape[0], size=n)
    z_rng_seed = int(rng.integers(2**31))

    def hook(state: GanState, epoch: int) -> dict:
        z = sample_z(state.cfg, n, np.random.default_rng(z_rng_seed))
        fake = run_generator(state.generator, z)
        scores = [metrics.fid_pair(real[j, 0], fake[i, 0]) for i, j in enumerate(pairs)]
        return {"fid_median": float(np.median(scores))}

    return hook


def run_generator(generator: nn.Sequential, z: np.ndarray) -> np.ndarray:
    """Eval-mode forward pass without recording a graph."""
    was = generator.training
    generator.eval()
    try:
        with no_grad():
            return generator(Tensor(z)).data
    finally:
        generator.train(was)


def _finite_or_raise(value: float, what: str, epoch: int, step: int, state: GanState,
                     dump_path) -> None:
    if math.isfinite(value):
        return
    path = None
    if dump_path is not None:
        path = save_checkpoint(state.checkpoint(epoch), dump_path)
    raise DivergenceError(f"{what} became non-finite at epoch {epoch}, step {step}",
                          epoch, step, path)


def critic_step(state: GanState, real: np.ndarray, sigma: float) -> float:
    cfg, rngs = state.cfg, state.rngs
    with no_grad():
        fake = state.generator(Tensor(sample_z(cfg, real.shape[0], rngs["z"]))).data
    if sigma > 0:
        real = real + rngs["noise"].normal(0.0, sigma, real.shape)
    state.critic.train()
    params = state.critic.parameters()
    d_real = state.critic(Tensor(real))
    d_fake = state.critic(Tensor(fake))
    gp = gradient_penalty(state.critic, real, fake, rngs["gp"]) if cfg.lambda_gp > 0 else Tensor(0.0)
    loss = wgan_losses(d_real, d_fake, gp, cfg.lambda_gp)["critic_loss"]
    grads = grad(loss, params)
    adamw_step(params, [grads[p] for p in params], state.opt_c)
    return loss.item()


def generator_step(state: GanState, batch: int) -> float:
    cfg = state.cfg
    z = Tensor(sample_z(cfg, batch, state.rngs["z"]))
    params = state.generator.parameters()
    state.critic.eval()   # no input noise, no dropout for the generator's pass
    try:
        with frozen(state.critic.parameters()):
            loss = ops.neg(ops.mean(state.critic(state.generator(z))))
            grads = grad(loss, params)
    finally:
        state.critic.train()
    adamw_step(params, [grads[p] for p in params], state.opt_g)
    return loss.item()


def train_gan(cfg: GanConfig, real_segments: Sequence[Segment] | np.ndarray,
              eval_hook: Callable | None = None, divergence_dump=None,
              progress: Callable[[EpochRecord], None] | None = None,
              state: GanState | None = None):
    """Train generator and critic; returns ``(checkpoint, history, state)``.

    An epoch is one shuffled pass over the real segments by the critic; a
    generator update follows every ``critic_iters`` critic updates.
    """
    real = stack(real_segments) if not isinstance(real_segments, np.ndarray) else real_segments
    if real.ndim == 2:
        real = real[:, None, :]
    if real.shape[-1] != cfg.seg_len:
        raise ConfigError(f"segments have length {real.shape[-1]}, config expects {cfg.seg_len}")
    n = real.shape[0]
    if n < cfg.minibatch:
        raise ConfigError(f"{n} segments is fewer than one minibatch of {cfg.minibatch}")
    if state is None:
        state = init_gan(cfg, float(real.std()))
    if eval_hook is None:
        eval_hook = fid_eval_hook(real, min(cfg.eval_samples, n), seed=cfg.seed + 7)
    history = GanTrainHistory()
    state.generator.train()
    state.critic.train()
    critic_count = 0
    last_g = float("nan")
    t0 = time.perf_counter()
    n_batches = n // cfg.minibatch
    for epoch in range(cfg.epochs):
        sigma = input_noise_sigma(epoch, cfg, state.sigma0)
        order = state.rngs["shuffle"].permutation(n)
        c_losses, g_losses = [], []
        for b in range(n_batches):
            batch = real[order[b * cfg.minibatch:(b + 1) * cfg.minibatch]]
            c_loss = critic_step(state, batch, sigma)
            _finite_or_raise(c_loss, "critic loss", epoch, critic_count, state, divergence_dump)
            c_losses.append(c_loss)
            critic_count += 1
            if critic_count % cfg.critic_iters == 0:
                g_loss = generator_step(state, cfg.minibatch)
                _finite_or_raise(g_loss, "generator loss", epoch, critic_count, state, divergence_dump)
                g_losses.append(g_loss)
                last_g = g_loss
        fid = float("nan")
        if eval_hook is not None and (epoch == 0 or (epoch + 1) % cfg.eval_interval == 0
                                      or epoch == cfg.epochs - 1):
            fid = float(eval_hook(state, epoch).get("fid_median", float("nan")))
        rec = EpochRecord(epoch + 1, float(np.mean(c_losses)),
                          float(np.mean(g_losses)) if g_losses else last_g,
                          fid, sigma, time.perf_counter() - t0)
        history.records.append(rec)
        if progress is not None:
            progress(rec)
    return state.checkpoint(len(history.records)), history, state


# --------------------------------------------------------------------------
# inference

def restore_gan(ckpt: Checkpoint) -> GanState:
    if ckpt.kind != "gan":
        raise CheckpointError(f"expected a gan checkpoint, got {ckpt.kind!r}")
    cfg = GanConfig.from_dict(ckpt.config)
    state = init_gan(cfg)
    state.generator.load_state_dict(ckpt.weights["generator"])
    state.critic.load_state_dict(ckpt.weights["critic"])
    state.opt_g = ckpt.optimizers["generator"]
    state.opt_c = ckpt.optimizers["critic"]
    state.sigma0 = float(ckpt.extra.get("sigma0", state.sigma0))
    if ckpt.rng_state:
        for k, st in ckpt.rng_state.items():
            state.rngs[k].bit_generator.state = st
    set_dropout_rng(state.critic, state.rngs["dropout"])
    return state


def generate(checkpoint: Checkpoint | str | Path, n: int, rng: np.random.Generator,
             batch: int = 256) -> list[Segment]:
    """Draw ``n`` fake segments from a generator in eval mode."""
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    if checkpoint.kind != "gan":
        raise CheckpointError(f"generate needs a gan checkpoint, got {checkpoint.kind!r}")
    cfg = GanConfig.from_dict(checkpoint.config)
    gen = build_generator(cfg)
    gen.load_state_dict(checkpoint.weights["generator"])
    z = sample_z(cfg, n, rng)
    out = np.concatenate([run_generator(gen, z[i:i + batch]) for i in range(0, n, batch)])
    return [Segment(out[i, 0].copy(), cfg.condition, 1, "fake", i) for i in range(n)]
