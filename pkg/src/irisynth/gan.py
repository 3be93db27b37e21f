"""Quality-gated adversarial iris synthesis.

A DCGAN-style generator/discriminator pair with an iris-quality side
channel: the discriminator sees each image together with a constant plane
holding its quality score, and both the real training pool and every
generated batch are filtered so that samples with quality in the first
quartile never reach the discriminator. Losses are the standard adversarial
cross-entropy with the non-saturating generator objective.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as tc
from .tensor import Tensor
from .quality import GrayImage

__all__ = [
    "GanConfig",
    "Generator",
    "Discriminator",
    "TrainLog",
    "build_generator",
    "build_discriminator",
    "attach_quality",
    "d_loss",
    "g_loss",
    "quartile_gate",
    "train",
    "generate",
]

_PROB_EPS = 1e-7


@dataclass
class GanConfig:
    image_size: int = 32
    latent_dim: int = 100
    base_channels: int = 64
    batch_size: int = 64
    learning_rate: float = 2e-4
    steps: int = 2000
    seed: int = 0
    quality_gate: bool = True
    noise_dist: str = "uniform"  # uniform[-1, 1]
    beta1: float = 0.5
    beta2: float = 0.999
    dtype: str = "f32"  # f32 for training runs, f64 for gradient checks
    gate_retries: int = 5

    def __post_init__(self):
        if self.image_size not in (32, 64, 128):
            raise ValueError(f"image_size must be 32, 64 or 128, got {self.image_size}")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.noise_dist != "uniform":
            raise ValueError(f"unsupported noise_dist {self.noise_dist!r}")
        if self.dtype not in ("f32", "f64"):
            raise ValueError(f"dtype must be f32 or f64, got {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "f32" else np.float64


class _Net:
    """Shared parameter bookkeeping for the two networks."""

    def __init__(self, cfg: GanConfig):
        self.cfg = cfg
        self.params: dict[str, Tensor] = {}
        self.bn_stats: dict[str, np.ndarray] = {}

    def _param(self, name, array):
        t = Tensor(np.asarray(array, dtype=self.cfg.np_dtype), requires_grad=True)
        self.params[name] = t
        return t

    def _bn(self, name, channels, rng):
        self._param(f"{name}.gamma", np.ones(channels))
        self._param(f"{name}.beta", np.zeros(channels))
        self.bn_stats[f"{name}.running_mean"] = np.zeros(channels, self.cfg.np_dtype)
        self.bn_stats[f"{name}.running_var"] = np.ones(channels, self.cfg.np_dtype)

    def _apply_bn(self, name, x, training):
        return tc.batchnorm2d(
            x,
            self.params[f"{name}.gamma"],
            self.params[f"{name}.beta"],
            self.bn_stats[f"{name}.running_mean"],
            self.bn_stats[f"{name}.running_var"],
            training,
        )

    def zero_grads(self):
        for p in self.params.values():
            p.zero_grad()

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {name: p.data for name, p in self.params.items()}
        out.update(self.bn_stats)
        return out

    def load_state(self, tensors: dict[str, np.ndarray]):
        for name, p in self.params.items():
            if name not in tensors:
                raise KeyError(f"checkpoint is missing parameter {name!r}")
            if tensors[name].shape != p.data.shape:
                raise ValueError(
                    f"checkpoint tensor {name!r} has shape {tensors[name].shape}, "
                    f"expected {p.data.shape}"
                )
            p.data = tensors[name].astype(self.cfg.np_dtype)
        for name in self.bn_stats:
            if name not in tensors:
                raise KeyError(f"checkpoint is missing statistic {name!r}")
            self.bn_stats[name] = tensors[name].astype(self.cfg.np_dtype)


class Generator(_Net):
    """Dense latent projection, then four stride-2 transposed-conv blocks
    (K=5, batchnorm+relu) ending in a 1-channel tanh image."""

    def __init__(self, cfg: GanConfig, rng: np.random.Generator):
        super().__init__(cfg)
        b = cfg.base_channels
        s0 = cfg.image_size // 16
        if s0 < 1:
            raise ValueError(f"image_size {cfg.image_size} too small for 4 blocks")
        self.s0 = s0
        self.chans = [8 * b, 4 * b, 2 * b, b, 1]
        init = lambda *shape: rng.normal(0.0, 0.02, size=shape)
        self._param("fc.w", init(cfg.latent_dim, 8 * b * s0 * s0))
        self._param("fc.b", np.zeros(8 * b * s0 * s0))
        self._bn("bn0", 8 * b, rng)
        for i in range(4):
            ci, co = self.chans[i], self.chans[i + 1]
            self._param(f"tconv{i}.w", init(ci, co, 5, 5))
            self._param(f"tconv{i}.b", np.zeros(co))
            if i < 3:
                self._bn(f"bn{i + 1}", co, rng)

    def forward(self, z: Tensor, training: bool) -> Tensor:
        cfg = self.cfg
        x = tc.dense(z, self.params["fc.w"], self.params["fc.b"])
        x = x.reshape(z.shape[0], self.chans[0], self.s0, self.s0)
        x = tc.relu(self._apply_bn("bn0", x, training))
        for i in range(4):
            x = tc.conv_transpose2d(
                x,
                self.params[f"tconv{i}.w"],
                self.params[f"tconv{i}.b"],
                stride=2,
                padding=2,
                output_padding=1,
            )
            if i < 3:
                x = tc.relu(self._apply_bn(f"bn{i + 1}", x, training))
        return tc.tanh(x)


class Discriminator(_Net):
    """Four stride-2 conv blocks (K=5, leaky-relu, batchnorm except on the
    first), then a dense layer to one sigmoid probability. Input has two
    channels: the image and its quality plane."""

    def __init__(self, cfg: GanConfig, rng: np.random.Generator):
        super().__init__(cfg)
        b = cfg.base_channels
        self.s0 = cfg.image_size // 16
        self.chans = [2, b, 2 * b, 4 * b, 8 * b]
        init = lambda *shape: rng.normal(0.0, 0.02, size=shape)
        for i in range(4):
            ci, co = self.chans[i], self.chans[i + 1]
            self._param(f"conv{i}.w", init(co, ci, 5, 5))
            self._param(f"conv{i}.b", np.zeros(co))
            if i > 0:
                self._bn(f"bn{i}", co, rng)
        feat = 8 * b * self.s0 * self.s0
        self._param("fc.w", init(feat, 1))
        self._param("fc.b", np.zeros(1))

    def forward(self, x: Tensor, training: bool) -> Tensor:
        for i in range(4):
            x = tc.conv2d(
                x,
                self.params[f"conv{i}.w"],
                self.params[f"conv{i}.b"],
                stride=2,
                padding=2,
            )
            if i > 0:
                x = self._apply_bn(f"bn{i}", x, training)
            x = tc.leaky_relu(x, 0.2)
        n = x.shape[0]
        x = x.reshape(n, self.chans[-1] * self.s0 * self.s0)
        x = tc.dense(x, self.params["fc.w"], self.params["fc.b"])
        return tc.sigmoid(x)


def build_generator(cfg: GanConfig) -> Generator:
    return Generator(cfg, np.random.default_rng(np.random.SeedSequence([cfg.seed, 1])))


def build_discriminator(cfg: GanConfig) -> Discriminator:
    return Discriminator(cfg, np.random.default_rng(np.random.SeedSequence([cfg.seed, 2])))


# -- quality conditioning --------------------------------------------------


def attach_quality(images: Tensor, q: np.ndarray) -> Tensor:
    """Concatenate a constant per-sample quality plane as channel 1.

    ``images`` is an NCHW single-channel batch; ``q`` one score in [0, 1]
    per sample.
    """
    q = np.asarray(q, dtype=images.data.dtype)
    n, c, h, w = images.shape
    if q.shape != (n,):
        raise ValueError(f"need one quality score per image: {q.shape} vs batch {n}")
    if q.size and (q.min() < 0.0 or q.max() > 1.0):
        raise ValueError(f"quality scores must lie in [0, 1], got [{q.min()}, {q.max()}]")
    plane = Tensor(np.broadcast_to(q[:, None, None, None], (n, 1, h, w)).copy())
    return tc.concat_channels(images, plane)


# -- losses ----------------------------------------------------------------


def d_loss(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """-mean[log D(real)] - mean[log(1 - D(fake))], probabilities clamped."""
    if d_real.data.size == 0 or d_fake.data.size == 0:
        raise ValueError("d_loss needs nonempty probability batches")
    pr = d_real.clamp(_PROB_EPS, 1.0 - _PROB_EPS)
    pf = d_fake.clamp(_PROB_EPS, 1.0 - _PROB_EPS)
    return -1.0 * (pr.log().mean() + (1.0 - pf).log().mean())


def g_loss(d_fake: Tensor) -> Tensor:
    """Non-saturating generator loss: -mean[log D(fake)]."""
    if d_fake.data.size == 0:
        raise ValueError("g_loss needs a nonempty probability batch")
    pf = d_fake.clamp(_PROB_EPS, 1.0 - _PROB_EPS)
    return -1.0 * pf.log().mean()


# -- quartile gate ---------------------------------------------------------


def quartile_q1(scores) -> float:
    """First quartile with linear interpolation."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("cannot take a quartile of an empty score list")
    if not np.all(np.isfinite(s)):
        raise ValueError("quartile gate requires finite scores")
    return float(np.percentile(s, 25))


def quartile_gate(items, scores):
    """Keep the items whose score strictly exceeds the first quartile.

    With all scores equal nothing exceeds Q1 and the result is empty; the
    caller is expected to regenerate in that case.
    """
    s = np.asarray(scores, dtype=np.float64)
    if len(items) != s.size:
        raise ValueError(f"{len(items)} items vs {s.size} scores")
    q1 = quartile_q1(s)
    return [item for item, sc in zip(items, s) if sc > q1]


def _gate_indices(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    return np.nonzero(s > quartile_q1(s))[0]


# -- training --------------------------------------------------------------


@dataclass
class TrainLog:
    d_loss: list = field(default_factory=list)
    g_loss: list = field(default_factory=list)
    mean_q_real: list = field(default_factory=list)
    mean_q_fake: list = field(default_factory=list)
    discarded: list = field(default_factory=list)

    def append(self, dl, gl, qr, qf, disc):
        self.d_loss.append(dl)
        self.g_loss.append(gl)
        self.mean_q_real.append(qr)
        self.mean_q_fake.append(qf)
        self.discarded.append(disc)

    def write_csv(self, fh):
        writer = csv.writer(fh)
        writer.writerow(["step", "d_loss", "g_loss", "mean_q_real", "mean_q_fake", "discarded"])
        for i in range(len(self.d_loss)):
            writer.writerow(
                [
                    i,
                    repr(self.d_loss[i]),
                    repr(self.g_loss[i]),
                    repr(self.mean_q_real[i]),
                    repr(self.mean_q_fake[i]),
                    self.discarded[i],
                ]
            )


def _to_unit(images_tanh: np.ndarray) -> np.ndarray:
    return np.clip((images_tanh + 1.0) * 0.5, 0.0, 1.0)


def _score_batch(images_tanh: np.ndarray, quality_fn) -> np.ndarray:
    unit = _to_unit(images_tanh)
    return np.array(
        [quality_fn(GrayImage(unit[i, 0].astype(np.float64))) for i in range(unit.shape[0])]
    )


def train(cfg: GanConfig, real_pool, quality_fn):
    """Quality-gated adversarial training.

    ``real_pool`` is a sequence of GrayImage; ``quality_fn`` maps a
    GrayImage to a score in [0, 1]. The real pool is gated once up front;
    each generated batch is gated per step, with a bounded resample retry
    when the gate empties a batch. Returns (generator, discriminator, log).
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    gen = build_generator(cfg)
    disc = build_discriminator(cfg)
    opt_g = tc.AdamState(cfg.learning_rate, cfg.beta1, cfg.beta2)
    opt_d = tc.AdamState(cfg.learning_rate, cfg.beta1, cfg.beta2)

    pool = np.stack([img.pixels for img in real_pool]).astype(cfg.np_dtype)
    q_pool = np.array([quality_fn(img) for img in real_pool])
    if cfg.quality_gate:
        keep = _gate_indices(q_pool)
        if keep.size == 0:
            raise ValueError("real pool is empty after quality gating")
        pool, q_pool = pool[keep], q_pool[keep]

    log = TrainLog()

    def sample_z(n):
        return rng.uniform(-1.0, 1.0, size=(n, cfg.latent_dim)).astype(cfg.np_dtype)

    def gated_fake_batch():
        """Generate a fake batch, gate it, retry on an empty gate."""
        discarded = 0
        for attempt in range(cfg.gate_retries + 1):
            z = sample_z(cfg.batch_size)
            fake = gen.forward(Tensor(z), training=True)
            q = _score_batch(fake.data, quality_fn)
            if not cfg.quality_gate:
                return fake.data, q, discarded
            keep = _gate_indices(q)
            discarded += cfg.batch_size - keep.size
            if keep.size >= 2:  # batchnorm needs at least 2 in the D batch
                return fake.data[keep], q[keep], discarded
        # gate kept emptying batches: proceed ungated for this step
        return fake.data, q, discarded

    for step in range(cfg.steps):
        # discriminator step
        idx = rng.choice(pool.shape[0], size=min(cfg.batch_size, pool.shape[0]), replace=False)
        real = pool[idx][:, None] * 2.0 - 1.0
        q_real = q_pool[idx]
        fake_data, q_fake, discarded = gated_fake_batch()

        disc.zero_grads()
        d_real = disc.forward(attach_quality(Tensor(real), np.clip(q_real, 0, 1)), True)
        d_fake = disc.forward(attach_quality(Tensor(fake_data), np.clip(q_fake, 0, 1)), True)
        dl = d_loss(d_real, d_fake)
        dl.backward()
        tc.adam_step(disc.params, opt_d)

        # generator step through the frozen discriminator, conditioned on the
        # real batch's quality level: scoring the fakes' own quality here
        # would hand the discriminator a channel the generator's gradient
        # cannot touch, stalling training while outputs score zero
        z = sample_z(cfg.batch_size)
        gen.zero_grads()
        disc.zero_grads()
        fake = gen.forward(Tensor(z), training=True)
        q_g = np.full(cfg.batch_size, np.clip(q_real.mean(), 0.0, 1.0))
        d_out = disc.forward(attach_quality(fake, q_g), True)
        gl = g_loss(d_out)
        gl.backward()
        tc.adam_step(gen.params, opt_g)

        log.append(
            float(dl.data),
            float(gl.data),
            float(q_real.mean()),
            float(q_fake.mean()) if len(q_fake) else 0.0,
            int(discarded),
        )
    return gen, disc, log


def save_generator(path, gen: Generator) -> None:
    from .data import save_checkpoint

    save_checkpoint(path, gen.state_tensors(), {"model": "generator", **asdict(gen.cfg)})


def load_generator(path) -> Generator:
    from .data import load_checkpoint

    tensors, config = load_checkpoint(path)
    if config.pop("model", None) != "generator":
        raise ValueError(f"checkpoint {path} does not hold a generator")
    gen = build_generator(GanConfig(**config))
    gen.load_state(tensors)
    return gen


def generate(gen: Generator, n: int, seed: int) -> list[GrayImage]:
    """Sample n images, mapped from tanh range to [0, 1] intensities."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    out = []
    batch = 64
    for start in range(0, n, batch):
        m = min(batch, n - start)
        z = rng.uniform(-1.0, 1.0, size=(m, gen.cfg.latent_dim)).astype(gen.cfg.np_dtype)
        imgs = gen.forward(Tensor(z), training=False)
        unit = _to_unit(imgs.data)
        out.extend(GrayImage(unit[i, 0].astype(np.float64)) for i in range(m))
    return out
