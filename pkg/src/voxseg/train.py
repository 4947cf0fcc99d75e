"""SGD training: segmentation pretraining and the alternating adversarial loop.

Pretraining minimizes the deeply-supervised segmentation loss for a fixed
number of single-batch SGD steps, with the learning rate dropped once by a
fixed factor.  Adversarial training then alternates: per outer iteration,
k_D discriminator steps on detached generator predictions versus ground
truth, followed by k_G generator steps whose loss adds the non-saturating
adversarial term; the discriminator starts freshly initialized and is frozen
(no parameter or statistics updates) while the generator trains, and vice
versa.  The end-of-iteration weight hand-off is a plain continuation plus a
periodic checkpoint.

Everything is deterministic in (config, dataset): model initialization and
batch order derive from config.seed via independent seed streams, and all
updates run serially.  If a loss goes non-finite the run aborts with
NumericDivergence after persisting the last finite-state checkpoint.

The config file is flat ``key = value`` text with ``#`` comments; keys match
TrainConfig field names (the adversarial weight is spelled ``lambda`` in
files, ``lambda_`` as an attribute).  Logs are tab-separated with a header,
one record per step; wall-clock is the only nondeterministic column.
"""

import ast
import dataclasses
import time
import warnings
from dataclasses import dataclass

import numpy as np

from .checkpoint import checkpoint_bytes, save_checkpoint
from .discriminator import Discriminator, DiscriminatorSpec, discriminator_loss, generator_adversarial_loss
from .errors import ContractViolation, FormatError, NumericDivergence
from .generator import Di2inSpec, Generator, total_loss
from .tensor import Tensor, no_grad
from .volume import batch_sampler


class DiscriminatorCollapseWarning(RuntimeWarning):
    """Discriminator outputs pinned at chance level for many iterations."""


@dataclass
class TrainConfig:
    pretrain_iterations: int = 200
    pretrain_batch: int = 4
    lr_initial: float = 0.01
    lr_drop_at: int = 100
    lr_drop_factor: float = 10.0
    adv_iterations: int = 100
    lambda_: float = 0.01
    k_D: int = 10
    d_batch: int = 8
    k_G: int = 1
    g_batch: int = 4
    seed: int = 0
    checkpoint_every: int = 50
    loss_weights: tuple = (1.0, 1.0, 1.0, 1.0)
    # Model/optimizer knobs the stated defaults leave open.
    g_base_filters: int = 8
    g_levels: int = 4
    g_attach_levels: tuple = (4, 2, 0)
    d_base_filters: int = 8
    d_levels: int = 4
    g_lr_adv: float = 0.001
    d_lr: float = 0.001

    def __post_init__(self):
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        self.g_attach_levels = tuple(int(a) for a in self.g_attach_levels)
        if self.pretrain_iterations < 0 or self.adv_iterations < 0:
            raise ContractViolation("iteration counts must be nonnegative")
        for name in ("pretrain_batch", "d_batch", "g_batch", "k_D", "k_G", "checkpoint_every",
                     "g_base_filters", "g_levels", "d_base_filters", "d_levels"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be a positive count")
        if not 0 <= self.lr_drop_at <= self.pretrain_iterations:
            raise ContractViolation("lr_drop_at must lie in [0, pretrain_iterations]")
        if self.lr_initial <= 0 or self.g_lr_adv <= 0 or self.d_lr <= 0:
            raise ContractViolation("learning rates must be positive")
        if self.lr_drop_factor <= 0:
            raise ContractViolation("lr_drop_factor must be positive")
        if self.lambda_ < 0:
            raise ContractViolation("lambda must be nonnegative")

    def generator_spec(self):
        factors = tuple(2 ** a for a in self.g_attach_levels)
        return Di2inSpec(
            base_filters=self.g_base_filters,
            encoder_levels=self.g_levels,
            branch_attach_levels=self.g_attach_levels,
            branch_upscale_factors=factors,
            loss_weights=self.loss_weights,
        )

    def discriminator_spec(self):
        return DiscriminatorSpec(
            base_filters=self.d_base_filters, conv_levels=self.d_levels
        )


_CONFIG_KEY_TO_ATTR = {"lambda": "lambda_"}
_ATTR_TO_CONFIG_KEY = {"lambda_": "lambda"}


def parse_config(text):
    """Parse flat key = value lines into a TrainConfig."""
    known = {f.name: f for f in dataclasses.fields(TrainConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep or not key or not value:
            raise FormatError(f"config line {lineno} is not 'key = value': {raw!r}")
        attr = _CONFIG_KEY_TO_ATTR.get(key, key)
        if attr not in known:
            raise FormatError(f"unknown config key {key!r} on line {lineno}")
        try:
            values[attr] = ast.literal_eval(value)
        except (SyntaxError, ValueError):
            raise FormatError(f"unparseable value for {key!r} on line {lineno}: {value!r}")
    return TrainConfig(**values)


def render_config(config):
    """Inverse of parse_config; field order, one key per line."""
    lines = []
    for f in dataclasses.fields(TrainConfig):
        key = _ATTR_TO_CONFIG_KEY.get(f.name, f.name)
        lines.append(f"{key} = {getattr(config, f.name)!r}")
    return "\n".join(lines) + "\n"


@dataclass
class TrainLogRecord:
    iteration: int
    phase: str
    loss: float
    lr: float
    d_on_gt: float
    d_on_pred: float
    wall_ms: float

    def line(self):
        return (
            f"{self.iteration}\t{self.phase}\t{self.loss:.8f}\t{self.lr:.6g}\t"
            f"{self.d_on_gt:.6f}\t{self.d_on_pred:.6f}\t{self.wall_ms:.3f}"
        )


LOG_HEADER = "iteration\tphase\tloss\tlr\td_on_gt\td_on_pred\twall_ms"


def write_log(records, path):
    with open(path, "w") as f:
        f.write(LOG_HEADER + "\n")
        for r in records:
            f.write(r.line() + "\n")


def lr_schedule(iteration, config):
    """Initial rate before the drop point, divided by the factor after."""
    if iteration < 0:
        raise ContractViolation("iteration must be nonnegative")
    if iteration < config.lr_drop_at:
        return config.lr_initial
    return config.lr_initial / config.lr_drop_factor


def sgd_step(params, grads, lr):
    """p <- p - lr * g for each pair; grads cleared after a successful step.

    Non-finite gradients abort before any parameter is touched.
    """
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads):
        raise ContractViolation("one gradient per parameter is required")
    for p, g in zip(params, grads):
        if g is None:
            raise ContractViolation(f"missing gradient for parameter shape {p.data.shape}")
        if not np.isfinite(g).all():
            raise NumericDivergence("non-finite gradient; step aborted, parameters untouched")
    for p, g in zip(params, grads):
        p.data -= lr * g
        p.grad = None
    return params


def _seed_streams(seed, count):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(int(seed)).spawn(count)]


def _make_batch(dataset, ids):
    images = np.stack([dataset[i][0].values for i in ids])[:, None]
    labels = np.stack([dataset[i][1].values for i in ids])[:, None]
    return Tensor(images.astype(np.float32)), Tensor(labels.astype(np.float32))


def _check_dataset(dataset):
    if len(dataset) == 0:
        raise ContractViolation("training requires a nonempty dataset")
    extents = dataset[0][0].extents
    for image, label in dataset:
        if image.extents != extents or label.extents != extents:
            raise ContractViolation("all training cases must share extents")


def _step_generator(gen, x, y, weights, lr, adversary=None, lam=0.0):
    """One SGD step on the generator; returns (loss, mean D(pred)) floats."""
    out = gen(x, mode="train")
    loss = total_loss(out, y, weights)
    d_mean = float("nan")
    if adversary is not None:
        d_pred = adversary(out.final_prob, mode="infer")
        d_mean = float(d_pred.data.mean())
        loss = generator_adversarial_loss(loss, d_pred, lam)
    value = float(loss.data)
    if not np.isfinite(value):
        raise NumericDivergence(f"generator loss became {value}")
    gen.zero_grad()
    loss.backward()
    params = gen.parameters()
    sgd_step(params, [p.grad for p in params], lr)
    return value, d_mean


def pretrain_generator(config, dataset, out_dir):
    """Run the segmentation pretraining loop; returns (generator, records).

    Writes pretrained.vxck (and periodic pretrain_NNNN.vxck) under out_dir.
    On numeric divergence the last finite checkpoint is written before the
    error propagates.
    """
    _check_dataset(dataset)
    out_dir = str(out_dir)
    init_seed, sampler_seed = _seed_streams(config.seed, 5)[:2]
    gen = Generator(config.generator_spec(), seed=init_seed)
    records = []
    final_path = f"{out_dir}/pretrained.vxck"
    last_good = checkpoint_bytes(gen)
    batches = batch_sampler(range(len(dataset)), config.pretrain_batch, sampler_seed)
    for it in range(config.pretrain_iterations):
        started = time.perf_counter()
        lr = lr_schedule(it, config)
        x, y = _make_batch(dataset, next(batches))
        try:
            value, _ = _step_generator(gen, x, y, config.loss_weights, lr)
        except NumericDivergence:
            with open(final_path, "wb") as f:
                f.write(last_good)
            raise
        last_good = checkpoint_bytes(gen)
        if (it + 1) % config.checkpoint_every == 0:
            save_checkpoint(gen, f"{out_dir}/pretrain_{it + 1:04d}.vxck")
        records.append(TrainLogRecord(
            iteration=it, phase="pretrain", loss=value, lr=lr,
            d_on_gt=float("nan"), d_on_pred=float("nan"),
            wall_ms=(time.perf_counter() - started) * 1000.0,
        ))
    with open(final_path, "wb") as f:
        f.write(last_good)
    return gen, records


def adversarial_train(config, gen, dataset, out_dir):
    """Alternate discriminator and generator updates from a pretrained start.

    Returns (generator, discriminator, records); writes generator_adv.vxck
    and discriminator_adv.vxck under out_dir.
    """
    _check_dataset(dataset)
    out_dir = str(out_dir)
    # Streams 0-1 belong to pretraining, so a pretrain + adversarial pipeline
    # under one seed never reuses a stream.
    d_seed, d_sampler_seed, g_sampler_seed = _seed_streams(config.seed, 5)[2:]
    disc = Discriminator(config.discriminator_spec(), seed=d_seed)
    records = []
    gen_path = f"{out_dir}/generator_adv.vxck"
    disc_path = f"{out_dir}/discriminator_adv.vxck"
    last_good = (checkpoint_bytes(gen), checkpoint_bytes(disc))

    def persist(state):
        for path, payload in zip((gen_path, disc_path), state):
            with open(path, "wb") as f:
                f.write(payload)

    if config.adv_iterations == 0:
        persist(last_good)
        return gen, disc, records

    d_batches = batch_sampler(range(len(dataset)), config.d_batch, d_sampler_seed)
    g_batches = batch_sampler(range(len(dataset)), config.g_batch, g_sampler_seed)
    d_step = 0
    g_step = 0
    chance_streak = 0
    try:
        for it in range(config.adv_iterations):
            # Discriminator phase: generator fully frozen, including its
            # normalization statistics (inference mode, no_grad).
            gen.set_requires_grad(False)
            disc.set_requires_grad(True)
            it_d_gt = []
            it_d_pred = []
            for _ in range(config.k_D):
                started = time.perf_counter()
                x, y = _make_batch(dataset, next(d_batches))
                with no_grad():
                    pred = gen(x, mode="infer").final_prob
                d_gt = disc(y, mode="train")
                d_pred = disc(pred, mode="train")
                loss = discriminator_loss(d_gt, d_pred)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise NumericDivergence(f"discriminator loss became {value}")
                disc.zero_grad()
                loss.backward()
                params = disc.parameters()
                sgd_step(params, [p.grad for p in params], config.d_lr)
                gt_mean = float(d_gt.data.mean())
                pred_mean = float(d_pred.data.mean())
                it_d_gt.append(gt_mean)
                it_d_pred.append(pred_mean)
                records.append(TrainLogRecord(
                    iteration=d_step, phase="adv_d", loss=value, lr=config.d_lr,
                    d_on_gt=gt_mean, d_on_pred=pred_mean,
                    wall_ms=(time.perf_counter() - started) * 1000.0,
                ))
                d_step += 1

            # Generator phase: discriminator frozen, gradients flow through it.
            gen.set_requires_grad(True)
            disc.set_requires_grad(False)
            for _ in range(config.k_G):
                started = time.perf_counter()
                x, y = _make_batch(dataset, next(g_batches))
                value, d_mean = _step_generator(
                    gen, x, y, config.loss_weights, config.g_lr_adv,
                    adversary=disc, lam=config.lambda_,
                )
                records.append(TrainLogRecord(
                    iteration=g_step, phase="adv_g", loss=value, lr=config.g_lr_adv,
                    d_on_gt=float("nan"), d_on_pred=d_mean,
                    wall_ms=(time.perf_counter() - started) * 1000.0,
                ))
                g_step += 1
            disc.set_requires_grad(True)

            # The end-of-iteration weight hand-off is a plain continuation;
            # a checkpoint marks it at the configured cadence.
            last_good = (checkpoint_bytes(gen), checkpoint_bytes(disc))
            if (it + 1) % config.checkpoint_every == 0:
                persist(last_good)
            near_chance = (
                abs(np.mean(it_d_gt) - 0.5) <= 1e-3
                and abs(np.mean(it_d_pred) - 0.5) <= 1e-3
            )
            chance_streak = chance_streak + 1 if near_chance else 0
            if chance_streak == 10:
                warnings.warn(
                    "discriminator stuck at chance level for 10 consecutive iterations",
                    DiscriminatorCollapseWarning,
                )
    except NumericDivergence:
        persist(last_good)
        raise

    persist((checkpoint_bytes(gen), checkpoint_bytes(disc)))
    return gen, disc, records


def adversarial_probe(gen, disc, images, labels, steps, lr, lam, weights=None):
    """Mean D(G(x)) on a fixed batch before each of `steps` generator updates.

    The discriminator stays frozen throughout; with weights all zero the
    update follows the adversarial term alone.  Returns steps + 1 values
    (the last measured after the final update).
    """
    spec_weights = weights if weights is not None else gen.spec.loss_weights
    disc.set_requires_grad(False)
    means = []
    for step in range(int(steps) + 1):
        out = gen(images, mode="train")
        d_pred = disc(out.final_prob, mode="infer")
        means.append(float(d_pred.data.mean()))
        if step == steps:
            break
        loss = generator_adversarial_loss(
            total_loss(out, labels, spec_weights), d_pred, lam
        )
        gen.zero_grad()
        loss.backward()
        params = gen.parameters()
        sgd_step(params, [p.grad for p in params], lr)
    disc.set_requires_grad(True)
    return means
