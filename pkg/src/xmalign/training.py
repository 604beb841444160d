"""Training procedures: visual expert + generator pretraining, audio encoder
alignment, and generator inversion.
"""

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset
from .embedding import normalize_rows
from .errors import ContractError, NumericError
from .networks import Activation, Adam, AdamConfig, InputKind, Network, NetworkSpec
from .objectives import LossVariant, loss_total, normalize_backward
from .pairs import PairSource, annotate_dataset, selected_indices

MAX_HALVINGS = 20


@dataclass
class VisualConfig:
    embed_dim: int = 32
    hidden: tuple = (64,)
    generator_hidden: tuple = (128,)
    noise_dim: int = 8
    epochs: int = 60
    refit_epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 1e-5


@dataclass
class AudioConfig:
    hidden: tuple = (64, 64)
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 1e-5
    epochs: int = 50
    patience: int = 10


@dataclass
class TrainingLog:
    losses: list = field(default_factory=list)
    val_metric: list = field(default_factory=list)
    wall_clock: list = field(default_factory=list)
    initial_loss: float = float("nan")
    best_epoch: int = -1
    stopped_epoch: int = -1

    def to_json(self, include_wall_clock: bool = True) -> dict:
        d = asdict(self)
        if not include_wall_clock:
            d.pop("wall_clock")
        return d


def _rngs(seed: int, *purposes: int):
    return [np.random.default_rng([int(seed), p]) for p in purposes]


def _batches(n, batch_size, rng, min_size=1):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        if len(idx) >= min_size:
            yield idx


def event_frames(dataset: Dataset, rows) -> np.ndarray:
    mask = dataset.masks[rows]
    return dataset.visual[rows][mask].astype(np.float64)


def condition(z):
    """Generator conditioning vector: the unit-normalized embedding."""
    return normalize_rows(z)


def _recon_loss(f_v, g, x, z_noise):
    z, c_enc = f_v.forward_cached(x)
    zhat = condition(z)
    out, c_gen = g.forward_cached(np.concatenate([z_noise, zhat], axis=1))
    diff = out - x
    value = float(np.mean(np.sum(diff * diff, axis=1)))
    return value, (z, zhat, c_enc), c_gen, diff


def _fit_epoch(f_v, g, x_train, config, opt, params, batch_rng, noise_rng, train_encoder):
    total, count = 0.0, 0
    for idx in _batches(x_train.shape[0], config.batch_size, batch_rng):
        x = x_train[idx]
        zn = noise_rng.standard_normal((len(idx), config.noise_dim))
        value, (z, zhat, c_enc), c_gen, diff = _recon_loss(f_v, g, x, zn)
        if not np.isfinite(value):
            raise NumericError("non-finite reconstruction loss")
        g_grads, g_in = g.backward(c_gen, 2.0 * diff / len(idx))
        if train_encoder:
            e_grads, _ = f_v.backward(c_enc, normalize_backward(z, zhat, g_in[:, config.noise_dim:]))
            opt.step(params, e_grads + g_grads)
        else:
            opt.step(params, g_grads)
        total += value * len(idx)
        count += len(idx)
    return total / count


def pretrain_visual(dataset: Dataset, config: VisualConfig = VisualConfig(), seed: int = 1):
    """Fit the visual expert f_V and generator G as an autoencoder on event
    frames of the train split, with G conditioned on unit-normalized f_V
    features and fresh Gaussian noise at every step.

    After the joint stage, the mean raw embedding over the training frames is
    subtracted from f_V's output bias and G alone is refit for
    ``config.refit_epochs`` epochs on the centred features. Zero epochs is a
    no-op. Returns ``(f_V, G, TrainingLog)``; both networks come back frozen.
    """
    splits = dataset.split_indices()
    x_train = event_frames(dataset, splits["train"])
    x_val = event_frames(dataset, splits["val"])
    if x_train.shape[0] == 0:
        raise ContractError("no training frames")
    d_v = dataset.header.visual_dim
    init_rng, batch_rng, noise_rng, val_rng = _rngs(seed, 10, 11, 12, 13)
    f_v = Network.init(NetworkSpec((d_v, *config.hidden, config.embed_dim), Activation.RELU), init_rng)
    g = Network.init(
        NetworkSpec((config.noise_dim + config.embed_dim, *config.generator_hidden, d_v), Activation.TANH), init_rng
    )
    adam = AdamConfig(config.lr, config.weight_decay)
    val_noise = val_rng.standard_normal((x_val.shape[0], config.noise_dim))

    def record(loss, t0):
        log.losses.append(loss)
        log.val_metric.append(_recon_loss(f_v, g, x_val, val_noise)[0] if len(x_val) else float("nan"))
        log.wall_clock.append(time.perf_counter() - t0)

    log = TrainingLog()
    log.initial_loss = _recon_loss(f_v, g, x_train, noise_rng.standard_normal((x_train.shape[0], config.noise_dim)))[0]
    params = f_v.params + g.params
    opt = Adam(params, adam)
    for _ in range(config.epochs):
        t0 = time.perf_counter()
        record(_fit_epoch(f_v, g, x_train, config, opt, params, batch_rng, noise_rng, True), t0)
    if config.epochs > 0:
        f_v.biases[-1] -= f_v.forward(x_train).mean(axis=0)
        opt = Adam(g.params, adam)
        for _ in range(config.refit_epochs):
            t0 = time.perf_counter()
            record(_fit_epoch(f_v, g, x_train, config, opt, g.params, batch_rng, noise_rng, False), t0)
    log.best_epoch = log.stopped_epoch = len(log.losses) - 1
    return f_v.freeze(), g.freeze(), log


def audio_windows(dataset: Dataset, rows, centers, duration: int) -> np.ndarray:
    """(len(rows), duration, D_A) windows centred on each moment, shifted to stay inside the clip."""
    t_len = dataset.header.timesteps
    if not 1 <= duration <= t_len:
        raise ContractError(f"duration {duration} outside [1, {t_len}]")
    starts = np.clip(np.asarray(centers) - duration // 2, 0, t_len - duration)
    offsets = starts[:, None] + np.arange(duration)[None, :]
    return dataset.audio[np.asarray(rows)[:, None], offsets].astype(np.float64)


@dataclass
class AlignmentData:
    """Audio windows and frozen visual targets for one split."""

    rows: np.ndarray
    audio: np.ndarray
    visual_targets: np.ndarray
    moments: np.ndarray


def training_pairs(dataset, f_v, rows, pair_source, duration) -> AlignmentData:
    """Training pairs: the visual frame at each clip's chosen moment, and the
    audio window of ``duration`` timesteps centred on that moment."""
    moments = selected_indices(annotate_dataset(dataset, pair_source, indices=rows))
    if len(moments) == 0:
        raise ContractError("empty selection")
    frames = dataset.visual[rows, moments].astype(np.float64)
    return AlignmentData(np.asarray(rows), audio_windows(dataset, rows, moments, duration), f_v.forward(frames), moments)


def inference_pairs(dataset, f_v, rows, duration) -> AlignmentData:
    """Evaluation pairs shared by every training variant.

    The visual side is the top-1 selected frame. The audio side is a centre
    crop of ``duration`` timesteps, because at inference time there is no
    video to localize the sounding moment with.
    """
    moments = selected_indices(annotate_dataset(dataset, PairSource.SELECTED_TOP1, indices=rows))
    frames = dataset.visual[rows, moments].astype(np.float64)
    centers = np.full(len(rows), dataset.header.timesteps // 2)
    return AlignmentData(np.asarray(rows), audio_windows(dataset, rows, centers, duration), f_v.forward(frames), moments)


def train_audio_encoder(
    dataset: Dataset,
    f_v: Network,
    variant: LossVariant = LossVariant(),
    pair_source=PairSource.SELECTED_TOP1,
    duration_timesteps: int = 20,
    config: AudioConfig = AudioConfig(),
    seed: int = 1,
):
    """Align a temporal audio encoder to the frozen visual expert.

    No class labels are used. Early stopping tracks the alignment loss on
    the validation split, measured under the inference protocol (centre
    crop audio against the top-1 frame). Returns the encoder with the
    lowest validation loss and its TrainingLog, whose ``val_metric`` holds
    the per-epoch validation losses.
    """
    splits = dataset.split_indices()
    train = training_pairs(dataset, f_v, splits["train"], pair_source, duration_timesteps)
    val = inference_pairs(dataset, f_v, splits["val"], duration_timesteps)

    init_rng, batch_rng = _rngs(seed, 20, 21)
    spec = NetworkSpec(
        (dataset.header.audio_dim, *config.hidden, f_v.spec.out_dim), Activation.RELU, InputKind.TEMPORAL_SEQUENCE
    )
    f_a = Network.init(spec, init_rng)
    opt = Adam(f_a.params, AdamConfig(config.lr, config.weight_decay))

    def val_loss(net):
        return loss_total(net.forward(val.audio), val.visual_targets, variant).value

    log = TrainingLog()
    log.initial_loss = loss_total(f_a.forward(train.audio), train.visual_targets, variant).value
    best, best_score, since_best = f_a.copy(), val_loss(f_a), 0
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        total, count = 0.0, 0
        for idx in _batches(len(train.rows), config.batch_size, batch_rng, min_size=2):
            z_a, cache = f_a.forward_cached(train.audio[idx])
            res = loss_total(z_a, train.visual_targets[idx], variant)
            grads, _ = f_a.backward(cache, res.grad_audio)
            opt.step(f_a.params, grads)
            total += res.value * len(idx)
            count += len(idx)
        score = val_loss(f_a)
        log.losses.append(total / count)
        log.val_metric.append(score)
        log.wall_clock.append(time.perf_counter() - t0)
        log.stopped_epoch = epoch
        if score < best_score:
            best, best_score, since_best = f_a.copy(), score, 0
            log.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    return best, log


@dataclass
class InversionResult:
    z_noise: np.ndarray
    z_cond: np.ndarray
    residual: float
    history: list


def _lbfgs_direction(grad, memory):
    # two-loop recursion over stored (s, y, 1 / y.s) curvature pairs, newest last
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(memory):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if memory:
        s, y, _ = memory[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(memory, reversed(alphas)):
        q += (a - rho * (y @ q)) * s
    return -q


def invert_generator(params_G: Network, target, noise_dim: int, steps: int = 3000,
                     step_size: float = 0.05, tol: float = 1e-12, memory: int = 10) -> InversionResult:
    """Minimize ||G(z_noise, z_cond) - target||^2 over the latents, starting from zero.

    Directions come from a limited-memory quasi-Newton model of the last
    ``memory`` gradient differences (plain steepest descent with
    ``step_size`` on the first step or after a reset). A trial step that
    raises the objective is retried at half length, at most 20 times, so the
    recorded residuals never increase.
    """
    target = np.asarray(target, dtype=np.float64)
    z = np.zeros(params_G.spec.in_dim)

    def objective(latent):
        out, cache = params_G.forward_cached(latent)
        diff = out - target
        value = float(diff @ diff)
        grad = params_G.backward(cache, 2.0 * diff)[1] if np.isfinite(value) else None
        return value, grad

    f, grad = objective(z)
    if not np.isfinite(f):
        raise NumericError("non-finite inversion objective")
    history = [f]
    pairs = []
    for _ in range(steps):
        if f <= tol:
            break
        direction = _lbfgs_direction(grad, pairs)
        if pairs and direction @ grad < 0:
            t = 1.0
        else:
            pairs.clear()
            direction, t = -grad, step_size
        for _ in range(MAX_HALVINGS + 1):
            trial = z + t * direction
            f_new, g_new = objective(trial)
            if np.isfinite(f_new) and f_new <= f:
                break
            t *= 0.5
        else:
            break
        s_k, y_k = trial - z, g_new - grad
        if s_k @ y_k > 1e-12 * np.sqrt((s_k @ s_k) * (y_k @ y_k)):
            pairs.append((s_k, y_k, 1.0 / (s_k @ y_k)))
            del pairs[:-memory]
        z, f, grad = trial, f_new, g_new
        history.append(f)
    return InversionResult(z[:noise_dim].copy(), z[noise_dim:].copy(), f, history)
