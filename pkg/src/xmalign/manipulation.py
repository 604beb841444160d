"""Controllability operations on audio inputs and on conditioning latents,
plus a temporal saliency map for the audio encoder."""

from dataclasses import dataclass

import numpy as np

from .embedding import as_vector
from .errors import ContractError
from .networks import InputKind, Network


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray  # (T, D_A)
    gain: float = 1.0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] < 1:
            raise ContractError(f"audio clip must be (T, D_A), got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ContractError("audio clip has non-finite samples")
        object.__setattr__(self, "samples", s)


def scale_volume(clip: AudioClip, gain: float) -> AudioClip:
    if not gain > 0:
        raise ContractError(f"gain must be positive, got {gain}")
    return AudioClip(clip.samples * gain, clip.gain * gain)


def mix_clips(clips, weights) -> AudioClip:
    """Element-wise weighted sum of equally shaped clips."""
    clips, weights = list(clips), [float(w) for w in weights]
    if not clips:
        raise ContractError("nothing to mix")
    if len(weights) != len(clips):
        raise ContractError("need one weight per clip")
    shape = clips[0].samples.shape
    if any(c.samples.shape != shape for c in clips):
        raise ContractError("clips must share a shape")
    out = weights[0] * clips[0].samples
    for w, c in zip(weights[1:], clips[1:]):
        out = out + w * c.samples
    return AudioClip(out, float(sum(w * c.gain for w, c in zip(weights, clips))))


def _same_shape(*vs):
    vs = [as_vector(v) for v in vs]
    if any(v.shape != vs[0].shape for v in vs):
        raise ContractError("latent dimensions differ")
    return vs


def interpolate_latent(z_a, z_b, lam: float) -> np.ndarray:
    """lam * z_a + (1 - lam) * z_b; coordinates where the two agree are kept as is."""
    z_a, z_b = _same_shape(z_a, z_b)
    if not 0.0 <= lam <= 1.0:
        raise ContractError(f"lambda must lie in [0, 1], got {lam}")
    return np.where(z_a == z_b, z_a, lam * z_a + (1.0 - lam) * z_b)


def edit_direction(z_inv, z_a1, z_a2, lam: float) -> np.ndarray:
    """z_inv + lam * (z_a1 - z_a2)."""
    z_inv, z_a1, z_a2 = _same_shape(z_inv, z_a1, z_a2)
    return z_inv + lam * (z_a1 - z_a2)


@dataclass
class Saliency:
    weights: np.ndarray
    degenerate: bool


def temporal_saliency(f_a: Network, g: Network, clip) -> Saliency:
    """Grad-CAM over the pooling stage of the audio encoder.

    The target scalar is ||G(0, f_A(clip))||^2 on the raw encoder output.
    Normalizing first would strip the radial component of the gradient,
    which is exactly the direction the dominant timesteps push along. Each
    timestep scores the channel mean of gradient times activation at the
    pre-pooling embedding, rectified and normalized to sum to 1. If every
    score is zero the result is uniform and flagged degenerate.
    """
    if f_a.spec.input_kind != InputKind.TEMPORAL_SEQUENCE:
        raise ContractError("saliency needs a temporal encoder")
    samples = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip, dtype=np.float64)
    z, cache = f_a.forward_cached(samples)
    steps = samples.shape[0]
    uniform = Saliency(np.full(steps, 1.0 / steps), True)
    noise_dim = g.spec.in_dim - z.shape[0]
    out, g_cache = g.forward_cached(np.concatenate([np.zeros(noise_dim), z]))
    _, grad_in = g.backward(g_cache, 2.0 * out)
    grad_z = grad_in[noise_dim:]
    grad_pooled = grad_z @ f_a.weights[-1].T
    acts = cache["post"][-1][0]  # (T, hidden)
    # pooling is a mean, so every timestep receives grad_pooled / T
    scores = np.maximum((acts * (grad_pooled / steps)).mean(axis=1), 0.0)
    total = scores.sum()
    if not total > 0:
        return uniform
    return Saliency(scores / total, False)
