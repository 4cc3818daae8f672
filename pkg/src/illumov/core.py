"""Three-way decomposition of an image sequence with two generative decoders.

Each frame I is split as I = B + C + F: a background image B generated by the
first decoder from a per-frame latent, an illumination-change image C held as
a free per-frame variable, and the foreground residual F = (I - B) - C.  A
second decoder reconstructs the illumination-invariant image; its residual
drives a per-pixel prior map that weights how the sparse part splits between
C and F.  Everything (decoder weights and per-frame variables) is trained
jointly by Adam against an L1 objective, unsupervised.

Batch mode optimizes all frames together.  Online mode freezes the decoder
weights after a pretraining batch and fits only the per-frame variables for
each incoming stream of frames.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy.special import expit

from .invariant import InvariantFrame, InvariantModel
from .io import Sequence
from .nets import (
    AdamState,
    GfcnParams,
    RowwiseAdam,
    adam_step,
    gfcn_backward,
    gfcn_forward,
    init_params,
)

_TINY = 1e-12
T_FLOOR = 1e-6  # threshold floor; keeps an all-zero foreground from producing an all-ones mask

PRIOR_MAP_MODES = ("sigma", "residual")

# In "residual" mode, a pixel counts as illumination-consistent when its
# invariant residual is within a few noise sigmas; this is the cutoff.
RESIDUAL_PRIOR_CUTOFF = 3.0
_MAD_TO_SIGMA = 1.0 / 0.6745  # normal-consistency factor for the median of |x|

CHECKPOINT_VERSION = "illumov-checkpoint-1"


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite (learning-rate or data pathology)."""


@dataclass
class TrainConfig:
    """Hyperparameters for batch and online training."""

    latent_size: int = 5
    hidden_sizes: tuple[int, int] = (10, 20)
    weight_decay: float = 0.005
    learning_rate: float = 0.001
    epochs: int = 300
    minibatch_frames: int = 64
    full_batch_limit: int = 256  # above this many frames, fall back to minibatches
    online_stream: int = 10
    online_iters: int = 200
    pretrain_fraction: float = 0.5
    threshold_factor: float = 2.0
    latent_init_std: float = 0.1
    prior_map_mode: str = "sigma"
    seed: int = 0

    def __post_init__(self):
        if min(self.latent_size, self.epochs, self.minibatch_frames,
               self.online_stream, self.online_iters) < 1:
            raise ValueError("sizes and iteration counts must be positive")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("learning_rate must be > 0 and weight_decay >= 0")
        if not 0.0 < self.pretrain_fraction < 1.0:
            raise ValueError("pretrain_fraction must lie in (0, 1)")
        if self.threshold_factor <= 0:
            raise ValueError("threshold_factor must be positive")
        if self.prior_map_mode not in PRIOR_MAP_MODES:
            raise ValueError(f"prior_map_mode must be one of {PRIOR_MAP_MODES}")
        self.hidden_sizes = tuple(self.hidden_sizes)


@dataclass
class FrameVariables:
    """Per-frame optimizable state: two latent codes and the illumination image."""

    u1: np.ndarray
    u2: np.ndarray
    c: np.ndarray


@dataclass
class PriorMap:
    """Per-pixel weight splitting the sparse residual into illumination vs foreground."""

    values: np.ndarray
    sigma: float


@dataclass
class Decomposition:
    """Outputs for one frame, satisfying input = b_img + c_img + f_img."""

    b_img: np.ndarray
    c_img: np.ndarray
    f_img: np.ndarray
    s_img: np.ndarray
    mask: np.ndarray  # (height, width) uint8


@dataclass(frozen=True)
class ObjectiveParts:
    reconst: float
    decomp: float
    reg: float

    @property
    def total(self) -> float:
        return self.reconst + self.decomp + self.reg

    def as_dict(self) -> dict:
        return {"total": self.total, "reconst": self.reconst,
                "decomp": self.decomp, "reg": self.reg}


def residual_scale(s_inv: np.ndarray) -> np.ndarray:
    """Robust per-frame noise scale of an invariant residual (MAD estimate)."""
    s_inv = np.atleast_2d(np.asarray(s_inv, dtype=np.float64))
    return np.median(np.abs(s_inv), axis=-1) * _MAD_TO_SIGMA


def prior_map_values(s_inv: np.ndarray, sigma, mode: str = "sigma",
                     scale=None) -> np.ndarray:
    """Prior map from an invariant residual.

    The default "sigma" form is sigmoid(|s_inv - sigma|), anchored at the
    frame's contrast std sigma: it lies in [0.5, 1) and equals 0.5 exactly
    where s_inv == sigma.  The "residual" alternative
    sigmoid((|s_inv| - 3s)/s) instead compares each pixel against the
    residual's own robust noise scale s, dropping below 0.5 where the
    invariant residual is explained by noise — there, illumination is
    strictly cheaper than foreground.  ``scale`` overrides s (it is otherwise
    estimated from ``s_inv`` itself and treated as a constant statistic).
    """
    s_inv = np.asarray(s_inv, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < 0):
        raise ValueError("sigma must be >= 0")
    if mode == "sigma":
        return expit(np.abs(s_inv - sigma))
    if mode == "residual":
        if scale is None:
            scale = residual_scale(s_inv)
            if s_inv.ndim > 1:
                scale = scale[:, None]
        scale = np.maximum(scale, _TINY)
        return expit((np.abs(s_inv) - RESIDUAL_PRIOR_CUTOFF * scale) / scale)
    raise ValueError(f"unknown prior map mode {mode!r}")


def compute_prior_map(s_inv: np.ndarray, sigma: float,
                      mode: str = "sigma") -> PriorMap:
    """Prior map for one frame's invariant residual."""
    return PriorMap(values=prior_map_values(s_inv, sigma, mode), sigma=float(sigma))


def _broadcast_factor(m: int, m_inv: int) -> int:
    if m_inv <= 0 or m % m_inv != 0:
        raise ValueError(f"invariant size {m_inv} does not divide image size {m}")
    return m // m_inv


def _broadcast_prior(prior: np.ndarray, factor: int) -> np.ndarray:
    """Repeat each spatial prior value across the image channels.

    Image vectors are flattened (height, width, channels) with channels
    fastest, so a per-pixel map broadcasts by repeating along the last axis.
    """
    if factor == 1:
        return prior
    return np.repeat(prior, factor, axis=-1)


def loss_reconst(frames, invariant_frames, b_outputs, b_inv_outputs) -> float:
    """Sum of absolute reconstruction errors of both decoders."""
    frames = np.asarray(frames, dtype=np.float64)
    inv = np.asarray(invariant_frames, dtype=np.float64)
    b = np.asarray(b_outputs, dtype=np.float64)
    b_inv = np.asarray(b_inv_outputs, dtype=np.float64)
    if frames.shape != b.shape or inv.shape != b_inv.shape:
        raise ValueError("frame/background shapes do not match")
    return float(np.abs(frames - b).sum() + np.abs(inv - b_inv).sum())


def loss_decomp(prior_maps, c_list, f_list) -> float:
    """Prior-weighted L1 cost of the illumination/foreground split."""
    prior = np.atleast_2d(np.asarray(prior_maps, dtype=np.float64))
    c = np.atleast_2d(np.asarray(c_list, dtype=np.float64))
    f = np.atleast_2d(np.asarray(f_list, dtype=np.float64))
    if c.shape != f.shape or prior.shape[0] != c.shape[0]:
        raise ValueError("prior/c/f shapes do not match")
    mb = _broadcast_prior(prior, _broadcast_factor(c.shape[1], prior.shape[1]))
    return float((mb * np.abs(c)).sum() + ((1.0 - mb) * np.abs(f)).sum())


def loss_reg(net1: GfcnParams, net2: GfcnParams, weight_decay: float) -> float:
    """Weight decay on decoder weights, biases excluded."""
    return weight_decay * 0.5 * (net1.weight_sq_norm() + net2.weight_sq_norm())


def total_loss(reconst: float, decomp: float, reg: float,
               online: bool = False) -> float:
    """Overall objective; online mode omits the weight-decay term."""
    return reconst + decomp + (0.0 if online else reg)


def _frame_sigmas(inv_images: np.ndarray) -> np.ndarray:
    """Per-frame population std of the invariant-image pixels."""
    return inv_images.std(axis=1)


def evaluate_objective(images, inv_images, net1, net2, u1, u2, c,
                       weight_decay: float, *, online: bool = False,
                       prior_mode: str = "sigma",
                       sigmas: np.ndarray | None = None) -> ObjectiveParts:
    """Objective value at the given parameters (no gradients)."""
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    inv_images = np.atleast_2d(np.asarray(inv_images, dtype=np.float64))
    u1 = np.atleast_2d(u1)
    u2 = np.atleast_2d(u2)
    c = np.atleast_2d(c)
    if sigmas is None:
        sigmas = _frame_sigmas(inv_images)
    b, _ = gfcn_forward(net1, u1)
    b_inv, _ = gfcn_forward(net2, u2)
    s = images - b
    s_inv = inv_images - b_inv
    f = s - c
    prior = prior_map_values(s_inv, sigmas[:, None], prior_mode)
    reconst = float(np.abs(s).sum() + np.abs(s_inv).sum())
    # ("residual" mode estimates its scale inside prior_map_values from the
    # current s_inv; both this function and objective_gradients therefore see
    # the same statistic at a given point.)
    factor = _broadcast_factor(images.shape[1], inv_images.shape[1])
    mb = _broadcast_prior(prior, factor)
    decomp = float((mb * np.abs(c)).sum() + ((1.0 - mb) * np.abs(f)).sum())
    reg = 0.0 if online else loss_reg(net1, net2, weight_decay)
    return ObjectiveParts(reconst=reconst, decomp=decomp, reg=reg)


@dataclass
class GradientBundle:
    net1: GfcnParams
    net2: GfcnParams
    u1: np.ndarray
    u2: np.ndarray
    c: np.ndarray


@dataclass
class _ForwardState:
    b: np.ndarray
    b_inv: np.ndarray
    s: np.ndarray
    s_inv: np.ndarray
    f: np.ndarray
    prior: np.ndarray


def objective_gradients(images, inv_images, net1, net2, u1, u2, c,
                        weight_decay: float, *, online: bool = False,
                        prior_mode: str = "sigma",
                        sigmas: np.ndarray | None = None,
                        ) -> tuple[GradientBundle, ObjectiveParts, _ForwardState]:
    """Analytic gradients of the objective w.r.t. all optimizable state.

    This is the single place where the decomposition coupling lives.  The
    illumination variable c receives gradient from both sides of the split:
    M*sign(c) from its own prior-weighted cost and -(1-M)*sign(f) through
    f = s - c.  The background decoders receive, besides their reconstruction
    terms, -(1-M)*sign(f) through f (first decoder) and the prior-map path
    dL/dM * dM/ds_inv (second decoder), which is what couples the two.
    """
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    inv_images = np.atleast_2d(np.asarray(inv_images, dtype=np.float64))
    u1 = np.atleast_2d(u1)
    u2 = np.atleast_2d(u2)
    c = np.atleast_2d(c)
    if sigmas is None:
        sigmas = _frame_sigmas(inv_images)
    factor = _broadcast_factor(images.shape[1], inv_images.shape[1])

    b, cache1 = gfcn_forward(net1, u1)
    b_inv, cache2 = gfcn_forward(net2, u2)
    s = images - b
    s_inv = inv_images - b_inv
    f = s - c
    sig_col = sigmas[:, None]
    prior = prior_map_values(s_inv, sig_col, prior_mode)
    mb = _broadcast_prior(prior, factor)

    sign_s = np.sign(s)
    sign_f = np.sign(f)
    sign_c = np.sign(c)
    one_minus_mb = 1.0 - mb

    reconst = float(np.abs(s).sum() + np.abs(s_inv).sum())
    decomp = float((mb * np.abs(c)).sum() + (one_minus_mb * np.abs(f)).sum())
    reg = 0.0 if online else loss_reg(net1, net2, weight_decay)
    parts = ObjectiveParts(reconst=reconst, decomp=decomp, reg=reg)

    grad_b = -sign_s - one_minus_mb * sign_f
    grad_c = mb * sign_c - one_minus_mb * sign_f

    # dL/dM per spatial pixel (channel-summed), then through the prior map
    # into the invariant background: dM/ds_inv depends on the map form.  The
    # "residual" mode's noise scale is a per-frame statistic treated as a
    # constant here, like sigma.
    dl_dm = (np.abs(c) - np.abs(f)).reshape(c.shape[0], -1, factor).sum(axis=2)
    sig_prime = prior * (1.0 - prior)
    if prior_mode == "sigma":
        dm_dsinv = sig_prime * np.sign(s_inv - sig_col)
    else:
        scale_col = np.maximum(residual_scale(s_inv)[:, None], _TINY)
        dm_dsinv = sig_prime * np.sign(s_inv) / scale_col
    grad_b_inv = -np.sign(s_inv) - dl_dm * dm_dsinv

    grads1, grad_u1 = gfcn_backward(net1, cache1, grad_b)
    grads2, grad_u2 = gfcn_backward(net2, cache2, grad_b_inv)
    if not online:
        grads1.w1 += weight_decay * net1.w1
        grads1.w2 += weight_decay * net1.w2
        grads1.w3 += weight_decay * net1.w3
        grads2.w1 += weight_decay * net2.w1
        grads2.w2 += weight_decay * net2.w2
        grads2.w3 += weight_decay * net2.w3

    bundle = GradientBundle(net1=grads1, net2=grads2, u1=grad_u1, u2=grad_u2,
                            c=grad_c)
    state = _ForwardState(b=b, b_inv=b_inv, s=s, s_inv=s_inv, f=f, prior=prior)
    return bundle, parts, state


@dataclass
class RunningStd:
    """Streaming population mean/variance accumulator (mergeable batches)."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def update(self, values: np.ndarray) -> None:
        x = np.asarray(values, dtype=np.float64).ravel()
        if x.size == 0:
            return
        nb = x.size
        mb = float(x.mean())
        m2b = float(((x - mb) ** 2).sum())
        total = self.count + nb
        delta = mb - self.mean
        self.mean += delta * nb / total
        self.m2 += m2b + delta * delta * self.count * nb / total
        self.count = total

    @property
    def std(self) -> float:
        if self.count == 0:
            return 0.0
        return float(np.sqrt(self.m2 / self.count))


def threshold_foreground(f_images, frame_shape: tuple[int, int, int], *,
                         mode: str = "batch", state: RunningStd | None = None,
                         factor: float = 2.0) -> tuple[list[np.ndarray], float]:
    """Binarize foreground images at ``factor`` times the foreground pixel std.

    ``frame_shape`` is (height, width, channels).  A location is foreground
    when any channel magnitude reaches the threshold.  Batch mode measures the
    std over every element of every frame given; online mode folds the given
    frames into ``state`` first and thresholds with the accumulated std, so t
    evolves as streams arrive.  Returns the masks and the applied t.
    """
    f = np.atleast_2d(np.asarray(f_images, dtype=np.float64))
    if f.shape[0] == 0:
        raise ValueError("no foreground images to threshold")
    h, w, ch = frame_shape
    if f.shape[1] != h * w * ch:
        raise ValueError(f"foreground length {f.shape[1]} does not match {frame_shape}")
    if mode == "batch":
        t = float(f.std())
    elif mode == "online":
        if state is None:
            raise ValueError("online thresholding requires a RunningStd state")
        state.update(f)
        t = state.std
    else:
        raise ValueError(f"unknown threshold mode {mode!r}")
    t_eff = max(t, T_FLOOR)
    peaks = np.abs(f).reshape(-1, h, w, ch).max(axis=3)
    masks = [(frame >= factor * t_eff).astype(np.uint8) for frame in peaks]
    return masks, t


def _check_finite(parts: ObjectiveParts, where: str) -> None:
    if not np.isfinite(parts.total):
        raise TrainingDivergedError(
            f"non-finite loss at {where} "
            f"(reconst={parts.reconst}, decomp={parts.decomp}, reg={parts.reg}); "
            "lower the learning rate or check the input data"
        )


def _stack_invariants(invariant_frames) -> np.ndarray:
    if isinstance(invariant_frames, np.ndarray):
        return np.atleast_2d(invariant_frames.astype(np.float64, copy=False))
    return np.stack([
        fr.data if isinstance(fr, InvariantFrame) else np.asarray(fr, dtype=np.float64)
        for fr in invariant_frames
    ])


@dataclass
class BatchResult:
    """Everything produced by batch training."""

    net1: GfcnParams
    net2: GfcnParams
    variables: list[FrameVariables]
    decompositions: list[Decomposition]
    threshold: float
    sigmas: np.ndarray
    loss_history: list[dict]
    adam_net1: AdamState
    adam_net2: AdamState
    frame_shape: tuple[int, int, int]

    @property
    def masks(self) -> list[np.ndarray]:
        return [d.mask for d in self.decompositions]


def _training_batches(n: int, config: TrainConfig) -> list[np.ndarray]:
    if n <= config.full_batch_limit:
        return [np.arange(n)]
    size = config.minibatch_frames
    return [np.arange(i, min(i + size, n)) for i in range(0, n, size)]


def train_batch(sequence: Sequence, invariant_frames, config: TrainConfig,
                progress=None) -> BatchResult:
    """Jointly optimize decoder weights and per-frame variables on all frames.

    ``progress``, if given, is called as ``progress(epoch, parts_dict)`` after
    every epoch.
    """
    images = sequence.as_matrix()
    inv_images = _stack_invariants(invariant_frames)
    n, m = images.shape
    if inv_images.shape[0] != n:
        raise ValueError(
            f"{n} frames but {inv_images.shape[0]} invariant frames"
        )
    m_inv = inv_images.shape[1]
    _broadcast_factor(m, m_inv)
    frame_shape = (sequence.height, sequence.width, sequence.channels)

    d = config.latent_size
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    net1 = init_params(d, m, seeds[0], hidden_sizes=config.hidden_sizes)
    net2 = init_params(d, m_inv, seeds[1], hidden_sizes=config.hidden_sizes)
    rng = np.random.default_rng(seeds[2])
    u1 = rng.normal(0.0, config.latent_init_std, size=(n, d))
    u2 = rng.normal(0.0, config.latent_init_std, size=(n, d))
    c = np.zeros((n, m))

    sigmas = _frame_sigmas(inv_images)
    lr = config.learning_rate
    adam_net1 = AdamState.for_size(net1.flatten().size, lr)
    adam_net2 = AdamState.for_size(net2.flatten().size, lr)
    adam_u1 = RowwiseAdam.for_shape((n, d), lr)
    adam_u2 = RowwiseAdam.for_shape((n, d), lr)
    adam_c = RowwiseAdam.for_shape((n, m), lr)

    loss_history = [
        evaluate_objective(images, inv_images, net1, net2, u1, u2, c,
                           config.weight_decay, prior_mode=config.prior_map_mode,
                           sigmas=sigmas).as_dict()
    ]
    batches = _training_batches(n, config)
    for epoch in range(config.epochs):
        epoch_parts = np.zeros(3)
        for rows in batches:
            grads, parts, _ = objective_gradients(
                images[rows], inv_images[rows], net1, net2,
                u1[rows], u2[rows], c[rows], config.weight_decay,
                prior_mode=config.prior_map_mode, sigmas=sigmas[rows],
            )
            _check_finite(parts, f"epoch {epoch}")
            epoch_parts += (parts.reconst, parts.decomp, parts.reg)
            net1 = net1.with_flat(adam_step(adam_net1, net1.flatten(),
                                            grads.net1.flatten()))
            net2 = net2.with_flat(adam_step(adam_net2, net2.flatten(),
                                            grads.net2.flatten()))
            u1[rows] = adam_u1.step_rows(u1[rows], grads.u1, rows)
            u2[rows] = adam_u2.step_rows(u2[rows], grads.u2, rows)
            c[rows] = adam_c.step_rows(c[rows], grads.c, rows)
        loss_history.append(ObjectiveParts(*epoch_parts).as_dict())
        if progress is not None:
            progress(epoch + 1, loss_history[-1])

    _, final_parts, state = objective_gradients(
        images, inv_images, net1, net2, u1, u2, c, config.weight_decay,
        prior_mode=config.prior_map_mode, sigmas=sigmas,
    )
    loss_history.append(final_parts.as_dict())
    masks, threshold = threshold_foreground(
        state.f, frame_shape, mode="batch", factor=config.threshold_factor)
    variables = [FrameVariables(u1=u1[i].copy(), u2=u2[i].copy(), c=c[i].copy())
                 for i in range(n)]
    decompositions = [
        Decomposition(b_img=state.b[i], c_img=c[i].copy(), f_img=state.f[i],
                      s_img=state.s[i], mask=masks[i])
        for i in range(n)
    ]
    return BatchResult(net1=net1, net2=net2, variables=variables,
                       decompositions=decompositions, threshold=threshold,
                       sigmas=sigmas, loss_history=loss_history,
                       adam_net1=adam_net1, adam_net2=adam_net2,
                       frame_shape=frame_shape)


@dataclass
class OnlineResult:
    """Per-frame outputs of online fitting over one or more streams."""

    variables: list[FrameVariables]
    decompositions: list[Decomposition]
    stream_log: list[dict]
    running_std: RunningStd
    warm_latents: tuple[np.ndarray, np.ndarray]

    @property
    def masks(self) -> list[np.ndarray]:
        return [d.mask for d in self.decompositions]


def train_online(net1: GfcnParams, net2: GfcnParams, sequence: Sequence,
                 invariant_frames, config: TrainConfig, *,
                 warm_start: tuple[np.ndarray, np.ndarray] | None = None,
                 running_std: RunningStd | None = None,
                 progress=None) -> OnlineResult:
    """Fit per-frame variables for incoming streams with frozen decoder weights.

    Frames are processed in consecutive streams of ``config.online_stream``.
    Latents warm-start from the most recently processed frame (or from
    ``warm_start``, typically the last pretraining frame); the illumination
    variable starts at zero.  Only the per-frame variables move; ``net1`` and
    ``net2`` are never written.  Thresholding uses the running foreground std
    accumulated across everything processed so far.
    """
    if net1 is None or net2 is None:
        raise ValueError("online mode requires pretrained decoder weights")
    images = sequence.as_matrix()
    inv_images = _stack_invariants(invariant_frames)
    n, m = images.shape
    m_inv = inv_images.shape[1]
    if inv_images.shape[0] != n:
        raise ValueError(f"{n} frames but {inv_images.shape[0]} invariant frames")
    if net1.output_size != m or net2.output_size != m_inv:
        raise ValueError("decoder output sizes do not match the frame data")
    frame_shape = (sequence.height, sequence.width, sequence.channels)
    d = config.latent_size
    sigmas = _frame_sigmas(inv_images)
    if running_std is None:
        running_std = RunningStd()

    if warm_start is not None:
        last_u1 = np.asarray(warm_start[0], dtype=np.float64).copy()
        last_u2 = np.asarray(warm_start[1], dtype=np.float64).copy()
    else:
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x0A11]))
        last_u1 = rng.normal(0.0, config.latent_init_std, size=d)
        last_u2 = rng.normal(0.0, config.latent_init_std, size=d)

    variables: list[FrameVariables] = []
    decompositions: list[Decomposition] = []
    stream_log: list[dict] = []
    lr = config.learning_rate
    for start in range(0, n, config.online_stream):
        rows = np.arange(start, min(start + config.online_stream, n))
        k = rows.size
        u1 = np.tile(last_u1, (k, 1))
        u2 = np.tile(last_u2, (k, 1))
        c = np.zeros((k, m))
        adam_u1 = AdamState.for_size(u1.size, lr)
        adam_u2 = AdamState.for_size(u2.size, lr)
        adam_c = AdamState.for_size(c.size, lr)
        first_loss = None
        parts = None
        for _ in range(config.online_iters):
            grads, parts, _ = objective_gradients(
                images[rows], inv_images[rows], net1, net2, u1, u2, c,
                config.weight_decay, online=True,
                prior_mode=config.prior_map_mode, sigmas=sigmas[rows],
            )
            _check_finite(parts, f"stream at frame {start}")
            if first_loss is None:
                first_loss = parts.total
            u1 = adam_step(adam_u1, u1.ravel(), grads.u1.ravel()).reshape(k, d)
            u2 = adam_step(adam_u2, u2.ravel(), grads.u2.ravel()).reshape(k, d)
            c = adam_step(adam_c, c.ravel(), grads.c.ravel()).reshape(k, m)

        _, final_parts, state = objective_gradients(
            images[rows], inv_images[rows], net1, net2, u1, u2, c,
            config.weight_decay, online=True,
            prior_mode=config.prior_map_mode, sigmas=sigmas[rows],
        )
        masks, t = threshold_foreground(
            state.f, frame_shape, mode="online", state=running_std,
            factor=config.threshold_factor)
        for j in range(k):
            variables.append(FrameVariables(u1=u1[j].copy(), u2=u2[j].copy(),
                                            c=c[j].copy()))
            decompositions.append(
                Decomposition(b_img=state.b[j], c_img=c[j].copy(),
                              f_img=state.f[j], s_img=state.s[j], mask=masks[j]))
        stream_log.append({
            "frames": [int(rows[0]), int(rows[-1])],
            "loss_initial": first_loss,
            "loss_final": final_parts.total,
            "threshold": t,
        })
        if progress is not None:
            progress(len(stream_log), stream_log[-1])
        last_u1 = u1[-1].copy()
        last_u2 = u2[-1].copy()

    return OnlineResult(variables=variables, decompositions=decompositions,
                        stream_log=stream_log, running_std=running_std,
                        warm_latents=(last_u1, last_u2))


def weights_checksum(params: GfcnParams) -> str:
    """Hex digest of the exact parameter bytes (frozen-weight verification)."""
    import hashlib

    digest = hashlib.sha256()
    for a in (params.w1, params.b1, params.w2, params.b2, params.w3, params.b3):
        digest.update(np.ascontiguousarray(a).tobytes())
    return digest.hexdigest()


@dataclass
class Checkpoint:
    """Deserialized checkpoint contents.

    The file is an npz archive with the fields: version, config_json,
    invariant_json, frame_shape, net{1,2}_flat, net{1,2}_dims (latent, both
    hiddens, output), adam_net{1,2}_{m,v,t,lr}, warm_u1, warm_u2,
    running_std (count, mean, m2), threshold.  Optional fields may be absent.
    """

    net1: GfcnParams
    net2: GfcnParams
    config: TrainConfig
    frame_shape: tuple[int, int, int]
    invariant_model: InvariantModel | None = None
    adam_net1: AdamState | None = None
    adam_net2: AdamState | None = None
    warm_latents: tuple[np.ndarray, np.ndarray] | None = None
    running_std: RunningStd | None = None
    threshold: float | None = None


def _params_dims(params: GfcnParams) -> np.ndarray:
    h1, h2 = params.hidden_sizes
    return np.array([params.latent_size, h1, h2, params.output_size])


def _params_from(flat: np.ndarray, dims: np.ndarray) -> GfcnParams:
    d, h1, h2, m = (int(v) for v in dims)
    template = GfcnParams(
        w1=np.zeros((h1, d)), b1=np.zeros(h1),
        w2=np.zeros((h2, h1)), b2=np.zeros(h2),
        w3=np.zeros((m, h2)), b3=np.zeros(m),
    )
    return template.with_flat(flat)


def save_checkpoint(path, *, net1: GfcnParams, net2: GfcnParams,
                    config: TrainConfig,
                    frame_shape: tuple[int, int, int],
                    invariant_model: InvariantModel | None = None,
                    adam_net1: AdamState | None = None,
                    adam_net2: AdamState | None = None,
                    warm_latents=None, running_std: RunningStd | None = None,
                    threshold: float | None = None) -> None:
    """Write a versioned checkpoint archive (see :class:`Checkpoint`)."""
    arrays: dict[str, np.ndarray] = {
        "version": np.array(CHECKPOINT_VERSION),
        "config_json": np.array(json.dumps(asdict(config))),
        "frame_shape": np.array(frame_shape),
        "net1_flat": net1.flatten(), "net1_dims": _params_dims(net1),
        "net2_flat": net2.flatten(), "net2_dims": _params_dims(net2),
    }
    if invariant_model is not None:
        arrays["invariant_json"] = np.array(json.dumps({
            "theta": invariant_model.theta,
            "wiener_window": invariant_model.wiener_window,
            "wiener_noise": invariant_model.wiener_noise,
            "epsilon_log": invariant_model.epsilon_log,
        }))
    for name, adam in (("adam_net1", adam_net1), ("adam_net2", adam_net2)):
        if adam is not None:
            arrays[f"{name}_m"] = adam.first_moment
            arrays[f"{name}_v"] = adam.second_moment
            arrays[f"{name}_t"] = np.array(adam.step_count)
            arrays[f"{name}_lr"] = np.array(adam.lr)
    if warm_latents is not None:
        arrays["warm_u1"] = np.asarray(warm_latents[0])
        arrays["warm_u2"] = np.asarray(warm_latents[1])
    if running_std is not None:
        arrays["running_std"] = np.array([running_std.count, running_std.mean,
                                          running_std.m2])
    if threshold is not None:
        arrays["threshold"] = np.array(threshold)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **arrays)


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint archive written by :func:`save_checkpoint`."""
    with np.load(path, allow_pickle=False) as data:
        version = str(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version!r}")
        cfg_dict = json.loads(str(data["config_json"]))
        cfg_dict["hidden_sizes"] = tuple(cfg_dict["hidden_sizes"])
        config = TrainConfig(**cfg_dict)
        net1 = _params_from(data["net1_flat"], data["net1_dims"])
        net2 = _params_from(data["net2_flat"], data["net2_dims"])
        frame_shape = tuple(int(v) for v in data["frame_shape"])
        invariant_model = None
        if "invariant_json" in data.files:
            inv = json.loads(str(data["invariant_json"]))
            invariant_model = InvariantModel(**inv)
        adams = {}
        for name in ("adam_net1", "adam_net2"):
            if f"{name}_m" in data.files:
                adams[name] = AdamState(
                    lr=float(data[f"{name}_lr"]),
                    first_moment=data[f"{name}_m"],
                    second_moment=data[f"{name}_v"],
                    step_count=int(data[f"{name}_t"]),
                )
        warm = None
        if "warm_u1" in data.files:
            warm = (data["warm_u1"], data["warm_u2"])
        running = None
        if "running_std" in data.files:
            count, mean, m2 = data["running_std"]
            running = RunningStd(count=int(count), mean=float(mean), m2=float(m2))
        threshold = float(data["threshold"]) if "threshold" in data.files else None
    return Checkpoint(net1=net1, net2=net2, config=config,
                      frame_shape=frame_shape, invariant_model=invariant_model,
                      adam_net1=adams.get("adam_net1"),
                      adam_net2=adams.get("adam_net2"),
                      warm_latents=warm, running_std=running,
                      threshold=threshold)
