"""Illumination-invariant grayscale representation of RGB frames.

Two complementary single-channel images are fused by averaging:

* a log-chromaticity projection: under a channel-uniform illumination change
  the per-pixel vector (log(R/G), log(B/G)) moves along a fixed direction, so
  projecting onto the orthogonal direction removes the illumination;
* a Wiener reflectance image: illumination is estimated as the locally
  adaptive Wiener-smoothed log-luminance and subtracted, leaving reflectance
  structure at all frequencies.

Each branch is min-max normalized per frame to [0, 1] before averaging, since
the two live on incommensurate scales.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .io import Frame, Sequence

_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
_TINY = 1e-12


@dataclass
class InvariantModel:
    """Calibrated settings defining the invariant transform.

    ``theta`` is the angle (radians, in [0, pi)) of the illumination direction
    in the log-chromaticity plane; projection happens onto the orthogonal
    direction.  ``wiener_noise`` of None means "estimate per image as the
    median of local variances".
    """

    theta: float
    wiener_window: int = 7
    wiener_noise: float | None = None
    epsilon_log: float = 1e-4

    def __post_init__(self):
        if not 0.0 <= self.theta < np.pi:
            raise ValueError(f"theta must lie in [0, pi), got {self.theta}")
        if self.wiener_window < 3 or self.wiener_window % 2 == 0:
            raise ValueError("wiener_window must be odd and >= 3")
        if self.wiener_noise is not None and self.wiener_noise < 0:
            raise ValueError("wiener_noise must be >= 0")
        if self.epsilon_log <= 0:
            raise ValueError("epsilon_log must be positive")


@dataclass(frozen=True)
class InvariantFrame:
    """Single-channel invariant image, flat (height*width,) data in [0, 1]."""

    data: np.ndarray
    width: int
    height: int

    def as_array(self) -> np.ndarray:
        return self.data.reshape(self.height, self.width)


def _minmax_01(values: np.ndarray) -> np.ndarray:
    """Min-max normalize to [0, 1]; a constant image maps to all 0.5."""
    lo = values.min()
    hi = values.max()
    if hi - lo < _TINY:
        return np.full_like(values, 0.5)
    return (values - lo) / (hi - lo)


def log_chromaticity(frame: Frame, epsilon_log: float = 1e-4) -> np.ndarray:
    """Per-pixel (log(R/G), log(B/G)) map of shape (height, width, 2).

    Channel values are floored at ``epsilon_log`` before the logs, so zero
    pixels stay finite while pixels above the floor keep exact ratio
    cancellation under channel-uniform gain.
    """
    if frame.channels != 3:
        raise ValueError("log-chromaticity requires an RGB frame")
    rgb = np.maximum(frame.as_array(), epsilon_log)
    log_rgb = np.log(rgb)
    return np.stack(
        [log_rgb[:, :, 0] - log_rgb[:, :, 1], log_rgb[:, :, 2] - log_rgb[:, :, 1]],
        axis=-1,
    )


def _pooled_chromaticities(sequence: Sequence, epsilon_log: float,
                           max_frames: int, max_pixels: int) -> np.ndarray:
    """Chromaticities of an evenly spaced frame subsample, flattened (k, 2)."""
    n = len(sequence)
    idx = np.unique(np.linspace(0, n - 1, min(max_frames, n)).round().astype(int))
    chroma = np.concatenate(
        [log_chromaticity(sequence.frames[i], epsilon_log).reshape(-1, 2) for i in idx]
    )
    if chroma.shape[0] > max_pixels:
        stride = int(np.ceil(chroma.shape[0] / max_pixels))
        chroma = chroma[::stride]
    return chroma


def _projection_entropy(proj: np.ndarray, bins: int) -> float:
    """Shannon entropy of a fixed-bin histogram of projection values."""
    lo, hi = proj.min(), proj.max()
    if hi - lo < _TINY:
        return 0.0
    counts, _ = np.histogram(proj, bins=bins, range=(lo, hi))
    p = counts[counts > 0] / proj.size
    return float(-(p * np.log(p)).sum())


def calibrate_direction(sequence: Sequence, n_angles: int = 180, *,
                        epsilon_log: float = 1e-4, max_frames: int = 10,
                        max_pixels: int = 100_000, bins: int = 64) -> float:
    """Estimate the illumination direction angle by entropy minimization.

    For each candidate angle on a uniform grid over [0, pi), pixel
    chromaticities pooled from a frame subsample are projected onto the line
    orthogonal to that direction; the angle whose projections have the lowest
    histogram entropy is returned.  Ties break toward the smallest angle.
    """
    if len(sequence) == 0:
        raise ValueError("cannot calibrate on an empty sequence")
    if n_angles < 1:
        raise ValueError("n_angles must be >= 1")
    chroma = _pooled_chromaticities(sequence, epsilon_log, max_frames, max_pixels)
    angles = np.linspace(0.0, np.pi, n_angles, endpoint=False)
    entropies = np.empty(n_angles)
    for k, theta in enumerate(angles):
        # unit vector orthogonal to direction (cos t, sin t)
        proj = -np.sin(theta) * chroma[:, 0] + np.cos(theta) * chroma[:, 1]
        entropies[k] = _projection_entropy(proj, bins)
    return float(angles[int(np.argmin(entropies))])


def project_invariant(frame: Frame, model: InvariantModel) -> InvariantFrame:
    """Project chromaticities orthogonally to the illumination direction.

    The scalar projections are min-max normalized over the frame; a frame
    whose chromaticities are all equal yields the constant 0.5 image.
    """
    chroma = log_chromaticity(frame, model.epsilon_log)
    proj = -np.sin(model.theta) * chroma[:, :, 0] + np.cos(model.theta) * chroma[:, :, 1]
    return InvariantFrame(data=_minmax_01(proj).reshape(-1),
                          width=frame.width, height=frame.height)


def _luminance(frame: Frame) -> np.ndarray:
    arr = frame.as_array()
    if frame.channels == 1:
        return arr
    return arr @ _LUMA_WEIGHTS


def wiener_reflectance(frame: Frame, model: InvariantModel) -> InvariantFrame:
    """Reflectance component of the log-luminance under local Wiener smoothing.

    The illumination estimate at each pixel is mu + max(v - noise, 0) / v *
    (x - mu) with mu, v the window mean and variance of the log-luminance;
    reflectance is the residual x minus that estimate, min-max normalized.
    Zero noise makes the smoother an identity, so the reflectance degenerates
    to the constant 0.5 image.
    """
    x = np.log(np.maximum(_luminance(frame), model.epsilon_log))
    size = model.wiener_window
    mu = uniform_filter(x, size=size, mode="reflect")
    mu_sq = uniform_filter(x * x, size=size, mode="reflect")
    var = np.maximum(mu_sq - mu * mu, 0.0)
    noise = model.wiener_noise
    if noise is None:
        noise = float(np.median(var))
    gain = np.maximum(var - noise, 0.0) / np.maximum(var, _TINY)
    smoothed = mu + gain * (x - mu)
    reflectance = x - smoothed
    return InvariantFrame(data=_minmax_01(reflectance).reshape(-1),
                          width=frame.width, height=frame.height)


def psi(frame: Frame, model: InvariantModel) -> InvariantFrame:
    """Fused invariant image: elementwise mean of the two branches."""
    proj = project_invariant(frame, model)
    refl = wiener_reflectance(frame, model)
    return InvariantFrame(data=0.5 * (proj.data + refl.data),
                          width=frame.width, height=frame.height)


def psi_sequence(sequence: Sequence, model: InvariantModel) -> list[InvariantFrame]:
    """Apply :func:`psi` to every frame."""
    return [psi(f, model) for f in sequence.frames]
