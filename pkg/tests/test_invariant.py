"""Tests for the illumination-invariant transform and its calibration."""

import numpy as np
import pytest

from illumov.invariant import (
    InvariantModel,
    calibrate_direction,
    log_chromaticity,
    project_invariant,
    psi,
    psi_sequence,
    wiener_reflectance,
)
from illumov.io import Frame, Sequence


def frame_from_array(arr):
    arr = np.asarray(arr, dtype=np.float64)
    h, w = arr.shape[:2]
    c = 1 if arr.ndim == 2 else arr.shape[2]
    return Frame(data=arr.reshape(-1), width=w, height=h, channels=c)


def random_colorful_frame(seed, h=24, w=24, lo=0.05, hi=0.7):
    rng = np.random.default_rng(seed)
    return frame_from_array(rng.uniform(lo, hi, (h, w, 3)))


# ------------------------------------------------------- log-chromaticity

def test_chromaticity_zero_for_gray_pixels():
    arr = np.full((4, 4, 3), 0.37)
    chroma = log_chromaticity(frame_from_array(arr))
    assert np.allclose(chroma, 0.0, atol=1e-14)


def test_chromaticity_known_pixel():
    arr = np.zeros((1, 1, 3))
    arr[0, 0] = (0.6, 0.3, 0.3)
    chroma = log_chromaticity(frame_from_array(arr))
    assert np.isclose(chroma[0, 0, 0], np.log(2.0), atol=1e-12)
    assert np.isclose(chroma[0, 0, 1], 0.0, atol=1e-12)


def test_chromaticity_cancels_channel_uniform_gain():
    frame = random_colorful_frame(0)
    gained = frame_from_array(frame.as_array() * 1.3)
    a = log_chromaticity(frame)
    b = log_chromaticity(gained)
    assert np.abs(a - b).max() < 1e-9


def test_chromaticity_zero_pixels_stay_finite():
    arr = np.zeros((2, 2, 3))
    arr[0, 0] = (0.0, 0.5, 0.5)
    chroma = log_chromaticity(frame_from_array(arr))
    assert np.all(np.isfinite(chroma))
    assert np.isclose(chroma[0, 0, 0], np.log(1e-4) - np.log(0.5), atol=1e-12)


def test_chromaticity_requires_rgb():
    gray = frame_from_array(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        log_chromaticity(gray)


# ------------------------------------------------------------ calibration

def planted_direction_sequence(theta, n_frames=3, side=24, seed=0):
    """Frames whose chromaticities lie on lines of direction ``theta``.

    Each pixel is G = 0.5 with R and B chosen so that its chromaticity is
    base_k + t * (cos theta, sin theta): a few distinct surface colors swept
    along the illumination direction.  Projecting orthogonally to ``theta``
    collapses every pixel onto one of the base values, so the entropy
    criterion has its minimum exactly there.
    """
    bases = np.array([(-0.2, 0.1), (0.0, 0.0), (0.2, -0.15)])
    shifts = np.linspace(-0.3, 0.3, 7)
    direction = np.array([np.cos(theta), np.sin(theta)])
    rng = np.random.default_rng(seed)
    frames = []
    for _ in range(n_frames):
        b = bases[rng.integers(0, len(bases), (side, side))]
        t = shifts[rng.integers(0, len(shifts), (side, side))]
        rho = b + t[:, :, None] * direction
        g = np.full((side, side), 0.5)
        arr = np.stack([g * np.exp(rho[:, :, 0]), g, g * np.exp(rho[:, :, 1])],
                       axis=-1)
        frames.append(frame_from_array(arr))
    return Sequence(frames=frames,
                    frame_ids=[f"in{i:06d}" for i in range(n_frames)])


def test_calibration_recovers_planted_direction():
    theta_true = np.pi / 4.0
    seq = planted_direction_sequence(theta_true)
    theta = calibrate_direction(seq)
    assert abs(theta - theta_true) <= np.pi / 180.0 + 1e-9


def test_calibration_recovers_other_angles():
    for k, theta_true in enumerate((0.3, 1.2, 2.6)):
        seq = planted_direction_sequence(theta_true, seed=10 + k)
        theta = calibrate_direction(seq)
        assert abs(theta - theta_true) <= np.pi / 180.0 + 1e-9


def test_calibration_single_angle_grid():
    seq = planted_direction_sequence(0.9)
    assert calibrate_direction(seq, n_angles=1) == 0.0


def test_calibration_constant_frame_ties_to_zero():
    # all projections identical at every angle -> all entropies equal ->
    # ties break to the smallest grid angle
    arr = np.full((8, 8, 3), 0.4)
    seq = Sequence(frames=[frame_from_array(arr)], frame_ids=["in000000"])
    assert calibrate_direction(seq) == 0.0


def test_calibration_rejects_empty_and_bad_grid():
    with pytest.raises(ValueError):
        calibrate_direction(Sequence(frames=[], frame_ids=[]))
    with pytest.raises(ValueError):
        calibrate_direction(planted_direction_sequence(0.5), n_angles=0)


# ------------------------------------------------------------- projection

def test_projection_gray_frame_is_half():
    frame = frame_from_array(np.full((6, 6, 3), 0.42))
    inv = project_invariant(frame, InvariantModel(theta=0.7))
    assert np.allclose(inv.data, 0.5, atol=1e-14)


def test_projection_invariant_under_gain():
    model = InvariantModel(theta=1.1)
    frame = random_colorful_frame(4)
    gained = frame_from_array(frame.as_array() * 1.3)
    a = project_invariant(frame, model)
    b = project_invariant(gained, model)
    assert np.abs(a.data - b.data).max() < 1e-9


def test_projection_two_colors_hit_exact_extremes():
    arr = np.zeros((4, 4, 3))
    arr[:, :2] = (0.6, 0.3, 0.3)
    arr[:, 2:] = (0.3, 0.3, 0.6)
    inv = project_invariant(frame_from_array(arr), InvariantModel(theta=0.3))
    vals = np.unique(inv.data)
    assert np.array_equal(vals, [0.0, 1.0])


def test_projection_output_shape_and_range():
    frame = random_colorful_frame(9, h=5, w=8)
    inv = project_invariant(frame, InvariantModel(theta=0.2))
    assert inv.width == 8 and inv.height == 5
    assert inv.data.shape == (40,)
    assert inv.data.min() >= 0.0 and inv.data.max() <= 1.0


# ------------------------------------------------------ wiener reflectance

def test_wiener_constant_frame_is_half():
    frame = frame_from_array(np.full((10, 10, 3), 0.3))
    refl = wiener_reflectance(frame, InvariantModel(theta=0.0))
    assert np.allclose(refl.data, 0.5, atol=1e-14)


def test_wiener_zero_noise_degenerates_to_half():
    # zero assumed noise means the smoother reproduces the input exactly,
    # so the reflectance residual vanishes
    frame = random_colorful_frame(2)
    refl = wiener_reflectance(frame, InvariantModel(theta=0.0, wiener_noise=0.0))
    assert np.allclose(refl.data, 0.5, atol=1e-12)


def test_wiener_preserves_step_edge_location():
    # with heavy smoothing the reflectance is a high-pass of log-luminance;
    # the strongest horizontal change must stay at the planted step
    arr = np.full((16, 32), 0.2)
    arr[:, 16:] = 0.8
    frame = frame_from_array(np.repeat(arr[:, :, None], 3, axis=2))
    refl = wiener_reflectance(frame, InvariantModel(theta=0.0, wiener_noise=10.0))
    img = refl.as_array()
    col_change = np.abs(np.diff(img, axis=1)).mean(axis=0)
    assert int(np.argmax(col_change)) == 15


def test_wiener_gain_invariant_in_log_domain():
    # multiplying the frame shifts log-luminance by a constant, which the
    # residual removes entirely
    model = InvariantModel(theta=0.0)
    frame = random_colorful_frame(6)
    gained = frame_from_array(frame.as_array() * 1.3)
    a = wiener_reflectance(frame, model)
    b = wiener_reflectance(gained, model)
    assert np.abs(a.data - b.data).max() < 1e-9


# ------------------------------------------------------------------ fusion

def test_psi_is_mean_of_branches():
    model = InvariantModel(theta=0.8)
    frame = random_colorful_frame(3)
    fused = psi(frame, model)
    proj = project_invariant(frame, model)
    refl = wiener_reflectance(frame, model)
    assert np.allclose(fused.data, 0.5 * (proj.data + refl.data), atol=1e-14)
    assert np.all(np.isfinite(fused.data))
    assert fused.data.min() >= 0.0 and fused.data.max() <= 1.0


def test_psi_agrees_across_gain_pair():
    model = InvariantModel(theta=1.3)
    frame = random_colorful_frame(8)
    gained = frame_from_array(frame.as_array() * 1.3)
    a = psi(frame, model)
    b = psi(gained, model)
    rms = float(np.sqrt(np.mean((a.data - b.data) ** 2)))
    assert rms < 0.05


def test_psi_sequence_maps_all_frames():
    model = InvariantModel(theta=0.5)
    frames = [random_colorful_frame(s) for s in range(4)]
    seq = Sequence(frames=frames, frame_ids=[f"in{i:06d}" for i in range(4)])
    out = psi_sequence(seq, model)
    assert len(out) == 4
    assert np.allclose(out[2].data, psi(frames[2], model).data)


# ------------------------------------------------------------------ model

def test_model_validation():
    with pytest.raises(ValueError):
        InvariantModel(theta=-0.1)
    with pytest.raises(ValueError):
        InvariantModel(theta=np.pi)
    with pytest.raises(ValueError):
        InvariantModel(theta=0.5, wiener_window=4)
    with pytest.raises(ValueError):
        InvariantModel(theta=0.5, wiener_window=1)
    with pytest.raises(ValueError):
        InvariantModel(theta=0.5, wiener_noise=-1.0)
    with pytest.raises(ValueError):
        InvariantModel(theta=0.5, epsilon_log=0.0)
