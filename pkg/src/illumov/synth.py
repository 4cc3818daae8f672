"""Synthetic sequences with known foreground, shadows, and lighting events.

Ground-truth masks cover object pixels only; shadows and illumination events
never enter the mask.  Illumination events multiply all channels by the same
gain, so the log-chromaticity projection is exactly invariant to them by
construction (a "tinted-gain" event with per-channel gains is available to
stress the luminance branch instead).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .io import Frame, MaskSequence, Sequence

EVENT_KINDS = ("global-gain", "half-frame-gain", "soft-shadow-ellipse", "tinted-gain")


@dataclass
class MovingObject:
    """Square object of a fixed color on a linear trajectory (top-left corner)."""

    size: int
    color: tuple[float, float, float]
    start: tuple[float, float]
    end: tuple[float, float]


@dataclass
class IlluminationEvent:
    """One scripted lighting change over an inclusive frame range.

    ``magnitude`` is a scalar gain, a (first, last) pair for a linear ramp, or
    an (r, g, b) triple for a tinted gain.  Soft shadows instead darken an
    ellipse (``radii``, moving from ``center_start`` to ``center_end``) by the
    configured shadow darkening factor.
    """

    kind: str
    start: int
    end: int
    magnitude: float | tuple = 1.0
    center_start: tuple[float, float] | None = None
    center_end: tuple[float, float] | None = None
    radii: tuple[float, float] = (10.0, 6.0)


@dataclass
class SynthConfig:
    width: int = 64
    height: int = 64
    n_frames: int = 100
    background: str = "gradient"  # flat | gradient | texture
    objects: list[MovingObject] = field(default_factory=list)
    events: list[IlluminationEvent] = field(default_factory=list)
    shadow_darkening: float = 0.85
    noise_std: float = 0.0
    seed: int = 0


def _validate(config: SynthConfig) -> None:
    if config.width < 1 or config.height < 1 or config.n_frames < 1:
        raise ValueError("width, height, n_frames must be positive")
    if config.background not in ("flat", "gradient", "texture"):
        raise ValueError(f"unknown background kind {config.background!r}")
    if not 0.0 < config.shadow_darkening < 1.0:
        raise ValueError("shadow_darkening must lie in (0, 1)")
    if config.noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    for obj in config.objects:
        for x, y in (obj.start, obj.end):
            if not (0 <= x <= config.width - obj.size and 0 <= y <= config.height - obj.size):
                raise ValueError(f"object trajectory leaves the frame: {obj}")
    for ev in config.events:
        if ev.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {ev.kind!r}")
        if not 0 <= ev.start <= ev.end < config.n_frames:
            raise ValueError(f"event range [{ev.start}, {ev.end}] outside sequence")
        if ev.kind == "soft-shadow-ellipse" and (ev.center_start is None or ev.center_end is None):
            raise ValueError("soft-shadow-ellipse requires center_start and center_end")


def _background(config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    h, w = config.height, config.width
    xs = np.linspace(0.0, 1.0, w)[None, :, None]
    ys = np.linspace(0.0, 1.0, h)[:, None, None]
    if config.background == "flat":
        base = np.empty((h, w, 3))
        base[:] = (0.50, 0.45, 0.40)
        return base
    if config.background == "gradient":
        offsets = np.array([0.03, 0.0, -0.03])
        base = 0.30 + 0.25 * xs + 0.10 * ys + offsets
        return np.clip(base, 0.0, 1.0)
    # texture: smooth low-frequency random field, identical in all channels
    coarse = rng.uniform(0.3, 0.7, size=(8, 8))
    yy = np.linspace(0, 7, h)
    xx = np.linspace(0, 7, w)
    y0 = np.floor(yy).astype(int)
    x0 = np.floor(xx).astype(int)
    y1 = np.minimum(y0 + 1, 7)
    x1 = np.minimum(x0 + 1, 7)
    fy = (yy - y0)[:, None]
    fx = (xx - x0)[None, :]
    smooth = (coarse[np.ix_(y0, x0)] * (1 - fy) * (1 - fx)
              + coarse[np.ix_(y0, x1)] * (1 - fy) * fx
              + coarse[np.ix_(y1, x0)] * fy * (1 - fx)
              + coarse[np.ix_(y1, x1)] * fy * fx)
    return np.repeat(smooth[:, :, None], 3, axis=2)


def _event_gain(ev: IlluminationEvent, frame: int) -> float:
    if isinstance(ev.magnitude, (tuple, list)):
        first, last = ev.magnitude
        span = max(ev.end - ev.start, 1)
        return first + (last - first) * (frame - ev.start) / span
    return float(ev.magnitude)


def _lerp(p0, p1, t: float) -> tuple[float, float]:
    return (p0[0] + (p1[0] - p0[0]) * t, p0[1] + (p1[1] - p0[1]) * t)


def _apply_shadow(img: np.ndarray, ev: IlluminationEvent, t: float,
                  darkening: float) -> None:
    h, w = img.shape[:2]
    cx, cy = _lerp(ev.center_start, ev.center_end, t)
    rx, ry = ev.radii
    yy, xx = np.mgrid[0:h, 0:w]
    dist_sq = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2
    # smooth elliptical profile: full darkening at center, ~1 beyond 2 radii
    factor = 1.0 - (1.0 - darkening) * np.exp(-dist_sq)
    img *= factor[:, :, None]


def generate(config: SynthConfig) -> tuple[Sequence, MaskSequence, list[dict]]:
    """Render the sequence, its ground-truth masks, and an event log."""
    _validate(config)
    rng = np.random.default_rng(config.seed)
    background = _background(config, rng)
    h, w = config.height, config.width
    n = config.n_frames

    frames: list[Frame] = []
    masks: list[np.ndarray] = []
    ids = [f"{i:06d}" for i in range(n)]
    for i in range(n):
        t = i / (n - 1) if n > 1 else 0.0
        img = background.copy()
        for ev in config.events:
            if not ev.start <= i <= ev.end:
                continue
            span = max(ev.end - ev.start, 1)
            local_t = (i - ev.start) / span
            if ev.kind == "global-gain":
                img *= _event_gain(ev, i)
            elif ev.kind == "half-frame-gain":
                img[:, : w // 2] *= _event_gain(ev, i)
            elif ev.kind == "tinted-gain":
                img *= np.asarray(ev.magnitude, dtype=np.float64)
            elif ev.kind == "soft-shadow-ellipse":
                _apply_shadow(img, ev, local_t, config.shadow_darkening)
        mask = np.zeros((h, w), dtype=np.uint8)
        for obj in config.objects:
            x, y = _lerp(obj.start, obj.end, t)
            x, y = round(x), round(y)
            img[y : y + obj.size, x : x + obj.size] = obj.color
            mask[y : y + obj.size, x : x + obj.size] = 1
        if config.noise_std > 0:
            img = img + rng.normal(0.0, config.noise_std, size=img.shape)
        img = np.clip(img, 0.0, 1.0)
        frames.append(Frame(data=img.reshape(-1), width=w, height=h, channels=3))
        masks.append(mask)

    log = []
    for ev in config.events:
        entry = {"kind": ev.kind, "start": ev.start, "end": ev.end}
        if ev.kind == "soft-shadow-ellipse":
            entry.update(center_start=list(ev.center_start),
                         center_end=list(ev.center_end),
                         radii=list(ev.radii),
                         darkening=config.shadow_darkening)
        else:
            entry["magnitude"] = (list(ev.magnitude)
                                  if isinstance(ev.magnitude, (tuple, list))
                                  else ev.magnitude)
        log.append(entry)
    return (Sequence(frames=frames, frame_ids=ids),
            MaskSequence(masks=masks, frame_ids=ids),
            log)


def standard_fixture_config() -> SynthConfig:
    """The fixed desk-scale benchmark sequence used by the acceptance tests.

    64x64, 100 frames: one 8x8 moving object, a global gain ramp 0.6 -> 1.4
    over frames 30-70, one moving soft shadow, Gaussian noise std 0.01.
    """
    return SynthConfig(
        width=64,
        height=64,
        n_frames=100,
        background="gradient",
        objects=[
            MovingObject(size=8, color=(0.90, 0.15, 0.10),
                         start=(4.0, 8.0), end=(52.0, 48.0)),
        ],
        events=[
            IlluminationEvent(kind="global-gain", start=30, end=70,
                              magnitude=(0.6, 1.4)),
            IlluminationEvent(kind="soft-shadow-ellipse", start=0, end=99,
                              center_start=(50.0, 12.0), center_end=(12.0, 50.0),
                              radii=(10.0, 7.0)),
        ],
        shadow_darkening=0.85,
        noise_std=0.01,
        seed=7,
    )
