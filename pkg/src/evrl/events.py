"""Event-frame conversion and sensor noise.

The observation fed to the agent is a ternary H x W map: +1 where log
intensity rose by at least the contrast threshold since the previous
control step, -1 where it fell by at least the threshold, 0 elsewhere.
In simulation the map is computed by differencing two rendered
log-intensity frames; in deployment it is rebuilt from a raw event
stream by keeping, per pixel, the polarity of the last event inside the
control window.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

# Ternary observation frame: int8 array of shape (H, W), values in {-1, 0, +1}.
EventFrame = np.ndarray

# In-memory event stream layout. 16 bytes per record, little-endian, matching
# the EVT1 file record so streams can be written/read without repacking:
# t (u64, microseconds), x (u16, column), y (u16, row), p (i8, +-1), 3 pad bytes.
EVENT_DTYPE = np.dtype(
    {
        "names": ["t", "x", "y", "p"],
        "formats": ["<u8", "<u2", "<u2", "<i1"],
        "offsets": [0, 8, 10, 12],
        "itemsize": 16,
    }
)


class Event(NamedTuple):
    """One camera event: timestamp (microseconds), pixel, polarity (+-1)."""

    t: int
    x: int
    y: int
    p: int


@dataclass(frozen=True)
class EmulatorConfig:
    """Contrast threshold (log-intensity units) and impulse-noise rate."""

    threshold: float = 0.2
    noise_prob: float = 0.001

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError(f"threshold must be > 0, got {self.threshold}")
        if not 0.0 <= self.noise_prob <= 1.0:
            raise ValueError(f"noise_prob must be in [0, 1], got {self.noise_prob}")


def events_array(events) -> np.ndarray:
    """Normalize an event sequence to a structured array of EVENT_DTYPE.

    Accepts an existing structured array (returned as-is), or any iterable
    of (t, x, y, p) tuples / Event instances.
    """
    if isinstance(events, np.ndarray) and events.dtype == EVENT_DTYPE:
        return events
    events = list(events)
    out = np.zeros(len(events), dtype=EVENT_DTYPE)
    for i, (t, x, y, p) in enumerate(events):
        out[i] = (t, x, y, p)
    return out


def emulate_frame(l_prev: np.ndarray, l_curr: np.ndarray, threshold: float) -> EventFrame:
    """Ternary difference of two log-intensity frames.

    +1 where l_curr - l_prev >= threshold, -1 where <= -threshold, else 0.
    Both boundaries are inclusive.
    """
    if l_prev.shape != l_curr.shape:
        raise ValueError(f"frame shape mismatch: {l_prev.shape} vs {l_curr.shape}")
    if not threshold > 0:
        raise ValueError(f"threshold must be > 0, got {threshold}")
    diff = l_curr.astype(np.float64) - l_prev.astype(np.float64)
    out = np.zeros(l_prev.shape, dtype=np.int8)
    out[diff >= threshold] = 1
    out[diff <= -threshold] = -1
    return out


def accumulate_events(events, t_start: int, t_end: int, width: int, height: int) -> EventFrame:
    """Collapse the events with t_start <= t < t_end into one ternary frame.

    Events are applied in ascending timestamp order (a stable sort is applied
    internally, so slightly reordered capture streams are accepted); when
    several events hit the same pixel inside the window, the last one wins.
    """
    if not t_start < t_end:
        raise ValueError(f"empty window: t_start={t_start} >= t_end={t_end}")
    ev = events_array(events)
    frame = np.zeros((height, width), dtype=np.int8)
    if len(ev) == 0:
        return frame
    x = ev["x"].astype(np.int64)
    y = ev["y"].astype(np.int64)
    if (x >= width).any() or (y >= height).any():
        bad = int(np.argmax((x >= width) | (y >= height)))
        raise ValueError(
            f"event {bad} out of range: (x={x[bad]}, y={y[bad]}) "
            f"for {width}x{height} sensor"
        )
    t = ev["t"].astype(np.uint64)
    inside = (t >= t_start) & (t < t_end)
    if not inside.any():
        return frame
    order = np.argsort(t[inside], kind="stable")
    lin = (y[inside][order] * width + x[inside][order])
    pol = ev["p"][inside][order]
    # Keep only the final write per pixel: first occurrence in the reversed
    # sorted order is the last event for that pixel.
    _, rev_first = np.unique(lin[::-1], return_index=True)
    keep = len(lin) - 1 - rev_first
    frame.ravel()[lin[keep]] = pol[keep]
    return frame


def inject_impulse_noise(frame: EventFrame, noise_prob: float, rng: np.random.Generator) -> EventFrame:
    """Overwrite each pixel, independently with probability noise_prob, by a
    fair-coin polarity from {-1, +1}. Returns a new frame."""
    if not 0.0 <= noise_prob <= 1.0:
        raise ValueError(f"noise_prob must be in [0, 1], got {noise_prob}")
    out = frame.copy()
    if noise_prob == 0.0:
        return out
    hit = rng.random(frame.shape) < noise_prob
    sign = np.where(rng.random(frame.shape) < 0.5, -1, 1).astype(np.int8)
    out[hit] = sign[hit]
    return out
