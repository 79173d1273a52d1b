"""Multi-grid DC/AC decomposition built on 2x Lanczos-3 resampling.

Images are ``(side, side, channels)`` float64 arrays.  Downsampling places
output sample ``j`` halfway between input pixels ``2j`` and ``2j + 1`` and
upsampling uses the matching quarter-pixel phases, so a down/up round trip
introduces no shift.  Borders are handled by edge replication.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, ResourceLimitError

LANCZOS_A = 3
MIN_SIDE = 4
MAX_SIDE = 1 << 14


def lanczos_kernel(x, a: int = LANCZOS_A):
    x = np.asarray(x, dtype=np.float64)
    out = np.sinc(x) * np.sinc(x / a)
    return np.where(np.abs(x) < a, out, 0.0)


def _down_taps(a: int = LANCZOS_A) -> tuple[np.ndarray, int]:
    # offsets t relative to input pixel 2j; sample position is 2j + 0.5
    offsets = np.arange(-2 * a + 1, 2 * a + 1)
    w = lanczos_kernel((offsets - 0.5) / 2.0, a)
    return w / w.sum(), int(offsets[0])


def _up_taps(a: int = LANCZOS_A) -> tuple[np.ndarray, np.ndarray, int]:
    # even output 2j sits at input coordinate j - 0.25, odd at j + 0.25
    offsets = np.arange(-a, a + 1)
    even = lanczos_kernel(offsets + 0.25, a)
    odd = lanczos_kernel(offsets - 0.25, a)
    return even / even.sum(), odd / odd.sum(), int(offsets[0])


DOWN_TAPS, DOWN_START = _down_taps()
UP_EVEN, UP_ODD, UP_START = _up_taps()


def as_image(img) -> np.ndarray:
    """Return ``img`` as a float64 ``(side, side, C)`` array, validating shape."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise InvalidInputError(f"expected (side, side, 1|3) image, got shape {arr.shape}")
    h, w, _ = arr.shape
    if h != w or h < 1 or h & (h - 1):
        raise InvalidInputError(f"image must be square with power-of-two side, got {h}x{w}")
    return arr


def grid_index(img: np.ndarray) -> int:
    return int(img.shape[0]).bit_length() - 1


def _filter_axis(x: np.ndarray, taps: np.ndarray, start: int, step: int, axis: int) -> np.ndarray:
    n = x.shape[axis]
    count = len(range(0, n, step))
    pad_lo = max(0, -start)
    pad_hi = max(0, start + len(taps) - 1 + (count - 1) * step - (n - 1))
    pad = [(0, 0)] * x.ndim
    pad[axis] = (pad_lo, pad_hi)
    xp = np.pad(x, pad, mode="edge")
    out = None
    for t, w in enumerate(taps):
        first = start + t + pad_lo
        sl = [slice(None)] * x.ndim
        sl[axis] = slice(first, first + step * (count - 1) + 1, step)
        term = w * xp[tuple(sl)]
        out = term if out is None else out + term
    return out


def lanczos_downsample(img) -> np.ndarray:
    img = as_image(img)
    if img.shape[0] < MIN_SIDE:
        raise InvalidInputError(f"downsample needs side >= {MIN_SIDE}, got {img.shape[0]}")
    rows = _filter_axis(img, DOWN_TAPS, DOWN_START, 2, axis=0)
    return _filter_axis(rows, DOWN_TAPS, DOWN_START, 2, axis=1)


def _upsample_axis(x: np.ndarray, axis: int) -> np.ndarray:
    even = _filter_axis(x, UP_EVEN, UP_START, 1, axis)
    odd = _filter_axis(x, UP_ODD, UP_START, 1, axis)
    shape = list(x.shape)
    shape[axis] *= 2
    out = np.empty(shape, dtype=np.float64)
    sl_even = [slice(None)] * x.ndim
    sl_odd = [slice(None)] * x.ndim
    sl_even[axis] = slice(0, None, 2)
    sl_odd[axis] = slice(1, None, 2)
    out[tuple(sl_even)] = even
    out[tuple(sl_odd)] = odd
    return out


def lanczos_upsample(img, max_side: int = MAX_SIDE) -> np.ndarray:
    img = as_image(img)
    if 2 * img.shape[0] > max_side:
        raise ResourceLimitError(f"upsampled side {2 * img.shape[0]} exceeds limit {max_side}")
    return _upsample_axis(_upsample_axis(img, 0), 1)


def upsample_to(img: np.ndarray, side: int) -> np.ndarray:
    while img.shape[0] < side:
        img = lanczos_upsample(img)
    return img


@dataclass
class GridPyramid:
    n_dc: int
    n_top: int
    dc: np.ndarray
    ac_layers: dict[int, np.ndarray] = field(default_factory=dict)


def forward_decompose(img, n_dc: int = 2) -> GridPyramid:
    """Split ``img`` into a coarse DC image at ``G_{n_dc}`` and one AC layer per finer grid."""
    img = as_image(img)
    top = grid_index(img)
    if not (2 <= n_dc < top):
        raise InvalidInputError(f"n_dc must satisfy 2 <= n_dc < {top}, got {n_dc}")
    layers = {}
    cur = img
    for n in range(top, n_dc, -1):
        low = lanczos_downsample(cur)
        layers[n] = cur - lanczos_upsample(low)
        cur = low
    return GridPyramid(n_dc=n_dc, n_top=top, dc=cur, ac_layers=layers)


def reconstruct_pyramid(pyr: GridPyramid, up_to: int | None = None) -> np.ndarray:
    if up_to is None:
        up_to = pyr.n_top
    if not (pyr.n_dc <= up_to <= pyr.n_top):
        raise InvalidInputError(f"up_to must lie in [{pyr.n_dc}, {pyr.n_top}], got {up_to}")
    cur = pyr.dc
    for n in range(pyr.n_dc + 1, up_to + 1):
        cur = lanczos_upsample(cur) + pyr.ac_layers[n]
    return cur
