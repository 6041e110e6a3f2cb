"""Vector-matrix hyperprior: two-scale PC1/PC2 feature planes and a Fourier code along PC3."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CHANNELS = 8
SCALES = (1, 2)
MIN_RESOLUTION = 64
MAX_RESOLUTION = 128
N_FREQUENCIES = 10
PLANE_FEATURE_DIM = CHANNELS * len(SCALES)  # 16
FOURIER_DIM = 2 * N_FREQUENCIES  # 20
SYMBOL_CAP = 2**15 - 1


class PlaneRangeError(ValueError):
    """A quantized plane value left the codable symbol range."""


def resolution_for(anchor_count: int, min_count: int, max_count: int) -> int:
    """Base plane resolution, linear in anchor count from 64 to 128, rounded to even."""
    if max_count <= min_count:
        return MAX_RESOLUTION if anchor_count >= max_count else MIN_RESOLUTION
    t = (anchor_count - min_count) / (max_count - min_count)
    t = min(max(t, 0.0), 1.0)
    b = MIN_RESOLUTION + t * (MAX_RESOLUTION - MIN_RESOLUTION)
    b = 2 * int(np.round(b / 2))
    return int(min(max(b, MIN_RESOLUTION), MAX_RESOLUTION))


@dataclass
class MultiScalePlanes:
    """Real-valued grids, ``grids[s]`` has shape (ch, r*B, r*B) for r = SCALES[s]."""

    grids: list[np.ndarray]

    def __post_init__(self):
        if len(self.grids) != len(SCALES):
            raise ValueError(f"expected {len(SCALES)} scales")
        self.grids = [np.asarray(g, dtype=np.float64) for g in self.grids]
        base = self.grids[0].shape[-1]
        for r, g in zip(SCALES, self.grids):
            if g.shape != (CHANNELS, r * base, r * base):
                raise ValueError(f"scale {r} grid has shape {g.shape}")
            if not np.all(np.isfinite(g)):
                raise ValueError("plane values must be finite")

    @property
    def base_resolution(self) -> int:
        return self.grids[0].shape[-1]

    @classmethod
    def init(cls, base_resolution: int, rng: np.random.Generator) -> "MultiScalePlanes":
        if not MIN_RESOLUTION <= base_resolution <= MAX_RESOLUTION:
            raise ValueError(f"B must lie in [{MIN_RESOLUTION}, {MAX_RESOLUTION}]")
        return cls(
            [rng.uniform(-0.5, 0.5, size=(CHANNELS, r * base_resolution, r * base_resolution)) for r in SCALES]
        )

    def copy(self) -> "MultiScalePlanes":
        return MultiScalePlanes([g.copy() for g in self.grids])


@dataclass
class QuantizedPlanes:
    grids: list[np.ndarray]

    def __post_init__(self):
        self.grids = [np.asarray(g, dtype=np.int64) for g in self.grids]
        if len(self.grids) != len(SCALES):
            raise ValueError(f"expected {len(SCALES)} scales")
        for g in self.grids:
            if g.size and np.max(np.abs(g)) > SYMBOL_CAP:
                raise PlaneRangeError("plane symbol outside the codable range")

    @property
    def base_resolution(self) -> int:
        return self.grids[0].shape[-1]

    def dequantize(self) -> MultiScalePlanes:
        return MultiScalePlanes([g.astype(np.float64) for g in self.grids])

    def equals(self, other: "QuantizedPlanes") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.grids, other.grids))


def _taps(side: int, t: np.ndarray):
    pos = np.asarray(t, dtype=np.float64) * (side - 1)
    i0 = np.clip(np.floor(pos).astype(np.int64), 0, max(side - 2, 0))
    frac = pos - i0
    return i0, frac


def bilinear_taps(side: int, u, v):
    """Corner indices and weights of the bilinear stencil (align-corners grid).

    Returns (rows, cols, weights), each shaped (n, 4) in corner order
    (0,0), (1,0), (0,1), (1,1).
    """
    i0, fu = _taps(side, u)
    j0, fv = _taps(side, v)
    i1 = np.minimum(i0 + 1, side - 1)
    j1 = np.minimum(j0 + 1, side - 1)
    rows = np.stack([i0, i1, i0, i1], axis=-1)
    cols = np.stack([j0, j0, j1, j1], axis=-1)
    weights = np.stack([(1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv], axis=-1)
    return rows, cols, weights


def query_plane_features(planes: MultiScalePlanes, u, v) -> np.ndarray:
    """Bilinear lookups in every scale, concatenated scale-major then channel-major.

    ``u`` indexes plane rows (PC1) and ``v`` columns (PC2). Returns (n, 16).
    """
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    out = []
    for grid in planes.grids:
        rows, cols, w = bilinear_taps(grid.shape[-1], u, v)
        corners = grid[:, rows, cols]  # (ch, n, 4)
        out.append(np.einsum("cnk,nk->nc", corners, w))
    return np.concatenate(out, axis=1)


def query_plane_features_backward(planes_shape, u, v, grad_out: np.ndarray) -> list[np.ndarray]:
    """Scatter d(loss)/d(feature) back onto plane entries."""
    grads = []
    for s, side in enumerate(planes_shape):
        rows, cols, w = bilinear_taps(side, u, v)
        g = grad_out[:, s * CHANNELS : (s + 1) * CHANNELS]  # (n, ch)
        flat_idx = (rows * side + cols).reshape(-1)
        contrib = (g[:, :, None] * w[:, None, :]).transpose(1, 0, 2).reshape(CHANNELS, -1)
        grid_grad = np.empty((CHANNELS, side * side))
        for c in range(CHANNELS):
            grid_grad[c] = np.bincount(flat_idx, weights=contrib[c], minlength=side * side)
        grads.append(grid_grad.reshape(CHANNELS, side, side))
    return grads


def fourier_encode(w) -> np.ndarray:
    """(sin(2^l pi w), cos(2^l pi w)) for l = 0..9, interleaved; shape (n, 20)."""
    w = np.atleast_1d(np.asarray(w, dtype=np.float64))
    freqs = (2.0 ** np.arange(N_FREQUENCIES)) * np.pi
    arg = w[:, None] * freqs[None, :]
    out = np.empty((w.shape[0], FOURIER_DIM))
    out[:, 0::2] = np.sin(arg)
    out[:, 1::2] = np.cos(arg)
    return out


def quantize_planes(planes: MultiScalePlanes) -> QuantizedPlanes:
    grids = []
    for g in planes.grids:
        if not np.all(np.isfinite(g)) or np.max(np.abs(g)) >= SYMBOL_CAP + 0.5:
            raise PlaneRangeError("plane magnitude exceeds the symbol cap; training diverged?")
        grids.append(np.rint(g).astype(np.int64))  # rint is round-half-even
    return QuantizedPlanes(grids)


def polyphase_split(grid: np.ndarray) -> list[np.ndarray]:
    """Four stride-2 phases of a (ch, 2S, 2S) grid, ordered (0,0), (0,1), (1,0), (1,1)."""
    grid = np.asarray(grid)
    if grid.ndim != 3 or grid.shape[1] % 2 or grid.shape[2] % 2:
        raise ValueError(f"polyphase split needs even sides, got {grid.shape}")
    return [np.ascontiguousarray(grid[:, a::2, b::2]) for a in (0, 1) for b in (0, 1)]


def polyphase_merge(phases: list[np.ndarray]) -> np.ndarray:
    if len(phases) != 4:
        raise ValueError("need exactly four phases")
    shape = phases[0].shape
    if any(p.shape != shape for p in phases) or len(shape) != 3:
        raise ValueError("phase shapes differ")
    ch, h, w = shape
    out = np.empty((ch, 2 * h, 2 * w), dtype=phases[0].dtype)
    for k, (a, b) in enumerate((a, b) for a in (0, 1) for b in (0, 1)):
        out[:, a::2, b::2] = phases[k]
    return out


def split_high_res(q: QuantizedPlanes) -> list[np.ndarray]:
    """The five equally sized planes that are coded independently: P1 then the phases of P2."""
    base = q.grids[0]
    phases = polyphase_split(q.grids[1])
    if phases[0].shape != base.shape:
        raise ValueError("scale-2 phases do not match the base plane shape")
    return [base] + phases


def reassemble(sub_planes: list[np.ndarray]) -> QuantizedPlanes:
    if len(sub_planes) != 5:
        raise ValueError("expected 5 sub-planes")
    shape = np.asarray(sub_planes[0]).shape
    if any(np.asarray(p).shape != shape for p in sub_planes):
        raise ValueError("sub-plane shapes differ")
    return QuantizedPlanes([np.asarray(sub_planes[0]), polyphase_merge([np.asarray(p) for p in sub_planes[1:]])])
