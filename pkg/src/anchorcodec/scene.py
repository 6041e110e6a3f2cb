"""Anchor data model, ANCH file I/O, synthetic scenes and attribute normalization."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FEATURE_DIM = 50
N_OFFSETS = 10
SCALING_DIM = 6
ATTR_DIM = FEATURE_DIM + 3 * N_OFFSETS + SCALING_DIM  # 86
MIN_ANCHORS = 4

ANCH_MAGIC = b"ANCH"
ANCH_VERSION = 1
_HEADER = struct.Struct("<4sHIIB")
_RECORD = np.dtype(
    [
        ("position", "<f4", (3,)),
        ("feature", "<f4", (FEATURE_DIM,)),
        ("offsets", "<f4", (3 * N_OFFSETS,)),
        ("scaling", "<f4", (SCALING_DIM,)),
        ("visibility", "<u4"),
    ]
)


class AnchorFormatError(ValueError):
    """Bad magic, unsupported version or inconsistent header."""


class AnchorCorruptionError(ValueError):
    """File shorter or longer than its header promises."""


class AnchorValidationError(ValueError):
    """Structurally fine data that violates an AnchorSet invariant."""


@dataclass(frozen=True)
class Anchor:
    position: np.ndarray
    feature: np.ndarray
    offsets: np.ndarray
    scaling: np.ndarray
    visibility: int


@dataclass(frozen=True, eq=False)
class AnchorSet:
    """N anchors stored column-wise.

    ``offsets`` has shape (N, K, 3); ``mask`` is an optional (N, K) boolean
    array of per-offset flags.
    """

    positions: np.ndarray
    features: np.ndarray
    offsets: np.ndarray
    scaling: np.ndarray
    visibility: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        n = pos.shape[0] if pos.ndim == 2 else -1
        arrays = {
            "positions": (pos, (n, 3)),
            "features": (np.asarray(self.features, dtype=np.float64), (n, FEATURE_DIM)),
            "offsets": (np.asarray(self.offsets, dtype=np.float64), (n, N_OFFSETS, 3)),
            "scaling": (np.asarray(self.scaling, dtype=np.float64), (n, SCALING_DIM)),
        }
        for name, (arr, shape) in arrays.items():
            if arr.shape != shape:
                raise AnchorValidationError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise AnchorValidationError(f"{name} contains non-finite values")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if n < MIN_ANCHORS:
            raise AnchorValidationError(f"need at least {MIN_ANCHORS} anchors, got {max(n, 0)}")
        vis = np.asarray(self.visibility)
        if vis.shape != (n,) or np.any(vis < 0):
            raise AnchorValidationError("visibility must be N non-negative counts")
        vis = vis.astype(np.uint32)
        vis.setflags(write=False)
        object.__setattr__(self, "visibility", vis)
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != (n, N_OFFSETS):
                raise AnchorValidationError(f"mask must have shape {(n, N_OFFSETS)}")
            mask.setflags(write=False)
            object.__setattr__(self, "mask", mask)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def __getitem__(self, i: int) -> Anchor:
        return Anchor(
            self.positions[i], self.features[i], self.offsets[i], self.scaling[i], int(self.visibility[i])
        )

    @classmethod
    def from_anchors(cls, anchors: list[Anchor], mask=None) -> "AnchorSet":
        return cls(
            positions=np.array([a.position for a in anchors], dtype=np.float64).reshape(-1, 3),
            features=np.array([a.feature for a in anchors], dtype=np.float64).reshape(-1, FEATURE_DIM),
            offsets=np.array([a.offsets for a in anchors], dtype=np.float64).reshape(-1, N_OFFSETS, 3),
            scaling=np.array([a.scaling for a in anchors], dtype=np.float64).reshape(-1, SCALING_DIM),
            visibility=np.array([a.visibility for a in anchors], dtype=np.int64),
            mask=mask,
        )

    @classmethod
    def from_attributes(cls, positions, attributes, visibility, mask=None) -> "AnchorSet":
        """Build from an (N, 86) attribute matrix laid out as feature|offsets|scaling."""
        attributes = np.asarray(attributes, dtype=np.float64)
        n = attributes.shape[0]
        return cls(
            positions=positions,
            features=attributes[:, :FEATURE_DIM],
            offsets=attributes[:, FEATURE_DIM : FEATURE_DIM + 3 * N_OFFSETS].reshape(n, N_OFFSETS, 3),
            scaling=attributes[:, FEATURE_DIM + 3 * N_OFFSETS :],
            visibility=visibility,
            mask=mask,
        )

    def attributes(self) -> np.ndarray:
        n = len(self)
        return np.concatenate(
            [self.features, self.offsets.reshape(n, 3 * N_OFFSETS), self.scaling], axis=1
        )

    def replace(self, **changes) -> "AnchorSet":
        fields_ = dict(
            positions=self.positions,
            features=self.features,
            offsets=self.offsets,
            scaling=self.scaling,
            visibility=self.visibility,
            mask=self.mask,
        )
        fields_.update(changes)
        return AnchorSet(**fields_)

    def equals(self, other: "AnchorSet") -> bool:
        same_mask = (self.mask is None and other.mask is None) or (
            self.mask is not None and other.mask is not None and np.array_equal(self.mask, other.mask)
        )
        return (
            len(self) == len(other)
            and same_mask
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.offsets, other.offsets)
            and np.array_equal(self.scaling, other.scaling)
            and np.array_equal(self.visibility, other.visibility)
        )


def anchor_set_to_bytes(anchors: AnchorSet) -> bytes:
    n = len(anchors)
    flags = 1 if anchors.mask is not None else 0
    records = np.zeros(n, dtype=_RECORD)
    records["position"] = anchors.positions
    records["feature"] = anchors.features
    records["offsets"] = anchors.offsets.reshape(n, -1)
    records["scaling"] = anchors.scaling
    records["visibility"] = anchors.visibility
    parts = [_HEADER.pack(ANCH_MAGIC, ANCH_VERSION, n, N_OFFSETS, flags), records.tobytes()]
    if anchors.mask is not None:
        parts.append(np.packbits(anchors.mask.reshape(-1), bitorder="little").tobytes())
    return b"".join(parts)


def anchor_set_from_bytes(data: bytes) -> AnchorSet:
    if len(data) < _HEADER.size:
        raise AnchorCorruptionError("file shorter than ANCH header")
    magic, version, n, k, flags = _HEADER.unpack_from(data, 0)
    if magic != ANCH_MAGIC:
        raise AnchorFormatError(f"bad magic {magic!r}")
    if version != ANCH_VERSION:
        raise AnchorFormatError(f"unsupported ANCH version {version}")
    if k != N_OFFSETS:
        raise AnchorFormatError(f"K={k} unsupported, expected {N_OFFSETS}")
    has_mask = bool(flags & 1)
    mask_bytes = math.ceil(n * k / 8) if has_mask else 0
    expected = _HEADER.size + n * _RECORD.itemsize + mask_bytes
    if len(data) != expected:
        raise AnchorCorruptionError(f"expected {expected} bytes for N={n}, got {len(data)}")
    records = np.frombuffer(data, dtype=_RECORD, count=n, offset=_HEADER.size)
    mask = None
    if has_mask:
        bits = np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size + n * _RECORD.itemsize)
        mask = np.unpackbits(bits, bitorder="little")[: n * k].astype(bool).reshape(n, k)
    return AnchorSet(
        positions=records["position"],
        features=records["feature"],
        offsets=records["offsets"].reshape(n, N_OFFSETS, 3),
        scaling=records["scaling"],
        visibility=records["visibility"],
        mask=mask,
    )


def save_anchor_set(anchors: AnchorSet, path) -> None:
    Path(path).write_bytes(anchor_set_to_bytes(anchors))


def load_anchor_set(path) -> AnchorSet:
    return anchor_set_from_bytes(Path(path).read_bytes())


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a clustered, anisotropic synthetic anchor cloud.

    ``visibility_radius`` is measured from the scene center (the origin);
    anchors inside it get a positive view count decaying linearly with
    distance, anchors outside get zero.
    """

    n_anchors: int = 5000
    n_clusters: int = 12
    cluster_spread: float = 0.35
    anisotropy: tuple[float, float, float] = (10.0, 5.0, 1.0)
    visibility_radius: float = math.inf
    seed: int = 0
    n_views: int = 64
    noise_level: float = 0.05
    n_waves: int = 24

    def __post_init__(self):
        if self.n_anchors < MIN_ANCHORS:
            raise ValueError(f"n_anchors must be >= {MIN_ANCHORS}")
        a = tuple(float(x) for x in self.anisotropy)
        if len(a) != 3 or min(a) <= 0 or not (a[0] >= a[1] >= a[2]):
            raise ValueError("anisotropy ratios must be positive and descending")
        if self.n_clusters < 1 or self.cluster_spread <= 0 or self.visibility_radius < 0:
            raise ValueError("invalid cluster or visibility parameters")
        object.__setattr__(self, "anisotropy", a)


def _smooth_field(rng, coords, n_out, n_waves, freq_scale):
    freqs = rng.normal(size=(n_waves, 3)) * freq_scale
    phases = rng.uniform(0, 2 * np.pi, size=n_waves)
    amps = rng.normal(size=(n_waves, n_out)) / np.sqrt(n_waves / 2)
    return np.sin(coords @ freqs.T + phases) @ amps


def gen_synthetic_scene(spec: SyntheticSpec) -> AnchorSet:
    rng = np.random.default_rng(spec.seed)
    aniso = np.asarray(spec.anisotropy)
    n = spec.n_anchors
    centers = rng.normal(size=(spec.n_clusters, 3))
    labels = rng.integers(0, spec.n_clusters, size=n)
    unit = centers[labels] + spec.cluster_spread * rng.normal(size=(n, 3))
    # whiten so the cloud's sample covariance is exactly diag(anisotropy**2)
    unit -= unit.mean(axis=0)
    evals, evecs = np.linalg.eigh(np.cov(unit, rowvar=False, bias=True))
    unit = unit @ evecs @ np.diag(1.0 / np.sqrt(np.maximum(evals, 1e-12))) @ evecs.T
    positions = unit * aniso

    # smooth in the isotropic frame, weaker variation along the thin axis
    freq_scale = np.array([1.2, 1.2, 0.4])
    signal = _smooth_field(rng, unit, ATTR_DIM, spec.n_waves, freq_scale)
    attrs = signal + spec.noise_level * rng.normal(size=signal.shape)
    attrs[:, FEATURE_DIM : FEATURE_DIM + 3 * N_OFFSETS] *= 0.2
    attrs[:, FEATURE_DIM + 3 * N_OFFSETS :] = 0.5 * attrs[:, FEATURE_DIM + 3 * N_OFFSETS :] - 3.0

    dist = np.linalg.norm(positions, axis=1)
    if spec.visibility_radius > 0:
        falloff = np.clip(1.0 - dist / spec.visibility_radius, 0.0, 1.0)
        visibility = np.ceil(spec.n_views * falloff).astype(np.int64)
    else:
        visibility = np.zeros(n, dtype=np.int64)

    f32 = lambda a: np.asarray(a, dtype=np.float32).astype(np.float64)  # noqa: E731
    return AnchorSet.from_attributes(f32(positions), f32(attrs), visibility)


def radius_covering(spec: SyntheticSpec, fraction: float) -> float:
    """Visibility radius that makes ``fraction`` of the anchors visible."""
    positions = gen_synthetic_scene(spec).positions
    dist = np.sort(np.linalg.norm(positions, axis=1))
    k = int(round(fraction * len(dist)))
    if k <= 0:
        return 0.0
    if k >= len(dist):
        return float(dist[-1]) * 1.01
    return float(0.5 * (dist[k - 1] + dist[k]))


@dataclass(frozen=True)
class NormStats:
    """Per-channel affine stats over the 86 attribute channels."""

    shift: np.ndarray = field(default_factory=lambda: np.zeros(ATTR_DIM))
    scale: np.ndarray = field(default_factory=lambda: np.ones(ATTR_DIM))

    def __post_init__(self):
        shift = np.asarray(self.shift, dtype=np.float64)
        scale = np.asarray(self.scale, dtype=np.float64)
        if shift.shape != (ATTR_DIM,) or scale.shape != (ATTR_DIM,):
            raise ValueError(f"NormStats need {ATTR_DIM} shift/scale pairs")
        if np.any(scale <= 0) or not np.all(np.isfinite(scale)) or not np.all(np.isfinite(shift)):
            raise ValueError("scales must be finite and positive")
        object.__setattr__(self, "shift", shift)
        object.__setattr__(self, "scale", scale)

    def apply(self, attrs: np.ndarray) -> np.ndarray:
        return (attrs - self.shift) / self.scale

    def invert(self, normalized: np.ndarray) -> np.ndarray:
        return normalized * self.scale + self.shift


def fit_norm_stats(attrs: np.ndarray) -> NormStats:
    attrs = np.asarray(attrs, dtype=np.float64)
    if attrs.ndim != 2 or attrs.shape[0] < 1:
        raise ValueError("need at least one anchor")
    shift = attrs.mean(axis=0)
    scale = attrs.std(axis=0)
    # a constant channel is already centered; leave it unscaled
    scale = np.where(scale > 0, scale, 1.0)
    return NormStats(shift, scale)


def normalize_attributes(anchors: AnchorSet) -> tuple[AnchorSet, NormStats]:
    attrs = anchors.attributes()
    stats = fit_norm_stats(attrs)
    normed = AnchorSet.from_attributes(
        anchors.positions, stats.apply(attrs), anchors.visibility, anchors.mask
    )
    return normed, stats


def denormalize_attributes(anchors: AnchorSet, stats: NormStats) -> AnchorSet:
    return AnchorSet.from_attributes(
        anchors.positions, stats.invert(anchors.attributes()), anchors.visibility, anchors.mask
    )
