"""The .c3p container: header, section table and all coded sections.

Layout (little-endian, see FORMAT.md)::

    magic "C3GP" | version u16 | header block | section count u8 |
    section table (id u8, offset u32, length u32, crc32 u32) * count | sections

Offsets are absolute file offsets. Section payloads follow the table in id
order with no gaps, so every byte belongs to exactly one part.
"""

from __future__ import annotations

import struct
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import rangecoder as rc
from .attrcodec import AttributeStreamError, anchor_bits, decode_attributes, encode_attributes, hyper_context
from .entropy import EntropyModelWeights
from .hyperprior import CHANNELS, reassemble, split_high_res
from .mlp import MlpWeights
from .pca import PcaBasis, SceneBounds
from .planecodec import PlaneStreamError, code_all_planes, decode_all_planes
from .scene import ATTR_DIM, N_OFFSETS, AnchorSet, NormStats
from .trainer import USRO, VISRO, TrainConfig, TrainedModel, coding_coordinates, fit, round_fp16

MAGIC = b"C3GP"
VERSION = 1

SEC_POSITIONS = 1
SEC_WEIGHTS = 2
SEC_PLANES = (3, 4, 5, 6, 7)
SEC_MASK = 8
SEC_ATTRIBUTES = 9
SECTION_NAMES = {
    SEC_POSITIONS: "positions",
    SEC_WEIGHTS: "weights",
    3: "plane0",
    4: "plane1",
    5: "plane2",
    6: "plane3",
    7: "plane4",
    SEC_MASK: "mask",
    SEC_ATTRIBUTES: "attributes",
}

_PREFIX = struct.Struct("<4sH")
# N, K, B, ch, flags, lambda_r, lambda_tri, ardo_t, sampling, steps, seed
_FIXED = struct.Struct("<IBHBBffHBII")
_FLOATS = 2 * ATTR_DIM + 3 + 9 + 3 + 3 + 3  # norm shift/scale, pca mean/dirs/eigs, bounds lo/hi
_ENTRY = struct.Struct("<BIII")
HEADER_SIZE = _PREFIX.size + _FIXED.size + 4 * _FLOATS
FLAG_MASK = 1
_SAMPLING_CODES = {USRO: 0, VISRO: 1}


class ContainerError(ValueError):
    def __init__(self, message: str, section: str | None = None):
        super().__init__(f"{section}: {message}" if section else message)
        self.section = section


class ChecksumError(ContainerError):
    pass


@dataclass
class Header:
    n_anchors: int
    base_resolution: int
    norm: NormStats
    basis: PcaBasis
    bounds: SceneBounds
    has_mask: bool = False
    k: int = N_OFFSETS
    channels: int = CHANNELS
    lambda_r: float = 0.0
    lambda_tri: float = 0.0
    ardo_t: int = 0
    sampling: str = USRO
    steps: int = 0
    seed: int = 0


@dataclass
class Container:
    header: Header
    sections: dict[int, bytes]

    def size_report(self) -> dict[str, int]:
        out = {"header": HEADER_SIZE + 1 + _ENTRY.size * len(self.sections)}
        for sid in sorted(self.sections):
            out[SECTION_NAMES[sid]] = len(self.sections[sid])
        return out


# -- positions -----------------------------------------------------------------


def encode_positions(positions) -> bytes:
    positions = np.asarray(positions, dtype=np.float64)
    if not np.all(np.isfinite(positions)):
        raise ValueError("positions must be finite")
    round_fp16(positions)  # raises on overflow
    return positions.astype("<f2").tobytes()


def decode_positions(data: bytes, n: int) -> np.ndarray:
    if len(data) != 6 * n:
        raise ContainerError(f"expected {6 * n} bytes, got {len(data)}", "positions")
    return np.frombuffer(data, dtype="<f2").astype(np.float64).reshape(n, 3)


# -- weights -----------------------------------------------------------------------


def _mlp_list(weights: EntropyModelWeights) -> list[MlpWeights]:
    return weights.mlps()


def encode_weights(weights: EntropyModelWeights) -> bytes:
    """Manifest (MLP count u8; per MLP: layer count u8, dims u16...) then fp32 W, b per layer."""
    mlps = _mlp_list(weights)
    head = [struct.pack("<B", len(mlps))]
    body = []
    for m in mlps:
        dims = m.dims
        if len(dims) < 2:
            raise ValueError("empty MLP manifest")
        head.append(struct.pack(f"<B{len(dims)}H", len(dims) - 1, *dims))
        for w, b in zip(m.weights, m.biases):
            body.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
            body.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    return b"".join(head + body)


def read_manifest(data: bytes) -> tuple[list[tuple[int, ...]], int]:
    """(per-MLP dims, manifest length in bytes)."""
    if not data:
        raise ContainerError("empty MLP manifest", "weights")
    count = data[0]
    if count == 0:
        raise ContainerError("empty MLP manifest", "weights")
    pos = 1
    dims = []
    for _ in range(count):
        if pos >= len(data):
            raise ContainerError("truncated manifest", "weights")
        layers = data[pos]
        if layers == 0:
            raise ContainerError("MLP with no layers", "weights")
        end = pos + 1 + 2 * (layers + 1)
        if end > len(data):
            raise ContainerError("truncated manifest", "weights")
        dims.append(struct.unpack_from(f"<{layers + 1}H", data, pos + 1))
        pos = end
    return dims, pos


def manifest_payload_size(dims: list[tuple[int, ...]]) -> int:
    return 4 * sum(a * b + b for d in dims for a, b in zip(d[:-1], d[1:]))


def decode_weights(data: bytes) -> EntropyModelWeights:
    dims, pos = read_manifest(data)
    expect_h, expect_c, expect_a = EntropyModelWeights.layer_dims()
    expected = [tuple(expect_h), *[tuple(d) for d in expect_c], tuple(expect_a)]
    if dims != expected:
        raise ContainerError(f"manifest {dims} does not match the model layout", "weights")
    if len(data) - pos != manifest_payload_size(dims):
        raise ContainerError("payload length disagrees with the manifest", "weights")
    mlps = []
    for d in dims:
        ws, bs = [], []
        for a, b in zip(d[:-1], d[1:]):
            ws.append(np.frombuffer(data, dtype="<f4", count=a * b, offset=pos).astype(np.float64).reshape(a, b))
            pos += 4 * a * b
            bs.append(np.frombuffer(data, dtype="<f4", count=b, offset=pos).astype(np.float64))
            pos += 4 * b
        mlps.append(MlpWeights(ws, bs))
    weights = EntropyModelWeights(mlps[0], mlps[1:-1], mlps[-1])
    if not all(m.all_finite() for m in mlps):
        raise ContainerError("non-finite weight", "weights")
    return weights


# -- mask ------------------------------------------------------------------------------


def mask_probability(mask) -> int:
    """P(bit = 1) as round(p * 65535), capped to 1..65534 so both symbols stay codable."""
    mask = np.asarray(mask, dtype=bool)
    p = mask.mean() if mask.size else 0.5
    return int(min(max(int(np.rint(p * 65535)), 1), 65534))


def _mask_table(p16: int) -> np.ndarray:
    return np.array([0, rc.PROB_TOTAL - p16, rc.PROB_TOTAL], dtype=np.int64)


def encode_mask(mask) -> bytes:
    """u16 p16 then the bits range-coded against one Bernoulli table."""
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    p16 = mask_probability(mask)
    offsets = np.zeros(mask.size, dtype=np.int64)
    buf = np.zeros(mask.size // 4 + 64, dtype=np.uint8)
    n = rc._encode_batch(_mask_table(p16), offsets, mask.astype(np.int64), buf)
    return struct.pack("<H", p16) + buf[:n].tobytes()


def decode_mask(data: bytes, n: int, k: int = N_OFFSETS) -> np.ndarray:
    if len(data) < 2:
        raise ContainerError("truncated mask stream", "mask")
    (p16,) = struct.unpack_from("<H", data, 0)
    if not 1 <= p16 <= 65534:
        raise ContainerError("bad mask probability", "mask")
    count = n * k
    out = np.zeros(count, dtype=np.int64)
    err = rc._decode_batch(
        _mask_table(p16), np.zeros(count, dtype=np.int64), np.full(count, 2, dtype=np.int64),
        np.frombuffer(data, dtype=np.uint8, offset=2), out,
    )
    if err:
        raise ContainerError("truncated or corrupt mask stream", "mask")
    return out.astype(bool).reshape(n, k)


# -- header and table ----------------------------------------------------------------------


def _pack_header(h: Header) -> bytes:
    fixed = _FIXED.pack(
        h.n_anchors, h.k, h.base_resolution, h.channels, FLAG_MASK if h.has_mask else 0,
        h.lambda_r, h.lambda_tri, h.ardo_t, _SAMPLING_CODES[h.sampling], h.steps, h.seed,
    )
    floats = np.concatenate([
        h.norm.shift, h.norm.scale, h.basis.mean, h.basis.directions.reshape(-1), h.basis.eigenvalues,
        h.bounds.lo, h.bounds.hi,
    ]).astype("<f4")
    return _PREFIX.pack(MAGIC, VERSION) + fixed + floats.tobytes()


def _unpack_header(data: bytes) -> Header:
    if len(data) < _PREFIX.size:
        raise ContainerError("file too short for a header", "header")
    magic, version = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise ContainerError(f"bad magic {magic!r}", "header")
    if version != VERSION:
        raise ContainerError(f"unsupported version {version}", "header")
    if len(data) < HEADER_SIZE:
        raise ContainerError("truncated header", "header")
    n, k, b, ch, flags, lam, lam_tri, t, sampling, steps, seed = _FIXED.unpack_from(data, _PREFIX.size)
    if k != N_OFFSETS or ch != CHANNELS:
        raise ContainerError(f"unsupported K={k} or ch={ch}", "header")
    if sampling not in (0, 1):
        raise ContainerError("bad sampling code", "header")
    f = np.frombuffer(data, dtype="<f4", count=_FLOATS, offset=_PREFIX.size + _FIXED.size).astype(np.float64)
    o = 0

    def take(m):
        nonlocal o
        o += m
        return f[o - m : o]

    try:
        norm = NormStats(take(ATTR_DIM), take(ATTR_DIM))
        basis = PcaBasis(take(3), take(9).reshape(3, 3), take(3))
        bounds = SceneBounds(take(3), take(3))
    except ValueError as exc:
        raise ContainerError(str(exc), "header") from exc
    return Header(n, b, norm, basis, bounds, bool(flags & FLAG_MASK), k, ch, lam, lam_tri, t,
                  (USRO, VISRO)[sampling], steps, seed)


def assemble(container: Container) -> bytes:
    ids = sorted(container.sections)
    if len(set(ids)) != len(ids) or any(i not in SECTION_NAMES for i in ids):
        raise ContainerError("unknown or duplicate section id")
    head = _pack_header(container.header)
    offset = len(head) + 1 + _ENTRY.size * len(ids)
    table = [struct.pack("<B", len(ids))]
    for sid in ids:
        payload = container.sections[sid]
        table.append(_ENTRY.pack(sid, offset, len(payload), zlib.crc32(payload)))
        offset += len(payload)
    return head + b"".join(table) + b"".join(container.sections[s] for s in ids)


def disassemble(data: bytes) -> Container:
    data = bytes(data)
    header = _unpack_header(data)
    pos = HEADER_SIZE
    if len(data) < pos + 1:
        raise ContainerError("missing section table", "table")
    count = data[pos]
    pos += 1
    if len(data) < pos + _ENTRY.size * count:
        raise ContainerError("truncated section table", "table")
    entries = [_ENTRY.unpack_from(data, pos + i * _ENTRY.size) for i in range(count)]
    cursor = pos + _ENTRY.size * count
    sections = {}
    for sid, offset, length, crc in entries:
        name = SECTION_NAMES.get(sid)
        if name is None or sid in sections:
            raise ContainerError(f"unknown or duplicate section id {sid}", "table")
        if offset != cursor:
            raise ContainerError("sections overlap or leave gaps", name)
        if offset + length > len(data):
            raise ContainerError("section runs past end of file", name)
        payload = data[offset : offset + length]
        if zlib.crc32(payload) != crc:
            raise ChecksumError("CRC32 mismatch", name)
        sections[sid] = payload
        cursor = offset + length
    if cursor != len(data):
        raise ContainerError(f"{len(data) - cursor} trailing bytes", "table")
    required = {SEC_POSITIONS, SEC_WEIGHTS, *SEC_PLANES, SEC_ATTRIBUTES}
    missing = required - set(sections)
    if missing:
        raise ContainerError(f"missing sections {sorted(SECTION_NAMES[m] for m in missing)}", "table")
    if header.has_mask != (SEC_MASK in sections):
        raise ContainerError("mask flag disagrees with section table", "mask")
    return Container(header, sections)


# -- full pipeline ------------------------------------------------------------------------------


@dataclass
class CompressReport:
    sizes: dict[str, int]
    total_bytes: int
    reconstructed: AnchorSet
    anchor_bits: np.ndarray
    attr_mse: float  # normalized space, over all entries
    attr_estimate_bits: float
    plane_estimate_bits: list[float] = field(default_factory=list)


@dataclass
class DecodeReport:
    section_seconds: dict[str, float]
    header: Header

    @property
    def plane_seconds(self) -> float:
        return self.section_seconds.get("planes", 0.0)

    @property
    def attribute_seconds(self) -> float:
        return self.section_seconds.get("attributes", 0.0)


def compress_model(model: TrainedModel, anchors: AnchorSet) -> tuple[bytes, CompressReport]:
    """Code ``anchors`` with an already trained model."""
    from .planecodec import plane_rate_estimate

    positions16 = round_fp16(anchors.positions)
    u, v, gamma = coding_coordinates(model.basis, model.bounds, positions16)
    g = hyper_context(model.qplanes, u, v)
    attrs = model.norm.apply(anchors.attributes())
    code = encode_attributes(model.weights, g, gamma, attrs)
    subs = split_high_res(model.qplanes)
    streams = code_all_planes(subs, model.weights.arm)
    sections = {
        SEC_POSITIONS: encode_positions(anchors.positions),
        SEC_WEIGHTS: encode_weights(model.weights),
        SEC_ATTRIBUTES: code.payload,
    }
    for sid, s in zip(SEC_PLANES, streams):
        sections[sid] = s
    if anchors.mask is not None:
        sections[SEC_MASK] = encode_mask(anchors.mask)
    cfg = model.config
    header = Header(
        n_anchors=len(anchors), base_resolution=model.base_resolution, norm=model.norm, basis=model.basis,
        bounds=model.bounds, has_mask=anchors.mask is not None, lambda_r=cfg.lambda_r,
        lambda_tri=cfg.lambda_tri, ardo_t=cfg.ardo_interval, sampling=cfg.sampling_mode, steps=cfg.steps,
        seed=cfg.seed,
    )
    container = Container(header, sections)
    data = assemble(container)
    recon = AnchorSet.from_attributes(
        positions16, model.norm.invert(code.recon), np.zeros(len(anchors), dtype=np.uint32), anchors.mask
    )
    from .entropy import symbol_bits

    report = CompressReport(
        sizes=container.size_report(),
        total_bytes=len(data),
        reconstructed=recon,
        anchor_bits=anchor_bits(code),
        attr_mse=float(np.mean((code.recon - attrs) ** 2)),
        attr_estimate_bits=symbol_bits(code.symbols, code.params),
        plane_estimate_bits=[plane_rate_estimate(s, model.weights.arm) for s in subs],
    )
    return data, report


def compress(anchors: AnchorSet, config: TrainConfig, log_path=None) -> tuple[bytes, TrainedModel, CompressReport]:
    model = fit(anchors, config, log_path=log_path)
    data, report = compress_model(model, anchors)
    return data, model, report


def decompress(data: bytes, parallel_planes: bool = False) -> tuple[AnchorSet, DecodeReport]:
    """Decode order: header, positions, weights, planes (optionally concurrent), attributes, mask."""
    timings: dict[str, float] = {}
    t = time.perf_counter()
    c = disassemble(data)
    h = c.header
    timings["container"] = time.perf_counter() - t

    t = time.perf_counter()
    positions = decode_positions(c.sections[SEC_POSITIONS], h.n_anchors)
    timings["positions"] = time.perf_counter() - t

    t = time.perf_counter()
    weights = decode_weights(c.sections[SEC_WEIGHTS])
    timings["weights"] = time.perf_counter() - t

    t = time.perf_counter()
    shape = (CHANNELS, h.base_resolution, h.base_resolution)
    try:
        subs = decode_all_planes([c.sections[s] for s in SEC_PLANES], weights.arm, shape, parallel=parallel_planes)
    except PlaneStreamError as exc:
        raise ContainerError(str(exc), SECTION_NAMES[SEC_PLANES[exc.stream_index or 0]]) from exc
    qplanes = reassemble(subs)
    timings["planes"] = time.perf_counter() - t

    t = time.perf_counter()
    u, v, gamma = coding_coordinates(h.basis, h.bounds, positions)
    g = hyper_context(qplanes, u, v)
    try:
        code = decode_attributes(c.sections[SEC_ATTRIBUTES], weights, g, gamma)
    except AttributeStreamError as exc:
        raise ContainerError(str(exc), "attributes") from exc
    timings["attributes"] = time.perf_counter() - t

    mask = None
    if h.has_mask:
        t = time.perf_counter()
        mask = decode_mask(c.sections[SEC_MASK], h.n_anchors)
        timings["mask"] = time.perf_counter() - t

    anchors = AnchorSet.from_attributes(
        positions, h.norm.invert(code.recon), np.zeros(h.n_anchors, dtype=np.uint32), mask
    )
    return anchors, DecodeReport(timings, h)


def decode_planes_only(data: bytes, parallel: bool = False):
    """Quantized planes of a container (used for equivalence and timing checks)."""
    c = disassemble(data)
    weights = decode_weights(c.sections[SEC_WEIGHTS])
    shape = (CHANNELS, c.header.base_resolution, c.header.base_resolution)
    return reassemble(decode_all_planes([c.sections[s] for s in SEC_PLANES], weights.arm, shape, parallel))
