"""Byte-oriented range coder over 16-bit integer CDF tables.

The coder keeps a 56-bit interval inside 64-bit registers and propagates
carries through a cached byte plus a run of pending ``0xFF`` bytes, so the
output is exactly what an infinite-precision arithmetic coder would emit
after truncating every sub-interval to ``range >> 16`` granularity.

All state lives in small numpy arrays so the same kernels can be called from
Python and from other jitted loops (plane and attribute coders).
"""

from __future__ import annotations

import numba
import numpy as np

PROB_BITS = 16
PROB_TOTAL = 1 << PROB_BITS

_TOP_BITS = 56
_SHIFT = _TOP_BITS - 8
_MASK = (1 << _TOP_BITS) - 1
_RENORM = 1 << _SHIFT
_INIT_BYTES = _TOP_BITS // 8

# encoder state slots
_LOW, _RANGE, _CACHE, _PENDING, _FIRST, _POS = range(6)
# decoder state slots
_CODE, _DRANGE, _DPOS, _ERR = range(4)


class CorruptStreamError(ValueError):
    """Raised when a coded stream is truncated or inconsistent."""


@numba.njit(cache=True)
def _new_encoder_state():
    st = np.zeros(6, dtype=np.uint64)
    st[_RANGE] = np.uint64(_MASK)
    st[_FIRST] = np.uint64(1)
    return st


@numba.njit(cache=True)
def _put(st, buf, byte):
    pos = st[_POS]
    buf[pos] = np.uint8(byte & np.uint64(0xFF))
    st[_POS] = pos + np.uint64(1)


@numba.njit(cache=True)
def _shift_low(st, buf):
    low = st[_LOW]
    if (low >> np.uint64(_SHIFT)) < np.uint64(0xFF) or low > np.uint64(_MASK):
        carry = low >> np.uint64(_TOP_BITS)
        if st[_FIRST] == np.uint64(0):
            _put(st, buf, st[_CACHE] + carry)
        st[_FIRST] = np.uint64(0)
        while st[_PENDING] > np.uint64(0):
            _put(st, buf, np.uint64(0xFF) + carry)
            st[_PENDING] -= np.uint64(1)
        st[_CACHE] = (low >> np.uint64(_SHIFT)) & np.uint64(0xFF)
    else:
        st[_PENDING] += np.uint64(1)
    st[_LOW] = (low << np.uint64(8)) & np.uint64(_MASK)


@numba.njit(cache=True)
def _enc_renorm(st, buf):
    while st[_RANGE] < np.uint64(_RENORM):
        st[_RANGE] = st[_RANGE] << np.uint64(8)
        _shift_low(st, buf)


@numba.njit(cache=True)
def enc_freq(st, buf, cum, freq):
    """Narrow the interval to ``[cum, cum + freq)`` out of ``2**16``."""
    r = st[_RANGE] >> np.uint64(PROB_BITS)
    st[_LOW] += r * np.uint64(cum)
    st[_RANGE] = r * np.uint64(freq)
    _enc_renorm(st, buf)


@numba.njit(cache=True)
def enc_bypass(st, buf, value, bits):
    value = np.uint64(value)
    remaining = bits
    while remaining > 0:
        k = min(remaining, 16)
        remaining -= k
        chunk = (value >> np.uint64(remaining)) & np.uint64((1 << k) - 1)
        r = st[_RANGE] >> np.uint64(k)
        st[_LOW] += r * chunk
        st[_RANGE] = r
        _enc_renorm(st, buf)


@numba.njit(cache=True)
def enc_finish(st, buf):
    for _ in range(_INIT_BYTES + 1):
        _shift_low(st, buf)


@numba.njit(cache=True)
def _get(dst, data):
    pos = dst[_DPOS]
    if pos >= np.uint64(data.shape[0]):
        dst[_ERR] = np.uint64(1)
        dst[_DPOS] = pos + np.uint64(1)
        return np.uint64(0)
    dst[_DPOS] = pos + np.uint64(1)
    return np.uint64(data[pos])


@numba.njit(cache=True)
def _new_decoder_state(data):
    dst = np.zeros(4, dtype=np.uint64)
    dst[_DRANGE] = np.uint64(_MASK)
    code = np.uint64(0)
    for _ in range(_INIT_BYTES):
        code = (code << np.uint64(8)) | _get(dst, data)
    dst[_CODE] = code
    return dst


@numba.njit(cache=True)
def _dec_renorm(dst, data):
    while dst[_DRANGE] < np.uint64(_RENORM):
        dst[_DRANGE] = dst[_DRANGE] << np.uint64(8)
        dst[_CODE] = ((dst[_CODE] << np.uint64(8)) | _get(dst, data)) & np.uint64(_MASK)


@numba.njit(cache=True)
def dec_symbol(dst, data, cdf):
    """Decode one symbol index against ``cdf`` (length alphabet + 1)."""
    r = dst[_DRANGE] >> np.uint64(PROB_BITS)
    v = dst[_CODE] // r
    if v >= np.uint64(PROB_TOTAL):
        # only reachable on corrupt input; stay memory safe
        dst[_ERR] = np.uint64(1)
        v = np.uint64(PROB_TOTAL - 1)
    lo = 0
    hi = cdf.shape[0] - 1
    while hi - lo > 1:
        mid = (lo + hi) >> 1
        if np.uint64(cdf[mid]) <= v:
            lo = mid
        else:
            hi = mid
    c = np.uint64(cdf[lo])
    f = np.uint64(cdf[lo + 1]) - c
    dst[_CODE] -= r * c
    dst[_DRANGE] = r * f
    _dec_renorm(dst, data)
    return lo


@numba.njit(cache=True)
def dec_bypass(dst, data, bits):
    value = np.uint64(0)
    remaining = bits
    while remaining > 0:
        k = min(remaining, 16)
        remaining -= k
        r = dst[_DRANGE] >> np.uint64(k)
        v = dst[_CODE] // r
        if v >= np.uint64(1 << k):
            dst[_ERR] = np.uint64(1)
            v = np.uint64((1 << k) - 1)
        dst[_CODE] -= v * r
        dst[_DRANGE] = r
        _dec_renorm(dst, data)
        value = (value << np.uint64(k)) | v
    return value


def decoder_failed(dst) -> bool:
    return bool(dst[_ERR])


@numba.njit(cache=True)
def _encode_batch(cdfs, offsets, symbols, buf):
    st = _new_encoder_state()
    for t in range(symbols.shape[0]):
        o = offsets[t]
        s = symbols[t]
        c = cdfs[o + s]
        enc_freq(st, buf, c, cdfs[o + s + 1] - c)
    enc_finish(st, buf)
    return st[_POS]


@numba.njit(cache=True)
def _decode_batch(cdfs, offsets, sizes, data, out):
    dst = _new_decoder_state(data)
    for t in range(out.shape[0]):
        o = offsets[t]
        out[t] = dec_symbol(dst, data, cdfs[o:o + sizes[t] + 1])
    return dst[_ERR]


def encode_symbols(tables: list[np.ndarray], symbols) -> bytes:
    """Code ``symbols[t]`` against ``tables[t]`` in one pass."""
    symbols = np.asarray(symbols, dtype=np.int64)
    if len(tables) != len(symbols):
        raise ValueError("need one table per symbol")
    sizes = np.array([len(t) - 1 for t in tables], dtype=np.int64)
    if np.any(symbols < 0) or np.any(symbols >= sizes):
        raise ValueError("symbol index outside its alphabet")
    offsets = np.zeros(len(tables), dtype=np.int64)
    if len(tables) > 1:
        np.cumsum(sizes[:-1] + 1, out=offsets[1:])
    flat = np.concatenate(tables).astype(np.int64) if tables else np.zeros(0, np.int64)
    buf = np.zeros(8 * len(symbols) + 16, dtype=np.uint8)
    n = _encode_batch(flat, offsets, symbols, buf)
    return buf[:n].tobytes()


def decode_symbols(data: bytes, tables: list[np.ndarray]) -> np.ndarray:
    sizes = np.array([len(t) - 1 for t in tables], dtype=np.int64)
    offsets = np.zeros(len(tables), dtype=np.int64)
    if len(tables) > 1:
        np.cumsum(sizes[:-1] + 1, out=offsets[1:])
    flat = np.concatenate(tables).astype(np.int64) if tables else np.zeros(0, np.int64)
    out = np.zeros(len(tables), dtype=np.int64)
    err = _decode_batch(flat, offsets, sizes, np.frombuffer(data, dtype=np.uint8), out)
    if err:
        raise CorruptStreamError("range-coded stream is truncated or corrupt")
    return out


def check_cdf(cdf: np.ndarray) -> None:
    cdf = np.asarray(cdf)
    if cdf.ndim != 1 or len(cdf) < 2:
        raise ValueError("CDF table needs at least one symbol")
    if cdf[0] != 0 or cdf[-1] != PROB_TOTAL:
        raise ValueError(f"CDF must run from 0 to {PROB_TOTAL}")
    if np.any(np.diff(cdf) <= 0):
        raise ValueError("CDF must be strictly increasing")


class RangeEncoder:
    """Streaming encoder; call :meth:`finish` exactly once."""

    def __init__(self):
        self._st = _new_encoder_state()
        self._buf = np.zeros(4096, dtype=np.uint8)
        self._done = False

    def _reserve(self, nbytes: int = 32) -> None:
        if self._done:
            raise RuntimeError("encoder already finished")
        pos = int(self._st[_POS])
        if pos + nbytes > len(self._buf):
            grown = np.zeros(max(2 * len(self._buf), pos + nbytes), dtype=np.uint8)
            grown[:pos] = self._buf[:pos]
            self._buf = grown

    def encode_symbol(self, cdf: np.ndarray, index: int) -> None:
        if not 0 <= index < len(cdf) - 1:
            raise ValueError(f"symbol {index} outside alphabet of {len(cdf) - 1}")
        self._reserve(8)
        enc_freq(self._st, self._buf, int(cdf[index]), int(cdf[index + 1] - cdf[index]))

    def encode_bypass(self, value: int, bits: int) -> None:
        if not 0 <= bits <= 32:
            raise ValueError("bypass width must be in [0, 32]")
        if value < 0 or value >> bits:
            raise ValueError(f"value {value} does not fit in {bits} bits")
        self._reserve(16)
        enc_bypass(self._st, self._buf, value, bits)

    def finish(self) -> bytes:
        self._reserve(16)
        enc_finish(self._st, self._buf)
        self._done = True
        return self._buf[: int(self._st[_POS])].tobytes()


class RangeDecoder:
    def __init__(self, data: bytes):
        self._data = np.frombuffer(bytes(data), dtype=np.uint8)
        self._st = _new_decoder_state(self._data)

    def _check(self) -> None:
        if self._st[_ERR]:
            raise CorruptStreamError("range-coded stream is truncated or corrupt")

    def decode_symbol(self, cdf: np.ndarray) -> int:
        self._check()
        s = dec_symbol(self._st, self._data, np.asarray(cdf, dtype=np.int64))
        self._check()
        return int(s)

    def decode_bypass(self, bits: int) -> int:
        if not 0 <= bits <= 32:
            raise ValueError("bypass width must be in [0, 32]")
        self._check()
        v = dec_bypass(self._st, self._data, bits)
        self._check()
        return int(v)

    @property
    def consumed(self) -> int:
        return int(self._st[_DPOS])
