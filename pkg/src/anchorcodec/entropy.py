"""Coding distributions for anchor attributes.

The hyper-decoder maps the 36-d hyperprior context (plane feature + Fourier
code) to Gaussian parameters for the first feature chunk, the offsets and the
scaling. The channel-wise autoregressive model (CARM) predicts feature chunks
2..5 from the same context plus the already decoded chunks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import _cdf
from .hyperprior import FOURIER_DIM, PLANE_FEATURE_DIM, SYMBOL_CAP
from .mlp import MlpWeights, mlp_rows_exact
from .scene import ATTR_DIM, FEATURE_DIM, N_OFFSETS

SIGMA_MIN = 1e-4
Q_MIN = 1e-4
Q_MAX = 10.0
P_FLOOR = 2.0**-16
N_CHUNKS = 5
CHUNK = FEATURE_DIM // N_CHUNKS  # 10
CONTEXT_DIM = PLANE_FEATURE_DIM + FOURIER_DIM  # 36
HYPER_HIDDEN = 96
CARM_HIDDEN = 64
ARM_HIDDEN = 32

# attribute-vector column ranges; coding order is chunk1, offsets, scaling, chunk2..chunk5
_OFF = FEATURE_DIM
_SCL = FEATURE_DIM + 3 * N_OFFSETS
GROUPS: list[tuple[str, slice]] = [
    ("chunk1", slice(0, CHUNK)),
    ("offsets", slice(_OFF, _SCL)),
    ("scaling", slice(_SCL, ATTR_DIM)),
] + [(f"chunk{i}", slice((i - 1) * CHUNK, i * CHUNK)) for i in range(2, N_CHUNKS + 1)]

# hyper-decoder output layout: (mu, sigma_raw, q_raw) per group
HYPER_GROUP_DIMS = (CHUNK, 3 * N_OFFSETS, ATTR_DIM - _SCL)
HYPER_OUT = sum(2 * d + 1 for d in HYPER_GROUP_DIMS)  # 95
CARM_OUT = 2 * CHUNK + 1  # 21

# tables cover +-ceil(ALPHABET_SIGMAS * sigma / q) around the mean; wider alphabets
# only add frequency-1 entries whose stolen mass costs more than escapes save
ALPHABET_SIGMAS = 6.0
MIN_HALF_WIDTH = 4
MAX_HALF_WIDTH = 4096
ESCAPE_EG_ORDER = 1  # escaped symbols: Exp-Golomb of |n| - H - 1, then a sign bit


class SymbolRangeError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


def carm_input_dim(chunk_index: int) -> int:
    return CONTEXT_DIM + CHUNK * (chunk_index - 1)


@dataclass
class EntropyModelWeights:
    hyper: MlpWeights
    carm: list[MlpWeights]  # chunk 2..5
    arm: MlpWeights

    @staticmethod
    def layer_dims():
        hyper = (CONTEXT_DIM, HYPER_HIDDEN, HYPER_HIDDEN, HYPER_OUT)
        carm = [(carm_input_dim(i), CARM_HIDDEN, CARM_HIDDEN, CARM_OUT) for i in range(2, N_CHUNKS + 1)]
        arm = (4, ARM_HIDDEN, ARM_HIDDEN, 2)
        return hyper, carm, arm

    @classmethod
    def init(cls, rng: np.random.Generator) -> "EntropyModelWeights":
        hyper, carm, arm = cls.layer_dims()
        return cls(MlpWeights.init(hyper, rng), [MlpWeights.init(d, rng) for d in carm], MlpWeights.init(arm, rng))

    @classmethod
    def zeros(cls) -> "EntropyModelWeights":
        hyper, carm, arm = cls.layer_dims()
        return cls(MlpWeights.zeros(hyper), [MlpWeights.zeros(d) for d in carm], MlpWeights.zeros(arm))

    def mlps(self) -> list[MlpWeights]:
        return [self.hyper, *self.carm, self.arm]

    def copy(self) -> "EntropyModelWeights":
        return EntropyModelWeights(self.hyper.copy(), [m.copy() for m in self.carm], self.arm.copy())

    def as_float32(self) -> "EntropyModelWeights":
        return EntropyModelWeights(
            self.hyper.as_float32(), [m.as_float32() for m in self.carm], self.arm.as_float32()
        )


@dataclass
class GroupParams:
    """Batched Gaussian parameters: mu, sigma are (n, d); q is (n,)."""

    mu: np.ndarray
    sigma: np.ndarray
    q: np.ndarray


def softplus(x):
    return np.logaddexp(0.0, x)


def sigma_from_raw(raw):
    return np.maximum(softplus(raw), SIGMA_MIN)


def sigma_grad(raw):
    return np.where(softplus(raw) > SIGMA_MIN, 0.5 * (1.0 + np.tanh(0.5 * raw)), 0.0)


def q_from_raw(raw):
    return np.clip(np.exp(np.minimum(raw, 50.0)), Q_MIN, Q_MAX)


def q_grad(raw):
    e = np.exp(np.minimum(raw, 50.0))
    return np.where((e > Q_MIN) & (e < Q_MAX), e, 0.0)


def split_hyper_output(out: np.ndarray) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Raw (mu, sigma_raw, q_raw) slices of the 95-wide hyper-decoder output."""
    parts, o = [], 0
    for d in HYPER_GROUP_DIMS:
        parts.append((out[:, o : o + d], out[:, o + d : o + 2 * d], out[:, o + 2 * d]))
        o += 2 * d + 1
    return parts


def split_carm_output(out: np.ndarray):
    return out[:, :CHUNK], out[:, CHUNK : 2 * CHUNK], out[:, 2 * CHUNK]


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError("non-finite activation in entropy model")


def _params(mu, sraw, qraw) -> GroupParams:
    return GroupParams(np.array(mu), sigma_from_raw(sraw), q_from_raw(qraw))


def hyper_decode(weights: MlpWeights, g, gamma, exact: bool = False) -> tuple[GroupParams, GroupParams, GroupParams]:
    """(mu, sigma, q) for feature chunk 1, offsets and scaling from the hyperprior context."""
    x = np.concatenate([np.atleast_2d(g), np.atleast_2d(gamma)], axis=1)
    if x.shape[1] != CONTEXT_DIM:
        raise ValueError(f"hyper-decoder input must be {CONTEXT_DIM} wide")
    out = mlp_rows_exact(weights, x) if exact else weights.forward(x)
    _check_finite(out)
    return tuple(_params(*p) for p in split_hyper_output(out))


def carm_predict(weights: MlpWeights, chunk_index: int, g, gamma, decoded_chunks, exact: bool = False) -> GroupParams:
    """Parameters of feature chunk ``chunk_index`` (2..5) given chunks 1..i-1."""
    if not 2 <= chunk_index <= N_CHUNKS:
        raise ValueError("CARM predicts chunks 2..5")
    g, gamma = np.atleast_2d(g), np.atleast_2d(gamma)
    prev = np.asarray(decoded_chunks, dtype=np.float64).reshape(g.shape[0], -1)
    if prev.shape[1] < CHUNK * (chunk_index - 1):
        raise ValueError(f"chunk {chunk_index} needs {chunk_index - 1} decoded chunks")
    x = np.concatenate([g, gamma, prev[:, : CHUNK * (chunk_index - 1)]], axis=1)
    out = mlp_rows_exact(weights, x) if exact else weights.forward(x)
    _check_finite(out)
    return _params(*split_carm_output(out))


def quantize_attr(a, mu, q):
    """Symbols n = round_half_even((a - mu) / q) and reconstructions mu + n q."""
    a = np.asarray(a, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if q.ndim == 1 and a.ndim == 2:
        q = q[:, None]
    if np.any(q < Q_MIN):
        raise ValueError("quantization step below q_min")
    n = np.rint((a - mu) / q)
    if np.any(np.abs(n) > SYMBOL_CAP):
        raise SymbolRangeError("attribute symbol exceeds the 16-bit range")
    n = n.astype(np.int64)
    return n, mu + n * q


def gaussian_bin_prob(n, sigma, q, floor: bool = True):
    """Mass of N(0, sigma) on [(n - 1/2) q, (n + 1/2) q], optionally floored at 2**-16."""
    n = np.abs(np.asarray(n, dtype=np.float64))
    sigma = np.asarray(sigma, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    # evaluate on the lower tail to avoid cancellation
    p = ndtr((0.5 - n) * q / sigma) - ndtr((-0.5 - n) * q / sigma)
    return np.maximum(p, P_FLOOR) if floor else p


def bits_of(p) -> np.ndarray:
    return -np.log2(np.maximum(p, P_FLOOR))


def half_width(sigma: float, q: float) -> int:
    h = math.ceil(ALPHABET_SIGMAS * sigma / q)
    return int(min(max(h, MIN_HALF_WIDTH), MAX_HALF_WIDTH))


def pmf_to_cdf(p) -> np.ndarray:
    """Integer CDF (total 2**16, all frequencies >= 1) of an arbitrary pmf."""
    p = np.ascontiguousarray(p, dtype=np.float64)
    if len(p) >= _cdf.PROB_TOTAL:
        raise SymbolRangeError("alphabet too large for a 16-bit table")
    cdf = np.zeros(len(p) + 1, dtype=np.int64)
    _cdf.quantize_pmf(p, len(p), cdf)
    return cdf


def build_cdf_table(sigma: float, q: float, n_min: int, n_max: int) -> np.ndarray:
    """Gaussian-bin table over n_min..n_max plus a trailing escape symbol."""
    if not n_min <= 0 <= n_max:
        raise ValueError("alphabet must contain 0")
    size = n_max - n_min + 2
    if size > _cdf.PROB_TOTAL - 1:
        raise SymbolRangeError("alphabet too large for a 16-bit table")
    p = np.empty(size)
    cdf = np.zeros(size + 1, dtype=np.int64)
    _cdf.gauss_cdf_table(float(sigma), float(q), int(n_min), int(n_max), p, cdf)
    return cdf


def symbol_bits(symbols: list[np.ndarray], params: list[GroupParams]) -> float:
    """Sum of -log2 p over all coded attribute symbols, with the 2**-16 floor."""
    total = 0.0
    for n, gp in zip(symbols, params):
        total += float(bits_of(gaussian_bin_prob(n, gp.sigma, gp.q[:, None])).sum())
    return total


def per_anchor_bits(symbols: list[np.ndarray], params: list[GroupParams]) -> np.ndarray:
    n_anchors = symbols[0].shape[0]
    out = np.zeros(n_anchors)
    for n, gp in zip(symbols, params):
        out += bits_of(gaussian_bin_prob(n, gp.sigma, gp.q[:, None])).sum(axis=1)
    return out
