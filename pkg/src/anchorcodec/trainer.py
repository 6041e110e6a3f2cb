"""Rate-distortion training of the planes and all entropy-model MLPs.

Loss per step::

    L = D + lambda_r * (bits_A / fraction + gate * lambda_tri * bits_P) / (86 N)

``D`` is the attribute-space MSE of a view-weighted batch (anchors drawn in
proportion to their visibility count, standing in for rendered views),
``bits_A`` the estimated attribute bits of the USRO/ViSRO rate sample and
``bits_P`` the spatial-model bits of all five sub-planes, evaluated only on
A-RDO steps (``step % T == 0``).

Quantizers are relaxed with additive uniform noise of width q (attributes)
or 1 (planes); the same noisy values feed the distortion, so its gradient
reaches q. Gradients are derived by hand and checked by :func:`grad_check`.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import ndtr

from .entropy import (
    CHUNK,
    GROUPS,
    N_CHUNKS,
    P_FLOOR,
    EntropyModelWeights,
    q_from_raw,
    q_grad,
    sigma_from_raw,
    sigma_grad,
    split_carm_output,
    split_hyper_output,
)
from .hyperprior import (
    MultiScalePlanes,
    QuantizedPlanes,
    fourier_encode,
    polyphase_merge,
    polyphase_split,
    quantize_planes,
    query_plane_features,
    query_plane_features_backward,
    resolution_for,
)
from .pca import PcaBasis, SceneBounds, fit_pca, normalize_coords, to_pca
from .planecodec import B_MIN, context_stack
from .scene import ATTR_DIM, N_OFFSETS, AnchorSet, NormStats, fit_norm_stats

USRO = "usro"
VISRO = "visro"
PARAMS_PER_ANCHOR = ATTR_DIM  # 50 + 6 + 3K with K = 10
_LN2 = math.log(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class TrainingDivergedError(FloatingPointError):
    pass


class SamplingError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Training hyper-parameters.

    ``lambda_m`` (max(1e-3, 0.3 lambda_r)) belongs to mask learning, which
    this codec does not do; it is exposed for reference only.
    """

    lambda_r: float = 0.01
    lambda_tri: float = 10.0
    ardo_interval: int = 4
    sampling_mode: str = USRO
    sample_fraction: float = 0.05
    steps: int = 2000
    lr_planes: float = 1e-2
    lr_mlp: float = 1e-3
    lr_final_ratio: float = 0.0
    seed: int = 0
    base_resolution: int | None = None
    min_count: int = 30_000
    max_count: int = 450_000

    def __post_init__(self):
        if self.lambda_r < 0:
            raise ValueError("lambda_r must be non-negative")
        if self.ardo_interval < 1:
            raise ValueError("A-RDO interval must be >= 1")
        if not 0 < self.sample_fraction <= 1:
            raise ValueError("sample_fraction must be in (0, 1]")
        if self.sampling_mode not in (USRO, VISRO):
            raise ValueError(f"sampling_mode must be {USRO!r} or {VISRO!r}")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")

    @property
    def lambda_m(self) -> float:
        return max(1e-3, 0.3 * self.lambda_r)


@dataclass
class LossReport:
    step: int
    distortion: float
    attr_bits: float
    plane_bits: float
    total: float
    gated: bool = False
    wall_ms: float = 0.0


@dataclass
class TrainingData:
    """Everything the loss needs that does not change during training."""

    n: int
    attrs: np.ndarray  # normalized (N, 86)
    u: np.ndarray
    v: np.ndarray
    gamma: np.ndarray  # (N, 20)
    visibility: np.ndarray
    basis: PcaBasis
    bounds: SceneBounds
    norm: NormStats
    positions16: np.ndarray


@dataclass
class TrainedModel:
    basis: PcaBasis
    bounds: SceneBounds
    planes: MultiScalePlanes
    qplanes: QuantizedPlanes
    weights: EntropyModelWeights
    norm: NormStats
    config: TrainConfig
    history: list[LossReport] = field(default_factory=list)
    plane_rate_evals: int = 0

    @property
    def base_resolution(self) -> int:
        return self.qplanes.base_resolution


@dataclass
class StepBatch:
    """Sampled rows and frozen noise for one step; rows = rate rows then distortion rows."""

    rows: np.ndarray
    n_rate: int
    attr_noise: np.ndarray
    plane_noise: list[np.ndarray]
    gated: bool

    @property
    def n_dist(self) -> int:
        return len(self.rows) - self.n_rate


# -- sampling and schedule ---------------------------------------------------


def sample_anchors(mode: str, fraction: float, visibility, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample without replacement of max(1, round(fraction * pool)) anchors.

    USRO draws from every anchor, ViSRO only from anchors with visibility > 0.
    ``visibility`` may be an AnchorSet.
    """
    if isinstance(visibility, AnchorSet):
        visibility = visibility.visibility
    visibility = np.asarray(visibility)
    if visibility.size == 0:
        raise SamplingError("empty anchor set")
    if mode == USRO:
        pool = np.arange(visibility.size)
    elif mode == VISRO:
        pool = np.flatnonzero(visibility > 0)
        if pool.size == 0:
            raise SamplingError("ViSRO needs at least one visible anchor")
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    count = max(1, int(round(fraction * pool.size)))
    return np.sort(rng.choice(pool, size=count, replace=False))


def distortion_rows(visibility: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """Anchors seen by the training views, drawn with probability proportional to visibility."""
    vis = np.asarray(visibility, dtype=np.float64)
    total = vis.sum()
    if total <= 0:
        return rng.choice(vis.size, size=count, replace=True)
    return rng.choice(vis.size, size=count, replace=True, p=vis / total)


def ardo_gate(step: int, interval: int) -> bool:
    if interval < 1:
        raise ValueError("interval must be >= 1")
    return step % interval == 0


def rate_loss(attr_bits: float, plane_bits: float, n_anchors: int, include_plane: bool,
              lambda_tri: float = 10.0, fraction: float = 1.0) -> float:
    """(attr_bits / fraction + [lambda_tri * plane_bits]) / (N * (50 + 6 + 3K))."""
    if n_anchors <= 0:
        raise ValueError("N must be positive")
    total = attr_bits / fraction
    if include_plane:
        total += lambda_tri * plane_bits
    return total / (n_anchors * PARAMS_PER_ANCHOR)


def distortion_proxy(original, reconstructed) -> float:
    original = np.asarray(original, dtype=np.float64)
    reconstructed = np.asarray(reconstructed, dtype=np.float64)
    if original.shape != reconstructed.shape:
        raise ValueError("shape mismatch")
    return float(np.mean((original - reconstructed) ** 2))


# -- data preparation ----------------------------------------------------------


def round_fp16(positions: np.ndarray) -> np.ndarray:
    positions = np.asarray(positions, dtype=np.float64)
    if np.any(np.abs(positions) > np.finfo(np.float16).max):
        raise OverflowError("positions exceed the fp16 range")
    return positions.astype(np.float16).astype(np.float64)


def coding_coordinates(basis: PcaBasis, bounds: SceneBounds, positions16: np.ndarray):
    """(u, v, gamma) exactly as the decoder derives them from fp16 positions."""
    xp = to_pca(basis, positions16)
    u, v, w = normalize_coords(bounds, xp)
    return u, v, fourier_encode(w)


def prepare(anchors: AnchorSet) -> TrainingData:
    positions16 = round_fp16(anchors.positions)
    basis = fit_pca(positions16).as_float32()
    bounds = SceneBounds.of(to_pca(basis, positions16)).as_float32()
    u, v, gamma = coding_coordinates(basis, bounds, positions16)
    stats = fit_norm_stats(anchors.attributes())
    scale32 = np.maximum(stats.scale.astype(np.float32), np.float32(1e-30)).astype(np.float64)
    norm = NormStats(stats.shift.astype(np.float32).astype(np.float64), scale32)
    return TrainingData(
        n=len(anchors),
        attrs=norm.apply(anchors.attributes()),
        u=u,
        v=v,
        gamma=gamma,
        visibility=np.asarray(anchors.visibility, dtype=np.int64),
        basis=basis,
        bounds=bounds,
        norm=norm,
        positions16=positions16,
    )


def make_batch(step: int, config: TrainConfig, data: TrainingData, plane_shapes) -> StepBatch:
    seed = config.seed
    rate = sample_anchors(
        config.sampling_mode, config.sample_fraction, data.visibility, np.random.default_rng([seed, step, 1])
    )
    n_visible = int(np.count_nonzero(data.visibility))
    n_dist = max(1, int(round(config.sample_fraction * (n_visible or data.n))))
    dist = distortion_rows(data.visibility, n_dist, np.random.default_rng([seed, step, 2]))
    rows = np.concatenate([rate, dist])
    noise_rng = np.random.default_rng([seed, step, 3])
    attr_noise = noise_rng.uniform(-0.5, 0.5, size=(rows.size, ATTR_DIM))
    plane_noise = [noise_rng.uniform(-0.5, 0.5, size=s) for s in plane_shapes]
    return StepBatch(rows, rate.size, attr_noise, plane_noise, ardo_gate(step, config.ardo_interval))


# -- likelihoods with derivatives -------------------------------------------------


def gaussian_bin_terms(c, sigma, q):
    """P(c) = Phi((c + q/2)/sigma) - Phi((c - q/2)/sigma) and dP/dc, dP/dsigma, dP/dq."""
    v = np.abs(c)
    hi = (0.5 * q - v) / sigma
    lo = (-0.5 * q - v) / sigma
    p = ndtr(hi) - ndtr(lo)
    phi_hi = np.exp(-0.5 * hi * hi) * _INV_SQRT_2PI
    phi_lo = np.exp(-0.5 * lo * lo) * _INV_SQRT_2PI
    dp_dc = np.sign(c) * (phi_lo - phi_hi) / sigma
    dp_dsigma = (lo * phi_lo - hi * phi_hi) / sigma
    dp_dq = 0.5 * (phi_hi + phi_lo) / sigma
    return p, dp_dc, dp_dsigma, dp_dq


def laplace_bin_terms(d, b):
    """P(d) = F(d + 1/2) - F(d - 1/2) for Laplace(0, b), with dP/dd and dP/db."""
    v = np.abs(d)
    e_hi = np.exp(-(v + 0.5) / b)
    e_mid = np.exp(-np.abs(v - 0.5) / b)
    p = np.where(v >= 0.5, 0.5 * (e_mid - e_hi), 1.0 - 0.5 * (e_mid + e_hi))
    dp_dd = np.sign(d) * 0.5 * (e_hi - e_mid) / b
    dp_db = 0.5 * ((v - 0.5) * e_mid - (v + 0.5) * e_hi) / (b * b)
    return p, dp_dd, dp_db


def _bits_and_grad(p):
    floored = p <= P_FLOOR
    bits = -np.log2(np.where(floored, P_FLOOR, p))
    dbits_dp = np.where(floored, 0.0, -1.0 / (np.maximum(p, P_FLOOR) * _LN2))
    return bits, dbits_dp


# -- loss and gradients --------------------------------------------------------------


@dataclass
class Grads:
    planes: list[np.ndarray]
    hyper: list[np.ndarray]
    carm: list[list[np.ndarray]]
    arm: list[np.ndarray]


def _zero_grads(planes: MultiScalePlanes, weights: EntropyModelWeights) -> Grads:
    return Grads(
        [np.zeros_like(g) for g in planes.grids],
        [np.zeros_like(p) for p in weights.hyper.params()],
        [[np.zeros_like(p) for p in m.params()] for m in weights.carm],
        [np.zeros_like(p) for p in weights.arm.params()],
    )


def plane_rate(noisy_grids: list[np.ndarray], arm, need_grad: bool = True):
    """Spatial-model bits of the five sub-planes and d(bits)/d(grids), d(bits)/d(arm)."""
    subs = np.stack([noisy_grids[0]] + polyphase_split(noisy_grids[1]))  # (5, ch, B, B)
    ctx = context_stack(subs).reshape(-1, 4)
    out, acts = arm.forward(ctx, cache=True)
    mu, braw = out[:, 0], out[:, 1]
    b = np.maximum(np.logaddexp(0.0, braw), B_MIN)
    y = subs.reshape(-1)
    p, dp_dd, dp_db = laplace_bin_terms(y - mu, b)
    bits, dbits_dp = _bits_and_grad(p)
    total = float(bits.sum())
    if not need_grad:
        return total, None, None
    g_p = dbits_dp
    g_self = g_p * dp_dd
    g_out = np.empty_like(out)
    g_out[:, 0] = -g_p * dp_dd
    b_live = np.logaddexp(0.0, braw) > B_MIN
    g_out[:, 1] = g_p * dp_db * np.where(b_live, 0.5 * (1.0 + np.tanh(0.5 * braw)), 0.0)
    g_ctx, arm_grads = arm.backward(acts, g_out)

    shape = subs.shape
    h, w = shape[-2:]
    g_ctx = g_ctx.reshape(shape + (4,))
    pad = np.zeros(shape[:-2] + (h + 1, w + 2))
    pad[..., :h, :w] += g_ctx[..., 0]
    pad[..., :h, 1 : w + 1] += g_ctx[..., 1]
    pad[..., :h, 2 : w + 2] += g_ctx[..., 2]
    pad[..., 1:, :w] += g_ctx[..., 3]
    g_subs = g_self.reshape(shape) + pad[..., 1:, 1:-1]
    grid_grads = [g_subs[0], polyphase_merge(list(g_subs[1:]))]
    return total, grid_grads, arm_grads


def loss_and_grad(planes: MultiScalePlanes, weights: EntropyModelWeights, data: TrainingData,
                  batch: StepBatch, config: TrainConfig, need_grad: bool = True):
    noisy = [g + n for g, n in zip(planes.grids, batch.plane_noise)]
    rows = batch.rows
    m = rows.size
    rate_w = np.zeros(m)
    rate_w[: batch.n_rate] = 1.0
    dist_w = np.zeros(m)
    dist_w[batch.n_rate :] = 1.0 / (batch.n_dist * ATTR_DIM)

    coef = config.lambda_r / (config.sample_fraction * data.n * PARAMS_PER_ANCHOR)
    u, v = data.u[rows], data.v[rows]
    g = query_plane_features(MultiScalePlanes(noisy), u, v)
    ctx0 = np.concatenate([g, data.gamma[rows]], axis=1)
    a_all = data.attrs[rows]
    noise = batch.attr_noise

    h_out, h_acts = weights.hyper.forward(ctx0, cache=True)
    h_parts = split_hyper_output(h_out)
    groups = {}
    recon = {}
    attr_bits = 0.0
    distortion = 0.0

    def run_group(name, cols, mu, sraw, qraw):
        nonlocal attr_bits, distortion
        sigma = sigma_from_raw(sraw)
        q = q_from_raw(qraw)
        a = a_all[:, cols]
        un = noise[:, cols]
        c = a - mu + un * q[:, None]
        p, dp_dc, dp_ds, dp_dq = gaussian_bin_terms(c, sigma, q[:, None])
        bits, dbits_dp = _bits_and_grad(p)
        attr_bits += float((bits.sum(axis=1) * rate_w).sum())
        sq = (un * q[:, None]) ** 2
        distortion += float((sq.sum(axis=1) * dist_w).sum())
        recon[name] = a + un * q[:, None]
        groups[name] = dict(cols=cols, sraw=sraw, qraw=qraw, sigma=sigma, q=q, un=un,
                            dbits_dp=dbits_dp, dp_dc=dp_dc, dp_ds=dp_ds, dp_dq=dp_dq)

    for (name, cols), (mu, sraw, qraw) in zip(GROUPS[:3], h_parts):
        run_group(name, cols, mu, sraw, qraw)
    carm_cache = []
    for i in range(2, N_CHUNKS + 1):
        prev = [recon[f"chunk{j}"] for j in range(1, i)]
        x = np.concatenate([ctx0] + prev, axis=1)
        out, acts = weights.carm[i - 2].forward(x, cache=True)
        carm_cache.append(acts)
        run_group(f"chunk{i}", GROUPS[i + 1][1], *split_carm_output(out))

    plane_bits = 0.0
    arm_grads = grid_rate_grads = None
    if batch.gated:
        plane_bits, grid_rate_grads, arm_grads = plane_rate(noisy, weights.arm, need_grad)

    total = distortion + coef * attr_bits
    if batch.gated:
        total += config.lambda_r * config.lambda_tri * plane_bits / (data.n * PARAMS_PER_ANCHOR)
    if not np.isfinite(total):
        raise TrainingDivergedError("non-finite loss")
    report = LossReport(0, distortion, attr_bits / config.sample_fraction, plane_bits, total, batch.gated)
    if not need_grad:
        return report, None

    grads = _zero_grads(planes, weights)
    # d/d(mu, sigma_raw, q_raw) per group; q also collects context and distortion terms
    d_mu, d_sraw, d_q = {}, {}, {}
    for name, gr in groups.items():
        g_p = coef * rate_w[:, None] * gr["dbits_dp"]
        d_mu[name] = -g_p * gr["dp_dc"]
        d_sraw[name] = g_p * gr["dp_ds"] * sigma_grad(gr["sraw"])
        dq = (g_p * (gr["dp_dc"] * gr["un"] + gr["dp_dq"])).sum(axis=1)
        dq += dist_w * 2.0 * gr["q"] * (gr["un"] ** 2).sum(axis=1)
        d_q[name] = dq

    d_ctx0 = np.zeros_like(ctx0)
    for i in range(N_CHUNKS, 1, -1):
        name = f"chunk{i}"
        gr = groups[name]
        g_out = np.concatenate([d_mu[name], d_sraw[name], (d_q[name] * q_grad(gr["qraw"]))[:, None]], axis=1)
        g_x, mlp_grads = weights.carm[i - 2].backward(carm_cache[i - 2], g_out)
        grads.carm[i - 2] = mlp_grads
        d_ctx0 += g_x[:, : ctx0.shape[1]]
        for j in range(1, i):
            lo = ctx0.shape[1] + (j - 1) * CHUNK
            d_recon = g_x[:, lo : lo + CHUNK]
            d_q[f"chunk{j}"] = d_q[f"chunk{j}"] + (d_recon * groups[f"chunk{j}"]["un"]).sum(axis=1)

    h_grad = []
    for name, _ in GROUPS[:3]:
        gr = groups[name]
        h_grad += [d_mu[name], d_sraw[name], (d_q[name] * q_grad(gr["qraw"]))[:, None]]
    g_x, grads.hyper = weights.hyper.backward(h_acts, np.concatenate(h_grad, axis=1))
    d_ctx0 += g_x
    shapes = [gr.shape[-1] for gr in planes.grids]
    grads.planes = query_plane_features_backward(shapes, u, v, d_ctx0[:, : g.shape[1]])

    if batch.gated:
        scale = config.lambda_r * config.lambda_tri / (data.n * PARAMS_PER_ANCHOR)
        for k in range(len(grads.planes)):
            grads.planes[k] = grads.planes[k] + scale * grid_rate_grads[k]
        grads.arm = [scale * ga for ga in arm_grads]
    return report, grads


# -- optimizer --------------------------------------------------------------------------


def _param_groups(planes: MultiScalePlanes, weights: EntropyModelWeights):
    """(group name, array) pairs in a fixed order; arrays are updated in place."""
    out = [("planes", g) for g in planes.grids]
    out += [("hyper", p) for p in weights.hyper.params()]
    for m in weights.carm:
        out += [("carm", p) for p in m.params()]
    out += [("arm", p) for p in weights.arm.params()]
    return out


def _grad_list(grads: Grads):
    out = list(grads.planes) + list(grads.hyper)
    for gm in grads.carm:
        out += list(gm)
    return out + list(grads.arm)


class Adam:
    def __init__(self, params, lrs, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lrs = lrs
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, grads, lr_scale: float = 1.0):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v, lr in zip(self.params, grads, self.m, self.v, self.lrs):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= (lr * lr_scale / c1) * m / (np.sqrt(v / c2) + self.eps)


def cosine_scale(step: int, steps: int, final_ratio: float = 0.0) -> float:
    if steps <= 1:
        return 1.0
    return final_ratio + (1.0 - final_ratio) * 0.5 * (1.0 + math.cos(math.pi * step / steps))


# -- fitting -----------------------------------------------------------------------------


def init_model(data: TrainingData, config: TrainConfig) -> tuple[MultiScalePlanes, EntropyModelWeights]:
    rng = np.random.default_rng([config.seed, 2**31 - 1])
    b = config.base_resolution or resolution_for(data.n, config.min_count, config.max_count)
    planes = MultiScalePlanes.init(b, rng)
    weights = EntropyModelWeights.init(rng)
    return planes, weights


def finalize(planes: MultiScalePlanes, weights: EntropyModelWeights, data: TrainingData,
             config: TrainConfig, history=None, evals: int = 0) -> TrainedModel:
    return TrainedModel(
        basis=data.basis,
        bounds=data.bounds,
        planes=planes.copy(),
        qplanes=quantize_planes(planes),
        weights=weights.as_float32(),
        norm=data.norm,
        config=config,
        history=list(history or []),
        plane_rate_evals=evals,
    )


def fit(anchors: AnchorSet, config: TrainConfig, log_path=None, progress=None) -> TrainedModel:
    """Run ``config.steps`` sample -> forward -> backward -> Adam iterations."""
    data = prepare(anchors)
    planes, weights = init_model(data, config)
    groups = _param_groups(planes, weights)
    lrs = [config.lr_planes if name == "planes" else config.lr_mlp for name, _ in groups]
    opt = Adam([p for _, p in groups], lrs)
    shapes = [g.shape for g in planes.grids]
    history: list[LossReport] = []
    evals = 0
    last_plane_bits = 0.0
    for step in range(config.steps):
        t0 = time.perf_counter()
        batch = make_batch(step, config, data, shapes)
        report, grads = loss_and_grad(planes, weights, data, batch, config)
        opt.step(_grad_list(grads), cosine_scale(step, config.steps, config.lr_final_ratio))
        if not (weights.hyper.all_finite() and all(np.all(np.isfinite(g)) for g in planes.grids)):
            raise TrainingDivergedError(f"parameters became non-finite at step {step}")
        if batch.gated:
            evals += 1
            last_plane_bits = report.plane_bits
        report.plane_bits = last_plane_bits
        report.step = step
        report.wall_ms = 1000.0 * (time.perf_counter() - t0)
        history.append(report)
        if progress is not None:
            progress(report)
    if log_path is not None:
        write_log(history, log_path)
    return finalize(planes, weights, data, config, history, evals)


def write_log(history: list[LossReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "distortion", "attr_bits", "plane_bits", "gated", "wall_ms"])
        for r in history:
            w.writerow([r.step, f"{r.distortion:.9g}", f"{r.attr_bits:.9g}", f"{r.plane_bits:.9g}",
                        int(r.gated), f"{r.wall_ms:.3f}"])


# -- gradient checking ---------------------------------------------------------------------


def grad_check(planes: MultiScalePlanes, weights: EntropyModelWeights, data: TrainingData,
               batch: StepBatch, config: TrainConfig, epsilon: float = 1e-4,
               per_group: int = 12, seed: int = 0) -> dict[str, float]:
    """Max relative error of analytic vs central-difference gradients per parameter group.

    Entries are the largest-magnitude analytic gradients of each group plus a
    random draw among the rest of those within 1% of the group maximum (smaller
    entries are dominated by finite-difference round-off). Each entry is
    differenced at ``epsilon`` and ``epsilon / 10`` and the better agreement
    kept, so a step that straddles a ReLU or floor kink does not count as a
    gradient error.
    """
    planes = planes.copy()
    weights = weights.copy()
    _, grads = loss_and_grad(planes, weights, data, batch, config)
    params = _param_groups(planes, weights)
    glist = _grad_list(grads)
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}

    def loss():
        rep, _ = loss_and_grad(planes, weights, data, batch, config, need_grad=False)
        return rep.total

    for group in ("planes", "hyper", "carm", "arm"):
        idx = [k for k, (name, _) in enumerate(params) if name == group]
        flat = np.concatenate([glist[k].reshape(-1) for k in idx])
        owners = np.concatenate([np.full(glist[k].size, k) for k in idx])
        local = np.concatenate([np.arange(glist[k].size) for k in idx])
        mag = np.abs(flat)
        if mag.max() == 0:
            worst[group] = 0.0
            continue
        live = np.flatnonzero(mag > 1e-2 * mag.max())
        top = live[np.argsort(-mag[live], kind="stable")[: per_group // 2]]
        rest = np.setdiff1d(live, top)
        pick = np.concatenate([top, rng.choice(rest, size=min(per_group - top.size, rest.size), replace=False)])
        err = 0.0
        for t in pick:
            arr = params[owners[t]][1].reshape(-1)
            j = local[t]
            orig = arr[j]
            analytic = flat[t]
            best = np.inf
            for h in (epsilon, 0.1 * epsilon):
                arr[j] = orig + h
                up = loss()
                arr[j] = orig - h
                down = loss()
                arr[j] = orig
                numeric = (up - down) / (2 * h)
                best = min(best, abs(analytic - numeric) / max(abs(analytic), abs(numeric)))
            err = max(err, best)
        worst[group] = err
    return worst


def training_snapshot(anchors: AnchorSet, config: TrainConfig, warm_steps: int = 0):
    """(planes, weights, data) after ``warm_steps`` of training, for diagnostics."""
    data = prepare(anchors)
    planes, weights = init_model(data, config)
    if warm_steps:
        groups = _param_groups(planes, weights)
        lrs = [config.lr_planes if name == "planes" else config.lr_mlp for name, _ in groups]
        opt = Adam([p for _, p in groups], lrs)
        shapes = [g.shape for g in planes.grids]
        for step in range(warm_steps):
            _, grads = loss_and_grad(planes, weights, data, make_batch(step, config, data, shapes), config)
            opt.step(_grad_list(grads))
    return planes, weights, data


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)


def with_overrides(config: TrainConfig, **kw) -> TrainConfig:
    return replace(config, **kw)
