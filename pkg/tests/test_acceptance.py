"""Acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line; the lines are printed together in the
"acceptance criteria" section of the pytest summary.
"""

import math
import os
import time

import mpmath
import numba
import numpy as np
import pytest

from anchorcodec import _cdf, rangecoder as rc
from anchorcodec.cli import rd_point
from anchorcodec.container import compress_model, decode_planes_only, decompress
from anchorcodec.entropy import gaussian_bin_prob, half_width, pmf_to_cdf
from anchorcodec.scene import (
    AnchorSet,
    SyntheticSpec,
    anchor_set_to_bytes,
    gen_synthetic_scene,
    radius_covering,
)
from anchorcodec.trainer import USRO, VISRO, TrainConfig, fit, grad_check, make_batch, training_snapshot

# -- 1. lossless round trip ------------------------------------------------------------------------

ROUND_TRIP_SIZES = (100, 1_000, 10_000)


@pytest.fixture(scope="module")
def round_trips():
    """20 seeded scenes: (report, plane streams, elapsed seconds, ok flags)."""
    t0 = time.perf_counter()
    out = []
    for seed in range(20):
        n = ROUND_TRIP_SIZES[seed % 3]
        scene = gen_synthetic_scene(SyntheticSpec(n_anchors=n, seed=seed, visibility_radius=8.0))
        if seed % 4 == 1:
            mask = np.random.default_rng(seed).random((n, 10)) < 0.7
            scene = AnchorSet.from_attributes(scene.positions, scene.attributes(), scene.visibility, mask)
        model = fit(scene, TrainConfig(steps=8, seed=seed))
        data, report = compress_model(model, scene)
        decoded, _ = decompress(data)
        planes = decode_planes_only(data)
        out.append(dict(
            n=n,
            report=report,
            attrs_exact=np.array_equal(decoded.attributes(), report.reconstructed.attributes()),
            planes_exact=planes.equals(model.qplanes),
            positions_fp16=np.array_equal(decoded.positions, scene.positions.astype(np.float16).astype(np.float64)),
            mask_exact=(scene.mask is None and decoded.mask is None) or np.array_equal(decoded.mask, scene.mask),
        ))
    return out, time.perf_counter() - t0


def test_c1_lossless_round_trip(round_trips, acceptance_report):
    runs, elapsed = round_trips
    bad = [i for i, r in enumerate(runs)
           if not (r["attrs_exact"] and r["planes_exact"] and r["positions_fp16"] and r["mask_exact"])]
    ok = not bad and elapsed < 300
    acceptance_report(1, ok, f"{len(runs) - len(bad)}/{len(runs)} scenes exact "
                             f"(N in {ROUND_TRIP_SIZES}), {elapsed:.0f}s total (limit 300s)")
    assert not bad, f"scenes with mismatches: {bad}"
    assert elapsed < 300


# -- 6 (shared with 2). USRO vs ViSRO ----------------------------------------------------------------

USRO_SEEDS = range(5)


@pytest.fixture(scope="module")
def sampling_runs():
    runs = []
    for seed in USRO_SEEDS:
        spec = SyntheticSpec(n_anchors=2000, seed=seed)
        scene = gen_synthetic_scene(SyntheticSpec(n_anchors=2000, seed=seed,
                                                  visibility_radius=radius_covering(spec, 0.3)))
        row = {"visible": int(np.count_nonzero(scene.visibility))}
        for mode in (USRO, VISRO):
            model = fit(scene, TrainConfig(lambda_r=0.01, steps=300, seed=seed, sampling_mode=mode))
            _, report = compress_model(model, scene)
            row[mode] = report
        row["peripheral"] = scene.visibility == 0
        runs.append(row)
    return runs


def test_c6_usro_beats_visro(sampling_runs, acceptance_report):
    wins = sum(r[USRO].sizes["attributes"] < r[VISRO].sizes["attributes"] for r in sampling_runs)
    periph = [
        (r[USRO].anchor_bits[r["peripheral"]].mean(), r[VISRO].anchor_bits[r["peripheral"]].mean())
        for r in sampling_runs
    ]
    periph_wins = sum(u < v for u, v in periph)
    sizes = ", ".join(f"{r[USRO].sizes['attributes']}/{r[VISRO].sizes['attributes']}" for r in sampling_runs)
    ok = wins >= 4 and periph_wins >= 4
    acceptance_report(6, ok, f"USRO/ViSRO attribute bytes {sizes}: USRO lower in {wins}/5; "
                             f"peripheral mean bits lower in {periph_wins}/5 "
                             f"(e.g. {periph[0][0]:.0f} vs {periph[0][1]:.0f})")
    assert wins >= 4
    assert periph_wins >= 4


# -- 2. rate fidelity ----------------------------------------------------------------------------------


def _within(actual_bytes, estimate_bits):
    est = estimate_bits / 8
    return est <= actual_bytes <= est * 1.02 + 64


def test_c2_rate_fidelity(round_trips, sampling_runs, acceptance_report):
    reports = [r["report"] for r in round_trips[0]]
    reports += [r[mode] for r in sampling_runs for mode in (USRO, VISRO)]
    checked = failures = 0
    worst = 0.0
    for rep in reports:
        pairs = [(rep.sizes["attributes"], rep.attr_estimate_bits)]
        pairs += [(rep.sizes[f"plane{i}"] - 8, b) for i, b in enumerate(rep.plane_estimate_bits)]
        for actual, bits in pairs:
            checked += 1
            failures += not _within(actual, bits)
            worst = max(worst, (actual - bits / 8) / max(bits / 8, 1.0))
    acceptance_report(2, failures == 0, f"{checked - failures}/{checked} payloads within "
                                        f"[estimate, 1.02 estimate + 64B]; worst relative excess {worst:.4%}")
    assert failures == 0


# -- 3. gradient check ---------------------------------------------------------------------------------


def test_c3_grad_check(small_scene, acceptance_report):
    results = []
    for seed in (0, 1, 2):
        cfg = TrainConfig(seed=seed)
        planes, weights, data = training_snapshot(small_scene, cfg, warm_steps=3)
        batch = make_batch(0, cfg, data, [g.shape for g in planes.grids])  # step 0 is gated
        assert batch.gated
        results.append(grad_check(planes, weights, data, batch, cfg, per_group=8, seed=seed))
    worst = {g: max(r[g] for r in results) for g in ("planes", "hyper", "carm", "arm")}
    ok = all(v < 1e-4 for v in worst.values())
    acceptance_report(3, ok, "max relative error over 3 seeds: " +
                      ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (limit 1e-4)")
    assert ok


# -- 4. pmf normalization ---------------------------------------------------------------------------------


def test_c4_pmf_normalization(acceptance_report):
    grid = np.geomspace(1e-3, 10.0, 25)
    p = np.empty(2 * 4096 + 2)
    worst_g = worst_l = 0.0
    for scale in grid:
        for q in grid:
            h = half_width(scale, q)
            size = _cdf.gauss_pmf(scale, q, -h, h, p)
            worst_g = max(worst_g, abs(math.fsum(p[:size]) - 1.0))
            hl = int(min(4096, max(4, math.ceil(6 * scale / q))))
            for mu in (0.0, 0.37):
                size = _cdf.laplace_pmf(mu, scale / q, -hl, hl, p)
                worst_l = max(worst_l, abs(math.fsum(p[:size]) - 1.0))
    ref = float(mpmath.quad(lambda x: mpmath.npdf(x), [-1, 1]))
    got = float(gaussian_bin_prob(0, 1.0, 2.0))
    ok = worst_g <= 1e-9 and worst_l <= 1e-9 and abs(got - 0.682689) <= 1e-6 and abs(got - ref) <= 1e-6
    acceptance_report(4, ok, f"max |sum-1| Gaussian {worst_g:.1e}, Laplace {worst_l:.1e} over 625 (scale, q) "
                             f"pairs; P(0 | sigma=1, q=2) = {got:.7f} (quadrature {ref:.7f})")
    assert ok


# -- 5. A-RDO -----------------------------------------------------------------------------------------------

ARDO_STEPS = 200


def test_c5_ardo(acceptance_report):
    scene = gen_synthetic_scene(SyntheticSpec(n_anchors=10_000, seed=0))
    res = {}
    for t in (4, 1):
        model = fit(scene, TrainConfig(steps=ARDO_STEPS, ardo_interval=t, seed=0))
        data, report = compress_model(model, scene)
        on = [r.wall_ms for r in model.history if r.gated]
        off = [r.wall_ms for r in model.history if not r.gated]
        res[t] = dict(evals=model.plane_rate_evals, size=len(data), mse=report.attr_mse,
                      on=np.mean(on), off=np.mean(off) if off else float("nan"))
    a = res[4]["evals"] == math.ceil(ARDO_STEPS / 4) and res[1]["evals"] == ARDO_STEPS
    b = res[4]["off"] < res[4]["on"]
    size_gap = abs(res[4]["size"] / res[1]["size"] - 1)
    mse_gap = abs(res[4]["mse"] / res[1]["mse"] - 1)
    c = size_gap <= 0.10 and mse_gap <= 0.10
    acceptance_report(5, a and b and c,
                      f"evals {res[4]['evals']} vs {res[1]['evals']} (S={ARDO_STEPS}); "
                      f"step time off {res[4]['off']:.0f}ms < on {res[4]['on']:.0f}ms; "
                      f"size +{size_gap:.1%}, distortion {mse_gap:.1%} vs T=1 (limit 10%)")
    assert a and b and c


# -- 7. parallel plane decode -----------------------------------------------------------------------------


def _cores():
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def test_c7_parallel_planes(small_scene, acceptance_report):
    model = fit(small_scene, TrainConfig(steps=0, seed=0, base_resolution=128))
    data, _ = compress_model(model, small_scene)
    serial, rs = decompress(data)
    parallel, rp = decompress(data, parallel_planes=True)
    identical = anchor_set_to_bytes(serial) == anchor_set_to_bytes(parallel)
    identical &= decode_planes_only(data).equals(decode_planes_only(data, parallel=True))
    t_serial = min(decompress(data)[1].plane_seconds for _ in range(3))
    t_parallel = min(decompress(data, parallel_planes=True)[1].plane_seconds for _ in range(3))
    cores = _cores()
    timing = f"plane decode serial {t_serial:.2f}s, parallel {t_parallel:.2f}s at B=128"
    if cores >= 4:
        ok = identical and t_parallel < t_serial
        acceptance_report(7, ok, f"byte-identical={identical}; {timing}; {cores} cores")
        assert ok
    else:
        acceptance_report(7, identical, f"byte-identical={identical}; {timing}; speedup NOT EVALUATED: "
                                        f"precondition is >= 4 cores, this machine has {cores}",
                          verdict="PASS (identity only)" if identical else "FAIL")
        assert identical


# -- 8. range coder fuzz --------------------------------------------------------------------------------


@numba.njit(cache=True)
def _fuzz_encode(cdfs, offsets, table_of, symbols, bypass_bits, bypass_vals, buf):
    st = rc._new_encoder_state()
    for t in range(symbols.shape[0]):
        o = offsets[table_of[t]]
        s = symbols[t]
        rc.enc_freq(st, buf, cdfs[o + s], cdfs[o + s + 1] - cdfs[o + s])
        if bypass_bits[t] > 0:
            rc.enc_bypass(st, buf, bypass_vals[t], bypass_bits[t])
    rc.enc_finish(st, buf)
    return st[rc._POS]


@numba.njit(cache=True)
def _fuzz_decode(cdfs, offsets, sizes, table_of, bypass_bits, data, out, out_bypass):
    dst = rc._new_decoder_state(data)
    for t in range(out.shape[0]):
        k = table_of[t]
        o = offsets[k]
        out[t] = rc.dec_symbol(dst, data, cdfs[o : o + sizes[k] + 1])
        if bypass_bits[t] > 0:
            out_bypass[t] = rc.dec_bypass(dst, data, bypass_bits[t])
    return dst[rc._ERR]


def test_c8_range_coder_fuzz(acceptance_report):
    rng = np.random.default_rng(8)
    n_tables, n_pairs = 4000, 1_000_000
    tables = []
    for _ in range(n_tables):
        size = int(rng.integers(2, 400))
        tables.append(pmf_to_cdf(rng.dirichlet(np.full(size, rng.choice([0.05, 0.5, 5.0])))))
    sizes = np.array([len(t) - 1 for t in tables], dtype=np.int64)
    offsets = np.zeros(n_tables, dtype=np.int64)
    np.cumsum(sizes[:-1] + 1, out=offsets[1:])
    flat = np.concatenate(tables).astype(np.int64)
    table_of = rng.integers(0, n_tables, size=n_pairs)
    symbols = (rng.random(n_pairs) * sizes[table_of]).astype(np.int64)  # uniform, so rare symbols get hit
    bypass_bits = np.where(rng.random(n_pairs) < 0.2, rng.integers(1, 33, size=n_pairs), 0).astype(np.int64)
    bypass_vals = (rng.integers(0, 2**32, size=n_pairs, dtype=np.uint64)
                   & ((np.uint64(1) << bypass_bits.astype(np.uint64)) - np.uint64(1)))
    buf = np.zeros(16 * n_pairs, dtype=np.uint8)
    n = _fuzz_encode(flat, offsets, table_of, symbols, bypass_bits, bypass_vals, buf)
    out = np.zeros(n_pairs, dtype=np.int64)
    out_bypass = np.zeros(n_pairs, dtype=np.uint64)
    failed = _fuzz_decode(flat, offsets, sizes, table_of, bypass_bits, buf[:n], out, out_bypass)
    exact = not failed and np.array_equal(out, symbols) and np.array_equal(out_bypass, bypass_vals)

    m = 1_000_000
    uniform = np.arange(257, dtype=np.int64) * 256
    syms = rng.integers(0, 256, size=m)
    ubuf = np.zeros(2 * m + 16, dtype=np.uint8)
    un = rc._encode_batch(uniform, np.zeros(m, dtype=np.int64), syms, ubuf)
    bits_per_symbol = 8.0 * un / m
    data = ubuf[:un]
    back = np.zeros(m, dtype=np.int64)
    err = rc._decode_batch(uniform, np.zeros(m, dtype=np.int64), np.full(m, 256, dtype=np.int64), data, back)
    uniform_ok = not err and np.array_equal(back, syms) and abs(bits_per_symbol - 8.0) <= 0.003 * 8.0
    ok = exact and uniform_ok
    acceptance_report(8, ok, f"{n_pairs} (table, symbol) pairs with {int((bypass_bits > 0).sum())} interleaved "
                             f"bypass fields round-trip exact={exact}; uniform-256: "
                             f"{bits_per_symbol:.5f} bits/symbol (limit 8 +- 0.3%)")
    assert ok


# -- 9. RD monotonicity ----------------------------------------------------------------------------------

RD_LAMBDAS = (0.002, 0.005, 0.01, 0.02, 0.04)
RD_STEPS = 300


def test_c9_rd_monotone(acceptance_report):
    scene = gen_synthetic_scene(SyntheticSpec())
    rows = [rd_point(scene, lam, RD_STEPS, 0)[0] for lam in RD_LAMBDAS]
    sizes = [r["total_bytes"] for r in rows]
    mses = [r["attr_mse"] for r in rows]
    size_ok = all(b <= a for a, b in zip(sizes, sizes[1:]))
    mse_ok = all(b >= a for a, b in zip(mses, mses[1:]))
    acceptance_report(9, size_ok and mse_ok,
                      f"total bytes {sizes}; attr MSE {[f'{m:.4g}' for m in mses]} over lambda_r {list(RD_LAMBDAS)} "
                      f"({RD_STEPS} steps, default scene)")
    assert size_ok and mse_ok
