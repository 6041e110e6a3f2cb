import struct

import numpy as np
import pytest

from anchorcodec.scene import (
    ANCH_MAGIC,
    ATTR_DIM,
    AnchorCorruptionError,
    AnchorFormatError,
    AnchorSet,
    AnchorValidationError,
    SyntheticSpec,
    anchor_set_from_bytes,
    anchor_set_to_bytes,
    denormalize_attributes,
    fit_norm_stats,
    gen_synthetic_scene,
    load_anchor_set,
    normalize_attributes,
    radius_covering,
    save_anchor_set,
)


def random_set(rng, n, mask=False):
    f32 = lambda a: a.astype(np.float32).astype(np.float64)  # noqa: E731
    return AnchorSet.from_attributes(
        f32(rng.normal(size=(n, 3))),
        f32(rng.normal(size=(n, ATTR_DIM))),
        rng.integers(0, 50, size=n),
        rng.random((n, 10)) < 0.5 if mask else None,
    )


def tetrahedron_bytes(n=4):
    header = struct.pack("<4sHIIB", ANCH_MAGIC, 1, n, 10, 0)
    recs = np.zeros(n, dtype=[("p", "<f4", (3,)), ("rest", "<f4", (86,)), ("v", "<u4")])
    corners = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float32)
    recs["p"][: min(n, 4)] = corners[: min(n, 4)]
    return header + recs.tobytes()


class TestAnchFile:
    def test_minimal_tetrahedron(self):
        s = anchor_set_from_bytes(tetrahedron_bytes())
        assert len(s) == 4
        assert s.positions[1].tolist() == [1.0, -1.0, -1.0]
        assert s.mask is None

    def test_three_anchors_rejected(self):
        with pytest.raises(AnchorValidationError):
            anchor_set_from_bytes(tetrahedron_bytes(3))

    def test_bad_magic(self):
        with pytest.raises(AnchorFormatError):
            anchor_set_from_bytes(b"NOPE" + tetrahedron_bytes()[4:])

    def test_truncated(self):
        with pytest.raises(AnchorCorruptionError):
            anchor_set_from_bytes(tetrahedron_bytes()[:-5])

    def test_non_finite(self):
        data = bytearray(tetrahedron_bytes())
        data[15:19] = struct.pack("<f", float("nan"))
        with pytest.raises(AnchorValidationError):
            anchor_set_from_bytes(bytes(data))

    def test_round_trip(self, rng, tmp_path):
        s = random_set(rng, 37)
        save_anchor_set(s, tmp_path / "a.anch")
        back = load_anchor_set(tmp_path / "a.anch")
        assert back.equals(s)
        assert anchor_set_to_bytes(back) == (tmp_path / "a.anch").read_bytes()

    def test_mask_section_size(self, rng):
        plain = anchor_set_to_bytes(random_set(rng, 13))
        masked = random_set(rng, 13, mask=True)
        data = anchor_set_to_bytes(masked)
        assert len(data) - len(plain) == (13 * 10 + 7) // 8
        back = anchor_set_from_bytes(data)
        np.testing.assert_array_equal(back.mask, masked.mask)

    def test_synthetic_idempotent(self):
        s = gen_synthetic_scene(SyntheticSpec(n_anchors=200, seed=4))
        assert anchor_set_to_bytes(anchor_set_from_bytes(anchor_set_to_bytes(s))) == anchor_set_to_bytes(s)


class TestSynthetic:
    def test_deterministic(self):
        spec = SyntheticSpec(n_anchors=300, seed=9, visibility_radius=5.0)
        assert gen_synthetic_scene(spec).equals(gen_synthetic_scene(spec))

    def test_covariance_ratios(self):
        s = gen_synthetic_scene(SyntheticSpec(n_anchors=4000, seed=1))
        ev = np.sort(np.linalg.eigvalsh(np.cov(s.positions, rowvar=False, bias=True)))[::-1]
        np.testing.assert_allclose(ev / ev[-1], [100.0, 25.0, 1.0], rtol=0.02)

    def test_zero_radius_means_invisible(self):
        s = gen_synthetic_scene(SyntheticSpec(n_anchors=100, visibility_radius=0.0))
        assert not s.visibility.any()

    def test_visibility_inside_radius(self):
        s = gen_synthetic_scene(SyntheticSpec(n_anchors=500, visibility_radius=6.0))
        d = np.linalg.norm(s.positions, axis=1)
        assert np.all(s.visibility[d < 5.99] > 0)
        assert np.all(s.visibility[d > 6.01] == 0)

    def test_radius_covering(self):
        spec = SyntheticSpec(n_anchors=1000, seed=3)
        r = radius_covering(spec, 0.3)
        s = gen_synthetic_scene(SyntheticSpec(n_anchors=1000, seed=3, visibility_radius=r))
        assert np.count_nonzero(s.visibility) == 300

    @pytest.mark.parametrize("kw", [{"n_anchors": 3}, {"anisotropy": (1, 5, 10)}, {"anisotropy": (1, 1, 0)}])
    def test_invalid_spec(self, kw):
        with pytest.raises(ValueError):
            SyntheticSpec(**kw)


class TestNormalization:
    def test_constant_channel(self):
        attrs = np.random.default_rng(0).normal(size=(20, ATTR_DIM))
        attrs[:, 7] = 3.25
        stats = fit_norm_stats(attrs)
        assert stats.shift[7] == 3.25 and stats.scale[7] == 1.0

    def test_normalized_stats(self, rng):
        normed, _ = normalize_attributes(random_set(rng, 200))
        a = normed.attributes()
        assert np.max(np.abs(a.mean(axis=0))) < 1e-6
        assert np.max(np.abs(a.std(axis=0) - 1)) < 1e-6
        again = fit_norm_stats(a)
        np.testing.assert_allclose(again.shift, 0, atol=1e-6)
        np.testing.assert_allclose(again.scale, 1, atol=1e-6)

    def test_round_trip(self, rng):
        s = random_set(rng, 50)
        normed, stats = normalize_attributes(s)
        back = denormalize_attributes(normed, stats)
        np.testing.assert_allclose(back.attributes(), s.attributes(), rtol=1e-6, atol=1e-12)
