import math

import numpy as np
import pytest

from wdm.datasets import (
    OMNIGLOT_TOP9,
    GlyphDatasetSpec,
    IngestionError,
    PairDataset,
    ShapesDatasetSpec,
    decode_glyphs,
    generate_glyph_pairs,
    generate_shapes_pairs,
    independent_pairs,
    load_omniglot,
    mi_of_spec,
    render_glyph,
    render_shapes_scene,
)
from wdm.ot_oracle import DiscreteJoint, mi_discrete

# minimum pairwise L2 distance between distinct jitter-free glyphs, measured
# over 4 alphabets x 16 characters: about 7.3 at cell_px=32 and 3.5 at 16.
# The contract floor is 0.5.
MIN_GLYPH_DISTANCE = 0.5


class TestRenderGlyph:
    def test_deterministic(self):
        assert np.array_equal(render_glyph(0, 3), render_glyph(0, 3))

    def test_distinct_characters_are_far_apart(self):
        assert np.linalg.norm(render_glyph(0, 3) - render_glyph(0, 4)) >= MIN_GLYPH_DISTANCE
        for px in (16, 32):
            bank = np.stack([render_glyph(a, c, cell_px=px).ravel() for a in range(4) for c in range(16)])
            d = np.linalg.norm(bank[:, None] - bank[None], axis=-1)
            np.fill_diagonal(d, np.inf)
            assert d.min() >= MIN_GLYPH_DISTANCE

    def test_jitter_is_bounded(self):
        base = render_glyph(2, 5)
        for seed in (1, 2):
            noisy = render_glyph(2, 5, jitter_seed=seed, jitter=0.1)
            assert np.abs(noisy - base).max() <= 0.1
            assert noisy.min() >= 0 and noisy.max() <= 1
        assert not np.array_equal(render_glyph(2, 5, jitter_seed=1, jitter=0.1),
                                  render_glyph(2, 5, jitter_seed=2, jitter=0.1))

    def test_char_out_of_range(self):
        with pytest.raises(ValueError):
            render_glyph(0, 16, alphabet_size=16)


class TestMiOfSpec:
    @pytest.mark.parametrize("sizes, expected", [
        ([55], 4.0073),
        ([], 0.0),
        ([55, 52], 7.9586),
        ([55, 52, 48], 11.8298),
        (list(OMNIGLOT_TOP9), 34.43),
    ])
    def test_values(self, sizes, expected):
        assert mi_of_spec(sizes) == pytest.approx(expected, abs=5e-3)

    def test_shapes(self):
        spec = ShapesDatasetSpec()
        assert mi_of_spec(spec) == pytest.approx(math.log(24000), abs=1e-12)
        assert sum(math.log(c) for c in spec.factor_cardinalities) == pytest.approx(12.7939, abs=1e-4)


class TestGlyphPairs:
    def test_spatial_shape_and_certificate(self):
        ds = generate_glyph_pairs(GlyphDatasetSpec([55, 52], layout="spatial", grid=(1, 2), n_samples=8))
        assert ds.x.shape == (8, 32, 64, 1)
        assert ds.mi_certificate == pytest.approx(math.log(2860), abs=1e-12)

    def test_stacked_shape(self):
        ds = generate_glyph_pairs(GlyphDatasetSpec([16, 16, 16], n_samples=5))
        assert ds.x.shape == (5, 32, 32, 3) and ds.y.shape == ds.x.shape
        assert ds.z.shape == (5, 3)

    def test_grid_mismatch(self):
        with pytest.raises(ValueError, match="grid"):
            GlyphDatasetSpec([16, 16, 16], layout="spatial", grid=(2, 2))

    def test_next_character_pairing(self):
        spec = GlyphDatasetSpec([16], n_samples=4)
        ds = generate_glyph_pairs(spec)
        for i in range(4):
            expected = render_glyph(0, (int(ds.z[i, 0]) + 1) % 16)
            assert np.allclose(ds.y[i], expected, atol=1e-6)

    @pytest.mark.parametrize("layout, sizes, grid", [
        ("stacked", [7, 5, 3], None),
        ("spatial", [7, 5, 3, 4], (2, 2)),
    ])
    def test_decoded_pairing_with_jitter(self, layout, sizes, grid):
        spec = GlyphDatasetSpec(sizes, layout=layout, grid=grid, n_samples=200, jitter=0.1, seed=4)
        ds = generate_glyph_pairs(spec)
        assert np.array_equal(decode_glyphs(ds.x, spec), ds.z)
        assert np.array_equal(decode_glyphs(ds.y, spec), (ds.z + 1) % np.array(sizes))
        assert ds.x.min() >= 0 and ds.x.max() <= 1

    def test_label_uniformity(self):
        sizes = [16, 5]
        n = 10 * max(sizes) * 20
        ds = generate_glyph_pairs(GlyphDatasetSpec(sizes, n_samples=n, seed=9, cell_px=8))
        for f, l in enumerate(sizes):
            counts = np.bincount(ds.z[:, f], minlength=l)
            sigma = math.sqrt(n * (1 / l) * (1 - 1 / l))
            assert np.all(np.abs(counts - n / l) <= 5 * sigma)

    def test_certificate_matches_discrete_oracle(self):
        sizes = [4, 3, 2]
        spec = GlyphDatasetSpec(sizes, n_samples=1)
        states = list(np.ndindex(*sizes))
        index = {s: i for i, s in enumerate(states)}
        mass = np.zeros((len(states), len(states)))
        for s in states:
            nxt = tuple((np.array(s) + 1) % np.array(sizes))
            mass[index[s], index[nxt]] = 1.0 / len(states)
        joint = DiscreteJoint(list(range(len(states))), list(range(len(states))), mass)
        assert mi_discrete(joint) == pytest.approx(mi_of_spec(spec), abs=1e-12)

    def test_distortion_varies_drawings_but_keeps_labels(self):
        spec = GlyphDatasetSpec([8], n_samples=300, seed=2, cell_px=16, distortion=0.03)
        ds = generate_glyph_pairs(spec)
        same = ds.z[:, 0] == ds.z[0, 0]
        assert not np.allclose(ds.x[same][0], ds.x[same][1])
        # mild distortion still decodes to the drawn character almost always
        assert np.mean(decode_glyphs(ds.x, spec) == ds.z) >= 0.95
        assert np.mean(decode_glyphs(ds.y, spec) == (ds.z + 1) % 8) >= 0.95

    def test_deterministic(self):
        spec = GlyphDatasetSpec([6, 6], n_samples=20, jitter=0.05, distortion=0.05, seed=3)
        a, b = generate_glyph_pairs(spec), generate_glyph_pairs(spec)
        assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y) and np.array_equal(a.z, b.z)

    def test_independent_pairs(self):
        ds = generate_glyph_pairs(GlyphDatasetSpec([4], n_samples=16, cell_px=8))
        shuffled = independent_pairs(ds, seed=1)
        assert shuffled.mi_certificate == 0.0
        assert sorted(map(bytes, shuffled.y)) == sorted(map(bytes, ds.y))


class TestShapes:
    def test_views_and_factors(self):
        ds = generate_shapes_pairs(ShapesDatasetSpec(n_samples=6, seed=1))
        assert ds.x.shape == (6, 32, 32, 3)
        assert ds.z.shape == (6, 5)
        assert ds.mi_certificate == pytest.approx(10.0858, abs=1e-4)
        for i in range(6):
            assert np.allclose(ds.x[i], render_shapes_scene((*ds.z[i], 0)))
            assert np.allclose(ds.y[i], render_shapes_scene((*ds.z[i], 14)))
        assert not np.allclose(ds.x, ds.y)

    def test_deterministic_and_bounded(self):
        a = generate_shapes_pairs(ShapesDatasetSpec(n_samples=4, seed=2))
        b = generate_shapes_pairs(ShapesDatasetSpec(n_samples=4, seed=2))
        assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
        assert a.x.min() >= 0 and a.x.max() <= 1
        assert np.all(a.z < np.array([10, 10, 10, 4, 6]))

    def test_factors_change_the_image(self):
        base = (1, 2, 3, 0, 2, 0)
        for pos in range(6):
            other = list(base)
            other[pos] = (other[pos] + 1) % 4
            assert not np.allclose(render_shapes_scene(base), render_shapes_scene(other))


class TestCacheFile:
    def test_roundtrip(self, tmp_path):
        ds = generate_glyph_pairs(GlyphDatasetSpec([5, 5], n_samples=7, seed=1, cell_px=8))
        path = tmp_path / "ds.npz"
        ds.save(path)
        back = PairDataset.load(path)
        assert np.array_equal(back.x, ds.x) and np.array_equal(back.z, ds.z)
        assert back.mi_certificate == ds.mi_certificate
        assert back.spec["alphabet_sizes"] == [5, 5]
        with np.load(path) as arc:
            import json
            assert json.loads(str(arc["header"]))["format_version"] == 1


def _make_alphabet(root, name, n_chars, png=True):
    for c in range(n_chars):
        d = root / name / f"character{c + 1:02d}"
        d.mkdir(parents=True)
        if png:
            (d / f"{c:04d}_01.png").write_bytes(b"\x89PNG")


class TestOmniglot:
    def test_missing_directory(self, tmp_path):
        with pytest.raises(IngestionError):
            load_omniglot(tmp_path / "nope")

    def test_empty_directory(self, tmp_path):
        with pytest.raises(IngestionError):
            load_omniglot(tmp_path)

    def test_single_alphabet(self, tmp_path):
        _make_alphabet(tmp_path, "Latin", 5)
        table = load_omniglot(tmp_path)
        assert [(a.name, a.size) for a in table] == [("Latin", 5)]

    def test_sorting_and_skip(self, tmp_path, caplog):
        bg = tmp_path / "images_background"
        _make_alphabet(bg, "Tifinagh", 55)
        _make_alphabet(bg, "Armenian", 41)
        _make_alphabet(tmp_path, "Broken", 3, png=False)
        with caplog.at_level("WARNING"):
            table = load_omniglot(tmp_path)
        assert [a.size for a in table] == [55, 41]
        assert table[0].name == "Tifinagh"
        assert "Broken" in caplog.text
