import numpy as np
import pytest

from ebst import nn
from ebst.datagen import (DomainDataset, gen_gaussian_shift, gen_two_moons,
                          load_csv, rng_stream, rotate_domain, write_csv)
from ebst.errors import ConfigError, ParseError
from ebst.metrics import evaluate
from ebst.selftrain import pretrain_source


class TestRngStream:
    def test_streams_reproducible_and_distinct(self):
        a = rng_stream(3, "dataset").standard_normal(4)
        b = rng_stream(3, "dataset").standard_normal(4)
        c = rng_stream(3, "init").standard_normal(4)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestTwoMoons:
    def test_zero_noise_points_on_canonical_arcs(self):
        from ebst.datagen import MOON_LOWER_CENTER, MOON_UPPER_CENTER
        ds = gen_two_moons(4, 0.0, seed=0)
        upper = ds.features[ds.labels == 0] - np.array(MOON_UPPER_CENTER)
        lower = ds.features[ds.labels == 1] - np.array(MOON_LOWER_CENTER)
        assert np.allclose((upper ** 2).sum(axis=1), 1.0, atol=1e-12)
        assert np.allclose((lower ** 2).sum(axis=1), 1.0, atol=1e-12)
        assert np.all(upper[:, 1] >= 0) and np.all(lower[:, 1] <= 0)

    def test_determinism(self):
        a = gen_two_moons(100, 0.1, seed=5)
        b = gen_two_moons(100, 0.1, seed=5)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)

    def test_exact_class_counts(self):
        ds = gen_two_moons(200, 0.1, seed=1)
        counts = np.bincount(ds.labels)
        assert counts.tolist() == [100, 100]

    def test_rejects_odd_or_tiny_n(self):
        with pytest.raises(ConfigError):
            gen_two_moons(3, 0.1, seed=0)
        with pytest.raises(ConfigError):
            gen_two_moons(0, 0.1, seed=0)


class TestRotateDomain:
    def test_identity_rotation(self):
        ds = gen_two_moons(10, 0.05, seed=2)
        rotated = rotate_domain(ds, 0.0)
        assert np.allclose(rotated.features, ds.features, atol=1e-15)
        assert np.all(rotated.labels == -1)
        assert np.array_equal(rotated.eval_labels, ds.labels)

    def test_quarter_turn(self):
        ds = DomainDataset(np.array([[1.0, 0.0]]), np.array([0]), "source", 2, 2)
        rotated = rotate_domain(ds, 90.0)
        assert np.allclose(rotated.features, [[0.0, 1.0]], atol=1e-12)

    def test_composition(self):
        ds = gen_two_moons(20, 0.1, seed=3)
        twice = rotate_domain(rotate_domain(ds, 45.0), 45.0)
        once = rotate_domain(ds, 90.0)
        assert np.allclose(twice.features, once.features, atol=1e-10)

    def test_requires_2d(self):
        ds = DomainDataset(np.zeros((3, 4)), np.zeros(3, dtype=int), "source", 4, 2)
        with pytest.raises(ConfigError):
            rotate_domain(ds, 10.0)


class TestGaussianShift:
    def test_zero_shift_same_distribution_family(self):
        src, tgt = gen_gaussian_shift(90, 3, [0.0, 0.0], seed=4)
        assert len(src) == len(tgt) == 90
        assert np.bincount(src.labels).tolist() == [30, 30, 30]
        assert np.bincount(tgt.eval_labels).tolist() == [30, 30, 30]
        assert np.all(tgt.labels == -1)
        # distinct streams: same family, different draws
        assert not np.allclose(src.features, tgt.features)

    def test_uniform_priors_within_exact_counts(self):
        src, _ = gen_gaussian_shift(10, 4, [1.0], seed=0)
        assert np.bincount(src.labels).tolist() == [3, 3, 2, 2]

    def test_determinism(self):
        a = gen_gaussian_shift(30, 2, [1.0, 1.0], seed=9)
        b = gen_gaussian_shift(30, 2, [1.0, 1.0], seed=9)
        assert np.array_equal(a[0].features, b[0].features)
        assert np.array_equal(a[1].features, b[1].features)

    def test_large_shift_drops_target_accuracy_to_chance(self):
        src, tgt = gen_gaussian_shift(200, 2, [10.0, 10.0], seed=6)
        params = nn.init_params([2, 16, 2], rng_stream(0, "init"))
        params, _ = pretrain_source(params, src, epochs=400, lr=1e-2)
        assert evaluate(params, src).mean_acc > 0.9
        assert evaluate(params, tgt).mean_acc <= 0.75

    def test_rejects_n_below_k(self):
        with pytest.raises(ConfigError):
            gen_gaussian_shift(2, 3, [0.0], seed=0)


class TestCsv:
    def test_round_trip(self, tmp_path):
        ds = gen_two_moons(20, 0.1, seed=7)
        path = tmp_path / "src.csv"
        write_csv(ds, path)
        loaded = load_csv(path)
        assert np.allclose(loaded.features, ds.features, atol=0)
        assert np.array_equal(loaded.labels, ds.labels)
        assert loaded.d == 2 and loaded.k == 2 and loaded.domain == "source"

    def test_basic_row(self, tmp_path):
        path = tmp_path / "one.csv"
        path.write_text("f1,f2,label\n0.5,-0.2,1\n")
        ds = load_csv(path)
        assert np.allclose(ds.features, [[0.5, -0.2]])
        assert ds.labels.tolist() == [1]

    def test_unlabeled_rows(self, tmp_path):
        path = tmp_path / "tgt.csv"
        path.write_text("f1,f2,label\n0.5,-0.2,-1\n1.5,2.0,-1\n")
        ds = load_csv(path, k=2)
        assert ds.domain == "target"
        assert np.all(ds.labels == -1)

    def test_empty_after_header_is_valid(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("f1,f2,label\n")
        ds = load_csv(path)
        assert len(ds) == 0 and ds.d == 2

    def test_ragged_row_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("f1,f2,label\n0.1,0.2,0\n0.3,1\n")
        with pytest.raises(ParseError, match="line 3"):
            load_csv(path)

    def test_non_numeric_cell_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("f1,f2,label\nx,0.2,0\n")
        with pytest.raises(ParseError, match="line 2"):
            load_csv(path)

    def test_label_out_of_range(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("f1,f2,label\n0.1,0.2,5\n")
        with pytest.raises(ParseError, match="line 2"):
            load_csv(path, k=3)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n")
        with pytest.raises(ParseError, match="line 1"):
            load_csv(path)
