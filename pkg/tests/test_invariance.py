import math
import os

import numpy as np
import pandas as pd
import pytest

from transnet.dihedral import C4, D4, VFLIP, apply_spatial, orbit_mean, orbit_mean_params, rotations_prefix
from transnet.invariance import (
    InvarianceReport,
    brute_force_projection,
    group_label,
    invariance_score,
    invariant_basis,
    kernel_scores,
    layer_report,
    plot_report,
    resolve_group,
    similarity_score,
)
from transnet.models import save_checkpoint
from transnet.util.exception_handler import InputError, ShapeError
from transnet.util.types import Metric

from conftest import random_model

GROUPS = [C4, D4, VFLIP]
GROUP_IDS = ["c4", "d4", "vflip"]


class TestInvarianceScore:
    def test_corner_indicator(self):
        e = np.zeros((1, 3, 3))
        e[0, 0, 0] = 1.0
        mean = orbit_mean(C4, e)
        np.testing.assert_allclose(mean[0, [0, 0, 2, 2], [0, 2, 0, 2]], 0.25, rtol=0, atol=1e-15)
        assert invariance_score(e, "c4") == pytest.approx(math.sqrt(0.75), abs=1e-12)

    def test_invariant_kernel(self):
        w = np.ones((2, 3, 3))
        w[:, 1, 1] = 5.0
        assert invariance_score(w, C4) == 0.0

    @pytest.mark.parametrize("group", GROUPS, ids=GROUP_IDS)
    def test_matches_oracle(self, rng, group):
        for _ in range(20):
            w = rng.normal(size=(3, 5, 5))
            projection = brute_force_projection(w, group)
            np.testing.assert_allclose(projection, orbit_mean(group, w), rtol=0, atol=1e-9)
            assert invariance_score(w, group) == pytest.approx(np.linalg.norm(w - projection), abs=1e-9)

    @pytest.mark.slow
    @pytest.mark.parametrize("group", [C4, D4], ids=["c4", "d4"])
    def test_matches_oracle_many_kernels(self, group):
        rng = np.random.default_rng(7)
        for _ in range(100):
            k = int(rng.choice([3, 5, 7]))
            w = rng.normal(size=(int(rng.integers(1, 5)), k, k))
            projection = brute_force_projection(w, group)
            np.testing.assert_allclose(projection, orbit_mean(group, w), rtol=0, atol=1e-9)
            assert invariance_score(w, group) == pytest.approx(np.linalg.norm(w - projection), abs=1e-9)

    @pytest.mark.parametrize("group", GROUPS, ids=GROUP_IDS)
    def test_residual_orthogonal(self, rng, group):
        w = rng.normal(size=(2, 3, 3))
        basis = invariant_basis(w.shape, group)
        residual = (w - brute_force_projection(w, group)).ravel()
        assert np.max(np.abs(basis @ residual)) < 1e-10

    def test_basis_orthonormal(self):
        basis = invariant_basis((2, 4, 4), D4)
        np.testing.assert_allclose(basis @ basis.T, np.eye(basis.shape[0]), rtol=0, atol=1e-14)
        # a 4x4 map has three D4 orbits of positions (corners, edges, centre) per channel
        assert basis.shape == (6, 32)

    def test_projection_of_invariant(self):
        w = orbit_mean(C4, np.random.default_rng(42).normal(size=(2, 5, 5)))
        np.testing.assert_allclose(brute_force_projection(w, C4), w, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("group", GROUPS, ids=GROUP_IDS)
    def test_orbit_elements_score_equally(self, rng, group):
        w = rng.normal(size=(2, 3, 3))
        for t in group:
            assert invariance_score(apply_spatial(t, w), group) == pytest.approx(invariance_score(w, group), abs=1e-12)

    @pytest.mark.parametrize("alpha", [-3.0, 0.5, 2.0])
    def test_homogeneous(self, rng, alpha):
        w = rng.normal(size=(2, 3, 3))
        assert invariance_score(alpha * w, C4) == pytest.approx(abs(alpha) * invariance_score(w, C4), rel=1e-12)

    def test_orbit_mean_is_minimizer(self, rng):
        w = rng.normal(size=(2, 5, 5))
        best = orbit_mean(C4, w)
        distance = np.linalg.norm(w - best)
        for _ in range(20):
            eps = orbit_mean(C4, rng.normal(size=w.shape)) * 1e-3
            assert np.linalg.norm(w - (best + eps)) > distance

    def test_normalized(self, rng):
        w = rng.normal(size=(2, 3, 3))
        assert invariance_score(w, C4, normalized=True) == pytest.approx(invariance_score(w, C4) / np.linalg.norm(w))
        assert invariance_score(np.zeros((1, 3, 3)), C4, normalized=True) == 0.0

    def test_non_group(self, rng):
        with pytest.raises(InputError):
            invariance_score(rng.normal(size=(3, 3)), rotations_prefix(2))
        with pytest.raises(InputError):
            resolve_group("c8")

    def test_non_square(self, rng):
        with pytest.raises(ShapeError):
            invariance_score(rng.normal(size=(2, 3, 4)))

    def test_group_label(self):
        assert group_label(C4) == "c4" and group_label("D4") == "d4"
        assert group_label(VFLIP) == "r0+mr2"


class TestSimilarity:
    def test_invariant_kernel(self):
        w = np.ones((1, 3, 3))
        w[0, 1, 1] = 2.0
        assert similarity_score(w, C4, "cosine") == pytest.approx(1.0, abs=1e-12)
        assert similarity_score(w, C4, "pearson") == pytest.approx(1.0, abs=1e-12)

    def test_zero_orbit_mean_undefined(self):
        w = np.zeros((1, 3, 3))
        w[0, 0, 0], w[0, 0, 2] = 1.0, -1.0
        np.testing.assert_allclose(orbit_mean(C4, w), 0.0, rtol=0, atol=1e-15)
        assert similarity_score(w, C4, "cosine") is None

    def test_constant_kernel_undefined_for_pearson(self):
        assert similarity_score(np.full((1, 3, 3), 2.0), C4, "pearson") is None
        assert similarity_score(np.zeros((1, 3, 3)), C4, "cosine") is None

    def test_norm_metric(self, rng):
        w = rng.normal(size=(2, 3, 3))
        assert similarity_score(w, D4, Metric.norm) == invariance_score(w, D4)

    def test_range(self, rng):
        for _ in range(10):
            w = rng.normal(size=(2, 3, 3))
            for metric in ("cosine", "pearson"):
                assert -1.0 - 1e-12 <= similarity_score(w, C4, metric) <= 1.0 + 1e-12

    @pytest.mark.parametrize("group", [C4, D4], ids=["c4", "d4"])
    def test_ranking_agrees_with_invariance_score(self, rng, group):
        # cosine = sqrt(1 - normalized score**2), so both order kernels the same way
        kernels = rng.normal(size=(30, 2, 3, 3))
        cosine = [similarity_score(w, group, "cosine") for w in kernels]
        norm = [invariance_score(w, group, normalized=True) for w in kernels]
        np.testing.assert_array_equal(np.argsort(cosine)[::-1], np.argsort(norm))
        pearson = [similarity_score(w, group, "pearson") for w in kernels]
        centred = [invariance_score(w - w.mean(), group, normalized=True) for w in kernels]
        np.testing.assert_array_equal(np.argsort(pearson)[::-1], np.argsort(centred))

    def test_ranking_along_projection_path(self, rng):
        w = rng.normal(size=(2, 5, 5))
        path = [(1 - a) * w + a * orbit_mean(C4, w) for a in (0.0, 0.25, 0.5, 0.75)]
        for metric in ("cosine", "pearson"):
            similarity = [similarity_score(v, C4, metric) for v in path]
            assert np.all(np.diff(similarity) > 0)
        assert np.all(np.diff([invariance_score(v, C4) for v in path]) < 0)


class TestLayerReport:
    def test_random_model_positive(self, rng):
        report = layer_report(random_model(["r0"], rng))
        assert len(report.layers) == 3
        for layer in report.layers:
            assert np.all(layer.scores > 0)
            assert layer.undefined == 0

    def test_projected_model_zero(self, rng):
        model = random_model(["r0", "r1"], rng)
        report = layer_report(model.with_params(orbit_mean_params(C4, model.params)), "c4")
        for layer in report.layers:
            assert np.max(layer.scores) < 1e-12

    def test_from_checkpoint(self, tmp_path, rng):
        model = random_model(["r0", "r1"], rng)
        path = tmp_path / "model.tnet"
        save_checkpoint(model, path)
        from_disk = layer_report(str(path), "d4", "pearson")
        in_memory = layer_report(model, "d4", "pearson")
        assert from_disk.source == str(path)
        for a, b in zip(from_disk.layers, in_memory.layers):
            np.testing.assert_array_equal(a.scores, b.scores)

    def test_csv(self, tmp_path, rng):
        report = layer_report(random_model(["r0"], rng))
        path = tmp_path / "out" / "invariance.csv"
        report.to_csv(str(path))
        frame = pd.read_csv(path)
        assert list(frame.columns) == ["layer", "kernel_index", "score", "metric", "group"]
        assert len(frame) == 4 + 5 + 6
        assert set(frame["metric"]) == {"norm"} and set(frame["group"]) == {"c4"}

    def test_summary_and_histogram(self, rng):
        report = layer_report(random_model(["r0"], rng))
        summary = report.summary()
        assert list(summary["kernels"]) == [4, 5, 6]
        edges = report.histogram_edges()
        assert len(edges) == report.bins + 1 and edges[0] == 0.0
        for i, layer in enumerate(report.layers):
            assert report.histogram(i).sum() == layer.scores.size

    def test_undefined_counted(self):
        kernels = np.stack([np.zeros((1, 3, 3)), np.random.default_rng(42).normal(size=(1, 3, 3))])
        scores = kernel_scores(kernels, C4, "cosine")
        assert scores.undefined == 1
        assert list(scores.kernel_indices) == [1]

    def test_relative_reduction(self, rng):
        model = random_model(["r0"], rng)
        base = layer_report(model)
        half = model.with_params(model.params.map_kernels(lambda w: 0.5 * (w + orbit_mean(C4, w))))
        reduction = layer_report(half).relative_reduction(base)
        np.testing.assert_allclose(reduction, 0.5, rtol=0, atol=1e-12)
        with pytest.raises(InputError):
            base.relative_reduction(InvarianceReport(base.layers[:1], base.metric, base.group))

    def test_relative_reduction_zero_baseline(self, rng):
        invariant = kernel_scores(np.ones((3, 2, 3, 3)), C4)
        assert not invariant.scores.any()
        baseline = InvarianceReport([invariant, kernel_scores(rng.normal(size=(3, 2, 3, 3)), C4, layer=1)], Metric.norm, "c4")
        other = InvarianceReport([kernel_scores(rng.normal(size=(3, 2, 3, 3)), C4, layer=i) for i in range(2)], Metric.norm, "c4")
        reduction = other.relative_reduction(baseline)
        assert np.all(np.isfinite(reduction))
        assert reduction[0] == 0.0
        base_mean, own_mean = baseline.layers[1].summary["mean"], other.layers[1].summary["mean"]
        assert reduction[1] == pytest.approx((base_mean - own_mean) / base_mean)

    def test_plots(self, tmp_path, rng):
        model = random_model(["r0"], rng)
        paths = plot_report(layer_report(model), str(tmp_path))
        projected = layer_report(model.with_params(orbit_mean_params(C4, model.params)))
        paths += plot_report(projected, str(tmp_path), prefix="projected")
        assert len(paths) == 8
        for path in paths:
            assert os.path.getsize(path) > 0
