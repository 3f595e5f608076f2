import numpy as np
import pytest

from model.errors import RankDeficientError, SeriesDivergentError, ValidationError
from experiments.regression import (
    DIRECT,
    FULL,
    KMEAN,
    SERIES,
    CurveData,
    NetworkData,
    fit_nls,
    mean_curve,
    model_comparison,
    predict_mean,
    regression_frame,
    series_k_estimate,
    series_k_truncated,
)
from services.network_service import SpilloverNetwork, canonical_network, classify_all, random_network, spillover_matrix
from tools.linalg_tools import spectral_radius

Z_MAX = 2.0
B_TRUE = (0.6, 1.5, 1.0)


def synthetic_networks(coupling, n_networks=25, seed=0):
    """Random four-sector networks whose k* and means follow the given coupling law exactly."""
    matrices, ks, means, classes = [], [], [], []
    for i in range(n_networks):
        net = random_network(4, 0.5, 1.0, seed=seed + i)
        s = np.array(spillover_matrix(net, Z_MAX).entries)
        k = coupling(s)
        matrices.append(s)
        ks.append(k)
        means.append(mean_curve(k, Z_MAX, *B_TRUE))
        classes.append(tuple(classify_all(net)))
    return NetworkData(tuple(matrices), tuple(ks), tuple(means), tuple(classes), Z_MAX)


def direct_only_networks(f0=0.9):
    nets = [
        canonical_network(1),
        canonical_network(3),
        SpilloverNetwork(weights=np.full(3, 1 / 3), kernel=np.array([[0, 0, 0], [3.0, 0, 0], [0, 0, 0]])),
    ]
    matrices = [np.array(spillover_matrix(n, Z_MAX).entries) for n in nets]
    ks = [f0 * s.sum(axis=1) for s in matrices]
    return NetworkData(
        tuple(matrices),
        tuple(ks),
        tuple(mean_curve(k, Z_MAX, *B_TRUE) for k in ks),
        tuple(tuple(classify_all(n)) for n in nets),
        Z_MAX,
    )


class TestSeries:
    def test_zero_matrix(self):
        np.testing.assert_array_equal(series_k_estimate(np.zeros((3, 3)), 1.0, 0.5), 0.0)

    def test_without_feedback_is_direct(self):
        s = np.array([[0.1, 0.2], [0.3, 0.0]])
        np.testing.assert_allclose(series_k_estimate(s, 1.3, 0.0), 1.3 * s.sum(axis=1))

    def test_truncated_sum_converges(self):
        s = np.array(spillover_matrix(random_network(5, 0.6, 1.0, seed=2), Z_MAX).entries)
        f1 = 0.4 / max(spectral_radius(s), 1e-12)
        np.testing.assert_allclose(
            series_k_truncated(s, 1.1, min(f1, 0.9), 200), series_k_estimate(s, 1.1, min(f1, 0.9)), atol=1e-10
        )

    def test_divergent_series(self):
        with pytest.raises(SeriesDivergentError):
            series_k_estimate(np.array([[0.0, 1.0], [1.0, 0.0]]), 1.0, 1.0)


class TestSpectralRadius:
    def test_cycle(self):
        assert spectral_radius(np.array([[0.0, 1.0], [1.0, 0.0]])) == pytest.approx(1.0, abs=1e-10)

    def test_nilpotent(self):
        assert spectral_radius(np.array([[0.0, 1.0], [0.0, 0.0]])) == 0.0

    @pytest.mark.parametrize(
        "matrix,expected",
        [
            ([[1.0, 1.0], [0.0, 1.0]], 1.0),
            ([[0.5, 1.0, 0.0], [0.0, 0.5, 1.0], [0.0, 0.0, 0.5]], 0.5),
        ],
    )
    def test_defective(self, matrix, expected):
        assert spectral_radius(np.array(matrix)) == pytest.approx(expected, abs=1e-10)

    def test_iteration_cap_falls_back_to_eigenvalues(self):
        s = np.array([[0.2, 0.7, 0.0], [0.4, 0.0, 0.9], [0.3, 0.1, 0.5]])
        expected = float(np.max(np.abs(np.linalg.eigvals(s))))
        assert spectral_radius(s, max_iter=2) == pytest.approx(expected, rel=1e-12)

    def test_matches_eigenvalues(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            s = rng.random((4, 4)) * (rng.random((4, 4)) < 0.6)
            expected = float(np.max(np.abs(np.linalg.eigvals(s))))
            assert spectral_radius(s) == pytest.approx(expected, abs=1e-8)


class TestFits:
    def test_k_mean_curve_recovery(self):
        k = np.linspace(0.0, 5.0, 30)
        data = CurveData(k, mean_curve(k, Z_MAX, *B_TRUE), Z_MAX)
        fit = fit_nls(KMEAN, data, initial=[0.5, 1.2, 1.3])
        np.testing.assert_allclose(fit.estimates, B_TRUE, atol=1e-6)
        assert fit.r_squared == pytest.approx(1.0)

    def test_series_recovery(self):
        data = synthetic_networks(lambda s: series_k_estimate(s, 1.2, 0.4))
        fit = fit_nls(SERIES, data)
        np.testing.assert_allclose(fit.estimates, [1.2, 0.4], atol=1e-6)

    def test_full_recovery(self):
        data = synthetic_networks(lambda s: series_k_estimate(s, 1.2, 0.4))
        fit = fit_nls(FULL, data)
        assert fit.names == ("f0", "f1", "b0", "b1", "b2")
        np.testing.assert_allclose(fit.estimates, [1.2, 0.4, *B_TRUE], atol=1e-6)
        assert len(fit.stages) == 2

    def test_direct_recovery(self):
        data = synthetic_networks(lambda s: 0.9 * s.sum(axis=1), seed=100)
        fit = fit_nls(DIRECT, data)
        np.testing.assert_allclose(fit.estimates, [0.9, *B_TRUE], atol=1e-6)
        np.testing.assert_allclose(predict_mean(fit, data), data.stacked(data.mean), atol=1e-8)

    def test_full_without_indirect_sectors(self):
        data = direct_only_networks()
        fit = fit_nls(FULL, data)
        assert fit.as_dict()["f1"] == 0.0
        assert fit.as_dict()["f0"] == pytest.approx(0.9, abs=1e-8)

    def test_rank_deficient(self):
        data = CurveData(np.ones(10), np.linspace(1.0, 1.5, 10), Z_MAX)
        with pytest.raises(RankDeficientError):
            fit_nls(KMEAN, data)

    def test_unknown_kind(self):
        with pytest.raises(ValidationError):
            fit_nls("Quadratic", CurveData(np.ones(3), np.ones(3), Z_MAX))

    def test_wrong_data(self):
        with pytest.raises(ValidationError):
            fit_nls(DIRECT, CurveData(np.ones(3), np.ones(3), Z_MAX))


class TestComparison:
    def test_identical_models(self):
        data = synthetic_networks(lambda s: series_k_estimate(s, 1.2, 0.4), n_networks=10)
        fit = fit_nls(FULL, data)
        comparison = model_comparison(data, fit, fit)
        assert comparison.reduction == 0.0
        assert comparison.rss_indirect == comparison.rss_direct

    def test_indirect_model_wins_on_indirect_data(self):
        data = synthetic_networks(lambda s: series_k_estimate(s, 1.2, 0.4))
        comparison = model_comparison(data, fit_nls(FULL, data), fit_nls(DIRECT, data))
        assert comparison.rss_indirect < comparison.rss_direct
        assert comparison.reduction > 0.5

    def test_frame(self):
        k = np.linspace(0.0, 5.0, 20)
        fit = fit_nls(KMEAN, CurveData(k, mean_curve(k, Z_MAX, *B_TRUE), Z_MAX))
        frame = regression_frame([fit])
        assert list(frame.columns) == ["model", "param", "estimate", "std_err", "r_squared"]
        assert frame["param"].tolist() == ["b0", "b1", "b2"]
        assert set(frame["model"]) == {KMEAN}
