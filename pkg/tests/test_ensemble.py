import numpy as np
import pandas as pd
import pytest

from model.errors import ValidationError
from experiments.ensemble import (
    RECORD_COLUMNS,
    direct_only_deviation,
    records_frame,
    run_ensemble,
    spillover_frame,
    three_sector_study,
)
from experiments.regression import DIRECT, FULL, NetworkData, fit_nls, model_comparison
from services.network_service import EQUAL, PathClass
from tools.analysis_tools import summarize_ensemble

GRID = 81


@pytest.fixture(scope="module")
def small_ensemble():
    return run_ensemble(8, 4, connection_prob=0.35, weight_max=1.0, seed=3, grid_points=GRID)


class TestRunEnsemble:
    def test_no_runs(self):
        result = run_ensemble(0, 3, grid_points=GRID)
        assert len(result) == 0
        frame = records_frame(result.records)
        assert list(frame.columns) == RECORD_COLUMNS and frame.empty
        assert summarize_ensemble(frame)["runs"] == 0

    def test_negative_runs(self):
        with pytest.raises(ValidationError):
            run_ensemble(-1, 3)

    def test_seed_reproducible(self):
        a = run_ensemble(3, 3, seed=4, weight_max=1.0, grid_points=GRID)
        b = run_ensemble(3, 3, seed=4, weight_max=1.0, grid_points=GRID)
        pd.testing.assert_frame_equal(records_frame(a.records), records_frame(b.records))

    def test_threads_match_serial(self):
        serial = run_ensemble(3, 3, seed=6, weight_max=1.0, grid_points=GRID)
        parallel = run_ensemble(3, 3, seed=6, weight_max=1.0, grid_points=GRID, threads=2)
        pd.testing.assert_frame_equal(records_frame(serial.records), records_frame(parallel.records))

    def test_records_are_consistent(self, small_ensemble):
        assert small_ensemble.failures == 0
        for record in small_ensemble:
            zeta = 2.0 * record.spillover.sum()
            assert np.all(record.k_star >= 0) and np.all(record.k_star <= zeta + 1e-12)
            for sector, cls in enumerate(record.path_classes):
                if cls is PathClass.NO_SPILLOVER:
                    assert record.k_star[sector] == 0.0
            assert record.connection_prob == 0.35

    def test_direct_only_sectors_see_base_means(self, small_ensemble):
        assert direct_only_deviation(small_ensemble.records) <= 1e-4

    def test_three_sector_study(self):
        studies = three_sector_study(n_runs=2, seed=1, grid_points=GRID)
        assert set(studies) == {0.8, 0.2}
        for result in studies.values():
            for record in result:
                np.testing.assert_allclose(record.network.weights, 1 / 3)
                assert record.network.kernel.max() <= 1.0


class TestFrames:
    def test_spillover_frame(self, small_ensemble):
        frame = spillover_frame(small_ensemble.records)
        assert list(frame.columns) == ["run", "row", "col", "value"]
        assert len(frame) == 16 * len(small_ensemble)

    def test_frames_rebuild_network_data(self, small_ensemble, tmp_path):
        records_path, s_path = tmp_path / "records.csv", tmp_path / "S.csv"
        records_frame(small_ensemble.records).to_csv(records_path, index=False, float_format="%.17g")
        spillover_frame(small_ensemble.records).to_csv(s_path, index=False, float_format="%.17g")
        rebuilt = NetworkData.from_frames(pd.read_csv(records_path), pd.read_csv(s_path), 2.0)
        direct = NetworkData.from_records(small_ensemble.records, 2.0)
        assert len(rebuilt) == len(direct)
        for a, b in zip(rebuilt.matrices, direct.matrices):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(rebuilt.stacked(rebuilt.k_star), direct.stacked(direct.k_star))
        assert rebuilt.path_classes == direct.path_classes

    def test_equal_weights(self):
        result = run_ensemble(2, 3, connection_prob=0.5, weight_max=1.0, seed=0, sector_weights=EQUAL, grid_points=GRID)
        for record in result:
            np.testing.assert_allclose(record.network.weights, 1 / 3)


@pytest.mark.slow
def test_three_sector_relations_hold_exactly():
    result = run_ensemble(100, 3, connection_prob=0.2, weight_max=1.0, seed=11, sector_weights=EQUAL, grid_points=201)
    assert result.failures == 0
    for record in result:
        for sector, cls in enumerate(record.path_classes):
            if cls is PathClass.NO_SPILLOVER:
                assert record.k_star[sector] <= 1e-8
    assert direct_only_deviation(result.records) <= 1e-4


@pytest.mark.slow
def test_indirect_model_reduces_error():
    result = run_ensemble(200, 10, weight_max=3.0, seed=2024, grid_points=201, threads=4)
    data = NetworkData.from_records(result.records, 2.0)
    fit_indirect, fit_direct = fit_nls(FULL, data), fit_nls(DIRECT, data)
    comparison = model_comparison(data, fit_indirect, fit_direct)
    assert comparison.rss_indirect < comparison.rss_direct
    assert comparison.reduction >= 0.10
    estimates = fit_indirect.as_dict()
    assert all(v > 0 for v in estimates.values())
    assert estimates["f1"] < 1.0
