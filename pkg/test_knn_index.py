import numpy as np
import pytest

from core.knn_index import KnnIndex, cosine_distance, unit_rows
from utils.errors import RefdbError


def _recall(n, dim, k, queries=100, seed=0):
    rng = np.random.default_rng(seed)
    data = rng.normal(size=(n, dim))
    index = KnnIndex.build(data, m=16, ef_construction=64, ef_search=128, seed=seed)
    hits = 0
    for q in rng.normal(size=(queries, dim)):
        exact = {row for row, _ in index.brute_force(q / np.linalg.norm(q), k)}
        found = {row for row, _ in index.search(q, k)}
        hits += len(exact & found)
    return hits / (queries * k)


def test_every_vector_finds_itself():
    data = np.random.default_rng(1).normal(size=(200, 8))
    index = KnnIndex.build(data, seed=1)
    for i in range(200):
        row, dist = index.search(data[i], 1)[0]
        assert row == i
        assert dist == pytest.approx(0.0, abs=1e-9)


def test_results_sorted_by_distance():
    data = np.random.default_rng(2).normal(size=(300, 6))
    index = KnnIndex.build(data, seed=2)
    result = index.search(data[0] + 0.1, 20)
    dists = [d for _, d in result]
    assert dists == sorted(dists)
    assert all(0.0 <= d <= 2.0 for d in dists)


def test_k_equal_to_size_returns_everything():
    data = np.random.default_rng(3).normal(size=(25, 4))
    index = KnnIndex.build(data)
    result = index.search(data[3], 25)
    assert sorted(row for row, _ in result) == list(range(25))


@pytest.mark.parametrize("k", [1, 15])
def test_recall_against_exhaustive_scan(k):
    assert _recall(1000, 12, k) >= 0.95


@pytest.mark.slow
@pytest.mark.parametrize("k", [1, 15])
def test_recall_at_ten_thousand(k):
    assert _recall(10000, 12, k, queries=200) >= 0.95


def test_query_errors():
    index = KnnIndex.build(np.eye(3))
    with pytest.raises(RefdbError):
        index.search(np.zeros(3), 1)
    with pytest.raises(RefdbError):
        index.search(np.ones(3), 0)
    with pytest.raises(RefdbError):
        index.search(np.ones(3), 4)
    with pytest.raises(RefdbError):
        KnnIndex(dim=3).search(np.ones(3), 1)


def test_cosine_distance():
    assert cosine_distance([1, 0], [0, 1]) == pytest.approx(1.0)
    assert cosine_distance([1, 0], [-2, 0]) == pytest.approx(2.0)
    assert cosine_distance([3, 4], [6, 8]) == pytest.approx(0.0)
    with pytest.raises(RefdbError):
        cosine_distance([0, 0], [1, 0])
    assert np.allclose(np.linalg.norm(unit_rows([[3, 4], [0, 2]]), axis=1), 1.0)


def test_save_and_load(tmp_path):
    rng = np.random.default_rng(4)
    data = rng.normal(size=(150, 10))
    index = KnnIndex.build(data, m=8, ef_construction=50, seed=4)
    path = tmp_path / "index.bin"
    index.save(path)
    loaded = KnnIndex.load(path)
    assert len(loaded) == 150
    assert loaded.entry == index.entry
    for q in rng.normal(size=(10, 10)):
        assert loaded.search(q, 5) == index.search(q, 5)
