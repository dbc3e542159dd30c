import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from datarecon.errors import ShapeError
from datarecon.metrics import (GridCell, grid_aggregate, nearest_neighbor, nearest_neighbors, theta_distance,
                               topk_membership, write_grid, write_nn_table, write_table1)


def test_exact_match_is_rank_one(gen):
    ref = gen.uniform(size=(10, 6))
    rec = nearest_neighbor(ref[7], ref)
    assert (rec.nn_index, rec.l2, rec.rank_of(7)) == (7, 0.0, 1)


def test_two_row_reference():
    ref = np.array([[0.0, 2.0], [0.0, 1.0]])
    rec = nearest_neighbor(np.zeros(2), ref)
    assert rec.nn_index == 1 and rec.l2 == pytest.approx(1.0)
    assert rec.rank_of(0) == 2


def test_ties_broken_by_lowest_index():
    ref = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    rec = nearest_neighbor(np.zeros(2), ref)
    assert rec.nn_index == 0
    assert [rec.rank_of(i) for i in range(3)] == [1, 2, 3]


def test_matches_brute_force_rescan(gen):
    ref = gen.uniform(size=(50, 12))
    for q in gen.uniform(size=(20, 12)):
        d = [np.sqrt(sum((q[c] - r[c]) ** 2 for c in range(12))) for r in ref]
        rec = nearest_neighbor(q, ref)
        assert rec.nn_index == int(np.argmin(d)) and rec.l2 == pytest.approx(min(d), rel=1e-12)
        order = sorted(range(50), key=lambda i: (d[i], i))
        assert all(rec.rank_of(j) == order.index(j) + 1 for j in range(50))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_permutation_equivariance(seed):
    g = np.random.default_rng(seed)
    ref, q = g.uniform(size=(15, 5)), g.uniform(size=5)
    perm = g.permutation(15)
    a, b = nearest_neighbor(q, ref), nearest_neighbor(q, ref[perm])
    assert perm[b.nn_index] == a.nn_index and b.l2 == a.l2


def test_dim_mismatch_and_bad_index(gen):
    with pytest.raises(ShapeError):
        nearest_neighbor(np.zeros(3), np.zeros((4, 2)))
    with pytest.raises(ShapeError):
        nearest_neighbor(np.zeros(3), np.zeros((0, 3)))
    with pytest.raises(IndexError):
        nearest_neighbor(np.zeros(2), np.zeros((4, 2))).rank_of(4)


def test_theta_distance():
    assert theta_distance(np.ones(3), np.ones(3)) == 0.0
    assert theta_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 2.0
    with pytest.raises(ShapeError):
        theta_distance(np.ones(2), np.ones(3))


def test_topk_membership(gen):
    ref = gen.uniform(size=(8, 3))
    assert topk_membership(ref[2], ref, 2, 1)
    q = gen.uniform(size=3)
    assert all(topk_membership(q, ref, j, 8) for j in range(8))
    # planted distances 0.1 * (i + 1) along the first axis
    planted = np.zeros((5, 3))
    planted[:, 0] = 0.1 * np.arange(1, 6)[::-1]
    hits = [topk_membership(np.zeros(3), planted, j, 2) for j in range(5)]
    assert hits == [False, False, False, True, True]
    with pytest.raises(ValueError):
        topk_membership(q, ref, 0, 0)


def test_grid_aggregate_hand_values():
    gt = np.array([[0.0, 0.0], [1.0, 1.0]])
    part = np.array([[3.0, 0.0]])
    rnd = np.array([[0.0, 4.0]])
    results = {(0.0, 0.0): np.array([[0.0, 0.0], [1.0, 1.0]]), (0.0, 1.0): np.array([[3.0, 0.0]]),
               (1.0, 0.0): np.array([[0.0, 1.0], [1.0, 0.0]]), (1.0, 1.0): np.array([[0.0, 4.0]])}
    cells = grid_aggregate(results, gt, part, rnd, expected=list(results))
    assert cells[0].avg_l2_to_gt == 0.0
    assert cells[0].avg_l2_to_partition == pytest.approx((3.0 + np.sqrt(5.0)) / 2)
    assert cells[1].avg_l2_to_gt == pytest.approx(np.sqrt(5.0))
    assert cells[2].avg_l2_to_gt == pytest.approx(1.0)
    assert cells[3].avg_l2_to_random == 0.0 and cells[3].avg_l2_to_gt == pytest.approx(np.sqrt(10.0))
    with pytest.raises(KeyError):
        grid_aggregate(results, gt, part, rnd, expected=[(0.5, 0.5)])


def test_csv_writers(tmp_path, gen):
    ref = gen.uniform(size=(4, 3))
    write_nn_table(tmp_path / "nn.csv", ref[::-1], ref, claimed=[3, 2, 1, 0])
    lines = (tmp_path / "nn.csv").read_text().splitlines()
    assert lines[0] == "recon_index,nn_index,l2,rank" and lines[1].endswith(",1")
    write_table1(tmp_path / "t1.csv", [("random", "affine", 1e-3)])
    assert (tmp_path / "t1.csv").read_text().splitlines()[1] == "random,affine,0.001"
    write_grid(tmp_path / "g.csv", [GridCell(1, 0, 0.5, 1, 2)], "gradpen")
    assert (tmp_path / "g.csv").read_text().splitlines()[1] == "gradpen,1.0,0.0,0.5,1.0,2.0"


def test_batch_nn_preserves_order(gen):
    ref = gen.uniform(size=(6, 2))
    recs = nearest_neighbors(ref[[4, 1]], ref)
    assert [r.nn_index for r in recs] == [4, 1] and [r.recon_index for r in recs] == [0, 1]
