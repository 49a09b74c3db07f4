import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import triple_loop
from pkgtune.kernel import check_overflow, matmul_lanes, run_kernel, seeded_operands


@pytest.mark.parametrize("lanes", [2, 4, 8])
@pytest.mark.parametrize("shape", [(1, 1, 1), (3, 5, 7), (9, 2, 17), (16, 16, 16)])
def test_matches_triple_loop(lanes, shape):
    a, b = seeded_operands(*shape, seed=11)
    assert matmul_lanes(a, b, lanes).tolist() == triple_loop(a, b)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**31),
       st.sampled_from([2, 4, 8]))
def test_lane_width_does_not_change_result(m, k, n, seed, lanes):
    a, b = seeded_operands(m, k, n, seed)
    assert np.array_equal(matmul_lanes(a, b, lanes), matmul_lanes(a, b, 2))


def test_known_small_product():
    a = np.array([[1, 2], [3, 4]])
    b = np.array([[5, 6], [7, 8]])
    assert matmul_lanes(a, b, 4).tolist() == [[19, 22], [43, 50]]


def test_overflow_is_refused():
    a = np.full((1, 4), 2**31, dtype=np.int64)
    b = np.full((4, 1), 2**31, dtype=np.int64)
    with pytest.raises(OverflowError):
        check_overflow(a, b)
    with pytest.raises(OverflowError):
        matmul_lanes(a, b, 2)


@pytest.mark.parametrize("lanes", [0, 1, 3, 16])
def test_invalid_lane_width(lanes):
    with pytest.raises(ValueError, match="lane width"):
        matmul_lanes(np.ones((2, 2)), np.ones((2, 2)), lanes)


def test_shape_mismatch():
    with pytest.raises(ValueError, match="incompatible"):
        matmul_lanes(np.ones((2, 3)), np.ones((2, 2)), 2)


def test_seeded_operands_are_reproducible():
    a1, b1 = seeded_operands(4, 5, 6, seed=3)
    a2, b2 = seeded_operands(4, 5, 6, seed=3)
    assert np.array_equal(a1, a2) and np.array_equal(b1, b2)


def test_render_reports_lanes_and_checksum():
    run = run_kernel(8, 8, 8, lanes=8, seed=1)
    text = run.render("skylake-avx512")
    assert "lanes: 8 (march skylake-avx512)" in text
    a, b = seeded_operands(8, 8, 8, 1)
    assert f"checksum: {sum(map(sum, triple_loop(a, b)))}" in text
