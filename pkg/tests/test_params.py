import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from fedfg.errors import InvalidInputError, LayoutMismatchError
from fedfg.params import ParamVector, ordered_weighted_sum


def test_layout_size_must_match_values():
    with pytest.raises(InvalidInputError):
        ParamVector(np.zeros(5), (("a", (2, 2)),))


shapes = st.lists(st.tuples(st.integers(1, 4), st.integers(1, 3)), min_size=1, max_size=4)


@given(shapes, st.integers(0, 2**32 - 1))
def test_flatten_unflatten_roundtrip(segs, seed):
    rng = np.random.default_rng(seed)
    arrays_ = [(f"s{i}", rng.standard_normal(shape)) for i, shape in enumerate(segs)]
    p = ParamVector.from_arrays(arrays_)
    again = ParamVector.from_arrays(p.unflatten())
    assert again.equals(p)
    for name, a in arrays_:
        np.testing.assert_array_equal(p.segment(name), a)


def test_arithmetic_requires_identical_layout():
    a = ParamVector.from_arrays({"x": np.ones(3)})
    b = ParamVector.from_arrays({"y": np.ones(3)})
    with pytest.raises(LayoutMismatchError):
        a + b
    np.testing.assert_array_equal((a + a - 0.5 * a).values, [1.5, 1.5, 1.5])


def test_segment_view_is_read_only():
    p = ParamVector.from_arrays({"w": np.zeros((2, 2))})
    with pytest.raises(ValueError):
        p.segment("w")[0, 0] = 1.0


@given(arrays(np.float64, (5, 7), elements=st.floats(-1e6, 1e6)),
       arrays(np.float64, 5, elements=st.floats(0, 1)), st.permutations(range(5)))
def test_ordered_weighted_sum_is_permutation_invariant(m, w, perm):
    perm = list(perm)
    a = ordered_weighted_sum(m, w)
    b = ordered_weighted_sum(m[perm], w[perm])
    assert a.tobytes() == b.tobytes()
    np.testing.assert_allclose(a, w @ m, rtol=1e-9, atol=1e-6)
