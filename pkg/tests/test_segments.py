import numpy as np
import pytest

from minmarg import segments as sg


class TestSegmentReductions:
    def test_basic_sums(self):
        vals = np.array([1.0, 2.0, 3.0, 4.0])
        offs = np.array([0, 2, 4])
        assert np.array_equal(sg.segment_sum(vals, offs), [3.0, 7.0])

    def test_empty_segment_in_middle_does_not_truncate_neighbor(self):
        # regression: an empty segment between live ones must not steal
        # elements from the preceding segment
        vals = np.array([1.0, 2.0, 3.0, 4.0])
        offs = np.array([0, 2, 2, 4])
        assert np.array_equal(sg.segment_sum(vals, offs), [3.0, 0.0, 7.0])

    def test_trailing_empty_segments(self):
        vals = np.array([1.0, 2.0])
        offs = np.array([0, 2, 2, 2])
        assert np.array_equal(sg.segment_sum(vals, offs), [3.0, 0.0, 0.0])

    def test_leading_empty_segment(self):
        vals = np.array([5.0])
        offs = np.array([0, 0, 1])
        assert np.array_equal(sg.segment_sum(vals, offs), [0.0, 5.0])

    def test_2d_values(self):
        vals = np.arange(8, dtype=float).reshape(4, 2)
        offs = np.array([0, 1, 1, 4])
        out = sg.segment_sum(vals, offs)
        assert np.array_equal(out, [[0, 1], [0, 0], [12, 15]])

    def test_max_with_empties(self):
        vals = np.array([1.0, -2.0, 5.0])
        offs = np.array([0, 2, 2, 3])
        out = sg.segment_max(vals, offs)
        assert out[0] == 1.0 and out[1] == -np.inf and out[2] == 5.0

    def test_softmax_segments_sum_to_one(self):
        rng = np.random.default_rng(0)
        vals = rng.normal(size=10)
        offs = np.array([0, 3, 3, 7, 10])
        sm = sg.segment_softmax(vals, offs)
        sums = sg.segment_sum(sm, offs)
        live = np.diff(offs) > 0
        assert np.allclose(sums[live], 1.0)

    def test_softmax_backward_zero_sum(self):
        rng = np.random.default_rng(1)
        vals = rng.normal(size=9)
        offs = np.array([0, 4, 4, 9])
        sm = sg.segment_softmax(vals, offs)
        d = sg.segment_softmax_backward(sm, rng.normal(size=9), offs)
        sums = sg.segment_sum(d, offs)
        assert np.all(np.abs(sums) < 1e-14)

    def test_normalize_roundtrip(self):
        vals = np.array([2.0, 2.0, 1.0, 3.0])
        offs = np.array([0, 2, 4])
        out = sg.segment_normalize(vals, offs)
        assert np.array_equal(out, [0.5, 0.5, 0.25, 0.75])

    def test_expand(self):
        assert np.array_equal(
            sg.expand(np.array([7.0, 8.0]), np.array([0, 2, 3])),
            [7.0, 7.0, 8.0])
