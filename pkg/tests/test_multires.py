import numpy as np
import pytest

from protoanneal.multires import (
    ResolutionPyramid,
    build_pyramid,
    level_dim,
    reduce_once,
)


class TestBuildPyramid:
    def test_hand_averaging(self):
        levels = build_pyramid([1.0, 3.0, 5.0, 7.0], depth=2)
        assert levels[0].tolist() == [1.0, 3.0, 5.0, 7.0]
        assert levels[1].tolist() == [2.0, 6.0]
        assert levels[2].tolist() == [4.0]

    def test_constant_vector_fixed_point(self):
        levels = build_pyramid([3.0, 3.0, 3.0, 3.0], depth=2)
        for lvl in levels:
            assert np.all(lvl == 3.0)

    def test_single_coordinate_zero_pad(self):
        # documented edge: depth 1 on [a] pads with zero, giving [a/2]
        levels = build_pyramid([6.0], depth=1)
        assert levels[1].tolist() == [3.0]

    def test_level_dims(self):
        rng = np.random.default_rng(0)
        for d in (1, 2, 3, 5, 8, 13):
            levels = build_pyramid(rng.normal(size=d), depth=4)
            for l, lvl in enumerate(levels):
                assert lvl.shape[0] == level_dim(d, l)

    def test_nesting(self):
        # reducing level l once gives exactly level l+1
        rng = np.random.default_rng(5)
        x = rng.normal(size=11)
        levels = build_pyramid(x, depth=3)
        for l in range(3):
            np.testing.assert_array_equal(reduce_once(levels[l]), levels[l + 1])

    def test_linearity(self):
        rng = np.random.default_rng(8)
        x, y = rng.normal(size=(2, 9))
        a, b = 1.7, -0.4
        combined = build_pyramid(a * x + b * y, depth=3)
        px = build_pyramid(x, depth=3)
        py = build_pyramid(y, depth=3)
        for l in range(4):
            np.testing.assert_allclose(
                combined[l], a * px[l] + b * py[l], atol=1e-12
            )

    def test_energy_contraction(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            x = rng.normal(size=rng.integers(1, 20))
            levels = build_pyramid(x, depth=4)
            norms = [np.dot(l, l) for l in levels]
            for a, b in zip(norms, norms[1:]):
                assert b <= a + 1e-12


class TestResolutionPyramid:
    def test_resolution_clamps_at_zero(self):
        pyr = ResolutionPyramid(2)
        assert pyr.resolution_for_level(0) == 2
        assert pyr.resolution_for_level(1) == 1
        assert pyr.resolution_for_level(2) == 0
        assert pyr.resolution_for_level(5) == 0

    def test_rejects_bad_depth(self):
        with pytest.raises(ValueError):
            ResolutionPyramid(0)
