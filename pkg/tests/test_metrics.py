import numpy as np
import pytest

from coopreg.metrics import (
    ae_relative_error,
    dice,
    landmark_distances,
    landmark_error,
    posthoc_ae_fit,
    transfer_landmarks,
)
from coopreg.synth import RegistrationPair, bump_center_col, make_linear_boxbump


def square(offset_col=0, size=32):
    img = np.zeros((size, size))
    img[5:15, 5 + offset_col:15 + offset_col] = 1.0
    return img


class TestDice:
    def test_self(self):
        assert dice(square(), square()) == 1.0

    def test_disjoint(self):
        assert dice(square(0), square(12)) == 0.0

    def test_half_shift(self):
        # 10x10 squares overlapping in a 10x5 strip: 2*50 / 200
        assert dice(square(0), square(5)) == 0.5

    def test_both_empty(self):
        assert dice(np.zeros((4, 4)), np.zeros((4, 4))) == 1.0

    def test_symmetric(self):
        rng = np.random.default_rng(0)
        a, b = rng.random((16, 16)), rng.random((16, 16))
        assert dice(a, b) == dice(b, a)

    def test_threshold(self):
        a = np.full((4, 4), 0.4)
        assert dice(a, a, threshold=0.5) == 1.0  # both empty
        assert dice(a, np.ones((4, 4)), threshold=0.3) == 1.0


def linear_pair(t_source, t_target):
    return RegistrationPair(make_linear_boxbump(t_source), make_linear_boxbump(t_target))


class TestLandmarkError:
    def test_identity(self):
        pair = linear_pair(0.4, 0.4)
        assert landmark_error(np.zeros((64, 64, 2)), pair, 10.0) == 0.0

    def test_ground_truth_transport(self):
        ts, tt = 0.2, 0.6
        pair = linear_pair(ts, tt)
        shift = bump_center_col(ts) - bump_center_col(tt)
        field = np.zeros((64, 64, 2))
        # carry the bump region sideways, leave the rectangle corners in place
        field[:, 10:55, 1] = shift
        assert landmark_error(field, pair, 10.0) == pytest.approx(0.0, abs=1e-12)

    def test_one_bump_width_offset(self):
        # bump centers 10 px apart: c(t) = 16 + 32 t
        pair = linear_pair(0.5, 0.5 + 10 / 32)
        d = landmark_distances(np.zeros((64, 64, 2)), pair)
        np.testing.assert_allclose(d[:3], 10.0)
        np.testing.assert_allclose(d[3:], 0.0)
        assert landmark_error(np.zeros((64, 64, 2)), pair, 10.0) == pytest.approx(300 / 7)

    def test_transfer_interpolates_field(self):
        field = np.zeros((8, 8, 2))
        field[..., 1] = np.arange(8)[None, :]
        out = transfer_landmarks(field, [[2.0, 2.5]])
        np.testing.assert_allclose(out, [[2.0, 5.0]])

    def test_landmark_outside(self):
        with pytest.raises(ValueError):
            transfer_landmarks(np.zeros((8, 8, 2)), [[9.0, 1.0]])


class TestAERelativeError:
    def test_perfect(self):
        f = np.random.default_rng(1).standard_normal((3, 4, 4, 2))
        assert ae_relative_error(f, f) == 0.0

    def test_zero_reconstruction(self):
        f = np.random.default_rng(2).standard_normal((3, 4, 4, 2))
        assert ae_relative_error(f, np.zeros_like(f)) == pytest.approx(100.0)

    def test_by_hand(self):
        phi = np.array([[[3.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 4.0]]])
        rec = np.array([[[3.0, 1.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 4.0]]])
        # |phi - rec| = 1, |phi| = 5
        assert ae_relative_error([phi], [rec]) == pytest.approx(20.0)

    def test_scale_invariant(self):
        rng = np.random.default_rng(3)
        f, r = rng.standard_normal((2, 5, 4, 4, 2))
        assert ae_relative_error(-2.5 * f, -2.5 * r) == pytest.approx(ae_relative_error(f, r))

    def test_zero_fields(self):
        f = np.ones((2, 4, 4, 2))
        f[0] = 0
        assert ae_relative_error(f, f * 0.5) == pytest.approx(50.0)
        with pytest.raises(ValueError):
            ae_relative_error(np.zeros((2, 4, 4, 2)), np.zeros((2, 4, 4, 2)))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ae_relative_error(np.ones((2, 4, 4, 2)), np.ones((3, 4, 4, 2)))


def test_posthoc_fit_constant_fields():
    rows, cols = np.mgrid[0:32, 0:32] / 32.0
    field = np.stack([2 * np.sin(np.pi * rows), 3 * cols * rows], axis=-1).astype(np.float32)
    net, err = posthoc_ae_fit([field] * 8, h=1, seed=0)
    assert 0.0 <= err <= 5.0
    assert net.config.h == 1
