import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsf_falcon.errors import EosError
from nsf_falcon.pressure_shapes import IconicPressure, TabulatedPressure


Z_KNOTS = [0.0, 1.0, 2.0, 4.0]
P_KNOTS = [0.0, 2.25, 5.9685, 16.5992]


def test_iconic_closed_forms():
    # P(Z) = Z + Z^{5/3}、ギャップは (2/3) Z
    shape = IconicPressure(1.0)
    z = np.array([0.5, 1.0, 8.0])
    np.testing.assert_allclose(shape.value(z), z + z ** (5.0 / 3.0))
    np.testing.assert_allclose(shape.gap(z), 2.0 / 3.0 * z)
    np.testing.assert_allclose(shape.entropy_derivative(z), -1.0 / z)
    assert shape.entropy_at_infinity() is None


def test_table_continues_with_tail():
    shape = TabulatedPressure(Z_KNOTS, P_KNOTS, 1.0)
    assert shape.tail_b == pytest.approx(16.5992 - 4.0 ** (5.0 / 3.0))
    # 最終ノットで値と傾きが連続
    eps = 1e-9
    assert shape.value(np.array([4.0 + eps]))[0] == pytest.approx(shape.value(np.array([4.0 - eps]))[0], rel=1e-8)
    assert shape.derivative(np.array([4.0 + eps]))[0] == pytest.approx(shape.derivative(np.array([4.0 - eps]))[0], rel=1e-6)


def test_table_entropy_primitive_is_continuous_at_knots():
    shape = TabulatedPressure(Z_KNOTS, P_KNOTS, 1.0)
    for z in Z_KNOTS[1:]:
        left = shape.entropy_primitive(np.array([z * (1 - 1e-10)]))[0]
        right = shape.entropy_primitive(np.array([z * (1 + 1e-10)]))[0]
        assert left == pytest.approx(right, rel=1e-7, abs=1e-9)


def test_table_rejects_ratio_below_asymptote():
    with pytest.raises(EosError, match="ws6"):
        TabulatedPressure([0.0, 1.0, 2.0], [0.0, 1.0, 2.0], 1.0)


def test_table_rejects_short_table():
    with pytest.raises(EosError, match="table"):
        TabulatedPressure([0.0, 1.0], [0.0, 2.0], 1.0)


@settings(max_examples=200, deadline=None)
@given(z=st.floats(min_value=1e-3, max_value=1e4, allow_nan=False))
def test_table_hypotheses_hold_everywhere(z):
    shape = TabulatedPressure(Z_KNOTS, P_KNOTS, 1.0)
    zz = np.array([z])
    assert shape.derivative(zz)[0] > 0.0
    assert shape.gap(zz)[0] > 0.0
    assert shape.value(zz)[0] / z ** (5.0 / 3.0) >= 1.0


@settings(max_examples=100, deadline=None)
@given(z=st.floats(min_value=0.05, max_value=50.0, allow_nan=False))
def test_entropy_primitive_matches_derivative(z):
    shape = TabulatedPressure(Z_KNOTS, P_KNOTS, 1.0)
    if any(abs(z - k) < 1e-4 for k in Z_KNOTS):
        return
    h = 1e-6 * z
    fd = (shape.entropy_primitive(np.array([z + h]))[0] - shape.entropy_primitive(np.array([z - h]))[0]) / (2 * h)
    assert fd == pytest.approx(shape.entropy_derivative(np.array([z]))[0], rel=1e-5)
