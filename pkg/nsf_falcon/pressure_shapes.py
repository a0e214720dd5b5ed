from abc import ABC, abstractmethod
from math import comb

import numpy as np
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

from nsf_falcon.errors import EosError


# 最終ノットより外側の尾部 p_inf Z^{5/3} + B (Z/Z_N)^TAIL_EXPONENT の指数（1 未満なら第三法則の正規化が可能）
TAIL_EXPONENT: float = 0.5

# ノット区間あたりの検査点数
CHECK_POINTS_PER_INTERVAL: int = 64


class PressureShape(ABC):
    """
    Dimensionless pressure profile P(Z), Z = rho / theta^{3/2}.

    Every shape also provides a primitive G of the entropy profile derivative
    S'(Z) = -(3/2)((5/3)P - P'Z)/Z^2, so that the entropy profile is G plus a constant.
    """

    @abstractmethod
    def value(self, z: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def derivative(self, z: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def entropy_primitive(self, z: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def entropy_at_infinity(self) -> float | None:
        """Limit of the primitive as Z -> infinity, or None when it diverges."""

    def gap(self, z: np.ndarray) -> np.ndarray:
        """(5/3)P(Z) - P'(Z)Z, positive for admissible shapes (ws5)."""
        z = np.asarray(z, dtype=float)
        return 5.0 / 3.0 * self.value(z) - self.derivative(z) * z

    def entropy_derivative(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return -1.5 * self.gap(z) / z**2


class IconicPressure(PressureShape):
    """P(Z) = Z + p_inf Z^{5/3}; the entropy profile is -log Z."""

    def __init__(self, p_inf: float):
        self.p_inf = p_inf

    def value(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return z + self.p_inf * z ** (5.0 / 3.0)

    def derivative(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return 1.0 + 5.0 / 3.0 * self.p_inf * z ** (2.0 / 3.0)

    def entropy_primitive(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        with np.errstate(divide="ignore"):
            return -np.log(z)

    def gap(self, z: np.ndarray) -> np.ndarray:
        return 2.0 / 3.0 * np.asarray(z, dtype=float)

    def entropy_derivative(self, z: np.ndarray) -> np.ndarray:
        return -1.0 / np.asarray(z, dtype=float)

    def entropy_at_infinity(self) -> float | None:
        return None


class TabulatedPressure(PressureShape):
    """
    Monotone piecewise-cubic P(Z) through the knots (Z_i, P_i).

    Knot slopes come from PCHIP; the last slope is clamped to the slope of the tail
    p_inf Z^{5/3} + B (Z/Z_N)^{1/2} which continues the table beyond Z_N.
    The table is rejected at construction when the constitutive hypotheses fail.

    Args:
        z_knots (list[float]): strictly increasing, starting at 0
        p_knots (list[float]): strictly increasing, starting at 0
        p_inf (float): asymptote of P(Z)/Z^{5/3}
    """

    def __init__(self, z_knots: list[float], p_knots: list[float], p_inf: float):
        z = np.asarray(z_knots, dtype=float)
        p = np.asarray(p_knots, dtype=float)
        self._validate_knots(z, p, p_inf)

        self.z = z
        self.p = p
        self.p_inf = p_inf
        self.z_last = float(z[-1])
        self.tail_b = float(p[-1] - p_inf * z[-1] ** (5.0 / 3.0))
        if self.tail_b <= 0.0:
            raise EosError(
                "ws6: P(Z_N)/Z_N^{5/3} must exceed p_inf strictly "
                f"(got {p[-1] / z[-1] ** (5.0 / 3.0):.6g} vs p_inf={p_inf:.6g})"
            )

        slopes = PchipInterpolator(z, p).derivative()(z)
        slopes[-1] = self._tail_derivative(self.z_last)
        if slopes[0] <= 0.0:
            raise EosError("ws7: P'(0) must be positive")
        self.spline = CubicHermiteSpline(z, p, slopes)
        self._power_coefficients = self._global_coefficients()
        self._offsets = self._entropy_offsets()
        self._check_invariants()

    @staticmethod
    def _validate_knots(z: np.ndarray, p: np.ndarray, p_inf: float) -> None:
        if z.ndim != 1 or z.shape != p.shape or z.size < 3:
            raise EosError("table: z and p must be equal-length lists with at least 3 knots")
        if z[0] != 0.0 or p[0] != 0.0:
            raise EosError("ws7: the table must start at (Z, P) = (0, 0)")
        if np.any(np.diff(z) <= 0.0):
            raise EosError("table: z knots must be strictly increasing")
        if np.any(np.diff(p) <= 0.0):
            raise EosError("ws7: P must be strictly increasing")
        if p_inf <= 0.0:
            raise EosError("ws6: p_inf must be positive")

    def _tail_value(self, z: np.ndarray) -> np.ndarray:
        return self.p_inf * z ** (5.0 / 3.0) + self.tail_b * (z / self.z_last) ** TAIL_EXPONENT

    def _tail_derivative(self, z: np.ndarray) -> np.ndarray:
        return (
            5.0 / 3.0 * self.p_inf * z ** (2.0 / 3.0)
            + TAIL_EXPONENT * self.tail_b * (z / self.z_last) ** TAIL_EXPONENT / z
        )

    def _tail_primitive(self, z: np.ndarray) -> np.ndarray:
        # 尾部では (5/3)P - P'Z = (5/3 - beta) B (Z/Z_N)^beta
        beta = TAIL_EXPONENT
        k = 1.5 * (5.0 / 3.0 - beta) * self.tail_b / (1.0 - beta) / self.z_last**beta
        return k * z ** (beta - 1.0)

    def _global_coefficients(self) -> np.ndarray:
        """Per-interval coefficients a_k of P(Z) = sum_k a_k Z^k (k = 0..3)."""
        local = self.spline.c[::-1, :]  # local[m, i]: (Z - z_i)^m の係数
        n_int = local.shape[1]
        coeffs = np.zeros((4, n_int))
        for k in range(4):
            for m in range(k, 4):
                coeffs[k] += local[m] * comb(m, k) * (-self.z[:-1]) ** (m - k)
        return coeffs

    def _piece_primitive(self, z: np.ndarray, idx: np.ndarray) -> np.ndarray:
        a0, a1, a2, a3 = (self._power_coefficients[k, idx] for k in range(4))
        with np.errstate(divide="ignore", invalid="ignore"):
            first = np.where(a0 == 0.0, 0.0, 2.5 * a0 / z)
            return first - a1 * np.log(z) + 0.5 * a2 * z + a3 * z**2

    def _entropy_offsets(self) -> np.ndarray:
        n_int = self._power_coefficients.shape[1]
        offsets = np.zeros(n_int)
        right_value = float(self._tail_primitive(self.z_last))
        for i in range(n_int - 1, -1, -1):
            zr = np.array([self.z[i + 1]])
            offsets[i] = right_value - float(self._piece_primitive(zr, np.array([i]))[0])
            if i > 0:
                zl = np.array([self.z[i]])
                right_value = float(self._piece_primitive(zl, np.array([i]))[0]) + offsets[i]
        return offsets

    def _interval(self, z: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.z, z, side="right") - 1
        return np.clip(idx, 0, self.z.size - 2)

    def value(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        inside = np.minimum(z, self.z_last)
        outside = np.maximum(z, self.z_last)
        return np.where(z <= self.z_last, self.spline(inside), self._tail_value(outside))

    def derivative(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        inside = np.minimum(z, self.z_last)
        outside = np.maximum(z, self.z_last)
        return np.where(z <= self.z_last, self.spline(inside, 1), self._tail_derivative(outside))

    def entropy_primitive(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        inside = np.minimum(z, self.z_last)
        outside = np.maximum(z, self.z_last)
        idx = self._interval(inside)
        piece = self._piece_primitive(inside, idx) + self._offsets[idx]
        return np.where(z <= self.z_last, piece, self._tail_primitive(outside))

    def entropy_at_infinity(self) -> float | None:
        return 0.0

    def _check_invariants(self) -> None:
        grid = [np.linspace(self.z[i], self.z[i + 1], CHECK_POINTS_PER_INTERVAL) for i in range(self.z.size - 1)]
        z = np.unique(np.concatenate(grid + [self.z_last * np.geomspace(1.0, 1e6, 64)]))
        z = z[z > 0.0]
        p = self.value(z)
        dp = self.derivative(z)
        if np.any(dp <= 0.0):
            raise EosError(f"ws7: P'(Z) <= 0 near Z={z[np.argmax(dp <= 0.0)]:.6g}")
        gap = self.gap(z)
        if np.any(gap <= 0.0):
            raise EosError(f"ws5: (5/3)P - P'Z <= 0 near Z={z[np.argmax(gap <= 0.0)]:.6g}")
        ratio = p / z ** (5.0 / 3.0)
        rises = np.diff(ratio) > 1e-12 * np.abs(ratio[1:])
        if np.any(rises):
            raise EosError(f"ws6: P/Z^(5/3) increases near Z={z[1:][np.argmax(rises)]:.6g}")
