"""Model constants and closed-form pieces of the inspection game.

Everything here is a pure function of its arguments and broadcasts over
leading axes, so a population state ``x`` may be a single ``(d,)`` vector
or a stack ``(..., d)`` of them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial

SIMPLEX_ATOL = 1e-9


class DomainError(ValueError):
    """Argument outside the domain of a model function."""


@dataclass(frozen=True)
class DetectionSpec:
    """Exponential detection family ``P(a) = p_max * (1 - exp(-lam * a))``."""

    family: str = "exponential"
    p_max: float = 1.0
    lam: float = 1.0

    def errors(self) -> list[str]:
        errs = []
        if self.family != "exponential":
            errs.append(f"detection.family: unsupported family {self.family!r}")
        if not 0.0 < self.p_max <= 1.0:
            errs.append("detection.p_max: must lie in (0, 1]")
        if not self.lam > 0.0:
            errs.append("detection.lam: must be > 0")
        return errs

    def prob(self, alpha):
        return self.p_max * -np.expm1(-self.lam * np.asarray(alpha, dtype=float))

    def deriv(self, alpha):
        return self.p_max * self.lam * np.exp(-self.lam * np.asarray(alpha, dtype=float))

    def deriv_inv(self, y):
        """Inverse of ``P'`` on ``(0, P'(0)]``."""
        return np.log(self.p_max * self.lam / np.asarray(y, dtype=float)) / self.lam


@dataclass(frozen=True)
class TerminalSpec:
    """Terminal payoff ``J_T(l_i, x) = a * l_i + b * <l, x>`` (``zero``: a = b = 0)."""

    family: str = "zero"
    a: float = 0.0
    b: float = 0.0

    def errors(self) -> list[str]:
        if self.family not in ("zero", "linear"):
            return [f"terminal.family: unsupported family {self.family!r}"]
        return []

    def values(self, levels, x):
        """``J_T(l_i, x)`` for every level; shape ``(..., d)``."""
        levels = np.asarray(levels, dtype=float)
        x = np.asarray(x, dtype=float)
        if self.family == "zero":
            return np.zeros(x.shape[:-1] + levels.shape)
        mean_level = x @ levels
        return self.a * levels + self.b * mean_level[..., None]


@dataclass(frozen=True)
class ModelParams:
    levels: tuple[float, ...] = (0.0, 1.0, 2.0)
    Q: float = 1.0
    F: float = 5.0
    sigma: float = 1.0
    L: float = 1.0
    T: float = 1.0
    detection: DetectionSpec = field(default_factory=DetectionSpec)
    terminal: TerminalSpec = field(default_factory=TerminalSpec)

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(float(v) for v in self.levels))
        errs = self.errors()
        if errs:
            raise DomainError("; ".join(errs))

    def errors(self) -> list[str]:
        errs = []
        lv = np.asarray(self.levels, dtype=float)
        if lv.size < 1:
            errs.append("levels: need at least one crime level")
        elif np.any(lv < 0) or np.any(np.diff(lv) <= 0):
            errs.append("levels: must be non-negative and strictly increasing")
        for name in ("Q", "F", "sigma", "L", "T"):
            if not getattr(self, name) > 0:
                errs.append(f"{name}: must be > 0")
        errs.extend(self.detection.errors())
        errs.extend(self.terminal.errors())
        return errs

    @property
    def d(self) -> int:
        return len(self.levels)

    @property
    def level_array(self) -> np.ndarray:
        return np.asarray(self.levels, dtype=float)

    def terminal_values(self, x):
        return self.terminal.values(self.levels, x)


def as_simplex(x, atol: float = SIMPLEX_ATOL) -> np.ndarray:
    """Validate a distribution over levels, clamping tiny negatives away."""
    x = np.array(x, dtype=float)
    if np.any(x < -atol) or np.any(np.abs(x.sum(axis=-1) - 1.0) > atol):
        raise DomainError(f"not a point of the simplex: {x}")
    x = np.clip(x, 0.0, None)
    return x / x.sum(axis=-1, keepdims=True)


def check_rate_matrix(q, Q: float, atol: float = 1e-12) -> None:
    """Raise unless ``q`` has off-diagonals in [0, Q] and zero row sums."""
    q = np.asarray(q, dtype=float)
    d = q.shape[-1]
    off = ~np.eye(d, dtype=bool)
    vals = q[..., off]
    if np.any(vals < -atol) or np.any(vals > Q + atol):
        raise DomainError("off-diagonal switching rates must lie in [0, Q]")
    if np.any(np.abs(q.sum(axis=-1)) > atol * max(1.0, d * Q)):
        raise DomainError("switching-rate rows must sum to zero")


def set_diagonal(q: np.ndarray) -> np.ndarray:
    """Overwrite the diagonal with the negative off-diagonal row sum (in place)."""
    d = q.shape[-1]
    idx = np.arange(d)
    q[..., idx, idx] = 0.0
    q[..., idx, idx] = -q.sum(axis=-1)
    return q


# -- inspector -------------------------------------------------------------


def detection_prob(alpha, spec: DetectionSpec, F: float | None = None):
    a = np.asarray(alpha, dtype=float)
    if np.any(a < 0) or (F is not None and np.any(a > F)):
        raise DomainError(f"inspection budget outside [0, {F}]: {alpha}")
    out = spec.prob(a)
    return float(out) if out.ndim == 0 else out


def crime_mass(x, p: ModelParams):
    """``S(x) = sum_i l_i x_i``."""
    return np.asarray(x, dtype=float) @ p.level_array


def inspector_best_response(x, p: ModelParams):
    """Maximiser of the inspector payoff over ``[0, F]``.

    Below the threshold ``1 / (L (1 + sigma) S) >= P'(0)`` the payoff is
    decreasing at zero and the budget is 0; ``S = 0`` is that case too.
    """
    S = np.asarray(crime_mass(x, p), dtype=float)
    det = p.detection
    with np.errstate(divide="ignore"):
        y = 1.0 / (p.L * (1.0 + p.sigma) * S)
    interior = np.isfinite(y) & (y < det.p_max * det.lam)
    alpha = np.where(np.isnan(S), np.nan, 0.0)
    alpha[interior] = np.minimum(det.deriv_inv(y[interior]), p.F)
    return float(alpha) if alpha.ndim == 0 else alpha


def inspector_payoff(alpha, x, p: ModelParams):
    """``U(a, x) = -a + L ((1 + sigma) P(a) - 1) S(x)``."""
    P = detection_prob(alpha, p.detection, p.F)
    return -np.asarray(alpha, dtype=float) + p.L * ((1.0 + p.sigma) * P - 1.0) * crime_mass(x, p)


def best_response_payoff(x, p: ModelParams):
    return inspector_payoff(inspector_best_response(x, p), x, p)


def crime_reward(x, p: ModelParams):
    """Per-level expected crime reward ``l_i (1 - (1 + sigma) P(a*(x)))``; shape ``(..., d)``."""
    P = p.detection.prob(inspector_best_response(x, p))
    return p.level_array * (1.0 - (1.0 + p.sigma) * np.asarray(P))[..., None]


# -- inspectee -------------------------------------------------------------


def clamp_rate(z, Q: float):
    """Optimal single switching rate for value gain ``z``: ``clamp(z / 2, 0, Q)``."""
    return np.clip(0.5 * np.asarray(z, dtype=float), 0.0, Q)


def switching_gain(z, Q: float):
    """``max_{0 <= q <= Q} (z q - q^2)``."""
    z = np.asarray(z, dtype=float)
    return np.where(z < 0, 0.0, np.where(z <= 2 * Q, 0.25 * z * z, Q * z - Q * Q))


def gain_differences(phi) -> np.ndarray:
    """``z[..., i, j] = phi_j - phi_i``."""
    phi = np.asarray(phi, dtype=float)
    return phi[..., None, :] - phi[..., :, None]


def optimal_rate_matrix(phi, p: ModelParams, eta: float | None = None) -> np.ndarray:
    """Full matrix of optimal (or mollified, when ``eta`` is given) rates."""
    z = gain_differences(phi)
    q = clamp_rate(z, p.Q) if eta is None else mollify_rates(z, eta, p)
    return set_diagonal(np.array(q))


def optimal_rates(phi, i: int, p: ModelParams) -> np.ndarray:
    """Row ``i`` of the optimal switching matrix for value vector ``phi``."""
    return optimal_rate_matrix(phi, p)[i]


def hamiltonian_all(phi, x, p: ModelParams) -> np.ndarray:
    """``H(l_i, phi, x)`` for every level ``i``; shape ``(..., d)``."""
    z = gain_differences(phi)
    gains = switching_gain(z, p.Q)
    d = p.d
    gains[..., np.arange(d), np.arange(d)] = 0.0
    return crime_reward(x, p) + gains.sum(axis=-1)


def hamiltonian(i: int, phi, x, p: ModelParams) -> float:
    return float(hamiltonian_all(phi, x, p)[i])


def running_payoff(i: int, x, q_row, p: ModelParams) -> float:
    """``l_i - l_i (1 + sigma) P(a*(x)) - sum_{j != i} q_ij^2``."""
    q_row = np.asarray(q_row, dtype=float)
    off = np.delete(q_row, i)
    return float(crime_reward(x, p)[i] - np.sum(off * off))


# -- mollification ---------------------------------------------------------

# Triweight kernel on [-1, 1]; continuous, so convolving the piecewise-linear
# clamp yields a C^2 (in fact C^4) profile.
_KERNEL = Polynomial([1.0, 0.0, -1.0]) ** 3 * (35.0 / 32.0)
_KERNEL_CDF = _KERNEL.integ(lbnd=-1.0)
_KERNEL_M1 = (Polynomial([0.0, 1.0]) * _KERNEL).integ(lbnd=-1.0)


def _smoothed_ramp(s):
    """``(max(., 0) * K)(s)`` for the unit-width kernel, exactly."""
    s = np.asarray(s, dtype=float)
    inner = np.clip(s, -1.0, 1.0)
    mid = s * _KERNEL_CDF(inner) - _KERNEL_M1(inner)
    return np.where(s >= 1.0, s, np.where(s <= -1.0, 0.0, mid))


def mollify_rates(z, eta: float, p: ModelParams):
    """Smoothed ``clamp(z / 2, 0, Q)``: convolution with a width-``eta`` bump.

    Agrees with the clamp exactly farther than ``eta`` from the kinks at
    ``0`` and ``2Q``; within ``eta / 2`` of it everywhere.
    """
    if not eta > 0:
        raise DomainError("mollifier width eta must be > 0")
    z = np.asarray(z, dtype=float)
    ramp0 = eta * _smoothed_ramp(z / eta)
    ramp2q = eta * _smoothed_ramp((z - 2.0 * p.Q) / eta)
    smooth = np.clip(0.5 * (ramp0 - ramp2q), 0.0, p.Q)
    # the convolution is the identity on the affine pieces; return them bit-exact
    far = (np.abs(z) >= eta) & (np.abs(z - 2.0 * p.Q) >= eta)
    out = np.where(far, clamp_rate(z, p.Q), smooth)
    return float(out) if out.ndim == 0 else out
