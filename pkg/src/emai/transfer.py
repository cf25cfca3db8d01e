"""Frequency-domain primitives: 2x2 transfer matrices, frame rotations,
the PLL transfer row, and the computation-delay model.

All Laplace arguments are in SI rad/s; all coefficients are real, so every
object built here satisfies M(conj(s)) == conj(M(s)).
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

E2 = np.eye(2)
#: 90-degree rotation generator; a 2x2 block a*E2 + b*J acts on a DQ pair
#: like the complex scalar a + jb acts on the phasor d + jq.
J = np.array([[0.0, -1.0], [1.0, 0.0]])


def rotation(theta: float) -> np.ndarray:
    """Plane rotation [[cos, -sin], [sin, cos]] (maps local dq to global DQ)."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class FrameRotation:
    """Rotation by the steady-state frame angle theta0 (rad).

    Orthogonal: inverse == transpose; identity at theta0 == 0.
    """

    theta0: float

    @property
    def matrix(self) -> np.ndarray:
        return rotation(self.theta0)

    @property
    def inverse(self) -> np.ndarray:
        return rotation(self.theta0).T


class TransferMatrix2:
    """An evaluable s -> 2x2 complex matrix with frame metadata.

    Instances are immutable and side-effect free; evaluation at each s is
    recomputed from the underlying closure (no caching or interpolation),
    so results are identical regardless of query order and instances are
    safe for concurrent evaluation.
    """

    __slots__ = ("_fn", "frame", "bus")

    def __init__(self, fn: Callable[[complex], np.ndarray], frame: str = "DQ",
                 bus: str | None = None):
        self._fn = fn
        self.frame = frame
        self.bus = bus

    def __call__(self, s: complex) -> np.ndarray:
        return self._fn(s)

    def __add__(self, other: "TransferMatrix2") -> "TransferMatrix2":
        return TransferMatrix2(lambda s: self(s) + other(s), self.frame, self.bus)

    def __sub__(self, other: "TransferMatrix2") -> "TransferMatrix2":
        return TransferMatrix2(lambda s: self(s) - other(s), self.frame, self.bus)

    def scaled(self, k: float | complex) -> "TransferMatrix2":
        return TransferMatrix2(lambda s: k * self(s), self.frame, self.bus)

    def rotated(self, rot: FrameRotation, frame: str = "DQ") -> "TransferMatrix2":
        """Conjugate by the frame rotation: T @ M(s) @ T^-1."""
        t = rot.matrix
        return TransferMatrix2(lambda s: t @ self(s) @ t.T, frame, self.bus)

    def __repr__(self) -> str:  # pragma: no cover
        return f"TransferMatrix2(frame={self.frame!r}, bus={self.bus!r})"


@dataclass(frozen=True)
class PllTransfer:
    """PLL voltage-to-angle row: ((s*kp + ki) / s^2) * [0, 1].

    Acts only on the q channel (d-channel blind) and carries a double pole
    at s = 0.
    """

    kp: float
    ki: float

    def __call__(self, s: complex) -> np.ndarray:
        h = (s * self.kp + self.ki) / (s * s)
        return np.array([[0.0, h]])

    def gain(self, s: complex) -> complex:
        """Scalar loop gain (s*kp + ki) / s^2."""
        return (s * self.kp + self.ki) / (s * s)


@dataclass(frozen=True)
class DelayModel:
    """Computation/PWM delay of 1.5 sampling periods on the control voltage.

    kind "exact" evaluates e^(-1.5*t_s*s); kind "pade" uses the rational
    approximant of the given order (1 or 2); order 0 or t_s == 0 disables
    the delay entirely.
    """

    t_s: float = 0.0
    kind: str = "exact"
    order: int = 0

    def __post_init__(self):
        if self.kind not in ("exact", "pade"):
            raise ValueError(f"unknown delay kind {self.kind!r}")
        if self.kind == "pade" and self.order not in (0, 1, 2):
            raise ValueError(f"pade order must be 0, 1 or 2, got {self.order}")

    @property
    def tau(self) -> float:
        return 1.5 * self.t_s

    @property
    def active(self) -> bool:
        return self.t_s > 0.0 and not (self.kind == "pade" and self.order == 0)

    def __call__(self, s: complex) -> complex:
        if not self.active:
            return 1.0
        tau = self.tau
        if self.kind == "exact":
            return cmath.exp(-tau * s)
        if self.order == 1:
            return (1 - tau * s / 2) / (1 + tau * s / 2)
        return (1 - tau * s / 2 + tau * tau * s * s / 12) / \
               (1 + tau * s / 2 + tau * tau * s * s / 12)

    def rational(self, order: int | None = None) -> "DelayModel":
        """The Pade counterpart used by state-space realizations."""
        return DelayModel(self.t_s, "pade", self.order if order is None else order)
