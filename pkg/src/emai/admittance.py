"""Analytic port admittances of a grid-following inverter and their
decomposition into electromagnetic, coupling, and synchronization parts.

Conventions (fixed across the whole package):
  * current is positive flowing out of the inverter into the network, so
    i_d0 = P/U and i_q0 = -Q/U at a locked PLL (u_q0 = 0);
  * an admittance Y relates the bus-voltage perturbation to the current
    drawn through the port, i.e. the injection responds as -Y(s) du;
  * the Laplace variable s is in SI rad/s and a p.u. inductance l
    contributes s*l/omega_b to impedances.

The global-frame admittance embeds the PLL frame swing:

    Y(s) = T (Y_loc(s) + I_m0 H(s)) (E2 + U_m0 H(s))^-1 T^-1

with H the PLL row, U_m0 = [-u_q0, u_d0], I_m0 = [-i_q0, i_d0], and
T the rotation by the steady-state bus angle. Applying the rank-one
inversion lemma splits Y exactly into

    Y = y_c + y_cs + y_s
    y_c  = T Y_loc T^-1                      (electromagnetic)
    y_cs = T (Y_loc K_U / U_pll) T^-1        (loop coupling)
    y_s  = T (K_I / U_pll) T^-1              (synchronization)

where K_U = [[0, u_q0], [0, -u_d0]], K_I = [[0, -i_q0], [0, i_d0]] and
U_pll = u_d0 + s^2/(ki_pll + s*kp_pll). When a DC-voltage loop is present
it is folded into Y_loc first, so its dynamics belong to the
electromagnetic part.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import DvlParams, GflParams
from .errors import NumericalError
from .powerflow import GflOperatingPoint
from .transfer import (DelayModel, E2, FrameRotation, J, PllTransfer,
                       TransferMatrix2)

PPF_PARAMETERS = ("kp_ccl", "ki_ccl", "kp_pll", "ki_pll", "kp_dvl", "ki_dvl")


@dataclass(frozen=True)
class CclImpedance:
    """Local-frame impedance of the current loop plus its AC filter.

    z_pi(s) = (kp + ki/s) * G_del(s) sits on the diagonal in series with
    the filter, giving equal diagonal entries and antisymmetric
    off-diagonals:

        Z(s) = [[r + s*l/w_b + z_pi, -l], [l, r + s*l/w_b + z_pi]]
    """

    r_f: float
    l_f: float
    kp_ccl: float
    ki_ccl: float
    omega_b: float
    delay: DelayModel

    def z_pi(self, s: complex) -> complex:
        return (self.kp_ccl + self.ki_ccl / s) * self.delay(s)

    def filter_z(self, s: complex) -> np.ndarray:
        return (self.r_f + s * self.l_f / self.omega_b) * E2 + self.l_f * J

    def __call__(self, s: complex) -> np.ndarray:
        return self.filter_z(s) + self.z_pi(s) * E2

    def inverse(self, s: complex) -> np.ndarray:
        z = self(s)
        det = z[0, 0] * z[1, 1] - z[0, 1] * z[1, 0]
        if det == 0:
            raise NumericalError(f"current-loop impedance singular at s = {s:.6g}")
        return np.array([[z[1, 1], -z[0, 1]], [-z[1, 0], z[0, 0]]]) / det


@dataclass(frozen=True)
class DvlEquivalentBranch:
    """DC-voltage-loop contribution expressed as a d-axis branch.

    h_dc(s) = (kp_dvl + ki_dvl/s) / (c_dc * s * u_dc0) maps the AC-side
    power perturbation u_id0*di_d + u_iq0*di_q + i_d0*du_id + i_q0*du_iq
    into the d-axis current reference. The DC energy balance makes the
    loop a negative feedback, so the reference perturbation carries a
    minus sign when folded into the current loop. z_s is the resulting
    series addition to the dd impedance entry and y_p the voltage-feedback
    path expressed as a parallel admittance across the d port; both vanish
    identically when kp_dvl = ki_dvl = 0.
    """

    params: DvlParams
    u_dc0: float
    coeff: tuple[float, float, float, float]  # (u_id0, u_iq0, i_d0, i_q0)
    ccl: CclImpedance

    def h_dc(self, s: complex) -> complex:
        p = self.params
        return (p.kp_dvl + p.ki_dvl / s) / (p.c_dc * s * self.u_dc0)

    def current_row(self, s: complex) -> np.ndarray:
        """Coefficients on (di_d, di_q): u_i0 + i0 @ Z_filter(s)."""
        u_id0, u_iq0, i_d0, i_q0 = self.coeff
        return np.array([u_id0, u_iq0]) + \
            np.array([i_d0, i_q0]) @ self.ccl.filter_z(s)

    def voltage_row(self) -> np.ndarray:
        """Coefficients on (du_d, du_q) via du_i = du + Z_f di."""
        return np.array([self.coeff[2], self.coeff[3]])

    def z_s(self, s: complex) -> complex:
        return self.h_dc(s) * self.ccl.z_pi(s) * self.current_row(s)[0]

    def y_p(self, s: complex) -> complex:
        g = self.h_dc(s) * self.ccl.z_pi(s) * self.coeff[2]
        return g / (self.ccl(s)[0, 0] + self.z_s(s))

    def corrected_admittance(self, s: complex) -> np.ndarray:
        """Local current-loop admittance with the DVL branch folded in."""
        y0 = self.ccl.inverse(s)
        h = self.h_dc(s)
        zc = self.ccl.z_pi(s)
        a = self.current_row(s)
        b = self.voltage_row()
        ed = np.array([1.0, 0.0])
        m = E2 + h * zc * (y0 @ np.outer(ed, a))
        return np.linalg.solve(m, y0 @ (E2 + h * zc * np.outer(ed, b)))


def dvl_correction(params: DvlParams, op: GflOperatingPoint,
                   ccl: CclImpedance) -> DvlEquivalentBranch:
    """Build the d-axis DVL branch for one source at its operating point."""
    if op.u_dc0 is None or op.u_dc0 <= 0:
        raise NumericalError(f"bus {op.bus!r}: u_dc0 must be positive")
    return DvlEquivalentBranch(
        params=params,
        u_dc0=op.u_dc0,
        coeff=(op.u_id0, op.u_iq0, op.i_d0, op.i_q0),
        ccl=ccl,
    )


def _resolve_delay(params: GflParams, delay: DelayModel | None) -> DelayModel:
    return DelayModel(t_s=params.t_s) if delay is None else delay


def build_ccl(params: GflParams, omega_b: float,
              delay: DelayModel | None = None) -> CclImpedance:
    return CclImpedance(params.r_f, params.l_f, params.kp_ccl, params.ki_ccl,
                        omega_b, _resolve_delay(params, delay))


def ccl_admittance(params: GflParams, op: GflOperatingPoint, omega_b: float,
                   delay: DelayModel | None = None) -> TransferMatrix2:
    """Local-frame admittance of the current loop, DVL branch included
    when the source has one."""
    ccl = build_ccl(params, omega_b, delay)
    if params.dvl is not None:
        branch = dvl_correction(params.dvl, op, ccl)
        return TransferMatrix2(branch.corrected_admittance, frame="dq", bus=op.bus)
    return TransferMatrix2(ccl.inverse, frame="dq", bus=op.bus)


@dataclass(frozen=True)
class AdmittanceDecomposition:
    """Global-frame admittance of one source and its three exact parts."""

    bus: str
    y_full: TransferMatrix2
    y_c: TransferMatrix2
    y_cs: TransferMatrix2
    y_s: TransferMatrix2
    k_u: np.ndarray
    k_i: np.ndarray
    params: GflParams
    op: GflOperatingPoint
    omega_b: float
    delay: DelayModel
    rot: FrameRotation
    pll: PllTransfer
    y_local: TransferMatrix2
    dvl: DvlEquivalentBranch | None

    def inv_u_pll(self, s: complex) -> complex:
        """1/U_pll written as a ratio so that zero PLL gains give 0."""
        g = self.pll.ki + s * self.pll.kp
        return g / (self.op.u_d0 * g + s * s)

    def u_pll(self, s: complex) -> complex:
        return self.op.u_d0 + s * s / (self.pll.ki + s * self.pll.kp)

    def evaluate(self, s: complex, ccl_scale: float = 1.0,
                 pll_scale: float = 1.0, full_scale: float = 1.0) -> np.ndarray:
        """Sum of the parts with multiplicative perturbation knobs.

        ccl_scale multiplies the local current-loop admittance (scaling
        y_c and y_cs); pll_scale multiplies 1/U_pll (scaling y_cs and
        y_s); full_scale multiplies the whole admittance. All three are
        exact multilinear knobs, not approximations.
        """
        total = ccl_scale * self.y_c(s) \
            + ccl_scale * pll_scale * self.y_cs(s) \
            + pll_scale * self.y_s(s)
        return full_scale * total

    def derivative(self, s: complex, parameter: str) -> np.ndarray:
        """Exact dY/d(parameter) at fixed operating point.

        CCL gains perturb the series PI impedance (dY_loc =
        -Y_loc dZ Y_loc plus the DVL chain terms when present); PLL
        gains act only through 1/U_pll; DVL gains act through h_dc.
        Parameters absent from the source give an exact zero.
        """
        if parameter not in PPF_PARAMETERS:
            raise ValueError(f"unknown parameter {parameter!r}")
        t = self.rot.matrix
        iu = self.inv_u_pll(s)
        if parameter in ("kp_pll", "ki_pll"):
            g = self.pll.ki + s * self.pll.kp
            den = (self.op.u_d0 * g + s * s) ** 2
            diu = s ** 3 / den if parameter == "kp_pll" else s ** 2 / den
            core = self.y_local(s) @ self.k_u + self.k_i
            return diu * (t @ core @ t.T)
        if parameter in ("kp_dvl", "ki_dvl") and self.dvl is None:
            return np.zeros((2, 2), dtype=complex)
        dy_loc = self._dy_local(s, parameter)
        return t @ dy_loc @ (E2 + self.k_u * iu) @ t.T

    def _dy_local(self, s: complex, parameter: str) -> np.ndarray:
        ccl = build_ccl(self.params, self.omega_b, self.delay)
        gd = self.delay(s)
        y0 = ccl.inverse(s)
        if self.dvl is None:
            dzc = gd if parameter == "kp_ccl" else gd / s
            return -dzc * (y0 @ y0)
        branch = self.dvl
        h = branch.h_dc(s)
        zc = ccl.z_pi(s)
        a_mat = np.outer([1.0, 0.0], branch.current_row(s))
        b_mat = np.outer([1.0, 0.0], branch.voltage_row())
        m = E2 + h * zc * (y0 @ a_mat)
        r = E2 + h * zc * b_mat
        y_corr = np.linalg.solve(m, y0 @ r)
        if parameter in ("kp_ccl", "ki_ccl"):
            dzc = gd if parameter == "kp_ccl" else gd / s
            dy0 = -dzc * (y0 @ y0)
            dm = h * (dzc * y0 + zc * dy0) @ a_mat
            dr = h * dzc * b_mat
            return np.linalg.solve(m, -dm @ y_corr + dy0 @ r + y0 @ dr)
        p = branch.params
        dh = 1.0 / (p.c_dc * s * branch.u_dc0)
        if parameter == "ki_dvl":
            dh = dh / s
        dm = dh * zc * (y0 @ a_mat)
        dr = dh * zc * b_mat
        return np.linalg.solve(m, -dm @ y_corr + y0 @ dr)


def full_admittance(params: GflParams, op: GflOperatingPoint, omega_b: float,
                    delay: DelayModel | None = None) -> TransferMatrix2:
    """Global-frame admittance evaluated directly from the PLL-embedding
    form (not via the decomposition; the two routes are compared in tests).

    Raises NumericalError at the isolated points where the PLL-closed-loop
    scalar 1 + H U_m0 vanishes.
    """
    y_loc = ccl_admittance(params, op, omega_b, delay)
    pll = PllTransfer(params.kp_pll, params.ki_pll)
    t = FrameRotation(op.theta0).matrix
    u_m0 = np.array([-op.u_q0, op.u_d0])
    i_m0 = np.array([-op.i_q0, op.i_d0])

    def evaluate(s: complex) -> np.ndarray:
        h_row = pll(s)[0]
        closure = 1.0 + h_row @ u_m0
        if closure == 0:
            raise NumericalError(
                f"bus {op.bus!r}: PLL-closed-loop pole at s = {s:.6g}")
        m = y_loc(s) + np.outer(i_m0, h_row)
        n = E2 + np.outer(u_m0, h_row)
        return t @ m @ np.linalg.inv(n) @ t.T

    return TransferMatrix2(evaluate, frame="DQ", bus=op.bus)


def decompose_admittance(params: GflParams, op: GflOperatingPoint,
                         omega_b: float,
                         delay: DelayModel | None = None
                         ) -> AdmittanceDecomposition:
    """Split the global admittance into its three exact parts."""
    resolved = _resolve_delay(params, delay)
    y_loc = ccl_admittance(params, op, omega_b, resolved)
    pll = PllTransfer(params.kp_pll, params.ki_pll)
    rot = FrameRotation(op.theta0)
    t = rot.matrix
    k_u = np.array([[0.0, op.u_q0], [0.0, -op.u_d0]])
    k_i = np.array([[0.0, -op.i_q0], [0.0, op.i_d0]])
    u_d0 = op.u_d0

    def inv_u(s: complex) -> complex:
        g = pll.ki + s * pll.kp
        return g / (u_d0 * g + s * s)

    y_c = TransferMatrix2(lambda s: t @ y_loc(s) @ t.T, frame="DQ", bus=op.bus)
    y_cs = TransferMatrix2(lambda s: t @ (y_loc(s) @ k_u * inv_u(s)) @ t.T,
                           frame="DQ", bus=op.bus)
    y_s = TransferMatrix2(lambda s: t @ (k_i * inv_u(s)) @ t.T,
                          frame="DQ", bus=op.bus)
    ccl = build_ccl(params, omega_b, resolved)
    branch = None
    if params.dvl is not None:
        branch = dvl_correction(params.dvl, op, ccl)
    return AdmittanceDecomposition(
        bus=op.bus,
        y_full=full_admittance(params, op, omega_b, resolved),
        y_c=y_c,
        y_cs=y_cs,
        y_s=y_s,
        k_u=k_u,
        k_i=k_i,
        params=params,
        op=op,
        omega_b=omega_b,
        delay=resolved,
        rot=rot,
        pll=pll,
        y_local=y_loc,
        dvl=branch,
    )


def matrix_inversion_lemma_check(a: np.ndarray, b: np.ndarray, c: np.ndarray,
                                 d: np.ndarray, tol: float = 1e-12) -> bool:
    """Verify (a + b d^-1 c)^-1 == a^-1 - a^-1 b (d + c a^-1 b)^-1 c a^-1.

    Test utility for the rank-k inversion identity; raises NumericalError
    when the inner matrix d + c a^-1 b is singular.
    """
    a = np.atleast_2d(np.asarray(a, dtype=complex))
    b = np.atleast_2d(np.asarray(b, dtype=complex))
    c = np.atleast_2d(np.asarray(c, dtype=complex))
    d = np.atleast_2d(np.asarray(d, dtype=complex))
    if b.shape == (1, a.shape[0]) and a.shape[0] != 1:
        b = b.T
    a_inv = np.linalg.inv(a)
    lhs = np.linalg.inv(a + b @ np.linalg.inv(d) @ c)
    inner = d + c @ a_inv @ b
    if abs(np.linalg.det(inner)) == 0:
        raise NumericalError("inner matrix d + c a^-1 b is singular")
    rhs = a_inv - a_inv @ b @ np.linalg.inv(inner) @ c @ a_inv
    scale = max(np.max(np.abs(lhs)), 1.0)
    return bool(np.max(np.abs(lhs - rhs)) <= tol * scale)
