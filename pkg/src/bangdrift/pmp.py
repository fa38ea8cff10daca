"""Optimality certificates for bang/drift sequences from the Pontryagin principle.

State dynamics are written in Euler angles x = (psi, theta, phi) with a costate
p = (p1, p2, p3) and an abnormal multiplier p0 >= 0.  The control coefficient
of the Pontryagin Hamiltonian is the switching function Phi; a certified
sequence has Phi = 0 at every switch, Phi identically zero on drift segments
(singular arcs), sign(Phi) = sign(control) on bangs, and H_P constant at zero.

The Euler chart is degenerate at the identity, where every trajectory starts,
so the certificate search works in a chart-free frame: the costate is carried
by a momentum vector m that evolves under the same rotation flow as a Bloch
vector (m(t) = R(t) m(0)), with Phi(t) = -m1(t) and
H_P = control * m1 + m3 + p0.  The chart costate is recovered pointwise via
p = J(x)^T m, which makes the certificate search a finite linear-algebra
problem: a nullspace computation plus linear sign filtering, no shooting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import optimize as sciopt

from .su2 import (
    CHART_ZXZ,
    CHART_ZYZ,
    EulerAngles,
    PulseSequence,
    SegmentKind,
    euler_angles_of,
    segment_axis,
    sequence_propagator,
)

CHART_SINGULARITY_SIN = 1e-8

SWITCH_RESIDUAL_TOL = 1e-6
HP_TOL = 1e-6
DRIFT_PHI_TOL = 1e-6
NONTRIVIALITY_TOL = 1e-9


class ChartSingularityError(ValueError):
    """Euler chart evaluated too close to sin(theta) = 0."""


class StructuralRejectionError(ValueError):
    """Control sequence contains a value outside {-Omega_max, 0, +Omega_max}."""


def _check_chart(x: EulerAngles) -> None:
    if abs(math.sin(x.theta)) < CHART_SINGULARITY_SIN:
        raise ChartSingularityError(
            f"sin(theta) = {math.sin(x.theta):.3g} is inside the chart singularity"
        )


def state_rhs(x: EulerAngles, omega: float) -> np.ndarray:
    """Euler-angle rates (psi_dot, theta_dot, phi_dot) under control omega."""
    _check_chart(x)
    sp, cp = math.sin(x.psi), math.cos(x.psi)
    cot, csc = 1.0 / math.tan(x.theta), 1.0 / math.sin(x.theta)
    if x.chart == CHART_ZYZ:
        return np.array([1.0 - omega * cp * cot, -omega * sp, omega * cp * csc])
    return np.array([1.0 - omega * sp * cot, omega * cp, omega * sp * csc])


def costate_rhs(x: EulerAngles, p: Sequence[float], omega: float) -> np.ndarray:
    """Adjoint rates (p1_dot, p2_dot, p3_dot); p3 is conserved."""
    _check_chart(x)
    p1, p2, p3 = p
    sp, cp = math.sin(x.psi), math.cos(x.psi)
    cot, csc = 1.0 / math.tan(x.theta), 1.0 / math.sin(x.theta)
    if x.chart == CHART_ZYZ:
        dp1 = omega * (-p1 * sp * cot + p2 * cp + p3 * sp * csc)
        dp2 = omega * (-p1 * cp * csc * csc + p3 * cp * csc * cot)
    else:
        dp1 = omega * (p1 * cp * cot + p2 * sp - p3 * cp * csc)
        dp2 = omega * (-p1 * sp * csc * csc + p3 * sp * csc * cot)
    return np.array([dp1, dp2, 0.0])


def switching_function(x: EulerAngles, p: Sequence[float]) -> float:
    """Coefficient Phi of the control in the Pontryagin Hamiltonian; linear in p."""
    _check_chart(x)
    p1, p2, p3 = p
    sp, cp = math.sin(x.psi), math.cos(x.psi)
    cot, csc = 1.0 / math.tan(x.theta), 1.0 / math.sin(x.theta)
    if x.chart == CHART_ZYZ:
        return p1 * cp * cot + p2 * sp - p3 * cp * csc
    return p1 * sp * cot - p2 * cp - p3 * sp * csc


def pontryagin_hamiltonian(
    x: EulerAngles, p: Sequence[float], p0: float, omega: float
) -> float:
    """H_P = -omega * Phi + p1 + p0 (precession frequency = 1)."""
    return -omega * switching_function(x, p) + float(p[0]) + p0


def costate_from_momentum(x: EulerAngles, m: Sequence[float]) -> np.ndarray:
    """Chart costate p = J(x)^T m for the momentum-frame costate m.

    Well-defined everywhere, including chart-degenerate points; only the
    inverse map is singular at sin(theta) = 0.
    """
    m1, m2, m3 = m
    sp, cp = math.sin(x.psi), math.cos(x.psi)
    st, ct = math.sin(x.theta), math.cos(x.theta)
    if x.chart == CHART_ZYZ:
        p2 = -m1 * sp + m2 * cp
        p3 = m1 * st * cp + m2 * st * sp + m3 * ct
    else:
        p2 = m1 * cp + m2 * sp
        p3 = m1 * st * sp - m2 * st * cp + m3 * ct
    return np.array([m3, p2, p3])


@dataclass(frozen=True)
class CostateCertificate:
    """Evidence that a sequence satisfies the bang/drift necessary conditions.

    The result is consistent with time-optimality; the conditions are
    necessary, not sufficient, so it never proves optimality.  p_initial is
    the momentum-frame costate m(0), normalized so |m(0)| + p0 = 1.
    """

    p0: float
    p_initial: np.ndarray
    switch_times: tuple[float, ...]
    switch_residuals: tuple[float, ...]
    phi_samples: np.ndarray  # columns (t, Phi)
    hp_samples: np.ndarray  # columns (t, H_P)

    @property
    def max_switch_residual(self) -> float:
        return max(self.switch_residuals, default=0.0)

    @property
    def max_abs_hp(self) -> float:
        return float(np.max(np.abs(self.hp_samples[:, 1]))) if self.hp_samples.size else 0.0


class _Flow:
    """Cumulative rotation R(t) of the control flow, exact per segment."""

    def __init__(self, seq: PulseSequence):
        self.seq = seq
        self.bounds = seq.boundaries()
        self.axes = [segment_axis(seg.kind, seq.kappa) for seg in seq.segments]
        self.rates = [
            1.0 if seg.kind is SegmentKind.DRIFT else math.sqrt(1.0 + seq.kappa**2)
            for seg in seq.segments
        ]
        self.omegas = seq.omegas()
        rs = [np.eye(3)]
        for axis, rate, seg in zip(self.axes, self.rates, seq.segments):
            rs.append(_rodrigues(axis, rate * seg.duration) @ rs[-1])
        self.boundary_rotations = rs

    def segment_index(self, t: float) -> int:
        idx = int(np.searchsorted(self.bounds, t, side="right") - 1)
        return min(max(idx, 0), len(self.seq.segments) - 1)

    def rotation(self, t: float) -> np.ndarray:
        k = self.segment_index(t)
        local = t - self.bounds[k]
        return _rodrigues(self.axes[k], self.rates[k] * local) @ self.boundary_rotations[k]

    def omega(self, t: float) -> float:
        return self.omegas[self.segment_index(t)]


def _rodrigues(axis: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    k = np.array(
        [
            [0.0, -axis[2], axis[1]],
            [axis[2], 0.0, -axis[0]],
            [-axis[1], axis[0], 0.0],
        ]
    )
    return c * np.eye(3) + s * k + (1.0 - c) * np.outer(axis, axis)


def certify_controls(
    omegas: Sequence[float],
    durations: Sequence[float],
    kappa: float,
    **kwargs,
) -> Optional[CostateCertificate]:
    """find_certificate on raw control values; rejects non bang/drift controls."""
    kinds = []
    for om in omegas:
        if abs(om) < 1e-9:
            kinds.append(SegmentKind.DRIFT)
        elif abs(om - kappa) < 1e-9:
            kinds.append(SegmentKind.BANG_PLUS)
        elif abs(om + kappa) < 1e-9:
            kinds.append(SegmentKind.BANG_MINUS)
        else:
            raise StructuralRejectionError(
                f"control value {om:g} is not in {{0, +-{kappa:g}}}; "
                "only bang/drift sequences can satisfy the necessary conditions"
            )
    seq = PulseSequence.from_durations(kinds, durations, kappa)
    return find_certificate(seq, **kwargs)


def find_certificate(
    seq: PulseSequence,
    samples_per_segment: int = 100,
    collocation_points: int = 20,
    total_hp_samples: int = 1200,
) -> Optional[CostateCertificate]:
    """Search for a costate certificate of the bang/drift necessary conditions.

    Phi(t) = -(R(t) m0)_1 is linear in the initial momentum m0, so all
    equality conditions (Phi = 0 at switches, Phi identically 0 on drift
    segments by collocation, H_P(0) = 0) stack into a homogeneous linear
    system for (m0, p0).  A small linear program then looks for a nullspace
    element satisfying the bang sign conditions with p0 >= 0.  Returns None
    when no such costate exists.
    """
    segments = seq.segments
    if not segments:
        # zero-duration problem: any costate with H_P = 0 certifies it
        return CostateCertificate(
            p0=0.5,
            p_initial=np.array([0.0, 0.0, -0.5]),
            switch_times=(),
            switch_residuals=(),
            phi_samples=np.zeros((0, 2)),
            hp_samples=np.zeros((0, 2)),
        )

    flow = _Flow(seq)
    bounds = flow.bounds

    rows = []
    for t_switch in bounds[1:-1]:
        rows.append(np.concatenate([flow.rotation(t_switch)[0], [0.0]]))
    for k, seg in enumerate(segments):
        if seg.kind is SegmentKind.DRIFT and seg.duration > 0.0:
            ts = np.linspace(bounds[k], bounds[k + 1], collocation_points + 2)[1:-1]
            for t in ts:
                rows.append(np.concatenate([flow.rotation(t)[0], [0.0]]))
    # transversality: H_P(0) = omega(0) * m1 + m3 + p0 = 0
    rows.append(np.array([flow.omegas[0], 0.0, 1.0, 1.0]))
    a = np.array(rows)

    _, svals, vt = np.linalg.svd(a)
    rank = int(np.sum(svals > max(svals) * 1e-10)) if svals.size else 0
    null_basis = vt[rank:].T  # (4, d)
    d = null_basis.shape[1]
    if d == 0:
        return None

    # bang sample times and required signs: sign(omega) * Phi > 0, Phi = -m1
    sample_rows = []
    sample_signs = []
    for k, seg in enumerate(segments):
        if seg.kind is SegmentKind.DRIFT or seg.duration <= 0.0:
            continue
        ts = np.linspace(bounds[k], bounds[k + 1], samples_per_segment + 2)[1:-1]
        for t in ts:
            sample_rows.append(flow.rotation(t)[0])
            sample_signs.append(math.copysign(1.0, flow.omegas[k]))

    coeff = _solve_sign_problem(null_basis, sample_rows, sample_signs)
    if coeff is None:
        return None

    vec = null_basis @ coeff
    m0, p0 = vec[:3], float(vec[3])
    scale = np.linalg.norm(m0) + max(p0, 0.0)
    if scale < NONTRIVIALITY_TOL:
        return None
    m0 = m0 / scale
    p0 = max(p0, 0.0) / scale

    cert = _build_certificate(flow, m0, p0, samples_per_segment, total_hp_samples)
    return cert if _certificate_valid(flow, cert) else None


def _solve_sign_problem(
    null_basis: np.ndarray,
    sample_rows: list[np.ndarray],
    sample_signs: list[float],
) -> Optional[np.ndarray]:
    """Max-margin point of the sign constraints within the nullspace."""
    d = null_basis.shape[1]
    m_basis = null_basis[:3]
    p0_basis = null_basis[3]

    if not sample_rows:
        # no bang segments: just need p0 >= 0 and a nontrivial vector
        if np.linalg.norm(p0_basis) > 1e-12:
            coeff = p0_basis / np.linalg.norm(p0_basis)
            if np.linalg.norm(null_basis @ coeff) > 1e-12:
                return coeff
        return np.eye(d)[:, 0]

    # sign * Phi >= margin with Phi = -(row . m); p0 >= 0; coefficients in a box
    g = np.array(
        [s * (row @ m_basis) for row, s in zip(sample_rows, sample_signs)]
    )  # (n_samples, d): requires g @ c <= -margin
    a_ub = np.hstack([g, np.ones((g.shape[0], 1))])
    b_ub = np.zeros(g.shape[0])
    a_ub = np.vstack([a_ub, np.concatenate([-p0_basis, [0.0]])])
    b_ub = np.concatenate([b_ub, [0.0]])
    c_obj = np.zeros(d + 1)
    c_obj[-1] = -1.0  # maximize the margin
    lp = sciopt.linprog(
        c_obj,
        A_ub=a_ub,
        b_ub=b_ub,
        bounds=[(-1.0, 1.0)] * d + [(0.0, 1.0)],
        method="highs",
    )
    if not lp.success or lp.x[-1] <= 1e-12:
        return None
    return lp.x[:d]


def _build_certificate(
    flow: _Flow,
    m0: np.ndarray,
    p0: float,
    samples_per_segment: int,
    total_hp_samples: int,
) -> CostateCertificate:
    bounds = flow.bounds
    segments = flow.seq.segments
    switch_times = tuple(float(t) for t in bounds[1:-1])
    switch_residuals = tuple(
        abs(-(flow.rotation(t)[0] @ m0)) for t in switch_times
    )

    phi_rows = []
    per_seg = max(samples_per_segment, math.ceil(total_hp_samples / max(len(segments), 1)))
    for k in range(len(segments)):
        ts = np.linspace(bounds[k], bounds[k + 1], per_seg)
        for t in ts:
            m_t = flow.rotation(t) @ m0
            phi = -m_t[0]
            hp = flow.omegas[k] * m_t[0] + m_t[2] + p0
            phi_rows.append((t, phi, hp))
    arr = np.array(phi_rows)
    return CostateCertificate(
        p0=p0,
        p_initial=m0,
        switch_times=switch_times,
        switch_residuals=switch_residuals,
        phi_samples=arr[:, :2],
        hp_samples=arr[:, [0, 2]],
    )


def _certificate_valid(flow: _Flow, cert: CostateCertificate) -> bool:
    if cert.max_switch_residual >= SWITCH_RESIDUAL_TOL:
        return False
    if cert.max_abs_hp >= HP_TOL:
        return False
    bounds = flow.bounds
    for k, seg in enumerate(flow.seq.segments):
        lo, hi = bounds[k], bounds[k + 1]
        inner = (cert.phi_samples[:, 0] > lo + 1e-12) & (cert.phi_samples[:, 0] < hi - 1e-12)
        phis = cert.phi_samples[inner, 1]
        if seg.kind is SegmentKind.DRIFT:
            if phis.size and np.max(np.abs(phis)) >= DRIFT_PHI_TOL:
                return False
        else:
            sign = math.copysign(1.0, flow.omegas[k])
            if phis.size and np.min(sign * phis) <= 0.0:
                return False
    if np.linalg.norm(cert.p_initial) + cert.p0 < NONTRIVIALITY_TOL:
        return False
    return True


def momentum_at(seq: PulseSequence, cert: CostateCertificate, t: float) -> np.ndarray:
    """Momentum-frame costate m(t) = R(t) m(0)."""
    return _Flow(seq).rotation(t) @ cert.p_initial


def chart_costate_at(
    seq: PulseSequence, cert: CostateCertificate, t: float, chart: str = CHART_ZYZ
) -> tuple[EulerAngles, np.ndarray]:
    """Euler state and chart costate at time t along a certified trajectory."""
    u = sequence_propagator(_prefix(seq, t))
    x = euler_angles_of(u, chart)
    m_t = momentum_at(seq, cert, t)
    return x, costate_from_momentum(x, m_t)


def switching_function_at(
    seq: PulseSequence, cert: CostateCertificate, t: float, chart: str = CHART_ZYZ
) -> float:
    """Phi(t) evaluated through the chart formulas (chart must be regular at t)."""
    x, p = chart_costate_at(seq, cert, t, chart)
    return switching_function(x, p)


def _prefix(seq: PulseSequence, t: float) -> PulseSequence:
    """Truncation of the sequence to [0, t]."""
    kinds, durations = [], []
    remaining = t
    for seg in seq.segments:
        if remaining <= 0.0:
            break
        d = min(seg.duration, remaining)
        kinds.append(seg.kind)
        durations.append(d)
        remaining -= d
    return PulseSequence.from_durations(kinds, durations, seq.kappa)


def singular_arc_check(
    seq: PulseSequence,
    cert: CostateCertificate,
    segment_index: int,
    samples: int = 64,
    p1_rate_tol: float = 1e-7,
) -> bool:
    """Verify the singular-arc conditions on one drift segment of a certificate.

    Checks that p1 (= m3) is constant along the arc and that Phi vanishes
    identically on it.  Zero-duration arcs pass vacuously.
    """
    if segment_index < 0 or segment_index >= len(seq.segments):
        raise IndexError(f"segment index {segment_index} out of range")
    seg = seq.segments[segment_index]
    if seg.kind is not SegmentKind.DRIFT:
        raise ValueError("singular-arc check applies only to drift segments")
    if seg.duration <= 0.0:
        return True
    flow = _Flow(seq)
    lo = flow.bounds[segment_index]
    hi = flow.bounds[segment_index + 1]
    ts = np.linspace(lo, hi, samples)
    m_ts = np.array([flow.rotation(t) @ cert.p_initial for t in ts])
    p1 = m_ts[:, 2]
    rate = np.max(np.abs(np.diff(p1))) / max((hi - lo) / (samples - 1), 1e-300)
    if rate >= p1_rate_tol:
        return False
    if np.max(np.abs(m_ts[:, 0])) >= DRIFT_PHI_TOL:
        return False
    return True
