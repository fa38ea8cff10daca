"""Exact SU(2) propagators for piecewise-constant controls and rotation geometry.

Everything runs in dimensionless units with the precession frequency set to 1,
so the single physical knob is kappa = Omega_max / omega_1.  Rotations are
compared modulo global phase throughout (targets live in PSU(2)).
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
IDENTITY2 = np.eye(2, dtype=complex)
PAULIS = (IDENTITY2, SIGMA_X, SIGMA_Y, SIGMA_Z)

UNITARITY_TOL = 1e-12
ZERO_DURATION = 1e-12

Z_AXIS = np.array([0.0, 0.0, 1.0])


class SegmentKind(str, Enum):
    """Control value of one piecewise-constant segment: +Omega_max, -Omega_max or off."""

    BANG_PLUS = "bang+"
    BANG_MINUS = "bang-"
    DRIFT = "drift"

    @property
    def sign(self) -> int:
        if self is SegmentKind.BANG_PLUS:
            return 1
        if self is SegmentKind.BANG_MINUS:
            return -1
        return 0

    def omega(self, kappa: float) -> float:
        """Control amplitude in units of omega_1."""
        return self.sign * kappa


#: deterministic ordering used when enumerating patterns
KIND_ORDER = (SegmentKind.BANG_PLUS, SegmentKind.BANG_MINUS, SegmentKind.DRIFT)


def bang_frequency(kappa: float) -> float:
    """Rotation rate sqrt(1 + kappa^2) of a bang segment."""
    return math.sqrt(1.0 + kappa * kappa)


def bang_period(kappa: float) -> float:
    """Duration 2*pi/sqrt(1 + kappa^2) after which a bang returns to the identity rotation."""
    return 2.0 * math.pi / bang_frequency(kappa)


def drift_period() -> float:
    """Full precession period 2*pi of the control-off evolution."""
    return 2.0 * math.pi


def segment_period(kind: SegmentKind, kappa: float) -> float:
    return drift_period() if kind is SegmentKind.DRIFT else bang_period(kappa)


def segment_axis(kind: SegmentKind, kappa: float) -> np.ndarray:
    """Unit rotation axis of a segment: (+-kappa, 0, 1)/W for bangs, z for drift."""
    if kind is SegmentKind.DRIFT:
        return Z_AXIS.copy()
    w = bang_frequency(kappa)
    return np.array([kind.sign * kappa / w, 0.0, 1.0 / w])


@dataclass(frozen=True)
class PulseSegment:
    """One constant-control interval; duration in units of 1/omega_1."""

    kind: SegmentKind
    duration: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.duration) or self.duration < 0.0:
            raise ValueError(f"segment duration must be finite and >= 0, got {self.duration}")


@dataclass(frozen=True)
class PulseSequence:
    """Canonical ordered bang/drift segments with the control bound kappa.

    Canonical form merges consecutive segments of the same kind, reduces
    durations modulo the segment period (bang and drift evolutions are
    periodic) and drops zero-duration segments.
    """

    segments: tuple[PulseSegment, ...]
    kappa: float

    def __post_init__(self) -> None:
        if not (self.kappa > 0.0 and math.isfinite(self.kappa)):
            raise ValueError(f"kappa must be positive and finite, got {self.kappa}")
        object.__setattr__(self, "segments", _canonical_segments(self.segments, self.kappa))

    @classmethod
    def from_durations(
        cls, kinds: Sequence[SegmentKind], durations: Sequence[float], kappa: float
    ) -> "PulseSequence":
        if len(kinds) != len(durations):
            raise ValueError("kinds and durations must have equal length")
        return cls(tuple(PulseSegment(k, float(t)) for k, t in zip(kinds, durations)), kappa)

    @property
    def total_duration(self) -> float:
        return float(sum(seg.duration for seg in self.segments))

    @property
    def kinds(self) -> tuple[SegmentKind, ...]:
        return tuple(seg.kind for seg in self.segments)

    @property
    def durations(self) -> tuple[float, ...]:
        return tuple(seg.duration for seg in self.segments)

    def omegas(self) -> tuple[float, ...]:
        """Per-segment control values in units of omega_1."""
        return tuple(seg.kind.omega(self.kappa) for seg in self.segments)

    def boundaries(self) -> np.ndarray:
        """Cumulative segment boundary times, starting at 0."""
        return np.concatenate([[0.0], np.cumsum([seg.duration for seg in self.segments])])

    def concat(self, other: "PulseSequence") -> "PulseSequence":
        """Sequence running self first, then other (kappas must match)."""
        if abs(other.kappa - self.kappa) > 1e-15:
            raise ValueError("cannot concatenate sequences with different kappa")
        return PulseSequence(self.segments + other.segments, self.kappa)


def _canonical_segments(
    segments: Iterable[PulseSegment], kappa: float
) -> tuple[PulseSegment, ...]:
    out: list[PulseSegment] = []
    for seg in segments:
        kind = seg.kind
        duration = float(seg.duration)
        period = segment_period(kind, kappa)
        if duration > period + 1e-12:
            duration = math.fmod(duration, period)
        if out and out[-1].kind is kind:
            duration += out.pop().duration
            if duration > period + 1e-12:
                duration = math.fmod(duration, period)
        if duration <= ZERO_DURATION or abs(duration - period) <= ZERO_DURATION:
            continue
        out.append(PulseSegment(kind, duration))
    # merging may expose new adjacent pairs after drops
    merged = tuple(out)
    for a, b in zip(merged, merged[1:]):
        if a.kind is b.kind:
            return _canonical_segments(merged, kappa)
    return merged


def segment_propagator(kind: SegmentKind, t: float, kappa: float) -> np.ndarray:
    """Closed-form propagator exp(-i H t) of one segment, H = (sigma_z + Omega sigma_x)/2.

    Returns cos(W t/2) I - i sin(W t/2) (n . sigma) with W = sqrt(1 + kappa^2)
    and n = (+-kappa, 0, 1)/W for bangs; W = 1 and n = z for drift.
    """
    if t < 0.0 or not math.isfinite(t):
        raise ValueError(f"duration must be finite and >= 0, got {t}")
    if not (kappa > 0.0):
        raise ValueError(f"kappa must be positive, got {kappa}")
    if kind is SegmentKind.DRIFT:
        w = 1.0
        axis = Z_AXIS
    else:
        w = bang_frequency(kappa)
        axis = segment_axis(kind, kappa)
    half = 0.5 * w * t
    c, s = math.cos(half), math.sin(half)
    n_dot_sigma = axis[0] * SIGMA_X + axis[1] * SIGMA_Y + axis[2] * SIGMA_Z
    return c * IDENTITY2 - 1j * s * n_dot_sigma


def sequence_propagator(seq: PulseSequence) -> np.ndarray:
    """Time-ordered product of segment propagators; later segments multiply on the left."""
    u = IDENTITY2.copy()
    for seg in seq.segments:
        u = segment_propagator(seg.kind, seg.duration, seq.kappa) @ u
    return u


def is_unitary(u: np.ndarray, tol: float = UNITARITY_TOL) -> bool:
    return bool(np.linalg.norm(u.conj().T @ u - IDENTITY2) < tol)


def rotation_infidelity(u: np.ndarray, v: np.ndarray) -> float:
    """1 - |Tr(U^dag V)| / 2: zero iff the unitaries agree up to global phase."""
    overlap = abs(np.trace(u.conj().T @ v)) / 2.0
    return float(min(max(1.0 - overlap, 0.0), 1.0))


def su2_quaternion(u: np.ndarray) -> np.ndarray:
    """Real 4-vector (w, x, y, z) with U = e^{i alpha} (w I - i (x,y,z) . sigma)."""
    det = u[0, 0] * u[1, 1] - u[0, 1] * u[1, 0]
    phase = cmath.exp(-0.5j * cmath.phase(det))
    v = u * phase
    w = 0.5 * (v[0, 0] + v[1, 1]).real
    x = -0.5 * (v[0, 1] + v[1, 0]).imag
    y = 0.5 * (v[1, 0] - v[0, 1]).real
    z = 0.5 * (v[1, 1] - v[0, 0]).imag
    return np.array([w, x, y, z])


@dataclass(frozen=True)
class RotationAxisAngle:
    """Canonical axis-angle rotation: unit axis, angle in [0, pi].

    (axis, angle) and (-axis, 2*pi - angle) describe the same rotation; the
    constructor keeps the angle-in-[0, pi] representative.  The zero rotation
    carries the z axis by convention.
    """

    axis: np.ndarray
    angle: float

    def __post_init__(self) -> None:
        axis = np.asarray(self.axis, dtype=float)
        if axis.shape != (3,):
            raise ValueError("axis must be a 3-vector")
        angle = float(self.angle) % (2.0 * math.pi)
        norm = float(np.linalg.norm(axis))
        if norm < 1e-12:
            raise ValueError("axis must be nonzero")
        axis = axis / norm
        if angle > math.pi:
            angle = 2.0 * math.pi - angle
            axis = -axis
        if angle < 1e-12:
            axis = Z_AXIS.copy()
            angle = 0.0
        elif abs(angle - math.pi) < 1e-12:
            # pi rotations about n and -n coincide; orient the axis deterministically
            for comp in axis:
                if abs(comp) > 1e-9:
                    if comp < 0.0:
                        axis = -axis
                    break
        axis.flags.writeable = False
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "angle", angle)

    @classmethod
    def equatorial(cls, axis_angle: float, angle: float) -> "RotationAxisAngle":
        """Rotation about the x-y plane axis at polar angle axis_angle (radians from x)."""
        return cls(np.array([math.cos(axis_angle), math.sin(axis_angle), 0.0]), angle)

    def to_unitary(self) -> np.ndarray:
        half = 0.5 * self.angle
        n_dot_sigma = (
            self.axis[0] * SIGMA_X + self.axis[1] * SIGMA_Y + self.axis[2] * SIGMA_Z
        )
        return math.cos(half) * IDENTITY2 - 1j * math.sin(half) * n_dot_sigma


def axis_angle_of(u: np.ndarray) -> RotationAxisAngle:
    """Canonical axis-angle decomposition of a unitary, ignoring global phase."""
    q = su2_quaternion(u)
    w = min(max(q[0], -1.0), 1.0)
    vec = q[1:]
    s = float(np.linalg.norm(vec))
    if s < 1e-12:
        return RotationAxisAngle(Z_AXIS.copy(), 0.0)
    angle = 2.0 * math.atan2(s, w)
    return RotationAxisAngle(vec / s, angle)


def rotation_matrix_of(u: np.ndarray) -> np.ndarray:
    """SO(3) matrix acting on Bloch vectors: v -> R v under rho -> U rho U^dag."""
    w, x, y, z = su2_quaternion(u)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def bloch_apply(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate a Bloch vector by the conjugation action of U."""
    v = np.asarray(v, dtype=float)
    if v.shape != (3,):
        raise ValueError("Bloch vector must be a 3-vector")
    return rotation_matrix_of(u) @ v


def haar_random_unitary(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform SU(2) element via a random unit quaternion."""
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [[w - 1j * z, -y - 1j * x], [y - 1j * x, w + 1j * z]], dtype=complex
    )


# ---------------------------------------------------------------------------
# Euler angles
#
# Chart convention: U(psi, theta, phi) =
#     exp(-i psi sigma_z / 2) exp(-i theta sigma_m / 2) exp(-i phi sigma_z / 2)
# with the middle axis m = y (zyz chart) or m = x (zxz chart).  The sign is
# chosen so that the angle rates along a propagator trajectory match the
# state equations used by the certifier (pure drift gives psi_dot = +1).
# ---------------------------------------------------------------------------

CHART_ZYZ = "zyz"
CHART_ZXZ = "zxz"

#: extraction is flagged degenerate below this value of sin(theta)
DEGENERACY_SIN_THETA = 0.1


@dataclass(frozen=True)
class EulerAngles:
    """Euler angles of a unitary in the zyz or zxz chart (global phase dropped).

    degenerate marks points where sin(theta) < 0.1 and the chart is
    ill-conditioned; at exact degeneracy the z-angles fold into psi with
    phi = 0.
    """

    psi: float
    theta: float
    phi: float
    chart: str = CHART_ZYZ
    degenerate: bool = False

    def __post_init__(self) -> None:
        if self.chart not in (CHART_ZYZ, CHART_ZXZ):
            raise ValueError(f"unknown chart {self.chart!r}")


def _wrap_angle(a: float) -> float:
    return math.atan2(math.sin(a), math.cos(a))


def euler_angles_of(u: np.ndarray, chart: str = CHART_ZYZ) -> EulerAngles:
    """Extract Euler angles; exact whenever both matrix entries are resolvable."""
    if chart not in (CHART_ZYZ, CHART_ZXZ):
        raise ValueError(f"unknown chart {chart!r}")
    det = u[0, 0] * u[1, 1] - u[0, 1] * u[1, 0]
    v = u * cmath.exp(-0.5j * cmath.phase(det))
    a = complex(v[0, 0])
    b = complex(v[0, 1])
    theta = 2.0 * math.atan2(abs(b), abs(a))
    degenerate = math.sin(theta) < DEGENERACY_SIN_THETA
    if abs(b) < 1e-12:
        # diagonal: all z-rotation folded into psi
        return EulerAngles(_wrap_angle(-2.0 * cmath.phase(a)), theta, 0.0, chart, True)
    if abs(a) < 1e-12:
        phase = -b if chart == CHART_ZYZ else 1j * b
        return EulerAngles(_wrap_angle(-2.0 * cmath.phase(phase)), theta, 0.0, chart, True)
    sum_zz = -2.0 * cmath.phase(a)
    phase = -b if chart == CHART_ZYZ else 1j * b
    diff_zz = -2.0 * cmath.phase(phase)
    psi = _wrap_angle(0.5 * (sum_zz + diff_zz))
    phi = _wrap_angle(0.5 * (sum_zz - diff_zz))
    return EulerAngles(psi, theta, phi, chart, degenerate)


def euler_to_unitary(e: EulerAngles) -> np.ndarray:
    middle = SIGMA_Y if e.chart == CHART_ZYZ else SIGMA_X
    def zrot(a: float) -> np.ndarray:
        return np.array([[cmath.exp(-0.5j * a), 0.0], [0.0, cmath.exp(0.5j * a)]])
    half = 0.5 * e.theta
    mid = math.cos(half) * IDENTITY2 - 1j * math.sin(half) * middle
    return zrot(e.psi) @ mid @ zrot(e.phi)
