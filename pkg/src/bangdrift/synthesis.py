"""Time-optimal pulse synthesis: pattern enumeration, duration optimization,
pulse maps over target axes, and a brute-force discretized search oracle.

A pattern fixes the kinds of the bang/drift segments; the synthesis problem is
then a bounded search over the segment durations.  Feasibility (infidelity at
or below tolerance) is solved first by multi-start damped Gauss-Newton on the
quaternion residual, then the total duration is minimized by a penalized
derivative-free polish inside the feasible pattern.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

import numpy as np
from scipy import optimize as sciopt

from .su2 import (
    KIND_ORDER,
    PulseSequence,
    RotationAxisAngle,
    SegmentKind,
    axis_angle_of,
    bang_frequency,
    bang_period,
    drift_period,
    rotation_infidelity,
    segment_period,
    sequence_propagator,
    su2_quaternion,
)

DEFAULT_TOL = 1e-9
#: durations closer than this are considered tied when ranking patterns
DURATION_TIE = 1e-9


class SynthesisError(RuntimeError):
    """No pattern within the segment budget reached the requested tolerance."""

    def __init__(self, message: str, best_infidelity: float):
        super().__init__(message)
        self.best_infidelity = best_infidelity


class SearchFailureError(RuntimeError):
    """Brute-force search exhausted its time horizon without hitting the target."""


@dataclass(frozen=True)
class Pattern:
    """Ordered segment kinds with no consecutive repeats."""

    kinds: tuple[SegmentKind, ...]

    def __post_init__(self) -> None:
        for a, b in zip(self.kinds, self.kinds[1:]):
            if a is b:
                raise ValueError("pattern may not repeat a segment kind consecutively")

    def __len__(self) -> int:
        return len(self.kinds)

    def __str__(self) -> str:
        return ";".join(k.value for k in self.kinds) if self.kinds else "(empty)"


def enumerate_patterns(n: int) -> list[Pattern]:
    """All length-n patterns in lexicographic order (bang+ < bang- < drift).

    There are exactly 3 * 2**(n-1) of them for n >= 1: three choices for the
    first segment, and two non-repeating choices for each later one.
    """
    if n < 0:
        raise ValueError("pattern length must be >= 0")
    if n == 0:
        return [Pattern(())]
    patterns: list[tuple[SegmentKind, ...]] = [(k,) for k in KIND_ORDER]
    for _ in range(n - 1):
        patterns = [p + (k,) for p in patterns for k in KIND_ORDER if k is not p[-1]]
    return [Pattern(p) for p in patterns]


@dataclass(frozen=True)
class SynthesisResult:
    """A sequence realizing a target rotation, with its verified infidelity."""

    sequence: PulseSequence
    infidelity: float
    total_duration: float
    pattern: Pattern
    optimizer_restarts_used: int

    def __post_init__(self) -> None:
        if abs(self.total_duration - self.sequence.total_duration) > 1e-10:
            raise ValueError("total_duration does not match the sequence")


# ---------------------------------------------------------------------------
# batched quaternion evaluation
# ---------------------------------------------------------------------------


def _target_quaternion(target: RotationAxisAngle) -> np.ndarray:
    half = 0.5 * target.angle
    return np.concatenate([[math.cos(half)], math.sin(half) * target.axis])


def _pattern_geometry(kinds: Sequence[SegmentKind], kappa: float):
    """Per-segment rotation rate and axis components (axis y-component is 0)."""
    w = bang_frequency(kappa)
    freq, ax, az, hi = [], [], [], []
    for kind in kinds:
        if kind is SegmentKind.DRIFT:
            freq.append(1.0)
            ax.append(0.0)
            az.append(1.0)
            hi.append(drift_period())
        else:
            freq.append(w)
            ax.append(kind.sign * kappa / w)
            az.append(1.0 / w)
            hi.append(bang_period(kappa))
    return np.array(freq), np.array(ax), np.array(az), np.array(hi)


def _quat_batch(freq, ax, az, durations):
    """Quaternions of the time-ordered product, batched over rows.

    freq/ax/az: (R, n) per-segment parameters; durations: (R, n).
    Returns (R, 4) with components (w, x, y, z) of U = w I - i v.sigma.
    """
    r = durations.shape[0]
    qw = np.ones(r)
    qx = np.zeros(r)
    qy = np.zeros(r)
    qz = np.zeros(r)
    for j in range(durations.shape[1]):
        half = 0.5 * freq[:, j] * durations[:, j]
        c = np.cos(half)
        s = np.sin(half)
        bx = s * ax[:, j]
        bz = s * az[:, j]
        # left-multiply the segment quaternion (c, bx, 0, bz)
        nw = c * qw - bx * qx - bz * qz
        nx = c * qx + qw * bx - bz * qy
        ny = c * qy + bz * qx - bx * qz
        nz = c * qz + qw * bz + bx * qy
        qw, qx, qy, qz = nw, nx, ny, nz
    return np.stack([qw, qx, qy, qz], axis=1)


def _residual_batch(freq, ax, az, durations, tq, signs=None):
    q = _quat_batch(freq, ax, az, durations)
    dots = q @ tq
    if signs is None:
        signs = np.where(dots >= 0.0, 1.0, -1.0)
    return q - signs[:, None] * tq, 1.0 - np.abs(dots), signs


def _refine_batch(freq, ax, az, x, hi, tq, iters: int = 42, active=None):
    """Damped Gauss-Newton on the quaternion residual, clipped to [0, hi].

    active masks duration columns that actually belong to the pattern; padded
    columns are pinned at zero (hi = 0) and excluded from the linearization.
    """
    rows, n = x.shape
    lam = np.full(rows, 1e-9)
    res, f, signs = _residual_batch(freq, ax, az, x, tq)
    h = 1e-8
    eye = np.eye(n)
    stalled = 0
    freq_s = np.tile(freq, (n, 1))
    ax_s = np.tile(ax, (n, 1))
    az_s = np.tile(az, (n, 1))
    for _ in range(iters):
        # all forward-difference points evaluated in one stacked batch,
        # with signs frozen at the base point so the branch stays smooth
        xs = np.tile(x, (n, 1))
        for j in range(n):
            xs[j * rows : (j + 1) * rows, j] += h
        rp, _, _ = _residual_batch(freq_s, ax_s, az_s, xs, tq, np.tile(signs, n))
        jac = (rp.reshape(n, rows, 4) - res[None, :, :]).transpose(1, 2, 0) / h
        if active is not None:
            jac *= active[:, None, :]
        jt = jac.transpose(0, 2, 1)
        jtj = jt @ jac
        jtr = (jt @ res[:, :, None])[..., 0]
        trace = jtj[:, np.arange(n), np.arange(n)].sum(axis=1)
        damp = (lam * (1.0 + trace))[:, None, None] * eye
        step = -np.linalg.solve(jtj + damp, jtr[..., None])[..., 0]
        x_new = np.clip(x + step, 0.0, hi)
        res_new, f_new, signs_new = _residual_batch(freq, ax, az, x_new, tq)
        improved = f_new <= f
        gain = float(np.max(np.where(improved, f - f_new, 0.0), initial=0.0))
        x[improved] = x_new[improved]
        res[improved] = res_new[improved]
        f[improved] = f_new[improved]
        signs[improved] = signs_new[improved]
        lam = np.where(improved, np.maximum(lam * 0.25, 1e-12), lam * 8.0)
        stalled = stalled + 1 if gain < 1e-17 else 0
        if stalled >= 3:
            break
    return x, f


def _grid_starts(hi: np.ndarray, points_per_dim: int) -> np.ndarray:
    axes = [np.linspace(0.0, h, points_per_dim) for h in hi]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _sequence_from(pattern: Pattern, durations: np.ndarray, kappa: float) -> PulseSequence:
    return PulseSequence.from_durations(pattern.kinds, [float(t) for t in durations], kappa)


def _infidelity_scalar(freq, ax, az, x, tq) -> float:
    """Scalar-path infidelity evaluation, cheap enough for derivative-free loops."""
    qw, qx, qy, qz = 1.0, 0.0, 0.0, 0.0
    for j in range(len(x)):
        half = 0.5 * freq[j] * x[j]
        c = math.cos(half)
        s = math.sin(half)
        bx = s * ax[j]
        bz = s * az[j]
        qw, qx, qy, qz = (
            c * qw - bx * qx - bz * qz,
            c * qx + qw * bx - bz * qy,
            c * qy + bz * qx - bx * qz,
            c * qz + qw * bz + bx * qy,
        )
    return 1.0 - abs(qw * tq[0] + qx * tq[1] + qy * tq[2] + qz * tq[3])


def _duration_polish(freq, ax, az, x0, hi, tq, tol: float):
    """Shrink total duration inside the feasible set via a penalized objective."""
    n = x0.size
    slack = min(tol, 1e-12)
    hi_list = [float(h) for h in hi]

    def objective(xarr):
        x = [min(max(float(v), 0.0), h) for v, h in zip(xarr, hi_list)]
        f = _infidelity_scalar(freq, ax, az, x, tq)
        return sum(x) + 1e12 * max(0.0, f - slack)

    result = sciopt.minimize(
        objective,
        x0,
        method="Nelder-Mead",
        options={"maxfev": 100 * n, "xatol": 1e-12, "fatol": 1e-13},
    )
    return np.clip(result.x, 0.0, hi)


def optimize_pattern(
    pattern: Pattern,
    target: RotationAxisAngle,
    kappa: float,
    tol: float = DEFAULT_TOL,
    grid_points: int = 5,
) -> Optional[SynthesisResult]:
    """Best duration vector for one pattern, or None if it cannot reach tol.

    Durations live in [0, T_b] for bangs and [0, T_d] for drift.  Multi-start:
    a uniform grid of grid_points per dimension seeds a damped Gauss-Newton
    feasibility solve; the best feasible point is then polished for duration.
    """
    if not (tol > 0.0):
        raise ValueError(f"tolerance must be positive, got {tol}")
    if not (kappa > 0.0):
        raise ValueError(f"kappa must be positive, got {kappa}")
    roots, _ = _feasible_roots([pattern], target, kappa, tol, grid_points)
    if roots[0] is None:
        return None
    x, starts = roots[0]
    tq = _target_quaternion(target)
    x = _polish_root(pattern, x, kappa, tol, tq)
    return _result_from(pattern, x, kappa, target, tol, starts)


def _feasible_roots(
    patterns: Sequence[Pattern],
    target: RotationAxisAngle,
    kappa: float,
    tol: float,
    grid_points: int,
) -> tuple[list[Optional[tuple[np.ndarray, int]]], float]:
    """Per pattern: the minimal-duration feasible duration vector found, if any.

    All patterns are refined in one padded batch; shorter patterns carry inert
    zero-duration columns that are masked out of the linearization.  Also
    returns the best infidelity seen anywhere (for failure diagnostics).
    """
    tq = _target_quaternion(target)
    roots: list[Optional[tuple[np.ndarray, int]]] = [None] * len(patterns)
    best_f = 1.0 - abs(tq[0]) if any(len(p) == 0 for p in patterns) else 1.0

    max_n = max((len(p) for p in patterns), default=0)
    freq_rows, ax_rows, az_rows, hi_rows, x_rows, owner, starts_used = [], [], [], [], [], [], {}
    for idx, pattern in enumerate(patterns):
        n = len(pattern)
        if n == 0:
            if 1.0 - abs(tq[0]) <= tol:
                roots[idx] = (np.zeros(0), 1)
            continue
        freq, ax, az, hi = _pattern_geometry(pattern.kinds, kappa)
        starts = _grid_starts(hi, grid_points)
        reps = starts.shape[0]
        starts_used[idx] = reps
        pad = max_n - n
        if pad:
            # padded columns are inert: unit-rate drift pinned to zero duration
            freq = np.concatenate([freq, np.ones(pad)])
            ax = np.concatenate([ax, np.zeros(pad)])
            az = np.concatenate([az, np.ones(pad)])
            hi = np.concatenate([hi, np.zeros(pad)])
            starts = np.concatenate([starts, np.zeros((reps, pad))], axis=1)
        freq_rows.append(np.tile(freq, (reps, 1)))
        ax_rows.append(np.tile(ax, (reps, 1)))
        az_rows.append(np.tile(az, (reps, 1)))
        hi_rows.append(np.tile(hi, (reps, 1)))
        x_rows.append(starts)
        owner.extend([idx] * reps)

    if not x_rows:
        return roots, best_f

    freq_b = np.concatenate(freq_rows)
    ax_b = np.concatenate(ax_rows)
    az_b = np.concatenate(az_rows)
    hi_b = np.concatenate(hi_rows)
    x_b = np.concatenate(x_rows)
    owner_arr = np.array(owner)
    active_b = (hi_b > 0.0).astype(float)

    x_b, f_b = _refine_batch(freq_b, ax_b, az_b, x_b, hi_b, tq, active=active_b)
    best_f = min(best_f, float(np.min(f_b)))

    for idx, pattern in enumerate(patterns):
        n = len(pattern)
        if n == 0:
            continue
        rows = np.where((owner_arr == idx) & (f_b <= tol))[0]
        if rows.size == 0:
            continue
        best_row = rows[np.argmin(np.sum(x_b[rows], axis=1))]
        roots[idx] = (x_b[best_row, :n].copy(), starts_used[idx])
    return roots, best_f


def _polish_root(
    pattern: Pattern, x: np.ndarray, kappa: float, tol: float, tq: np.ndarray
) -> np.ndarray:
    if x.size == 0:
        return x
    freq, ax, az, hi = _pattern_geometry(pattern.kinds, kappa)
    x_pol = _duration_polish(freq, ax, az, x.copy(), hi, tq, tol)
    if np.sum(x_pol) >= np.sum(x) - 1e-13:
        return x
    x_pol2, f_pol = _refine_batch(
        freq[None, :], ax[None, :], az[None, :],
        x_pol[None, :].copy(), hi[None, :], tq, iters=20
    )
    if f_pol[0] <= tol and np.sum(x_pol2[0]) <= np.sum(x) + DURATION_TIE:
        return x_pol2[0]
    return x


def _result_from(
    pattern: Pattern,
    x: np.ndarray,
    kappa: float,
    target: RotationAxisAngle,
    tol: float,
    starts: int,
) -> Optional[SynthesisResult]:
    seq = _sequence_from(pattern, x, kappa)
    infid = rotation_infidelity(sequence_propagator(seq), target.to_unitary())
    if infid > tol:
        return None
    return SynthesisResult(seq, infid, seq.total_duration, pattern, starts)


def _pattern_rank(patterns: Sequence[Pattern], pattern: Pattern) -> int:
    return patterns.index(pattern)


def synthesize(
    target: RotationAxisAngle,
    kappa: float,
    max_n: int = 3,
    tol: float = DEFAULT_TOL,
    grid_points: int = 5,
    verify: bool = True,
) -> SynthesisResult:
    """Minimal-duration sequence over all patterns with at most max_n segments.

    Ties are broken by fewer segments, then by pattern enumeration order.
    The winner is re-verified against an independent numerical integration of
    the control before being returned.
    """
    if not (tol > 0.0):
        raise ValueError(f"tolerance must be positive, got {tol}")
    if not (kappa > 0.0):
        raise ValueError(f"kappa must be positive, got {kappa}")
    if max_n < 0:
        raise ValueError("max_n must be >= 0")

    patterns: list[Pattern] = []
    for n in range(max_n + 1):
        patterns.extend(enumerate_patterns(n))
    tq = _target_quaternion(target)
    roots, best_f = _feasible_roots(patterns, target, kappa, tol, grid_points)

    found = [(idx, x, starts) for idx, root in enumerate(roots) if root is not None
             for x, starts in [root]]
    if not found:
        raise SynthesisError(
            f"no pattern with <= {max_n} segments reached infidelity {tol:g}",
            best_infidelity=best_f,
        )

    # duration-polish only the patterns that could still win
    min_duration = min(float(np.sum(x)) for _, x, _ in found)
    results: list[tuple[int, SynthesisResult]] = []
    for idx, x, starts in found:
        if np.sum(x) <= min_duration + 0.05:
            x = _polish_root(patterns[idx], x, kappa, tol, tq)
        res = _result_from(patterns[idx], x, kappa, target, tol, starts)
        if res is not None:
            results.append((idx, res))

    best: Optional[SynthesisResult] = None
    best_idx = -1
    for idx, res in results:
        if best is None:
            best, best_idx = res, idx
            continue
        if res.total_duration < best.total_duration - DURATION_TIE:
            best, best_idx = res, idx
        elif abs(res.total_duration - best.total_duration) <= DURATION_TIE:
            key = (len(res.sequence.segments), idx)
            best_key = (len(best.sequence.segments), best_idx)
            if key < best_key:
                best, best_idx = res, idx
    if best is None:
        raise SynthesisError(
            f"no pattern with <= {max_n} segments reached infidelity {tol:g}",
            best_infidelity=best_f,
        )
    if verify:
        err = _integration_infidelity(best.sequence, target)
        if err > max(10.0 * tol, 1e-8):
            raise SynthesisError(
                f"integration re-verification failed: infidelity {err:g}", err
            )
    return best


def _integration_infidelity(seq: PulseSequence, target: RotationAxisAngle) -> float:
    """Independent check: integrate the control numerically and compare."""
    u = np.eye(2, dtype=complex)
    for seg in seq.segments:
        omega = seg.kind.omega(seq.kappa)
        h = -0.5j * np.array([[1.0, omega], [omega, -1.0]], dtype=complex)
        steps = max(64, int(math.ceil(seg.duration * 64)))
        dt = seg.duration / steps
        for _ in range(steps):
            k1 = h @ u
            k2 = h @ (u + 0.5 * dt * k1)
            k3 = h @ (u + 0.5 * dt * k2)
            k4 = h @ (u + dt * k3)
            u = u + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return rotation_infidelity(u, target.to_unitary())


# ---------------------------------------------------------------------------
# pulse maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PulseMap:
    """Per-axis time-optimal sequences for a fixed rotation angle.

    entries cover a uniform grid of equatorial axis angles on [0, 2*pi);
    arrows are continuously refined local minima of the duration landscape
    (the globally fastest rotations sit at off-grid axis angles in general).
    """

    rotation_angle: float
    kappa: float
    entries: tuple[tuple[float, SynthesisResult], ...]
    arrows: tuple[tuple[float, SynthesisResult], ...] = ()

    @property
    def durations(self) -> np.ndarray:
        return np.array([res.total_duration for _, res in self.entries])

    @property
    def min_duration(self) -> float:
        values = [res.total_duration for _, res in self.entries]
        values.extend(res.total_duration for _, res in self.arrows)
        return float(min(values))

    @property
    def max_duration(self) -> float:
        return float(np.max(self.durations))


class PulseMapError(RuntimeError):
    def __init__(self, axis_angle: float, cause: Exception):
        super().__init__(f"synthesis failed at axis angle {axis_angle:.6f} rad: {cause}")
        self.axis_angle = axis_angle


def pulse_map(
    rotation_angle: float,
    kappa: float,
    grid_points: int = 360,
    tol: float = DEFAULT_TOL,
    max_n: int = 3,
    refine_minima: bool = True,
    workers: int = 1,
) -> PulseMap:
    """Synthesize the rotation for every axis angle on a uniform [0, 2*pi) grid.

    With refine_minima, each strict local minimum of the duration-vs-axis curve
    is additionally polished over the continuous axis angle and appended as an
    arrow entry, so the map's minimum reflects the true fastest axis.
    """
    if grid_points < 8:
        raise ValueError("grid_points must be >= 8")
    angles = np.linspace(0.0, 2.0 * math.pi, grid_points, endpoint=False)

    def solve(phi: float) -> SynthesisResult:
        target = RotationAxisAngle.equatorial(phi, rotation_angle)
        return synthesize(target, kappa, max_n=max_n, tol=tol)

    def solve_entry(phi: float) -> tuple[float, SynthesisResult]:
        try:
            return (float(phi), solve(float(phi)))
        except SynthesisError as exc:
            raise PulseMapError(float(phi), exc) from exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(solve_entry, angles))
    else:
        entries = [solve_entry(phi) for phi in angles]

    arrows: list[tuple[float, SynthesisResult]] = []
    if refine_minima:
        durations = np.array([res.total_duration for _, res in entries])
        n = len(durations)
        minima = [
            i
            for i in range(n)
            if durations[i] < durations[(i - 1) % n] and durations[i] < durations[(i + 1) % n]
        ]
        minima.sort(key=lambda i: durations[i])
        step = 2.0 * math.pi / grid_points
        for i in minima[:3]:
            phi0 = entries[i][0]
            bracket = (phi0 - step, phi0 + step)
            refined = sciopt.minimize_scalar(
                lambda phi: solve(phi).total_duration,
                bounds=bracket,
                method="bounded",
                options={"xatol": 5e-4},
            )
            phi_star = float(refined.x) % (2.0 * math.pi)
            arrows.append((phi_star, solve(phi_star)))

    return PulseMap(rotation_angle, kappa, tuple(entries), tuple(arrows))


# ---------------------------------------------------------------------------
# brute-force discretized oracle
# ---------------------------------------------------------------------------


def brute_force_min_time(
    target: RotationAxisAngle,
    kappa: float,
    dt: float,
    tol: float,
    max_time: Optional[float] = None,
    mesh: Optional[float] = None,
) -> float:
    """Shortest-path search over piecewise-constant controls in {-Omega_max, 0, +Omega_max}.

    Breadth-first search on a dt time grid with state deduplication on a
    discretized PSU(2) mesh; returns the first hitting time of
    rotation infidelity <= tol.  Independent of the closed-form synthesis path.
    """
    if not (dt > 0.0):
        raise ValueError("dt must be positive")
    if not (tol > 0.0):
        raise ValueError("tol must be positive")
    w = bang_frequency(kappa)
    if max_time is None:
        max_time = math.pi + 2.0 * bang_period(kappa)
    if mesh is None:
        mesh = w * dt / 3.0

    tq = _target_quaternion(target)
    if 1.0 - abs(tq[0]) <= tol:
        return 0.0

    # step quaternions for the three controls
    steps = []
    for kind in KIND_ORDER:
        freq, ax, az, _ = _pattern_geometry([kind], kappa)
        steps.append(
            _quat_batch(freq[None, :], ax[None, :], az[None, :], np.array([[dt]]))[0]
        )
    steps = np.array(steps)  # (3, 4)

    # dense bitset over the rounded quaternion mesh (w canonicalized >= 0)
    k_half = int(math.ceil(1.0 / mesh)) + 1
    span = 2 * k_half + 1
    n_bits = (k_half + 1) * span * span * span
    bitset = np.zeros((n_bits + 7) // 8, dtype=np.uint8)

    def keys_of(q: np.ndarray) -> np.ndarray:
        flip = q[:, 0] < 0.0
        qc = np.where(flip[:, None], -q, q)
        idx = np.rint(qc / mesh).astype(np.int64)
        iw = np.clip(idx[:, 0], 0, k_half)
        ixyz = np.clip(idx[:, 1:], -k_half, k_half) + k_half
        return ((iw * span + ixyz[:, 0]) * span + ixyz[:, 1]) * span + ixyz[:, 2]

    def mark_new(keys: np.ndarray) -> np.ndarray:
        byte = keys >> 3
        bit = (1 << (keys & 7)).astype(np.uint8)
        fresh = (bitset[byte] & bit) == 0
        np.bitwise_or.at(bitset, byte[fresh], bit[fresh])
        return fresh

    frontier = np.array([[1.0, 0.0, 0.0, 0.0]])
    mark_new(keys_of(frontier))
    n_steps = int(math.ceil(max_time / dt))

    for step_idx in range(1, n_steps + 1):
        # batched quaternion product: step (3,4) applied to frontier (N,4)
        a = steps[:, None, :]
        b = frontier[None, :, :]
        nw = a[..., 0] * b[..., 0] - a[..., 1] * b[..., 1] - a[..., 2] * b[..., 2] - a[..., 3] * b[..., 3]
        nx = a[..., 0] * b[..., 1] + b[..., 0] * a[..., 1] + a[..., 2] * b[..., 3] - a[..., 3] * b[..., 2]
        ny = a[..., 0] * b[..., 2] + b[..., 0] * a[..., 2] + a[..., 3] * b[..., 1] - a[..., 1] * b[..., 3]
        nz = a[..., 0] * b[..., 3] + b[..., 0] * a[..., 3] + a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
        new = np.stack([nw, nx, ny, nz], axis=-1).reshape(-1, 4)

        if np.any(1.0 - np.abs(new @ tq) <= tol):
            return step_idx * dt

        keys = keys_of(new)
        order = np.argsort(keys, kind="stable")
        keys_sorted = keys[order]
        first = np.ones(keys_sorted.size, dtype=bool)
        first[1:] = keys_sorted[1:] != keys_sorted[:-1]
        unique_rows = order[first]
        fresh = mark_new(keys[unique_rows])
        frontier = new[unique_rows[fresh]]
        if frontier.size == 0:
            break

    raise SearchFailureError(
        f"no control word of duration <= {max_time:g} reached infidelity {tol:g}"
    )
