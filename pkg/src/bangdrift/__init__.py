"""Time-optimal bang/drift control toolkit for strongly driven two-level systems."""

from .su2 import (
    PulseSegment,
    PulseSequence,
    RotationAxisAngle,
    SegmentKind,
    axis_angle_of,
    bang_frequency,
    bang_period,
    bloch_apply,
    drift_period,
    euler_angles_of,
    euler_to_unitary,
    rotation_infidelity,
    segment_propagator,
    sequence_propagator,
)
from .synthesis import (
    Pattern,
    PulseMap,
    SynthesisError,
    SynthesisResult,
    brute_force_min_time,
    enumerate_patterns,
    optimize_pattern,
    pulse_map,
    synthesize,
)

__version__ = "0.1.0"

__all__ = [
    "PulseSegment",
    "PulseSequence",
    "RotationAxisAngle",
    "SegmentKind",
    "axis_angle_of",
    "bang_frequency",
    "bang_period",
    "bloch_apply",
    "drift_period",
    "euler_angles_of",
    "euler_to_unitary",
    "rotation_infidelity",
    "segment_propagator",
    "sequence_propagator",
    "Pattern",
    "PulseMap",
    "SynthesisError",
    "SynthesisResult",
    "brute_force_min_time",
    "enumerate_patterns",
    "optimize_pattern",
    "pulse_map",
    "synthesize",
    "__version__",
]
