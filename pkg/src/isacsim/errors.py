"""Shared exception types."""

from __future__ import annotations


class ConfigurationError(ValueError):
    """A config value is missing, malformed, or violates a structural constraint."""


class TtdRangeExceeded(ValueError):
    """Requested delay profile does not fit inside [0, t_max].

    Carries the span the profile would need so callers can report or resize.
    """

    def __init__(self, required_span: float, t_max: float):
        self.required_span = float(required_span)
        self.t_max = float(t_max)
        super().__init__(
            f"delay profile needs a span of {required_span:.3e} s "
            f"but the hardware range is [0, {t_max:.3e}] s"
        )


class InfeasibleTimingError(ValueError):
    """Frame timing request leaves no room for data transmission."""


class DegenerateSceneError(ValueError):
    """Scene carries no usable energy for the requested design (zero-trace weighting)."""
