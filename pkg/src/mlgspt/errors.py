"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class MlgsptError(Exception):
    """Base class for numerical failures raised by the toolkit."""


class SingularGraph(MlgsptError):
    """Voltage too close to the potassium reversal potential."""


class StepUnderflow(MlgsptError):
    """The adaptive step fell below the configured minimum."""


class NonFinite(MlgsptError):
    """The state left the finite range."""


class NoConvergence(MlgsptError):
    """An iteration did not converge within its budget."""


class FixedPoint(MlgsptError):
    """The attractor is an equilibrium, not a cycle."""


class NoIntersection(MlgsptError):
    """Two geometric objects do not meet; ``gap`` holds the minimal distance."""

    def __init__(self, message: str, gap: float = float("nan")):
        super().__init__(message)
        self.gap = gap


class CurveLost(MlgsptError):
    """Curve tracking failed for too many consecutive samples."""


class Degenerate(MlgsptError):
    """Both nontrivial eigenvalues are numerically zero."""


class DivisionGuard(MlgsptError):
    """A denominator fell below its guard threshold."""


class NotACdh(MlgsptError):
    """The point does not satisfy the CDH defining system."""


class NotANode(MlgsptError):
    """The folded singularity is not a node."""


class NoSeed(MlgsptError):
    """No starting point for continuation."""


class StepCollapse(MlgsptError):
    """Continuation step shrank below its minimum; ``last`` holds the last good sample."""

    def __init__(self, message: str, last=None):
        super().__init__(message)
        self.last = last


class NoApproach(MlgsptError):
    """Two curves never come close enough to seed a solve."""


class ShootingDiverged(MlgsptError):
    """Shooting Newton iteration diverged."""


class TooShort(MlgsptError):
    """Trajectory too short for the requested analysis."""


class NoClosure(MlgsptError):
    """Singular orbit did not close within the segment budget."""


class AmbiguousStart(MlgsptError):
    """A construction admits several representatives."""
