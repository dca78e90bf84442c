"""Exception types shared across the lab."""


class LabError(Exception):
    """Base class for lab errors."""


class ConfigError(LabError, ValueError):
    """A parameter violates a hypothesis or a range constraint."""


class GeometryError(LabError, ValueError):
    """A point or ball lies outside the admissible region."""


class SingularEvaluation(LabError, ValueError):
    """A kernel was evaluated at its singular point."""


class ResolutionError(LabError):
    """The mesh is too coarse for the requested evaluation."""


class BlowupEscape(LabError, FloatingPointError):
    """``u`` exceeded the overflow guard; shorten the continuation step."""


class FoldDetected(LabError):
    """Newton failed next to a singular Jacobian (turning point)."""

    def __init__(self, msg, best=None, sigma_min=None):
        super().__init__(msg)
        self.best = best
        self.sigma_min = sigma_min


class NonConvergence(LabError):
    """Newton hit ``max_iter``; ``best`` holds the best iterate."""

    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best
