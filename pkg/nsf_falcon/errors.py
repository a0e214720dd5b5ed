from typing import Any


class NsfError(RuntimeError):
    """Base class for every error raised by nsf_falcon."""


class DomainError(NsfError, ValueError):
    """A thermodynamic argument lies outside the domain of a closure (theta <= 0, vacuum...)."""


class OutOfDomainError(DomainError):
    """(rho, S) lies outside the closure of the admissible entropy set."""


class BracketError(NsfError):
    """Temperature root bracketing failed.

    Args:
        message (str): 説明
        lower (float): 探索区間の下端
        upper (float): 探索区間の上端
    """

    def __init__(self, message: str, lower: float, upper: float):
        super().__init__(f"{message} (bracket [{lower:.3e}, {upper:.3e}])")
        self.lower = lower
        self.upper = upper


class MisuseError(NsfError):
    """An operation was called where it is not defined."""


class ShapeError(NsfError, ValueError):
    """Field arrays do not match the mesh they are paired with."""


class EosError(NsfError):
    """An EOS document or table violates the constitutive hypotheses."""


class StepRejected(NsfError):
    """Internal signal: a trial step left the admissible set and must be retried."""


class RunAborted(NsfError):
    """The step sequencer gave up; the partial trajectory is kept on the exception."""

    def __init__(self, message: str, trajectory: Any = None, state_dump: dict[str, Any] | None = None):
        super().__init__(message)
        self.trajectory = trajectory
        self.state_dump = state_dump or {}


class ScenarioError(NsfError):
    """A scenario failed validation. All issues are collected, not only the first.

    Args:
        issues (list[tuple[str, str, str]]): (field path, hypothesis, message)
    """

    def __init__(self, issues: list[tuple[str, str, str]]):
        lines = [f"{path}: {message} [{hypothesis}]" for path, hypothesis, message in issues]
        super().__init__("Invalid scenario:\n  " + "\n  ".join(lines))
        self.issues = issues
