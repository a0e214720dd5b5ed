from dataclasses import dataclass


@dataclass(frozen=True)
class Verdict:
    """PASS/FAIL outcome of one checked item."""

    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}" + (f": {self.detail}" if self.detail else "")


def all_passed(verdicts: list[Verdict]) -> bool:
    return all(v.passed for v in verdicts)


def print_verdicts(verdicts: list[Verdict]) -> bool:
    """Print one line per verdict and return whether every item passed."""
    for v in verdicts:
        print(v.line())
    return all_passed(verdicts)
