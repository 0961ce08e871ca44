"""Tagged extended-real values.

Several functionals in this package (Fisher information, path action) take the
value +infinity on part of their domain.  Those branches are represented by a
tagged value rather than a floating-point ``inf`` so that downstream inequality
checks can branch explicitly instead of relying on IEEE semantics.
"""

from __future__ import annotations

from dataclasses import dataclass


class InfiniteNormError(ValueError):
    """Raised when a dual-norm evaluation lands on its infinite branch.

    The dual Dirichlet norm of a distribution with nonzero mean is +infinity;
    callers that can reach this branch should catch this error explicitly.
    """


@dataclass(frozen=True)
class ExtReal:
    """A finite float, or the tagged infinite outcome (``value is None``)."""

    value: float | None

    @classmethod
    def of(cls, x: float) -> "ExtReal":
        return cls(float(x))

    @property
    def is_infinite(self) -> bool:
        return self.value is None

    @property
    def finite(self) -> float:
        """The finite value; raises if this is the infinite outcome."""
        if self.value is None:
            raise InfiniteNormError("extended value is infinite")
        return self.value

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        return "ExtReal(+inf)" if self.value is None else f"ExtReal({self.value!r})"


INFINITE = ExtReal(None)
