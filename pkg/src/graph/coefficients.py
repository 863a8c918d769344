"""
Coefficient families for edge drift and volatility.

A coefficient is a polynomial in the edge coordinate, stored as ascending
power coefficients. The family restricts the admissible degree so that
regularity can be decided from the config alone.
"""

from enum import Enum
from typing import Tuple, Union

import numpy as np
from numpy.polynomial import polynomial as P
from pydantic import BaseModel, ConfigDict, Field, model_validator

ArrayLike = Union[float, np.ndarray]


class CoefficientFamily(str, Enum):
    """Enumeration of supported coefficient families."""

    CONSTANT = "constant"
    LINEAR = "linear"
    POLYNOMIAL = "polynomial"


class Coefficient(BaseModel):
    """Polynomial coefficient function c(y) = coeffs[0] + coeffs[1] y + ..."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    family: CoefficientFamily = Field(..., description="Coefficient family")
    coeffs: Tuple[float, ...] = Field(..., min_length=1, description="Ascending power coefficients")

    @model_validator(mode="after")
    def check_family_arity(self) -> "Coefficient":
        """Validate the number of coefficients against the family."""
        if self.family == CoefficientFamily.CONSTANT and len(self.coeffs) != 1:
            raise ValueError("constant family takes exactly one coefficient")
        if self.family == CoefficientFamily.LINEAR and len(self.coeffs) != 2:
            raise ValueError("linear family takes exactly two coefficients [c0, c1]")
        if not all(np.isfinite(self.coeffs)):
            raise ValueError("coefficients must be finite")
        return self

    @classmethod
    def constant(cls, value: float) -> "Coefficient":
        return cls(family=CoefficientFamily.CONSTANT, coeffs=(float(value),))

    @property
    def degree(self) -> int:
        """Effective polynomial degree (trailing zeros ignored)."""
        nonzero = np.flatnonzero(np.asarray(self.coeffs))
        return int(nonzero[-1]) if nonzero.size else 0

    @property
    def is_constant(self) -> bool:
        return self.degree == 0

    def evaluate(self, y: ArrayLike) -> ArrayLike:
        """
        Evaluate the coefficient at coordinate(s) y.

        Constant coefficients return a plain float so that callers can
        broadcast without allocating.
        """
        if self.is_constant:
            return float(self.coeffs[0])
        return P.polyval(y, self.coeffs)

    def derivative(self, y: ArrayLike) -> ArrayLike:
        """First derivative c'(y)."""
        if self.is_constant:
            return 0.0
        return P.polyval(y, P.polyder(self.coeffs))

    def lipschitz_bound(self, length: float) -> float:
        """
        Lipschitz constant of c on [0, length].

        Infinite for polynomials of degree >= 2 on an unbounded range.
        """
        if self.is_constant:
            return 0.0
        if self.degree == 1:
            return abs(float(self.coeffs[1]))
        if not np.isfinite(length):
            return float("inf")
        grid = np.linspace(0.0, length, 10_001)
        return float(np.max(np.abs(self.derivative(grid))))
