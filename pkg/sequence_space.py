"""
Sequence Space - finite-truncation numerics for l^p
Vectors with finite support, p-norms, arithmetic, coordinate functionals
and the canonical basis (e_n).
"""

import io
import json
import logging
import math
import os
from typing import Iterable, Optional

import numpy as np
import pandas as pd
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator

load_dotenv()

logger = logging.getLogger(__name__)

# Configuration
TRUNCATION_DIM = int(os.getenv("MEANNE_TRUNCATION_DIM", "64"))


class AmbientSpaceError(ValueError):
    """Raised when two vectors live in different l^p spaces."""


def lp_norm(values: np.ndarray, p: float) -> np.ndarray:
    """
    l^p norm over the last axis, scaled by the largest magnitude to avoid overflow.

    Args:
        values: Array of coefficients (any leading batch shape)
        p: Exponent >= 1

    Returns:
        Array of norms with the last axis removed
    """
    a = np.abs(np.asarray(values, dtype=float))
    if a.shape[-1] == 0:
        return np.zeros(a.shape[:-1])
    peak = a.max(axis=-1, keepdims=True)
    safe = np.where(peak > 0, peak, 1.0)
    return safe[..., 0] * ((a / safe) ** p).sum(axis=-1) ** (1.0 / p)


def pad_to(values: np.ndarray, dim: int) -> np.ndarray:
    """Zero-pad (or truncate) the last axis to `dim` coordinates."""
    values = np.asarray(values, dtype=float)
    size = values.shape[-1]
    if size >= dim:
        return values[..., :dim]
    widths = [(0, 0)] * (values.ndim - 1) + [(0, dim - size)]
    return np.pad(values, widths)


class SeqVector(BaseModel):
    """Finitely supported representative of an element of l^p."""

    model_config = ConfigDict(frozen=True)

    coeffs: tuple[float, ...] = Field(
        default=(),
        description="Coefficients x_1, x_2, ... (zero beyond the stored support)"
    )
    p: float = Field(
        default=2.0,
        ge=1.0,
        description="Exponent of the ambient l^p norm"
    )

    @field_validator("coeffs")
    @classmethod
    def _coefficients_finite(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if not all(math.isfinite(c) for c in value):
            raise ValueError("coefficients must be finite (no NaN/Inf)")
        return value

    @classmethod
    def of(cls, *coeffs: float, p: float = 2.0) -> "SeqVector":
        return cls(coeffs=tuple(float(c) for c in coeffs), p=p)

    @classmethod
    def from_array(cls, values: Iterable[float], p: float = 2.0) -> "SeqVector":
        return cls(coeffs=tuple(float(c) for c in np.ravel(np.asarray(values, dtype=float))), p=p)

    @classmethod
    def zero(cls, p: float = 2.0) -> "SeqVector":
        return cls(coeffs=(), p=p)

    @property
    def support(self) -> int:
        """Index of the last nonzero coordinate (0 for the zero vector)."""
        for i in range(len(self.coeffs), 0, -1):
            if self.coeffs[i - 1] != 0.0:
                return i
        return 0

    def trimmed(self) -> tuple[float, ...]:
        return self.coeffs[:self.support]

    def to_array(self, dim: Optional[int] = None) -> np.ndarray:
        values = np.asarray(self.coeffs, dtype=float)
        if dim is None:
            return values
        return pad_to(values, dim)

    def coordinate(self, index: int) -> float:
        """Coefficient at 1-based `index`, 0 beyond the support."""
        if 1 <= index <= len(self.coeffs):
            return self.coeffs[index - 1]
        return 0.0

    def norm(self) -> float:
        return norm(self)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SeqVector):
            return NotImplemented
        return self.p == other.p and self.trimmed() == other.trimmed()

    def __hash__(self) -> int:
        return hash((self.p, self.trimmed()))

    def __add__(self, other: "SeqVector") -> "SeqVector":
        return add(self, other)

    def __sub__(self, other: "SeqVector") -> "SeqVector":
        return subtract(self, other)

    def __mul__(self, c: float) -> "SeqVector":
        return scale(self, c)

    __rmul__ = __mul__

    def __neg__(self) -> "SeqVector":
        return scale(self, -1.0)

    # Serialization

    def to_json(self) -> str:
        """JSON object with the coefficient array and the exponent."""
        return json.dumps({"coeffs": list(self.coeffs), "p": self.p})

    @classmethod
    def from_json(cls, text: str) -> "SeqVector":
        payload = json.loads(text)
        return cls(coeffs=tuple(payload["coeffs"]), p=payload.get("p", 2.0))

    def to_csv(self) -> str:
        """CSV rows `index,value` with 1-based indices."""
        frame = pd.DataFrame({
            "index": np.arange(1, len(self.coeffs) + 1, dtype=int),
            "value": np.asarray(self.coeffs, dtype=float),
        })
        return frame.to_csv(index=False)

    @classmethod
    def from_csv(cls, text: str, p: float = 2.0) -> "SeqVector":
        frame = pd.read_csv(io.StringIO(text), float_precision="round_trip")
        if frame.empty:
            return cls.zero(p)
        size = int(frame["index"].max())
        values = np.zeros(size)
        values[frame["index"].to_numpy(dtype=int) - 1] = frame["value"].to_numpy(dtype=float)
        return cls.from_array(values, p)


class CoordinateFunctional(BaseModel):
    """The functional x -> x_index; used to test weak convergence on bounded sets."""

    model_config = ConfigDict(frozen=True)

    index: int = Field(..., ge=1, description="1-based coordinate index")

    def __call__(self, x: SeqVector) -> float:
        return x.coordinate(self.index)


def _check_same_space(x: SeqVector, y: SeqVector) -> None:
    if x.p != y.p:
        raise AmbientSpaceError(f"vectors live in different spaces: l^{x.p} and l^{y.p}")


def norm(x: SeqVector) -> float:
    """(sum_j |x_j|^p)^(1/p)."""
    return float(lp_norm(x.to_array(), x.p))


def add(x: SeqVector, y: SeqVector) -> SeqVector:
    _check_same_space(x, y)
    dim = max(len(x.coeffs), len(y.coeffs))
    return SeqVector.from_array(x.to_array(dim) + y.to_array(dim), x.p)


def subtract(x: SeqVector, y: SeqVector) -> SeqVector:
    _check_same_space(x, y)
    dim = max(len(x.coeffs), len(y.coeffs))
    return SeqVector.from_array(x.to_array(dim) - y.to_array(dim), x.p)


def scale(x: SeqVector, c: float) -> SeqVector:
    return SeqVector.from_array(float(c) * x.to_array(), x.p)


def distance(x: SeqVector, y: SeqVector) -> float:
    return norm(subtract(x, y))


def basis(n: int, p: float = 2.0) -> SeqVector:
    """e_n: the indicator of coordinate n."""
    if n < 1:
        raise ValueError(f"basis index must be >= 1, got {n}")
    coeffs = [0.0] * n
    coeffs[n - 1] = 1.0
    return SeqVector(coeffs=tuple(coeffs), p=p)


def coordinate_metric(x: np.ndarray, y: np.ndarray) -> float:
    """sum_i 2^-i min(1, |x_i - y_i|); metrizes weak convergence on bounded sets."""
    dim = max(np.shape(x)[-1], np.shape(y)[-1])
    gap = np.minimum(1.0, np.abs(pad_to(x, dim) - pad_to(y, dim)))
    weights = 0.5 ** np.arange(1, dim + 1)
    return float(np.sum(weights * gap))


def parse_vector(text: str, p: float = 2.0) -> SeqVector:
    """
    Parse a start/reference vector given on the command line.

    Accepts `zero`, basis names such as `e3`, or comma lists such as `1,0.5`.
    """
    token = text.strip().lower()
    if token in ("zero", "0"):
        return SeqVector.zero(p)
    if token.startswith("e") and token[1:].isdigit():
        return basis(int(token[1:]), p)
    try:
        return SeqVector.of(*(float(part) for part in token.split(",")), p=p)
    except ValueError as e:
        raise ValueError(f"cannot parse vector '{text}': expected zero, e<n> or a comma list") from e
