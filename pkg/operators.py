"""
Operators - self-maps of convex subsets of l^p (or R^d)
Holds the operator abstraction, the piecewise-linear tau, the Example map on
the unit ball of l^2 and the named operator corpus used by the CLI.
"""

import logging
import math
import os
from typing import Callable, Literal, Optional

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field
from scipy.optimize import least_squares

from sequence_space import SeqVector, TRUNCATION_DIM, lp_norm, pad_to

load_dotenv()

logger = logging.getLogger(__name__)

# Configuration
DOMAIN_TOL = 1e-12
SAMPLE_RADIUS = float(os.getenv("MEANNE_SAMPLE_RADIUS", "10.0"))

SQRT2 = math.sqrt(2.0)
SQRT_2_3 = math.sqrt(2.0 / 3.0)
TAU_KNOT = (SQRT2 - 1.0) / SQRT2  # end of the flat middle branch


class DomainViolationError(ValueError):
    """Raised when an operator is evaluated outside its domain C."""


class UnknownOperatorError(ValueError):
    """Raised when a corpus name cannot be resolved."""


class UnsamplableDomainError(ValueError):
    """Raised when a domain descriptor gives no way to draw points."""


class Domain(BaseModel):
    """Descriptor of the convex set C an operator acts on."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["ball", "space", "opaque"] = Field(
        ...,
        description="'ball' (closed ball of given radius), 'space' (all of the space) or 'opaque'"
    )
    p: float = Field(default=2.0, ge=1.0, description="Exponent of the ambient l^p norm")
    dim: int = Field(default=TRUNCATION_DIM, ge=1, description="Truncation (or Euclidean) dimension")
    radius: float = Field(default=1.0, gt=0.0, description="Ball radius, or sampling radius for 'space'")
    exact_dim: bool = Field(
        default=False,
        description="True for R^d: coordinates beyond dim are outside the domain"
    )

    def describe(self) -> str:
        if self.kind == "ball":
            return f"ball(radius={self.radius:g}) in l^{self.p:g}, truncation dim {self.dim}"
        if self.kind == "space":
            space = f"R^{self.dim}" if self.exact_dim else f"l^{self.p:g}"
            return f"all of {space}"
        return "opaque domain"

    def check(self, values: np.ndarray) -> None:
        """Raise DomainViolationError if any row of `values` lies outside C."""
        values = np.atleast_2d(values)
        if self.exact_dim and values.shape[-1] > self.dim and np.any(values[..., self.dim:] != 0.0):
            raise DomainViolationError(f"vector has coordinates beyond R^{self.dim}")
        if self.kind == "ball":
            norms = lp_norm(values, self.p)
            worst = float(norms.max()) if norms.size else 0.0
            if worst > self.radius + DOMAIN_TOL:
                raise DomainViolationError(
                    f"norm {worst:.15g} exceeds ball radius {self.radius:g}"
                )


class OperatorSpec(BaseModel):
    """
    A named, pure self-map T of a convex set C.

    The rule acts on arrays whose last axis holds coordinates, so single
    vectors and batches of sample points share one code path.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    name: str = Field(..., description="Corpus identifier, e.g. 'example' or 'scale:0.5'")
    domain: Domain = Field(..., description="The set C")
    rule: Callable[[np.ndarray], np.ndarray] = Field(..., exclude=True)
    min_dim: int = Field(default=1, description="Coordinates the rule needs to read")
    strict: bool = Field(
        default=True,
        description="False when the rule is defined on the whole space and C only fixes where samples are drawn"
    )
    description: str = Field(default="")

    def working_dim(self, size: int) -> int:
        if self.domain.exact_dim:
            return self.domain.dim
        return max(size, self.min_dim)

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Evaluate on an array of points (last axis = coordinates) after a domain check."""
        values = np.asarray(values, dtype=float)
        if self.strict:
            self.domain.check(values)
        return self.rule(pad_to(values, self.working_dim(values.shape[-1])))

    def __call__(self, x: SeqVector) -> SeqVector:
        return SeqVector.from_array(self.apply(x.to_array()), self.domain.p)

    def power(self, values: np.ndarray, k: int) -> np.ndarray:
        for _ in range(k):
            values = self.apply(values)
        return values


# tau and the Example map

def tau_array(t: np.ndarray) -> np.ndarray:
    """Vectorized tau; raises DomainViolationError when |t| > 1."""
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(t) > 1.0 + DOMAIN_TOL):
        raise DomainViolationError("tau is defined on [-1, 1] only")
    t = np.clip(t, -1.0, 1.0)
    return np.where(
        t >= TAU_KNOT, SQRT2 * t - (SQRT2 - 1.0),
        np.where(t <= -TAU_KNOT, SQRT2 * t + (SQRT2 - 1.0), 0.0)
    )


def tau(t: float) -> float:
    """
    Piecewise-linear contraction toward zero with slope sqrt(2) on the outer branches.

    tau(t) = sqrt2*t + (sqrt2-1) on [-1, -knot], 0 on [-knot, knot],
    sqrt2*t - (sqrt2-1) on [knot, 1], knot = (sqrt2-1)/sqrt2.
    """
    return float(tau_array(t))


def _example_rule(values: np.ndarray) -> np.ndarray:
    out = np.zeros_like(values)
    out[..., 0] = tau_array(values[..., 1])
    out[..., 1] = SQRT_2_3 * values[..., 2]
    out[..., 2:-1] = values[..., 3:]
    return out


def _shift_rule(values: np.ndarray) -> np.ndarray:
    out = np.zeros_like(values)
    out[..., :-1] = values[..., 1:]
    return out


def _planar_halving_rule(values: np.ndarray) -> np.ndarray:
    return values * np.array([1.0, 0.5])


def unit_ball(p: float = 2.0, dim: int = TRUNCATION_DIM) -> Domain:
    return Domain(kind="ball", p=p, dim=dim, radius=1.0)


def example_operator(dim: int = TRUNCATION_DIM) -> OperatorSpec:
    return OperatorSpec(
        name="example",
        domain=unit_ball(2.0, dim),
        rule=_example_rule,
        min_dim=3,
        description="(x1, x2, ...) -> (tau(x2), sqrt(2/3) x3, x4, x5, ...) on the unit ball of l^2",
    )


def identity_operator(dim: int = TRUNCATION_DIM) -> OperatorSpec:
    return OperatorSpec(
        name="identity",
        domain=unit_ball(2.0, dim),
        rule=lambda values: values.copy(),
        description="x -> x",
    )


def scaling_operator(c: float, dim: int = TRUNCATION_DIM) -> OperatorSpec:
    return OperatorSpec(
        name=f"scale:{c:g}",
        domain=unit_ball(2.0, dim),
        rule=lambda values: c * values,
        strict=False,
        description=f"x -> {c:g} x on the unit ball of l^2",
    )


def planar_halving_operator() -> OperatorSpec:
    return OperatorSpec(
        name="planar-halving",
        domain=Domain(kind="space", p=2.0, dim=2, radius=SAMPLE_RADIUS, exact_dim=True),
        rule=_planar_halving_rule,
        description="(a, b) -> (a, b/2) on R^2; fixed points form the line b = 0",
    )


def shift_operator(dim: int = TRUNCATION_DIM) -> OperatorSpec:
    return OperatorSpec(
        name="shift",
        domain=unit_ball(2.0, dim),
        rule=_shift_rule,
        min_dim=2,
        description="(x1, x2, ...) -> (x2, x3, ...) restricted to the unit ball of l^2",
    )


def example_map(x: SeqVector) -> SeqVector:
    """T(x1, x2, ...) = (tau(x2), sqrt(2/3) x3, x4, x5, ...) for ||x||_2 <= 1."""
    return example_operator(max(TRUNCATION_DIM, len(x.coeffs)))(x)


def iterate_k(T: OperatorSpec, x: SeqVector, k: int) -> SeqVector:
    """k-fold composition T^k x (k = 0 returns x)."""
    if k < 0:
        raise ValueError(f"iteration count must be >= 0, got {k}")
    result = x
    for _ in range(k):
        result = T(result)
    return result


def residual(T: OperatorSpec, x: SeqVector) -> float:
    """||Tx - x||."""
    tx = T(x).to_array()
    dim = max(tx.shape[-1], len(x.coeffs))
    return float(lp_norm(pad_to(tx, dim) - x.to_array(dim), T.domain.p))


# Corpus

CORPUS: dict[str, Callable[[Optional[str], int], OperatorSpec]] = {
    "example": lambda param, dim: example_operator(dim),
    "identity": lambda param, dim: identity_operator(dim),
    "scale": lambda param, dim: scaling_operator(float(param) if param else 0.5, dim),
    "planar-halving": lambda param, dim: planar_halving_operator(),
    "shift": lambda param, dim: shift_operator(dim),
}


def resolve_operator(name: str, dim: int = TRUNCATION_DIM) -> OperatorSpec:
    """
    Look up a corpus operator by name; parameters follow a colon.

    Args:
        name: e.g. "example", "identity", "scale:0.5", "planar-halving", "shift"
        dim: Truncation dimension for the l^2 operators

    Returns:
        The OperatorSpec
    """
    key, _, param = name.strip().partition(":")
    factory = CORPUS.get(key)
    if factory is None:
        raise UnknownOperatorError(
            f"unknown operator '{name}'; available: {', '.join(sorted(CORPUS))}"
        )
    try:
        return factory(param or None, dim)
    except ValueError as e:
        raise UnknownOperatorError(f"bad parameter in operator name '{name}': {e}") from e


def list_corpus() -> list[OperatorSpec]:
    return [resolve_operator(name) for name in ("example", "identity", "scale:0.5", "planar-halving", "shift")]


# Sampling

def sample_domain(domain: Domain, rng: np.random.Generator, count: int,
                  dim: Optional[int] = None) -> np.ndarray:
    """
    Draw `count` points of C in `dim` coordinates.

    Direction is a normalized Gaussian, radius is R * U^(1/dim). This is
    uniform on the l^2 ball and a documented approximation otherwise.
    """
    if domain.kind == "opaque":
        raise UnsamplableDomainError("domain has no sampler; give a ball or a space descriptor")
    dim = domain.dim if (dim is None or domain.exact_dim) else min(dim, domain.dim)
    directions = rng.standard_normal((count, dim))
    norms = lp_norm(directions, domain.p)
    norms = np.where(norms > 0, norms, 1.0)
    radii = domain.radius * rng.random(count) ** (1.0 / dim)
    points = directions / norms[:, None] * radii[:, None]
    return pad_to(points, domain.dim)


def check_self_map(T: OperatorSpec, samples: int, seed: int) -> tuple[float, bool]:
    """
    Sampled check that T maps C into C.

    Returns:
        (largest image norm, True iff every image stayed in C)
    """
    rng = np.random.default_rng(seed)
    points = sample_domain(T.domain, rng, samples)
    images = T.apply(points)
    worst = float(lp_norm(images, T.domain.p).max())
    if T.domain.kind != "ball":
        return worst, True
    return worst, worst <= T.domain.radius + DOMAIN_TOL


# Supplementary checks for the Example

def example_bound_chain(x: SeqVector, y: SeqVector) -> tuple[float, float, float]:
    """
    The three stages of the Example's ((1/2, 1/2), 2) certificate.

    Returns:
        (1/2||Tx-Ty||^2 + 1/2||T^2x-T^2y||^2,
         1/2(2 d2^2 + 2 d3^2 + 5/3 d4^2 + 2 sum_{j>=5} dj^2),
         ||x-y||^2), with dj = x_j - y_j
    """
    T = example_operator(max(TRUNCATION_DIM, len(x.coeffs), len(y.coeffs)))
    dim = T.domain.dim
    a, b = x.to_array(dim), y.to_array(dim)
    first = T.apply(a) - T.apply(b)
    second = T.power(a, 2) - T.power(b, 2)
    lhs = 0.5 * float(first @ first) + 0.5 * float(second @ second)
    d2 = (a - b) ** 2
    middle = 0.5 * (2.0 * d2[1] + 2.0 * d2[2] + (5.0 / 3.0) * d2[3] + 2.0 * d2[4:].sum())
    return lhs, middle, float(d2.sum())


class FixedPointCandidate(BaseModel):
    point: SeqVector
    residual: float


def search_fixed_points(T: OperatorSpec, starts: list[SeqVector],
                        dim: int = 6) -> list[FixedPointCandidate]:
    """
    Minimize ||Tz - z|| from each start with scipy's least_squares.

    Points leaving a ball domain are radially projected back onto it.
    """
    domain = T.domain
    dim = domain.dim if domain.exact_dim else dim

    def project(z: np.ndarray) -> np.ndarray:
        if domain.kind != "ball":
            return z
        size = float(lp_norm(z, domain.p))
        return z if size <= domain.radius else z * (domain.radius / size)

    def gap(z: np.ndarray) -> np.ndarray:
        z = project(z)
        return T.apply(z)[:dim] - z

    candidates = []
    for start in starts:
        fit = least_squares(gap, project(start.to_array(dim)), xtol=1e-15, ftol=1e-15, gtol=1e-15)
        point = SeqVector.from_array(project(fit.x), domain.p)
        candidates.append(FixedPointCandidate(point=point, residual=residual(T, point)))
    logger.info("Fixed-point search for %s: best residual %.3e", T.name,
                min((c.residual for c in candidates), default=float("nan")))
    return candidates


def demo_corpus():
    """Print the corpus and a few Example evaluations."""
    print("=" * 70)
    print("Operator corpus")
    print("=" * 70)
    for op in list_corpus():
        print(f"  {op.name:<16} {op.domain.describe()}")
        print(f"  {'':<16} {op.description}")

    T = example_operator()
    for label, x in [("e2", SeqVector.of(0, 1)), ("e3", SeqVector.of(0, 0, 1))]:
        print(f"\n  T({label}) = {T(x).trimmed()}")
        print(f"  residual({label}) = {residual(T, x):.6f}")


if __name__ == "__main__":
    demo_corpus()
