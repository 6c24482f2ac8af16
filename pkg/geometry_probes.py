"""
Geometry Probes - numerical checks of the Banach-space hypotheses
Opial margins, duality mappings with gauge functions, weak continuity of the
duality map, the modulus of convexity and the asymptotic center
phi(y) = lim ||T^n x - y|| minimized over a candidate fixed-point set.
"""

import logging
import math
from typing import Callable, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from iteration import IterationTrace, REFERENCE_TOL, ReferencePointError
from operators import OperatorSpec, resolve_operator, residual
from sequence_space import SeqVector, basis, lp_norm, pad_to

logger = logging.getLogger(__name__)

# Configuration
TAIL_FRACTION = 0.1          # phi is the mean distance over the last 10% of the orbit
BISECTION_STEPS = 64
FEASIBILITY_TOL = 1e-12
PANEL_DIM = 40
DECAY_FACTOR = 1e-2         # tail of (J u_n)(w) against its head


class DualityMapError(ValueError):
    """Raised when no single-valued canonical duality map exists (p = 1)."""


class EmptyCandidateSetError(ValueError):
    """Raised when the asymptotic center is asked for over an empty set."""


class GaugeFunction(BaseModel):
    """Strictly increasing continuous mu: [0, inf) -> [0, inf) with mu(0) = 0."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    name: str
    rule: Callable[[float], float] = Field(..., exclude=True)
    exponent: Optional[float] = Field(None, description="r when mu(t) = t^r")

    @classmethod
    def power(cls, r: float) -> "GaugeFunction":
        if r <= 0:
            raise ValueError(f"power gauge needs r > 0, got {r}")
        return cls(name=f"t^{r:g}", rule=lambda t: t ** r, exponent=r)

    @classmethod
    def canonical(cls, p: float) -> "GaugeFunction":
        """mu(t) = t^(p-1), the gauge of the l^p duality map."""
        if p <= 1:
            raise DualityMapError("l^1 has no canonical single-valued duality map")
        return cls.power(p - 1.0)

    def __call__(self, t: float) -> float:
        return float(self.rule(t))

    def is_admissible(self, grid: Optional[np.ndarray] = None) -> bool:
        grid = np.linspace(0.0, 10.0, 1001) if grid is None else grid
        values = np.array([self(t) for t in grid])
        return self(0.0) == 0.0 and bool(np.all(np.diff(values) > 0))


def conjugate_exponent(p: float) -> float:
    return math.inf if p == 1 else p / (p - 1.0)


def pairing(f: SeqVector, x: SeqVector) -> float:
    """(f)(x) = sum_j f_j x_j for f in l^q, x in l^p."""
    dim = max(len(f.coeffs), len(x.coeffs))
    return float(f.to_array(dim) @ x.to_array(dim))


def duality_map(x: SeqVector, mu: Optional[GaugeFunction] = None) -> SeqVector:
    """
    J x in l^q, q = p/(p-1), with (Jx)(x) = ||Jx|| ||x|| = mu(||x||) ||x||.

    The canonical gauge gives (Jx)_j = |x_j|^(p-1) sgn(x_j); any other gauge
    rescales that vector by mu(||x||) / ||x||^(p-1).
    """
    p = x.p
    if p == 1:
        raise DualityMapError("p = 1: the duality map of l^1 is not single-valued")
    mu = mu or GaugeFunction.canonical(p)
    q = conjugate_exponent(p)
    values = x.to_array()
    size = float(lp_norm(values, p))
    if size == 0.0:
        return SeqVector.zero(q)
    j = np.sign(values) * np.abs(values) ** (p - 1.0)
    if mu.exponent != p - 1.0:
        j = j * (mu(size) / size ** (p - 1.0))
    return SeqVector.from_array(j, q)


class DualityIdentity(BaseModel):
    model_config = ConfigDict(frozen=True)

    pairing: float = Field(..., description="(Jx)(x)")
    norm_product: float = Field(..., description="||Jx||_q ||x||_p")
    gauge_product: float = Field(..., description="mu(||x||_p) ||x||_p")

    def holds(self, tol: float = 1e-10) -> bool:
        scale = max(1.0, abs(self.gauge_product))
        return (abs(self.pairing - self.gauge_product) <= tol * scale
                and abs(self.norm_product - self.gauge_product) <= tol * scale)


def verify_duality_identity(x: SeqVector, mu: Optional[GaugeFunction] = None) -> DualityIdentity:
    mu = mu or GaugeFunction.canonical(x.p)
    jx = duality_map(x, mu)
    size = x.norm()
    return DualityIdentity(
        pairing=pairing(jx, x),
        norm_product=jx.norm() * size,
        gauge_product=mu(size) * size,
    )


class OpialMarginResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    liminf_to_limit: float = Field(..., description="liminf ||u_n - u||")
    liminf_to_other: float = Field(..., description="liminf ||u_n - v||")
    margin: float
    weakly_convergent: bool = Field(..., description="Spot check: first coordinates of u_N - u vanish")


def opial_margin(sequence: Callable[[int], SeqVector], u: SeqVector, v: SeqVector,
                 N: int, spot_coordinates: int = 5, spot_tol: float = 1e-6) -> OpialMarginResult:
    """
    liminf ||u_n - u|| and liminf ||u_n - v||, each estimated as the minimum
    over the tail half n in [ceil(N/2), N].
    """
    if N < 2:
        raise ValueError(f"N must be >= 2, got {N}")
    tail = range(math.ceil(N / 2), N + 1)
    to_u = min((sequence(n) - u).norm() for n in tail)
    to_v = min((sequence(n) - v).norm() for n in tail)
    last = (sequence(N) - u).to_array(spot_coordinates)
    return OpialMarginResult(
        liminf_to_limit=to_u,
        liminf_to_other=to_v,
        margin=to_v - to_u,
        weakly_convergent=bool(np.all(np.abs(last) <= spot_tol)),
    )


def basis_sequence(p: float) -> Callable[[int], SeqVector]:
    """n -> e_n in l^p, a weakly null sequence for p > 1."""
    return lambda n: basis(n, p)


def default_panel(p: float) -> list[SeqVector]:
    geometric = SeqVector.from_array(0.5 ** np.arange(1, PANEL_DIM + 1), p)
    return [basis(1, p), basis(2, p), SeqVector.of(1.0, -1.0, 1.0, p=p), geometric]


class WeakContinuityResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    passed: bool
    head_values: list[float] = Field(..., description="Per panel vector: max |(J u_n)(w)| over the first tenth")
    tail_values: list[float] = Field(..., description="Per panel vector: max |(J u_n)(w)| over the last tenth")


def weak_continuity_probe(mu: Optional[GaugeFunction], p: float, N: int,
                          sequence: Optional[Callable[[int], SeqVector]] = None,
                          panel: Optional[Sequence[SeqVector]] = None,
                          tol: float = 1e-8) -> WeakContinuityResult:
    """
    Evaluate J along a weakly null sequence (e_n by default) and check that
    (J u_n)(w) -> 0 for every panel vector w.

    Decay is judged against the head of the sequence: for each w the largest
    value over the last tenth of n in [1, N] must be at most DECAY_FACTOR
    times the largest value over the first tenth, or at most tol.
    """
    if p <= 1:
        raise DualityMapError("weak continuity probe needs p > 1")
    if N < 2:
        raise ValueError(f"N must be >= 2, got {N}")
    mu = mu or GaugeFunction.canonical(p)
    sequence = sequence or basis_sequence(p)
    panel = list(panel) if panel is not None else default_panel(p)
    width = max(1, N // 10)
    head = [duality_map(sequence(n), mu) for n in range(1, width + 1)]
    tail = [duality_map(sequence(n), mu) for n in range(N - width + 1, N + 1)]
    head_values = [max(abs(pairing(image, w)) for image in head) for w in panel]
    tail_values = [max(abs(pairing(image, w)) for image in tail) for w in panel]
    passed = all(late <= max(tol, DECAY_FACTOR * early) for early, late in zip(head_values, tail_values))
    return WeakContinuityResult(passed=passed, head_values=head_values, tail_values=tail_values)


class ModulusEstimate(BaseModel):
    model_config = ConfigDict(frozen=True)

    p: float
    epsilon: float
    samples: int
    seed: int
    delta: float = Field(..., description="Sampled upper bound on the modulus of convexity")
    witness_u: SeqVector
    witness_v: SeqVector


def _unit_sphere(rng: np.random.Generator, count: int, dim: int, p: float) -> np.ndarray:
    g = rng.standard_normal((count, dim))
    return g / lp_norm(g, p)[:, None]


def _along_path(u: np.ndarray, w: np.ndarray, t: np.ndarray, p: float) -> np.ndarray:
    """Normalized point on the broken path u -> w (t in [0,1]) -> -u (t in [1,2])."""
    s = t[:, None]
    raw = np.where(s <= 1.0, (1.0 - s) * u + s * w, (2.0 - s) * w - (s - 1.0) * u)
    size = lp_norm(raw, p)
    return raw / np.where(size > 0, size, 1.0)[:, None]


def modulus_of_convexity(p: float, epsilon: float, samples: int, seed: int,
                         dim: int = 2) -> ModulusEstimate:
    """
    Sampled estimate of delta(eps) = inf{1 - ||(u+v)/2|| : ||u||, ||v|| <= 1, ||u-v|| >= eps}.

    Each sampled pair (u, w) on the unit sphere is moved by bisection along
    u -> w -> -u to a v with ||u - v|| >= eps on the constraint boundary.
    Every evaluated pair is feasible, so the estimate bounds the true modulus
    from above.
    """
    if not 0.0 < epsilon <= 2.0:
        raise ValueError(f"epsilon must lie in (0, 2], got {epsilon}")
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    u = _unit_sphere(rng, samples, dim, p)
    w = _unit_sphere(rng, samples, dim, p)

    if epsilon >= 2.0 - FEASIBILITY_TOL:
        v = -u
    else:
        lo, hi = np.zeros(samples), np.full(samples, 2.0)
        for _ in range(BISECTION_STEPS):
            mid = 0.5 * (lo + hi)
            far = lp_norm(u - _along_path(u, w, mid, p), p) >= epsilon
            hi = np.where(far, mid, hi)
            lo = np.where(far, lo, mid)
        v = _along_path(u, w, hi, p)
        feasible = lp_norm(u - v, p) >= epsilon - FEASIBILITY_TOL
        u, v = u[feasible], v[feasible]

    deficits = 1.0 - lp_norm(0.5 * (u + v), p)
    best = int(np.argmin(deficits))
    return ModulusEstimate(
        p=p,
        epsilon=epsilon,
        samples=samples,
        seed=seed,
        delta=max(0.0, float(deficits[best])),
        witness_u=SeqVector.from_array(u[best], p),
        witness_v=SeqVector.from_array(v[best], p),
    )


def modulus_curve(p: float, epsilons: Sequence[float], samples: int, seed: int) -> list[tuple[float, float]]:
    return [(eps, modulus_of_convexity(p, eps, samples, seed).delta) for eps in epsilons]


class SequentialConvexityResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    midpoint_gap: float = Field(..., description="|R - 1/2 ||u_N + v_N|||")
    difference: float = Field(..., description="||u_N - v_N||")
    premise: bool
    conclusion: bool

    @property
    def implication_holds(self) -> bool:
        return self.conclusion or not self.premise


def sequential_convexity_probe(u_seq: Callable[[int], SeqVector], v_seq: Callable[[int], SeqVector],
                               R: float, N: int, tol: float = 1e-6) -> SequentialConvexityResult:
    """
    Sequential uniform convexity at step N: if ||u_n||, ||v_n|| <= R and
    1/2 ||u_n + v_n|| -> R then ||u_n - v_n|| -> 0.

    The conclusion is accepted when ||u_N - v_N|| <= 4 max(R, 1) sqrt(tol),
    the l^2 rate implied by a midpoint gap of tol.
    """
    u, v = u_seq(N), v_seq(N)
    gap = abs(R - 0.5 * (u + v).norm())
    difference = (u - v).norm()
    bounded = u.norm() <= R + FEASIBILITY_TOL and v.norm() <= R + FEASIBILITY_TOL
    return SequentialConvexityResult(
        midpoint_gap=gap,
        difference=difference,
        premise=bounded and gap <= tol,
        conclusion=difference <= 4.0 * max(R, 1.0) * math.sqrt(tol),
    )


class AsymptoticCenterResult(BaseModel):
    """phi on a candidate set of fixed points and its minimizer."""

    model_config = ConfigDict(frozen=True)

    r0: float = Field(..., description="min phi over the candidates")
    y0: SeqVector
    index: int = Field(..., description="Position of y0 in the candidate list")
    candidates: list[SeqVector]
    values: list[float] = Field(..., description="phi(y) per candidate")
    search_set: str
    tail_start: int
    nested: bool = Field(..., description="F_r subset of F_r' checked for r <= r' on sampled levels")

    def level_set(self, r: float) -> list[int]:
        """Candidate indices in F_r = {y : phi(y) <= r}."""
        return [i for i, value in enumerate(self.values) if value <= r]

    def level_set_diameter(self, slack: float = 1e-9) -> float:
        members = [self.candidates[i] for i in self.level_set(self.r0 + slack)]
        return max(((a - b).norm() for a in members for b in members), default=0.0)


def level_sets(values: Sequence[float], levels: Sequence[float]) -> tuple[list[set[int]], bool]:
    """F_r for each level (restricted to the candidates) and whether they nest."""
    sets = [{i for i, value in enumerate(values) if value <= r} for r in levels]
    order = sorted(range(len(levels)), key=lambda i: levels[i])
    nested = all(sets[a] <= sets[b] for a, b in zip(order, order[1:]))
    return sets, nested


def asymptotic_center(trace: IterationTrace, fixed_set: Sequence[SeqVector],
                      operator: Optional[OperatorSpec] = None,
                      search_set: str = "candidate list") -> AsymptoticCenterResult:
    """
    Minimize phi(y) = lim ||T^n x - y|| over the candidates.

    phi is the mean distance over the last 10% of the orbit. Every candidate
    must be a fixed point of T (residual <= 1e-10). Ties go to the smallest
    candidate index.
    """
    if not fixed_set:
        raise EmptyCandidateSetError("asymptotic center needs at least one candidate")
    T = operator or resolve_operator(trace.operator)
    for i, y in enumerate(fixed_set):
        gap = residual(T, y)
        if gap > REFERENCE_TOL:
            raise ReferencePointError(f"candidate {i} has residual {gap:.3e}; it is not a fixed point")

    matrix = trace.iterate_matrix()
    tail_start = min(len(matrix) - 1, int(len(matrix) * (1.0 - TAIL_FRACTION)))
    dim = max(matrix.shape[1], max(len(y.coeffs) for y in fixed_set))
    tail = pad_to(matrix[tail_start:], dim)
    points = np.array([y.to_array(dim) for y in fixed_set])
    values = lp_norm(tail[None, :, :] - points[:, None, :], trace.p).mean(axis=1)

    best = int(np.argmin(values))
    r0 = float(values[best])
    _, nested = level_sets(values, [r0, float(np.median(values)), float(values.max())])
    logger.info("Asymptotic center over %d candidates: r0 = %.3e at index %d", len(fixed_set), r0, best)

    return AsymptoticCenterResult(
        r0=r0,
        y0=fixed_set[best],
        index=best,
        candidates=list(fixed_set),
        values=[float(v) for v in values],
        search_set=search_set,
        tail_start=tail_start,
        nested=nested,
    )


def line_grid(grid: str, p: float = 2.0) -> list[SeqVector]:
    """Candidates (c, 0) for c on a grid given as 'lo:hi:step'."""
    lo, hi, step = (float(part) for part in grid.split(":"))
    if step <= 0 or hi < lo:
        raise ValueError(f"bad grid '{grid}': expected lo:hi:step with step > 0")
    count = int(round((hi - lo) / step)) + 1
    return [SeqVector.of(c, 0.0, p=p) for c in np.linspace(lo, hi, count)]


def fixed_set_convexity_check(T: OperatorSpec, fixed_points: Sequence[SeqVector],
                              samples: int, seed: int, tol: float = 1e-10) -> tuple[float, bool]:
    """
    Spot-check that F(T) is convex: random convex combinations of the given
    fixed points must again be fixed.

    Returns:
        (largest residual seen, True iff all residuals <= tol)
    """
    if not fixed_points:
        raise EmptyCandidateSetError("need at least one fixed point")
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    dim = max(len(y.coeffs) for y in fixed_points)
    points = np.array([y.to_array(dim) for y in fixed_points])
    weights = rng.dirichlet(np.ones(len(fixed_points)), size=samples)
    worst = 0.0
    for combination in weights @ points:
        worst = max(worst, residual(T, SeqVector.from_array(combination, T.domain.p)))
    return worst, worst <= tol
