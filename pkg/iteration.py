"""
Iteration - Picard orbits and their convergence diagnostics
Runs x, Tx, T^2x, ... and extracts the monotone subsequence (k_n), the limit
q of ||T^n x - y||, estimated weak cluster points and the demiclosedness check.
"""

import logging
import os
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, model_validator

from operators import OperatorSpec, residual
from sequence_space import CoordinateFunctional, SeqVector, coordinate_metric, lp_norm, pad_to

load_dotenv()

logger = logging.getLogger(__name__)

# Configuration
DEFAULT_ITERATIONS = int(os.getenv("MEANNE_ITERATIONS", "200"))
DEFAULT_TOL = float(os.getenv("MEANNE_TOL", "1e-8"))
REFERENCE_TOL = 1e-10
CONTRACTION = 0.5
MAX_PERIOD = 8
MIN_CLASS_SIZE = 3


class ReferencePointError(ValueError):
    """Raised when the reference point y is not an approximate fixed point."""


class ExtractionError(ValueError):
    """Raised when a window of the distance sequence has no admissible index."""

    def __init__(self, message: str, window: tuple[int, int]):
        super().__init__(message)
        self.window = window


class IterationTrace(BaseModel):
    """Record of the orbit (T^n x)_{n=0..N}."""

    model_config = ConfigDict(frozen=True)

    operator: str
    p: float = Field(..., description="Exponent of the ambient norm")
    start: SeqVector
    steps: int = Field(..., ge=0, description="N, the number of applications of T")
    iterates: list[SeqVector] = Field(..., description="T^0 x, ..., T^N x")
    residuals: list[float] = Field(..., description="r_n = ||T^n x - T^(n+1) x||, n = 0..N-1")
    reference: Optional[SeqVector] = None
    distances: Optional[list[float]] = Field(None, description="d_n = ||T^n x - y||, n = 0..N")
    functionals: list[int] = Field(default_factory=list, description="Coordinate indices evaluated")
    functional_values: list[list[float]] = Field(default_factory=list)

    @model_validator(mode="after")
    def _lengths_consistent(self) -> "IterationTrace":
        if len(self.iterates) != self.steps + 1 or len(self.residuals) != self.steps:
            raise ValueError("iterates must have N+1 entries and residuals N")
        if (self.reference is None) != (self.distances is None):
            raise ValueError("distances are recorded exactly when a reference point is given")
        if self.distances is not None and len(self.distances) != self.steps + 1:
            raise ValueError("distances must have N+1 entries")
        if self.functionals and len(self.functional_values) != self.steps + 1:
            raise ValueError("functional values must have N+1 rows")
        return self

    def iterate_matrix(self) -> np.ndarray:
        dim = max(1, max(len(v.coeffs) for v in self.iterates))
        return np.array([v.to_array(dim) for v in self.iterates])

    def recompute_distances(self, y: Optional[SeqVector] = None) -> np.ndarray:
        """||T^n x - y|| from the stored iterates."""
        y = y if y is not None else self.reference
        if y is None:
            raise ValueError("no reference point")
        matrix = self.iterate_matrix()
        dim = max(matrix.shape[1], len(y.coeffs))
        return lp_norm(pad_to(matrix, dim) - y.to_array(dim), self.p)

    def to_frame(self) -> pd.DataFrame:
        """Columns n, residual, distance, f<i>; residual is empty on the last row."""
        frame = pd.DataFrame({
            "n": np.arange(self.steps + 1),
            "residual": list(self.residuals) + [np.nan],
        })
        if self.distances is not None:
            frame["distance"] = self.distances
        for column, index in enumerate(self.functionals):
            frame[f"f{index}"] = [row[column] for row in self.functional_values]
        return frame


class WeakClusterEstimate(BaseModel):
    """Approximation of omega_w(x) from the tail of an orbit."""

    model_config = ConfigDict(frozen=True)

    points: list[SeqVector]
    index_sets: list[list[int]]
    spreads: list[float] = Field(
        ...,
        description="Per cluster: max coordinate-metric distance from the last half of its members to the point"
    )
    radii: list[float] = Field(
        default_factory=list,
        description="Per cluster: max norm distance from the last half of its members to the point"
    )
    period: Optional[int] = Field(
        default=None,
        description="Period of the residue classes that settled; None when leader clustering was used"
    )
    tolerance: float
    tail_start: int

    @property
    def is_singleton(self) -> bool:
        return len(self.points) == 1


class DistanceLimit(BaseModel):
    model_config = ConfigDict(frozen=True)

    q: float
    converged: bool
    indices: list[int] = Field(..., description="The monotone subsequence (k_n)")
    tail_start: int
    max_tail_deviation: float


def _distance(v: np.ndarray, y: SeqVector, p: float) -> float:
    dim = max(v.shape[-1], len(y.coeffs))
    return float(lp_norm(pad_to(v, dim) - y.to_array(dim), p))


def run_iteration(T: OperatorSpec, x: SeqVector, N: int = DEFAULT_ITERATIONS,
                  y: Optional[SeqVector] = None,
                  functionals: Sequence[CoordinateFunctional] = ()) -> IterationTrace:
    """
    Picard iteration with the diagnostics recorded along the way.

    Args:
        T: The operator
        x: Start point in C
        N: Number of steps
        y: Optional reference point; must satisfy residual(T, y) <= 1e-10
        functionals: Coordinate functionals evaluated on every iterate

    Returns:
        IterationTrace
    """
    if N < 0:
        raise ValueError(f"N must be >= 0, got {N}")
    if y is not None:
        gap = residual(T, y)
        if gap > REFERENCE_TOL:
            raise ReferencePointError(
                f"reference point has residual {gap:.3e} > {REFERENCE_TOL:g}; "
                "the distance-limit argument needs y to be a fixed point of T"
            )

    current = x.to_array(T.working_dim(len(x.coeffs)))
    orbit = [current]
    residuals = []
    for _ in range(N):
        following = T.apply(current)
        residuals.append(float(lp_norm(following - pad_to(current, following.shape[-1]), T.domain.p)))
        orbit.append(following)
        current = following

    iterates = [SeqVector.from_array(v, T.domain.p) for v in orbit]
    distances = None
    if y is not None:
        distances = [_distance(v, y, T.domain.p) for v in orbit]
    logger.info("Ran %d steps of %s; final residual %.3e", N, T.name, residuals[-1] if residuals else 0.0)

    return IterationTrace(
        operator=T.name,
        p=T.domain.p,
        start=x,
        steps=N,
        iterates=iterates,
        residuals=residuals,
        reference=y,
        distances=distances,
        functionals=[f.index for f in functionals],
        functional_values=[[f(v) for f in functionals] for v in iterates] if functionals else [],
    )


def extract_monotone_subsequence(d: Sequence[float], n0: int) -> list[int]:
    """
    Build (k_n): k_0 = 0 and k_(n+1) the smallest index in k_n+1..k_n+n0 with
    d[k_(n+1)] <= d[k_n].

    Extraction stops once a window runs past the end of `d` without an
    admissible index. A complete window with no admissible index raises
    ExtractionError: y is then not a fixed point or T is not alpha-nonexpansive.
    """
    if n0 < 2:
        raise ValueError(f"n0 must be >= 2, got {n0}")
    if any(v < 0 for v in d):
        raise ValueError("distances must be nonnegative")
    if len(d) == 0:
        return []

    k = [0]
    while True:
        current = k[-1]
        window = range(current + 1, current + n0 + 1)
        chosen = next((m for m in window if m < len(d) and d[m] <= d[current]), None)
        if chosen is not None:
            k.append(chosen)
            continue
        if window[-1] < len(d):
            raise ExtractionError(
                f"no index in window [{window[0]}, {window[-1]}] has distance <= {d[current]!r}; "
                "the reference is not a fixed point or T is not mean nonexpansive for this n0",
                (window[0], window[-1]),
            )
        return k


def reconstruct_filling(k: Sequence[int], n0: int) -> list[tuple[int, int, int]]:
    """
    Write every skipped index m < k_last as m = k_j + i with 1 <= i <= n0 - 1.

    Returns:
        (m, j, i) triples
    """
    selected = set(k)
    triples = []
    j = 0
    for m in range(k[-1] if k else 0):
        while j + 1 < len(k) and k[j + 1] <= m:
            j += 1
        if m in selected:
            continue
        i = m - k[j]
        if not 1 <= i <= n0 - 1:
            raise ExtractionError(f"index {m} is {i} steps past k_{j} = {k[j]}", (k[j], m))
        triples.append((m, j, i))
    return triples


def distance_limit(trace: IterationTrace, n0: int = 2, tol: float = DEFAULT_TOL) -> DistanceLimit:
    """
    Estimate q = lim ||T^n x - y|| along (k_n) and test convergence of the whole sequence.

    q is the last extracted distance; converged iff every d_n in the last
    quarter of the trace is within tol of q.
    """
    if trace.distances is None:
        raise ValueError("trace has no reference point")
    d = trace.distances
    k = extract_monotone_subsequence(d, n0)
    q = d[k[-1]]
    tail_start = (3 * len(d)) // 4
    deviation = max(abs(v - q) for v in d[tail_start:])
    return DistanceLimit(
        q=q,
        converged=deviation <= tol,
        indices=k,
        tail_start=tail_start,
        max_tail_deviation=deviation,
    )


def epsilon_sandwich_check(trace: IterationTrace, k: Sequence[int], q: float,
                           n0: int, slack: float = 1e-12) -> list[int]:
    """
    Check |d_m - q| <= r_(k_j) + ... + r_(k_j + i - 1) + |d_(k_j) - q| for every skipped m.

    Returns:
        Skipped indices where the chain inequality fails (empty when it holds)
    """
    d, r = trace.distances, trace.residuals
    failures = []
    for m, j, i in reconstruct_filling(k, n0):
        bound = sum(r[k[j] + t] for t in range(i)) + abs(d[k[j]] - q)
        if abs(d[m] - q) > bound + slack * (1.0 + abs(q)):
            failures.append(m)
    return failures


def _settles(matrix: np.ndarray, members: Sequence[int], tol: float) -> bool:
    """Late members stay within CONTRACTION of the early members' distance to the last one (or within tol)."""
    last = matrix[members[-1]]
    gaps = [coordinate_metric(matrix[n], last) for n in members]
    half = len(gaps) // 2
    early = max(gaps[:half], default=0.0)
    return max(gaps[half:]) <= max(tol, CONTRACTION * early)


def _settled_classes(matrix: np.ndarray, tail: list[int], tol: float) -> Optional[tuple[int, list[list[int]]]]:
    """Smallest period whose residue classes all settle, with the classes."""
    for period in range(1, min(MAX_PERIOD, len(tail) // MIN_CLASS_SIZE) + 1):
        classes = [tail[r::period] for r in range(period)]
        if all(_settles(matrix, group, tol) for group in classes):
            return period, classes
    return None


def _leader_classes(matrix: np.ndarray, tail: list[int], tol: float) -> list[list[int]]:
    members: list[list[int]] = []
    for n in tail:
        for group in members:
            if coordinate_metric(matrix[n], matrix[group[-1]]) <= tol:
                group.append(n)
                break
        else:
            members.append([n])
    return members


def estimate_weak_clusters(trace: IterationTrace, tol: float = DEFAULT_TOL) -> WeakClusterEstimate:
    """
    Estimate the weak cluster points from the last quarter of the orbit under
    sum_i 2^-i min(1, |x_i - y_i|).

    The tail is split into residue classes mod the smallest period P <= 8
    for which every class settles: the later half of a class stays within
    half the earlier half's distance to its last member, or within tol. A
    convergent orbit settles with P = 1 however slowly it moves. When no
    period settles, tail iterates are grouped by leader clustering with
    threshold tol. The last member represents each cluster.
    """
    matrix = trace.iterate_matrix()
    tail_start = (3 * len(matrix)) // 4
    tail = list(range(tail_start, len(matrix)))
    settled = _settled_classes(matrix, tail, tol)
    if settled is not None:
        period, members = settled
    else:
        period, members = None, _leader_classes(matrix, tail, tol)
        logger.warning("Orbit of %s does not settle in its tail; leader clustering gave %d clusters",
                       trace.operator, len(members))

    points, spreads, radii = [], [], []
    for group in members:
        representative = matrix[group[-1]]
        late = matrix[group[len(group) // 2:]]
        spreads.append(max(coordinate_metric(row, representative) for row in late))
        radii.append(float(lp_norm(late - representative, trace.p).max()))
        points.append(SeqVector.from_array(representative, trace.p))
    if len(members) > 1:
        logger.info("Orbit of %s has %d tail clusters", trace.operator, len(members))

    return WeakClusterEstimate(
        points=points,
        index_sets=members,
        spreads=spreads,
        radii=radii,
        period=period,
        tolerance=tol,
        tail_start=tail_start,
    )


def check_demiclosedness_conclusion(T: OperatorSpec, clusters: WeakClusterEstimate,
                                    tol: float = DEFAULT_TOL) -> bool:
    """
    True iff every estimated cluster point z is fixed up to the cluster's
    resolution: residual(T, z) <= tol + radius of its cluster.
    """
    radii = clusters.radii or [0.0] * len(clusters.points)
    return all(residual(T, z) <= tol + radius for z, radius in zip(clusters.points, radii))


def opial_separation(trace: IterationTrace, clusters: WeakClusterEstimate) -> list[dict]:
    """
    For each ordered pair of clusters (a, b), the average over a's members of
    ||u_n - z_b|| - ||u_n - z_a||.

    Two clusters with positive separations both ways, together with existing
    distance limits, are the contradiction that forces a single cluster.
    """
    matrix = trace.iterate_matrix()
    records = []
    for a, group in enumerate(clusters.index_sets):
        for b, other in enumerate(clusters.points):
            if a == b:
                continue
            own = clusters.points[a].to_array(matrix.shape[1])
            foreign = other.to_array(matrix.shape[1])
            rows = matrix[group]
            gap = lp_norm(rows - foreign, trace.p) - lp_norm(rows - own, trace.p)
            records.append({"from": a, "to": b, "separation": float(gap.mean())})
    return records
