"""
Certification - sampled verification of the defining inequalities
(alpha, p)-nonexpansiveness, Lipschitz lower bounds for the iterates T^j and
asymptotic-regularity profiles.

Sampling is reproducible per pair index: pairs come in fixed blocks and
block b draws from SeedSequence([seed, b]), so any split of the blocks over
workers yields the same report.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

import numpy as np
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, model_validator

from operators import Domain, OperatorSpec, iterate_k, sample_domain
from sequence_space import SeqVector, basis, distance, lp_norm, pad_to

load_dotenv()

logger = logging.getLogger(__name__)

# Configuration
MARGIN_TOL = float(os.getenv("MEANNE_MARGIN_TOL", "1e-10"))
BLOCK_SIZE = 4096
LOW_DIM = 4  # odd blocks sample inside the first LOW_DIM coordinates
DEGENERATE_GAP = 1e-9
WEIGHT_SUM_TOL = 1e-12


class MultiIndex(BaseModel):
    """Weights alpha = (alpha_1, ..., alpha_n0) and the exponent p of the mean inequality."""

    model_config = ConfigDict(frozen=True)

    weights: tuple[float, ...] = Field(..., min_length=1, description="alpha_1, ..., alpha_n0")
    p: float = Field(default=1.0, ge=1.0, description="Exponent applied to every norm")

    @model_validator(mode="after")
    def _admissible(self) -> "MultiIndex":
        w = self.weights
        if any(a < 0 for a in w):
            raise ValueError("weights must be nonnegative")
        if not (w[0] > 0 and w[-1] > 0):
            raise ValueError("alpha_1 and alpha_n0 must be positive")
        if abs(sum(w) - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights must sum to 1, got {sum(w)!r}")
        return self

    @classmethod
    def parse(cls, text: str, p: float = 1.0) -> "MultiIndex":
        return cls(weights=tuple(float(a) for a in text.split(",")), p=p)

    @property
    def n0(self) -> int:
        return len(self.weights)

    def relaxed(self) -> "MultiIndex":
        """The same weights with p = 1 (plain mean nonexpansiveness)."""
        return MultiIndex(weights=self.weights, p=1.0)

    def label(self) -> str:
        return ",".join(f"{a:g}" for a in self.weights)


class CertificationReport(BaseModel):
    """Outcome of a sampled (alpha, p) certification run."""

    model_config = ConfigDict(frozen=True)

    operator: str
    domain: str
    multi_index: MultiIndex
    samples: int = Field(..., description="Random pairs drawn (witness pool excluded)")
    witness_pool: int = Field(..., description="Deterministic witness pairs evaluated first")
    seed: int
    tolerance: float
    min_margin: float = Field(
        ...,
        description="min over pairs of sum_j alpha_j (||x-y||^p - ||T^j x - T^j y||^p)"
    )
    witness_index: int
    witness_x: SeqVector
    witness_y: SeqVector
    witness_margin: float = Field(..., description="Margin re-evaluated at the witness vector by vector")
    lipschitz_lower_bounds: list[float] = Field(
        ...,
        description="max sampled ||T^j x - T^j y|| / ||x - y|| for j = 1..n0"
    )
    violation: bool

    def summary_row(self) -> dict:
        return {
            "operator": self.operator,
            "alpha": self.multi_index.label(),
            "p": self.multi_index.p,
            "samples": self.samples,
            "seed": self.seed,
            "min_margin": self.min_margin,
            "violation": self.violation,
        }


class LipschitzEstimate(BaseModel):
    model_config = ConfigDict(frozen=True)

    operator: str
    power: int
    lower_bound: float
    witness_x: SeqVector
    witness_y: SeqVector


def default_witnesses(domain: Domain) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairs (e_j, 0), (e_j, e_j/2), (e_j, -e_j) for j <= 4, scaled into C."""
    size = domain.radius if domain.kind == "ball" else 1.0
    pairs = []
    for j in range(1, min(LOW_DIM, domain.dim) + 1):
        e = size * basis(j, domain.p).to_array(domain.dim)
        for other in (np.zeros(domain.dim), 0.5 * e, -e):
            pairs.append((e, other))
    return pairs


def _pair_block(domain: Domain, seed: int, block: int, count: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, block]))
    dim = domain.dim if block % 2 == 0 else LOW_DIM
    xs = sample_domain(domain, rng, count, dim)
    ys = sample_domain(domain, rng, count, dim)
    return xs, ys


def _pair_blocks(domain: Domain, samples: int, seed: int,
                 witnesses: list[tuple[np.ndarray, np.ndarray]]):
    """Yield (first pair index, xs, ys): the witness pool, then the random blocks."""
    if witnesses:
        xs = np.array([pad_to(x, domain.dim) for x, _ in witnesses])
        ys = np.array([pad_to(y, domain.dim) for _, y in witnesses])
        yield 0, xs, ys
    offset = len(witnesses)
    for block, start in enumerate(range(0, samples, BLOCK_SIZE)):
        count = min(BLOCK_SIZE, samples - start)
        xs, ys = _pair_block(domain, seed, block, count)
        yield offset + start, xs, ys


def _block_statistics(T: OperatorSpec, alpha: MultiIndex, start: int,
                      xs: np.ndarray, ys: np.ndarray) -> dict:
    p = T.domain.p
    gap = lp_norm(xs - ys, p)
    base = gap ** alpha.p
    margins = np.zeros_like(gap)
    ratios = []
    fx, fy = xs, ys
    for weight in alpha.weights:
        fx, fy = T.apply(fx), T.apply(fy)
        image_gap = lp_norm(fx - fy, p)
        margins = margins + weight * (base - image_gap ** alpha.p)
        usable = gap >= DEGENERATE_GAP
        ratios.append(float((image_gap[usable] / gap[usable]).max()) if usable.any() else 0.0)
    worst = int(np.argmin(margins))
    return {
        "margin": float(margins[worst]),
        "index": start + worst,
        "x": xs[worst],
        "y": ys[worst],
        "ratios": ratios,
    }


def margin_at(T: OperatorSpec, alpha: MultiIndex, x: SeqVector, y: SeqVector) -> float:
    """
    sum_j alpha_j (||x-y||^p - ||T^j x - T^j y||^p) evaluated vector by vector.

    Equal to ||x-y||^p - sum_j alpha_j ||T^j x - T^j y||^p since the weights sum
    to 1; iterates at the same distance as (x, y) contribute exactly zero.
    """
    base = distance(x, y) ** alpha.p
    margin = 0.0
    tx, ty = x, y
    for weight in alpha.weights:
        tx, ty = T(tx), T(ty)
        margin += weight * (base - distance(tx, ty) ** alpha.p)
    return margin


def certify_mean_nonexpansive(T: OperatorSpec, alpha: MultiIndex, samples: int, seed: int,
                              tol: float = MARGIN_TOL, workers: int = 1,
                              witnesses: Optional[list[tuple[np.ndarray, np.ndarray]]] = None
                              ) -> CertificationReport:
    """
    Sampled falsification of sum_j alpha_j ||T^j x - T^j y||^p <= ||x - y||^p.

    Args:
        T: Operator with a samplable domain
        alpha: Multi-index and exponent
        samples: Number of random pairs (>= 1)
        seed: Base seed
        tol: A violation needs min margin < -tol, reproduced at the witness
        workers: Threads evaluating blocks concurrently
        witnesses: Extra deterministic pairs; defaults to the basis pool

    Returns:
        CertificationReport
    """
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    pool = default_witnesses(T.domain) if witnesses is None else witnesses
    logger.info("Certifying %s with alpha=(%s), p=%g on %d pairs (+%d witnesses)",
                T.name, alpha.label(), alpha.p, samples, len(pool))

    blocks = _pair_blocks(T.domain, samples, seed, pool)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            stats = list(executor.map(lambda b: _block_statistics(T, alpha, *b), blocks))
    else:
        stats = [_block_statistics(T, alpha, *b) for b in blocks]

    best = min(stats, key=lambda s: (s["margin"], s["index"]))
    ratios = [max(s["ratios"][j] for s in stats) for j in range(alpha.n0)]
    witness_x = SeqVector.from_array(best["x"], T.domain.p)
    witness_y = SeqVector.from_array(best["y"], T.domain.p)
    recomputed = margin_at(T, alpha, witness_x, witness_y)
    violation = best["margin"] < -tol and recomputed < -tol

    if violation:
        logger.warning("Violation for %s: margin %.6e at pair %d", T.name, best["margin"], best["index"])
    else:
        logger.info("✓ %s passed: min margin %.3e", T.name, best["margin"])

    return CertificationReport(
        operator=T.name,
        domain=T.domain.describe(),
        multi_index=alpha,
        samples=samples,
        witness_pool=len(pool),
        seed=seed,
        tolerance=tol,
        min_margin=best["margin"],
        witness_index=best["index"],
        witness_x=witness_x,
        witness_y=witness_y,
        witness_margin=recomputed,
        lipschitz_lower_bounds=ratios,
        violation=violation,
    )


def estimate_lipschitz(T: OperatorSpec, j: int, samples: int, seed: int,
                       witnesses: Optional[list[tuple[np.ndarray, np.ndarray]]] = None
                       ) -> LipschitzEstimate:
    """Sampled lower bound on k(T^j): max ||T^j x - T^j y|| / ||x - y|| over non-degenerate pairs."""
    if j < 1:
        raise ValueError(f"power must be >= 1, got {j}")
    pool = default_witnesses(T.domain) if witnesses is None else witnesses
    p = T.domain.p
    best_ratio, best_pair = 0.0, None
    for _, xs, ys in _pair_blocks(T.domain, samples, seed, pool):
        gap = lp_norm(xs - ys, p)
        image_gap = lp_norm(T.power(xs, j) - T.power(ys, j), p)
        usable = np.flatnonzero(gap >= DEGENERATE_GAP)
        if usable.size == 0:
            continue
        ratios = image_gap[usable] / gap[usable]
        top = int(np.argmax(ratios))
        if best_pair is None or ratios[top] > best_ratio:
            best_ratio = float(ratios[top])
            best_pair = (xs[usable[top]], ys[usable[top]])
    if best_pair is None:
        zero = SeqVector.zero(p)
        return LipschitzEstimate(operator=T.name, power=j, lower_bound=0.0, witness_x=zero, witness_y=zero)
    return LipschitzEstimate(
        operator=T.name,
        power=j,
        lower_bound=best_ratio,
        witness_x=SeqVector.from_array(best_pair[0], p),
        witness_y=SeqVector.from_array(best_pair[1], p),
    )


def lipschitz_ratio(T: OperatorSpec, j: int, x: SeqVector, y: SeqVector) -> float:
    """||T^j x - T^j y|| / ||x - y|| for one pair."""
    return distance(iterate_k(T, x, j), iterate_k(T, y, j)) / distance(x, y)


def asymptotic_regularity_profile(T: OperatorSpec, x: SeqVector, N: int) -> list[float]:
    """r_n = ||T^n x - T^(n+1) x|| for n = 0..N-1."""
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    current = x.to_array(T.working_dim(len(x.coeffs)))
    profile = []
    for _ in range(N):
        following = T.apply(current)
        profile.append(float(lp_norm(following - pad_to(current, following.shape[-1]), T.domain.p)))
        current = following
    return profile


def power_implication_check(T: OperatorSpec, alpha: MultiIndex, samples: int,
                            seed: int) -> tuple[CertificationReport, CertificationReport]:
    """
    Certify (alpha, p) and (alpha, 1) on the same pairs.

    Evidence for "(alpha, p)-nonexpansive implies mean nonexpansive", not a proof.
    """
    return (
        certify_mean_nonexpansive(T, alpha, samples, seed),
        certify_mean_nonexpansive(T, alpha.relaxed(), samples, seed),
    )
