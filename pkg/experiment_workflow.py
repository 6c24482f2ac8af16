"""
Experiment Workflow - the iterate experiment as a LangGraph state graph
validate -> iterate -> distance_limit -> weak_clusters -> demiclosedness,
with a reject branch when the reference point is not a fixed point.
"""

import logging
from typing import Literal, Optional, TypedDict

from langgraph.graph import END, StateGraph

from iteration import (
    DEFAULT_TOL,
    DistanceLimit,
    ExtractionError,
    IterationTrace,
    REFERENCE_TOL,
    WeakClusterEstimate,
    check_demiclosedness_conclusion,
    distance_limit,
    estimate_weak_clusters,
    run_iteration,
)
from operators import OperatorSpec, residual
from sequence_space import CoordinateFunctional, SeqVector

logger = logging.getLogger(__name__)


class IterationState(TypedDict, total=False):
    """State that flows through the workflow."""
    # Input
    operator: OperatorSpec
    start: SeqVector
    steps: int
    reference: Optional[SeqVector]
    n0: int
    tol: float
    functionals: list[CoordinateFunctional]

    # Results
    trace: IterationTrace
    limit: Optional[DistanceLimit]
    clusters: WeakClusterEstimate
    demiclosed: bool

    # Outcome
    status: Literal["completed", "rejected", "violation"]
    error: str
    node_executed: str


class IterationWorkflow:
    """Runs one Picard orbit through every diagnostic."""

    def __init__(self):
        self.graph = self._build_graph()

    def _build_graph(self):
        workflow = StateGraph(IterationState)

        workflow.add_node("validate", self._validate_node)
        workflow.add_node("iterate", self._iterate_node)
        workflow.add_node("distance_limit", self._distance_limit_node)
        workflow.add_node("weak_clusters", self._weak_clusters_node)
        workflow.add_node("demiclosedness", self._demiclosedness_node)
        workflow.add_node("reject", self._reject_node)

        workflow.set_entry_point("validate")
        workflow.add_conditional_edges(
            "validate",
            self._route_reference,
            {
                "iterate": "iterate",
                "reject": "reject"
            }
        )
        workflow.add_edge("iterate", "distance_limit")
        workflow.add_edge("distance_limit", "weak_clusters")
        workflow.add_edge("weak_clusters", "demiclosedness")
        workflow.add_edge("demiclosedness", END)
        workflow.add_edge("reject", END)

        return workflow.compile()

    def _validate_node(self, state: IterationState) -> IterationState:
        reference = state.get("reference")
        if reference is None:
            return {"node_executed": "validate"}
        gap = residual(state["operator"], reference)
        if gap > REFERENCE_TOL:
            logger.warning("Reference point rejected: residual %.3e", gap)
            return {
                "node_executed": "validate",
                "error": (f"reference point has residual {gap:.3e} > {REFERENCE_TOL:g}; "
                          "the distance limit needs y to be a fixed point of T"),
            }
        return {"node_executed": "validate"}

    def _route_reference(self, state: IterationState) -> Literal["iterate", "reject"]:
        return "reject" if state.get("error") else "iterate"

    def _iterate_node(self, state: IterationState) -> IterationState:
        logger.info("ITERATE NODE: %d steps of %s", state["steps"], state["operator"].name)
        trace = run_iteration(
            state["operator"],
            state["start"],
            state["steps"],
            state.get("reference"),
            state.get("functionals", []),
        )
        return {"trace": trace, "node_executed": "iterate"}

    def _distance_limit_node(self, state: IterationState) -> IterationState:
        trace = state["trace"]
        if trace.distances is None:
            return {"limit": None, "node_executed": "distance_limit"}
        try:
            limit = distance_limit(trace, state.get("n0", 2), state.get("tol", DEFAULT_TOL))
        except ExtractionError as e:
            logger.warning("Monotone extraction failed in window %s", e.window)
            return {"limit": None, "status": "violation", "error": str(e), "node_executed": "distance_limit"}
        logger.info("DISTANCE LIMIT NODE: q = %.6g, converged = %s", limit.q, limit.converged)
        return {"limit": limit, "node_executed": "distance_limit"}

    def _weak_clusters_node(self, state: IterationState) -> IterationState:
        clusters = estimate_weak_clusters(state["trace"], state.get("tol", DEFAULT_TOL))
        logger.info("WEAK CLUSTERS NODE: %d cluster(s)", len(clusters.points))
        return {"clusters": clusters, "node_executed": "weak_clusters"}

    def _demiclosedness_node(self, state: IterationState) -> IterationState:
        demiclosed = check_demiclosedness_conclusion(
            state["operator"], state["clusters"], state.get("tol", DEFAULT_TOL)
        )
        return {
            "demiclosed": demiclosed,
            "status": state.get("status", "completed"),
            "node_executed": "demiclosedness",
        }

    def _reject_node(self, state: IterationState) -> IterationState:
        return {"status": "rejected", "node_executed": "reject"}

    def process(self, operator: OperatorSpec, start: SeqVector, steps: int,
                reference: Optional[SeqVector] = None, n0: int = 2,
                tol: float = DEFAULT_TOL,
                functionals: Optional[list[CoordinateFunctional]] = None) -> IterationState:
        """
        Run the experiment and return the final state.

        Returns:
            State with trace, limit, clusters, demiclosed and status
            ('completed', 'rejected' or 'violation')
        """
        initial: IterationState = {
            "operator": operator,
            "start": start,
            "steps": steps,
            "reference": reference,
            "n0": n0,
            "tol": tol,
            "functionals": functionals or [],
        }
        return self.graph.invoke(initial)
