#!/usr/bin/env python
"""Quick tour of the Example map: certification, iteration and its asymptotic center"""

from certification import MultiIndex, certify_mean_nonexpansive, lipschitz_ratio
from experiment_workflow import IterationWorkflow
from operators import example_operator, planar_halving_operator
from geometry_probes import asymptotic_center, line_grid
from iteration import run_iteration
from sequence_space import SeqVector, basis


def demo():
    """Run the three headline experiments."""
    print("\n" + "="*70)
    print("MEAN NONEXPANSIVE MAPS - DEMO")
    print("="*70 + "\n")

    T = example_operator()

    print(f"{'─'*70}")
    print("1. The Example is not nonexpansive, its iterates are not either")
    print('─'*70)
    print(f"   ||Te2 - T(e2/2)|| / ||e2/2||     = {lipschitz_ratio(T, 1, basis(2), 0.5 * basis(2)):.12f}")
    print(f"   ||T^2e3 - T^2(e3/2)|| / ||e3/2|| = {lipschitz_ratio(T, 2, basis(3), 0.5 * basis(3)):.12f}")

    print(f"\n{'─'*70}")
    print("2. ... but it is ((1/2, 1/2), 2)-nonexpansive")
    print('─'*70)
    report = certify_mean_nonexpansive(T, MultiIndex(weights=(0.5, 0.5), p=2.0), samples=20000, seed=7)
    mark = "✗" if report.violation else "✓"
    print(f"   {mark} min margin over {report.samples} pairs: {report.min_margin:.3e}")

    print(f"\n{'─'*70}")
    print("3. Picard iteration from e3 with reference point 0")
    print('─'*70)
    state = IterationWorkflow().process(T, basis(3), 20, SeqVector.zero())
    print(f"   distances: {[round(d, 6) for d in state['trace'].distances[:5]]} ...")
    print(f"   q = {state['limit'].q}, clusters = {len(state['clusters'].points)}, "
          f"demiclosed: {state['demiclosed']}")

    print(f"\n{'─'*70}")
    print("4. Asymptotic center of the planar halving orbit from (1, 1)")
    print('─'*70)
    halving = planar_halving_operator()
    trace = run_iteration(halving, SeqVector.of(1.0, 1.0), 60)
    center = asymptotic_center(trace, line_grid("-2:2:0.01"), halving)
    print(f"   y0 = {center.y0.trimmed()}, r0 = {center.r0:.3e}")
    print()


if __name__ == "__main__":
    demo()
