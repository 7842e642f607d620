"""Run the whole method on the one-dimensional problems and score it.

Each run fits the surrogate, detects candidate peaks, refines them with
local search under the remaining budget, and counts the global optima found
at every accuracy level.  Expect a few minutes per problem on one core.

    python demos/03_whole_pipeline.py
"""
from apdmmo.harness import RunConfig, run_apdmmo

for problem in ("F1", "F2", "F3"):
    report = run_apdmmo(RunConfig(problem=problem, seed=0))
    found = ", ".join(f"{acc}: {n}" for acc, n in report.npf.items())
    seconds = sum(report.timings.values())
    print(f"{problem}: {report.nkp} global optima; found per accuracy {found}")
    print(f"    archive {report.archive_size} candidates, {report.launches} local searches, "
          f"{report.ledger['counter']} of {report.ledger['max_fes']} evaluations, {seconds:.0f} s")
