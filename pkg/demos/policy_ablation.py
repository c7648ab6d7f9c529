"""Compare node-selection policies on seeded synthetic tasks, for a few budgets.

    python3 demos/policy_ablation.py
"""

from vidagent import harness

for n in (1, 2, 4, 8):
    report = harness.ablate(range(50), n=n)
    print(f"N={n}")
    print(harness.report_table(report))
