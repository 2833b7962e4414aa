"""Monte Carlo: how often each method rejects under the null and under a shift.

Rates are conditional on passing the screen. Under the null the selective test holds
its level, the naive test ignores selection, and the Bonferroni correction pays for
every possible neighbor set. The second block moves the test point by delta.

Run:  python demos/03_type1_and_power.py   (about a minute)
"""

from dataclasses import replace

from statknnad.harness import SyntheticSpec, run

base = SyntheticSpec(n=100, d=2, k=1, trials=100_000, seed=1, target_screened=500)

print("null, n=100, k=1 (rejection rate at alpha=0.05, 500 screened trials)")
for d in (2, 5, 10):
    res = run(replace(base, d=d))
    rates = "  ".join(f"{m}={res.rate(m):.3f}" for m in res.methods)
    print(f"  d={d:<3} theta={res.theta:+.3f}  {rates}")

print("\npower, n=100, d=2, k=1")
for delta in (1.0, 2.0, 5.0, 10.0):
    res = run(replace(base, delta=delta))
    rates = "  ".join(f"{m}={res.rate(m):.3f}" for m in res.methods)
    print(f"  delta={delta:<5g} {rates}")
