"""Auditing the sensitivity bound by brute force.

The split criterion at a leaf is ``w(leaf) * risk(w1 / w)``.  Its global
sensitivity (the most a single replaced example can move it) has a closed
bound; on small datasets we can check that bound exactly by enumerating
every replacement neighbor: every example, every feature bin, both labels,
a grid of weights.  This script runs the audit and shows how tight the
bound is, including the construction that nearly attains it.
"""

from dpboost.harness import sensitivity_audit, tight_case_delta
from dpboost.losses import LossSpec, sensitivity_bound

rows = sensitivity_audit(m_values=(2, 3, 4, 5, 6, 7, 8), alphas=(0.0, 0.3, 1.0), trials=10, seed=0)

print("=" * 72)
print("Exhaustive neighbor enumeration vs the closed-form bound")
print("=" * 72)
print(f"{'m':>3} {'alpha':>6} {'worst observed':>15} {'tight case':>11} {'bound':>7}")
by_combo = {}
for row in rows:
    key = (row["m"], row["alpha"])
    by_combo.setdefault(key, []).append(row["empirical_delta"])
for (m, alpha), deltas in sorted(by_combo.items()):
    bound = sensitivity_bound(LossSpec.malpha(alpha), m)
    tight = tight_case_delta(m, alpha)
    print(f"{m:>3} {alpha:>6} {max(deltas):>15.6f} {tight:>11.6f} {bound:>7.3f}")

print()
print("Observations:")
print(" * no random dataset ever crosses the bound (the audit would fail loudly);")
print(" * the 'tight case' column is the lone-positive label flip on unit")
print("   weights, which realizes m * risk(1/m) exactly; the bound exceeds it")
print("   by a small additive margin, as expected from its derivation;")
print(" * at alpha = 0 everything is capped by the constant 3.")

violations = [r for r in rows if r["empirical_delta"] > r["bound"] + 1e-9]
print(f"\nbound violations across {len(rows)} random datasets: {len(violations)}")
