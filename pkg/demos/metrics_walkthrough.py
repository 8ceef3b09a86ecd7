"""Average precision by hand: rank, sweep thresholds, take the monotone
envelope, integrate.

Reproduces the small worked example (AP = 5/6) step by step, then shows the
full report for a toy three-class problem, including how undefined metrics
are surfaced instead of silently zeroed.
"""

import numpy as np

from msfnet import ConfusionCounts, average_precision, build_report, precision, recall
from msfnet.metrics import pr_curve

print("=== Precision / recall from counts ===")
counts = ConfusionCounts(tp=3, fp=1, fn=2, tn=4)
print(f"tp=3 fp=1 fn=2 -> precision {precision(counts):.2f}, recall {recall(counts):.2f}")

print("\n=== Average precision, worked example ===")
scores = [0.9, 0.5, 0.1]
positives = [True, False, True]
print("ranking (by descending score):", list(zip(scores, positives)))
curve = pr_curve(scores, positives)
for r, p in curve.points:
    print(f"  threshold point: recall {r:.2f}, precision {p:.3f}")
ap = average_precision(scores, positives)
print(f"AP = 0.5 * 1.0 + 0.5 * 2/3 = {ap:.4f}  (exactly 5/6)")

print("\n=== Rank invariance ===")
rng = np.random.default_rng(0)
s = rng.standard_normal(50)
pos = rng.random(50) < 0.3
base = average_precision(s, pos)
squashed = average_precision(np.tanh(s), pos)
print(f"AP before monotone transform {base:.6f}, after tanh {squashed:.6f}")

print("\n=== Multi-class report ===")
y = rng.integers(0, 3, size=60)
logits = rng.standard_normal((60, 3)) + 2.0 * np.eye(3)[y]
probs = np.exp(logits)
probs /= probs.sum(axis=1, keepdims=True)
report = build_report(y, probs, ("melanoma", "keratosis", "benign"))
print("per-class AP:", [f"{a:.3f}" for a in report.ap])
print(f"mAP {report.map:.3f} | accuracy {report.accuracy:.2f} | n={report.n}")
print("JSON document:")
print(report.to_json())
