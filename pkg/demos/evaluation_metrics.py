"""
Scoring masks
=============

Five numbers summarise each case: recall, precision, Dice, average
boundary distance (AVD) and volumetric similarity (VS). A set of cases is
reported as mean and standard deviation per metric.
"""
# %%
# One case by hand
# ----------------
# Prediction and truth are 4x4 squares offset by one pixel, sharing a 3x4
# block: 12 true positives, 4 false positives, 4 false negatives.
import numpy as np

from lesioncoseg.metrics import case_metrics, evaluate_set

gt = np.zeros((10, 10), bool)
gt[2:6, 2:6] = True
pred = np.zeros((10, 10), bool)
pred[3:7, 2:6] = True
for name, value in case_metrics(pred, gt).items():
    print(f"{name:>9}: {value:.4f}")

# %%
# A small set
# -----------
# Growing the prediction step by step shows recall rising while precision
# falls. An empty prediction has no boundary, so its AVD is left out of the
# AVD statistics and counted separately.
cases = []
for grow in range(4):
    p = np.zeros((10, 10), bool)
    p[2 - grow // 2:6 + grow, 2:6] = True
    cases.append((p, gt))
cases.append((np.zeros_like(gt), gt))
report = evaluate_set(cases)
print(report.format_row("demo"))
print("cases without AVD:", report.avd_excluded)
