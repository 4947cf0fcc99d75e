"""Cohort evaluation: Dice and average symmetric surface distance in millimetres.

Run:  python3 demos/05_evaluate_cohort.py
"""

import numpy as np

from voxseg.errors import UndefinedMetric
from voxseg.metrics import asd, cohort_report, dice, evaluate_case, format_report
from voxseg.phantoms import make_training_case
from voxseg.volume import VolumeGrid

# Build a small cohort: ground-truth phantom labels vs deliberately degraded
# copies standing in for predictions (eroded by one face-neighbor pass).
def erode(mask):
    m = mask.astype(bool)
    out = m.copy()
    for axis in range(3):
        for shift in (1, -1):
            out &= np.roll(m, shift, axis=axis)
    return out

cases = []
for i in range(6):
    _, label = make_training_case(seed=11, case_index=i)
    gt = label
    pred_values = erode(label.values).astype(np.float32)
    pred = VolumeGrid(pred_values, gt.spacing, gt.origin, kind="label")
    cases.append(evaluate_case(f"case_{i:02d}", pred, gt))

# Per-case rows plus cohort mean/std/max/median, the layout used for
# reporting segmentation quality across a test set.
report = cohort_report(cases)
print(format_report(report))

# The metrics are physical: ASD is measured in millimetres via the voxel
# spacing, so the same masks at doubled spacing double the distance.
pred = VolumeGrid(np.zeros((8, 8, 8), np.float32), (1.0, 1.0, 1.0), kind="label")
gt = VolumeGrid(np.zeros((8, 8, 8), np.float32), (1.0, 1.0, 1.0), kind="label")
pred.values[2, 2, 2] = 1
gt.values[2, 2, 6] = 1
print("two voxels 4 apart at 1 mm spacing:", asd(pred, gt))

# Empty masks have no surface: the metric refuses rather than fabricates,
# and cohort tooling flags such cases instead of averaging them in.
try:
    asd(VolumeGrid(np.zeros((8, 8, 8), np.float32), (1.0, 1.0, 1.0), kind="label"), gt)
except UndefinedMetric as e:
    print("empty mask is flagged, not scored:", e)

# Dice needs no surface and is 1.0 for two empty masks by convention.
both_empty = np.zeros((4, 4, 4), bool)
print("dice of two empty masks:", dice(both_empty, both_empty))
