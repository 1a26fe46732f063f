"""The full cut-cylinder study: train on horizontal cuts, test on all three schemes.

Takes a long time on one core. Set RPF_LOG=info to follow training.
"""
import logging
import os

from rpflow.experiment import CylinderStudy, run_cylinder_study

logging.basicConfig(level=os.environ.get("RPF_LOG", "warning").upper())
result = run_cylinder_study(CylinderStudy())
for scheme, acc in result.part_accuracy.items():
    print(f"{scheme:10s} part accuracy {acc:6.1%}   mean chamfer {result.mean_cd[scheme] * 100:.2f} cm")
print("seconds:", {k: round(v) for k, v in result.seconds.items()})
