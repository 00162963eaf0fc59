"""Desk-scale KDDCup99 run: 10,000 normal training records, 3 runs x 3 mixes.

Needs the 10% data file (``kddcup.data_10_percent``, optionally gzipped);
point CHAD_KDD_PATH at it.  Full default schedule, so expect several
minutes per run on a laptop CPU.
"""
import logging
import sys

from chad.kdd import ENV_VAR, desk_scale, find_kdd

path = find_kdd(sys.argv[1] if len(sys.argv) > 1 else None)
if path is None:
    sys.exit(f"no KDDCup99 file; pass its path or set {ENV_VAR}")
logging.basicConfig(level=logging.INFO, format="%(message)s")

res = desk_scale(path)
print(f"\nAP at 1:5 anomalies: {res.report.cell()}")
for share, ap in res.sweep.items():
    print(f"  {share:.0%} anomalies: {ap:.4f}")
print(f"mean score normal {res.mean_normal_score:.4f}, attacks {res.mean_attack_score:.4f}")
