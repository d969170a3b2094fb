"""Regenerate the shipped FER tables and print the fitted mutual-information margins.

    python tools/make_fer_tables.py [--gap 1.2] [--spread 0.3]
"""
import argparse
from pathlib import Path

import numpy as np

from musca.phy import calibrate_margin, capacity_gap_table, write_fer_table
from musca.protocols import get_code

OUT = Path(__file__).resolve().parents[1] / "src" / "musca" / "data"
TABLES = {"turbo-1/6": ("fer_turbo_1_6.csv", 3),
          "turbo-1/4": ("fer_turbo_1_4.csv", 3),
          "conv-1/2": ("fer_conv_1_2.csv", 1)}

ap = argparse.ArgumentParser()
ap.add_argument("--gap", type=float, default=1.2, help="waterfall offset from capacity, dB")
ap.add_argument("--spread", type=float, default=0.3, help="waterfall width (std), dB")
args = ap.parse_args()

grid = np.round(np.arange(-10.0, 20.0001, 0.5), 3)
for code_id, (name, n_b) in TABLES.items():
    code = get_code(code_id)
    table = capacity_gap_table(code, n_b, args.gap, args.spread, grid)
    write_fer_table(table, OUT / name)
    margin, detail = calibrate_margin(table, code)
    print(f"{code_id}: mi_margin {margin:.4f}  {detail}")
