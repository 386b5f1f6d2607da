"""Plot report_direct.csv; run with: python plot_report_direct.py [output.png]"""
import csv
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

with open("report_direct.csv", newline="") as fh:
    rows = list(csv.reader(fh))
names, body = rows[0], rows[1:]
cols = {n: [float(r[j]) for r in body] for j, n in enumerate(names)}
x = cols.pop("t")
fig, axes = plt.subplots(len(cols), 1, figsize=(6, 1.8 * len(cols)), sharex=True, squeeze=False)
for ax, (name, ys) in zip(axes[:, 0], cols.items()):
    ax.plot(x, ys)
    if True and all(y > 0 for y in ys):
        ax.set_yscale("log")
    ax.set_ylabel(name, fontsize=8)
axes[-1, 0].set_xlabel("t")
fig.tight_layout()
fig.savefig(sys.argv[1] if len(sys.argv) > 1 else "report_direct.png", dpi=100)
