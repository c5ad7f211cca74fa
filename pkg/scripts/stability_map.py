"""Greatest real part of eig(S)/omega over (Gamma/omega, alpha), as CSV plus a text map.

Usage: python scripts/stability_map.py [OUT_CSV]
"""

import sys

import numpy as np

from frictionchan.dynamics import stability_scan
from frictionchan.io import make_metadata, write_csv


def main(out=None):
    sm = stability_scan(1.0, (1e-2, 1e1), (-0.5, 2.5), (100, 100))
    G, A = np.meshgrid(sm.gamma_ratio, sm.alpha, indexing="ij")
    # rows: alpha from top (2.5) to bottom (-0.5); columns: log Gamma/omega
    for j in range(sm.alpha.size - 1, -1, -5):
        row = "".join("-" if sm.max_re[i, j] < 0 else "+" for i in range(0, sm.gamma_ratio.size, 2))
        print(f"alpha {sm.alpha[j]:6.3f} |{row}|")
    print("'-' stable (max Re < 0), '+' heating or marginal; Gamma/omega from 1e-2 (left) to 1e1 (right)")
    if out:
        rows = np.column_stack([G.ravel(), A.ravel(), sm.max_re.ravel(), sm.det.ravel(), sm.det_formula.ravel()])
        cfg = {"omega": 1.0, "gamma": [1e-2, 1e1], "alpha": [-0.5, 2.5], "resolution": [100, 100]}
        write_csv(out, ["gamma_over_omega", "alpha", "max_re_over_omega", "det", "det_formula"], rows,
                  make_metadata(cfg, None, "stability_map"))
        print(f"wrote {out}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else None)
