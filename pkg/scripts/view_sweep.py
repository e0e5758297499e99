"""Reconstruction quality as the number of input views grows.

Spreads copies of the configured camera evenly around the orbit and reports
the median F-score per view count.
"""

import argparse
import pathlib
import sys

import numpy as np

from fcmrecon.config import load_config
from fcmrecon.experiment import run_reconstruction, with_views

DEFAULT_CONFIG = pathlib.Path(__file__).resolve().parents[1] / "configs" / "desk.json"


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(DEFAULT_CONFIG))
    parser.add_argument("--seeds", type=int, default=10)
    parser.add_argument("--views", default="1,3,5")
    args = parser.parse_args(argv)

    cfg = load_config(args.config)
    print("views,median_fscore,median_residual")
    for n_views in (int(v) for v in args.views.split(",")):
        cfg_v = with_views(cfg, n_views)
        runs = [run_reconstruction(cfg_v, seed=s) for s in range(args.seeds)]
        f = float(np.median([r.report.fscore for r in runs]))
        residual = float(np.median([r.final_residual for r in runs]))
        print(f"{n_views},{f:.6g},{residual:.6g}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
