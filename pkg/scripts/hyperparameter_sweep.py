"""Sweep the guidance hyperparameters on one scene.

Varies the curvature cap (lipschitz), probe scale (delta0), and sufficient
decrease factor (eta_fcm) one at a time around the configured values and
prints the resulting residual and F-score per setting.
"""

import argparse
import dataclasses
import pathlib
import sys

from fcmrecon.config import load_config
from fcmrecon.diffusion import GuidanceConfig
from fcmrecon.experiment import run_reconstruction

DEFAULT_CONFIG = pathlib.Path(__file__).resolve().parents[1] / "configs" / "desk.json"

SWEEPS = {
    "lipschitz": (1.0 / 3.0, 2.0 / 3.0, 4.0 / 3.0, 8.0 / 3.0),
    "delta0": (6e-3, 2e-2, 6e-2),
    "eta_fcm": (1e-5, 1e-4, 1e-3),
}


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(DEFAULT_CONFIG))
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    cfg = load_config(args.config)
    base = cfg.sampler.guidance.fcm_config()
    print("parameter,value,final_residual,fscore")
    for name, values in SWEEPS.items():
        for value in values:
            fcm = dataclasses.replace(base, **{name: value})
            guidance = GuidanceConfig(mode="fcm", fcm=fcm)
            result = run_reconstruction(cfg, seed=args.seed, guidance=guidance)
            print(f"{name},{value:g},{result.final_residual:.6g},{result.report.fscore:.6g}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
