"""Regenerate the control-panel replay fixtures.

Runs a short scheduled session and copies the paired CSV / wire-form
recordings into frontend/test/fixtures, where the panel's replay test
checks that the browser-side activation classifier matches the one that
wrote the CSV.

    python3 scripts/make_frontend_fixtures.py [--checkpoint PATH] [--ticks N]
"""

import argparse
import os
import shutil
import tempfile

from triarm.harness import run_long_horizon
from triarm.meta import AdaptConfig, init_meta, save_meta
from triarm.sac import SACHyper

FIXTURE_DIR = os.path.join(os.path.dirname(__file__), "..",
                           "frontend", "test", "fixtures")


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--checkpoint", default=None,
                    help="trained checkpoint; default is a fresh tiny init")
    ap.add_argument("--ticks", type=int, default=400)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        ckpt = args.checkpoint
        if ckpt is None:
            cfg = AdaptConfig(support_steps=40, query_steps=40, task_batch=2,
                              meta_iterations=1)
            ckpt = os.path.join(tmp, "meta.tacp")
            save_meta(ckpt, init_meta(
                cfg, seed=5, hyper=SACHyper(batch=16, hidden=16,
                                            capacity=512)))
        out = run_long_horizon(ckpt, tmp, ticks=args.ticks, seed=3)
        os.makedirs(FIXTURE_DIR, exist_ok=True)
        for key, name in (("timeseries", "long_horizon.csv"),
                          ("states", "long_horizon_states.ndjson")):
            dest = os.path.join(FIXTURE_DIR, name)
            shutil.copy(out[key], dest)
            print("wrote", os.path.relpath(dest))


if __name__ == "__main__":
    main()
