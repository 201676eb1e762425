"""Train a set of experiment configs (skipping up-to-date runs), then report.

    python3 scripts/run_grid.py configs/lorenz_*.yaml --report runs/lorenz_table.csv
"""
import argparse
import sys
import time

from qforecast import cli
from qforecast.config import load_config, run_is_current


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("configs", nargs="+")
    ap.add_argument("--report", default=None, help="CSV path for the merged table")
    ap.add_argument("--force", action="store_true", help="retrain even if outputs are current")
    args = ap.parse_args()

    run_dirs = []
    for path in args.configs:
        cfg = load_config(path)
        run_dirs.append(str(cfg.output_dir))
        if run_is_current(cfg) and not args.force:
            print(f"{cfg.spec.name}: up to date", flush=True)
            continue
        t0 = time.perf_counter()
        code = cli.main(["train", "--config", path])
        print(f"{cfg.spec.name}: exit {code} after {time.perf_counter() - t0:.0f} s", flush=True)
        if code != 0:
            return code
    report = ["report", *run_dirs] + (["--out", args.report] if args.report else [])
    return cli.main(report)


if __name__ == "__main__":
    sys.exit(main())
