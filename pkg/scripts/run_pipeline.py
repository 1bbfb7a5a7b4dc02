"""Run every pipeline stage in order for one configuration file.

    python scripts/run_pipeline.py configs/smoke.yaml
    python scripts/run_pipeline.py configs/desk.yaml --skip uq

Prints the wall time of each stage and stops at the first non-zero exit code.
"""
import argparse
import sys
import time

from ganrom import cli

STAGES = [("simulate",), ("simulate", "--truth"), ("train",), ("observe",), ("predict",),
          ("assimilate",), ("uq",), ("report",)]


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("config")
    p.add_argument("--skip", action="append", default=[], help="stage name to skip (repeatable)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = p.parse_args()
    for stage in STAGES:
        name = " ".join(stage)
        if stage[0] in args.skip:
            continue
        extra = [x for kv in args.set for x in ("--set", kv)]
        t0 = time.perf_counter()
        code = cli.main([*stage, "--config", args.config, *extra])
        print(f"{name:<18} exit {code}  {time.perf_counter() - t0:8.1f} s", flush=True)
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
