"""Compare training throughput of the numba kernels against the numpy fallback.

Each backend runs in a fresh interpreter so that ``SE2KIT_DISABLE_NUMBA``
really removes numba from the process. Results go to a CSV (default
``benchmarks/results.csv``) and to stdout.

    python benchmarks/bench_backends.py --epochs 1000
"""

import argparse
import json
import os
import subprocess
import sys
from pathlib import Path

CHILD = """
import json, sys
from se2kit.experiments import bench_training
rep = bench_training(epochs=int(sys.argv[1]), seed=int(sys.argv[2]))
print(json.dumps({"backend": rep.backend, "epochs": rep.epochs, "seconds": rep.seconds,
                  "epochs_per_second": rep.epochs_per_second, **rep.machine}))
"""


def run(disable_numba: bool, epochs: int, seed: int) -> dict:
    env = dict(os.environ, SE2KIT_DISABLE_NUMBA="1" if disable_numba else "0")
    out = subprocess.run([sys.executable, "-c", CHILD, str(epochs), str(seed)], env=env,
                         check=True, capture_output=True, text=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path(__file__).with_name("results.csv"))
    args = ap.parse_args(argv)

    rows = [run(False, args.epochs, args.seed), run(True, args.epochs, args.seed)]
    cols = ["backend", "epochs", "seconds", "epochs_per_second", "python", "numpy", "processor", "machine"]
    lines = [",".join(cols)] + [",".join(str(r[c]) for c in cols) for r in rows]
    args.out.write_text("\n".join(lines) + "\n")
    for r in rows:
        print(f"{r['backend']:>6}: {r['epochs_per_second']:8.1f} epochs/s ({r['epochs']} epochs)")
    if rows[0]["backend"] == "numba":
        print(f"speed-up: {rows[0]['epochs_per_second'] / rows[1]['epochs_per_second']:.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
