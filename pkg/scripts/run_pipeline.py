"""Synthesize a dataset, train each model kind, embed, and print the comparison table.

    python scripts/run_pipeline.py --workdir runs/default
    python scripts/run_pipeline.py --models mmeda1 mmeda2 --max-epochs 50
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from mmeda.cli import main as cli


def run(args: list[str]) -> None:
    code = cli(args)
    if code != 0:
        sys.exit(f"step failed with exit code {code}: mmeda {' '.join(args)}")


def parse_args(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0],
                                formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--workdir", type=Path, default=Path("runs/default"), help="output directory")
    p.add_argument("--models", nargs="+", default=["cmf", "aemf", "mmeda1", "mmeda2"],
                   choices=["cmf", "aemf", "convae", "mmeda1", "mmeda2", "mlp"], help="kinds to compare")
    p.add_argument("--n", type=int, default=256, help="entities")
    p.add_argument("--rank", type=int, default=8, help="latent dimension")
    p.add_argument("--image", default="1x16x16", help="image shape CxHxW")
    p.add_argument("--text-dim", type=int, default=32, help="feature-view width")
    p.add_argument("--sigma", type=float, default=0.05, help="noise level")
    p.add_argument("--data-seed", type=int, default=0, help="generator seed")
    p.add_argument("--seed", type=int, default=0, help="model seed")
    p.add_argument("--max-epochs", type=int, default=300, help="epoch cap per model")
    return p.parse_args(argv)


def main(argv=None) -> None:
    a = parse_args(argv)
    a.workdir.mkdir(parents=True, exist_ok=True)
    data = a.workdir / "data"
    run(["synth", "--out", str(data), "--n", str(a.n), "--rank", str(a.rank), "--image", a.image,
         "--text-dim", str(a.text_dim), "--sigma", str(a.sigma), "--seed", str(a.data_seed)])
    reps = []
    for kind in a.models:
        t = time.perf_counter()
        bundle = a.workdir / f"{kind}.mmdl"
        run(["train", "--data", str(data), "--model", kind, "--max-epochs", str(a.max_epochs),
             "--seed", str(a.seed), "--out", str(bundle), "--history", str(a.workdir / f"{kind}.csv")])
        out = a.workdir / f"{kind}.mmtf"
        run(["embed", "--data", str(data), "--model-file", str(bundle), "--out", str(out)])
        print(f"[{kind}] {time.perf_counter() - t:.1f}s")
        reps.append(f"{kind}={out}")
    print()
    run(["eval", "--data", str(data), "--reps", *reps])


if __name__ == "__main__":
    main()
