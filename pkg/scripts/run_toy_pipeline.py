"""describe -> pretrain -> finetune -> eval on the 30-molecule toy set, offline.

Uses the mock LLM from ``configs/toy_mock.json``. With ``--baseline`` it also
fine-tunes from random weights into ``<out>/random_init`` so the two test
metrics can be compared.

    python scripts/run_toy_pipeline.py --out runs/toy --baseline
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from molalign.cli import main as cli

ROOT = Path(__file__).resolve().parents[1]


def step(*argv: str) -> None:
    code = cli(list(argv))
    if code != 0:
        sys.exit(f"{argv[0]} failed with exit code {code}")


def read_metrics(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=str(ROOT / "configs" / "toy_mock.json"))
    parser.add_argument("--out", default=str(ROOT / "runs" / "toy"))
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--baseline", action="store_true", help="also fine-tune from random initialization")
    args = parser.parse_args()

    common = ["--config", args.config, "--out", args.out, "--seed", str(args.seed), "--mock-llm"]
    for command in ("describe", "pretrain", "finetune", "eval"):
        step(command, *common)

    rows = {"pretrained": read_metrics(Path(args.out) / "eval" / "metrics.csv")}
    if args.baseline:
        base_out = str(Path(args.out) / "random_init")
        base = ["--config", args.config, "--out", base_out, "--seed", str(args.seed), "--mock-llm"]
        step("finetune", *base, "--random-init")
        rows["random init"] = read_metrics(Path(base_out) / "finetune" / "metrics.csv")

    for label, metrics in rows.items():
        for r in metrics:
            print(f"{label:<12} {r['dataset']} {r['task']} {r['metric']} {float(r['value']):.4f}")


if __name__ == "__main__":
    main()
