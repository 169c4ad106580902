"""Right-hand vs combined-hand training, evaluated on each hand separately.

Runs the full CLI pipeline (gen, ensemble-train, evaluate, report) for the
2 x 3 grid of train/eval hand selectors and prints a summary table.

    python scripts/domain_shift.py --out runs/domain_shift --members 3
"""

import argparse
import json
from pathlib import Path

from uqpen.cli import main as uqpen


def step(*argv) -> None:
    code = uqpen([str(a) for a in argv])
    if code != 0:
        raise SystemExit(code)


def run(out: Path, members: int, kind: str, extra: list[str]) -> list[dict]:
    out.mkdir(parents=True, exist_ok=True)
    step("gen", "--out", out / "data.csv", *extra)
    data = ["--set", f"data.csv={(out / 'data.csv').as_posix()}",
            "--set", f"split.manifest={(out / 'data.splits.json').as_posix()}", *extra]
    rows = []
    for train_hand in ("right", "both"):
        art = out / f"train_{train_hand}"
        if kind == "swag":
            step("swag-train", *data, "--train-hand", train_hand, "--out", art)
        else:
            step("ensemble-train", *data, "--set", f"ensemble.member_count={members}",
                 "--train-hand", train_hand, "--out", art, "--workers", "1")
        for eval_hand in ("right", "left", "both"):
            bundle = out / f"train_{train_hand}" / f"eval_{eval_hand}"
            step("evaluate", *data, "--artifacts", art, "--eval-hand", eval_hand, "--bundle", bundle)
            step("report", "--bundle", bundle, "--out", bundle / "figures")
            summary = json.loads((bundle / "summary.json").read_text())
            rows.append({"train": train_hand, "eval": eval_hand, **summary})
    return rows


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/domain_shift"))
    ap.add_argument("--members", type=int, default=3)
    ap.add_argument("--kind", choices=("ensemble", "swag"), default="ensemble")
    ap.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    args = ap.parse_args()
    extra = [x for s in args.set for x in ("--set", s)]
    rows = run(args.out, args.members, args.kind, extra)
    print(f"{'train':>6} {'eval':>6} {'acc':>7} {'ece':>7} {'TU':>7} {'AU':>7} {'EU':>7}")
    for r in rows:
        print(f"{r['train']:>6} {r['eval']:>6} {r['accuracy']:7.3f} {r['ece']:7.3f} "
              f"{r['mean_tu']:7.3f} {r['mean_au']:7.3f} {r['mean_eu']:7.3f}")
    (args.out / "summary.json").write_text(json.dumps(rows, indent=2) + "\n")


if __name__ == "__main__":
    main()
