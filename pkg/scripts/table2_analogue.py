"""Train the 10-class net under each sensing family at one ratio and report test accuracy.

    python scripts/table2_analogue.py --ratio 4 --out results/table2.json
"""

import argparse
import json
import logging
from pathlib import Path

from csprivacy.experiments import FAMILIES, table2_analogue
from csprivacy.nn.optim import TrainSchedule


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--families", nargs="+", default=list(FAMILIES), choices=FAMILIES)
    ap.add_argument("--ratio", type=int, default=4)
    ap.add_argument("--clips-per-class", type=int, default=100)
    ap.add_argument("--max-epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0, help="training seed")
    ap.add_argument("--out", type=Path, default=Path("results/table2.json"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    res = table2_analogue(args.families, args.ratio, clips_per_class=args.clips_per_class,
                          train_seed=args.seed, schedule=TrainSchedule(max_epochs=args.max_epochs))
    accs = {f: r["accuracy"] for f, r in res.items()}
    for f, a in accs.items():
        print(f"{f:10s} r={args.ratio:<3d} accuracy {a:.3f}")
    print(f"spread {max(accs.values()) - min(accs.values()):.3f}")
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps({"ratio": args.ratio, "results": res}, indent=1) + "\n")


if __name__ == "__main__":
    main()
