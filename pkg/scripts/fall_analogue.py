"""Pretrain on the 10-class set, fine-tune to fall / non-fall, once per compression ratio.

    python scripts/fall_analogue.py --ratios 4 16 32 64 --out results/fall.json

``--scratch`` also trains the binary task from random weights for comparison.
"""

import argparse
import json
import logging
from pathlib import Path

from csprivacy.experiments import FAMILIES, RATIOS, fall_analogue, scratch_fall_accuracy
from csprivacy.nn.optim import TrainSchedule


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ratios", nargs="+", type=int, default=list(RATIOS))
    ap.add_argument("--family", default="smm", choices=FAMILIES)
    ap.add_argument("--pretrain-epochs", type=int, default=15)
    ap.add_argument("--finetune-epochs", type=int, default=10)
    ap.add_argument("--scratch", action="store_true")
    ap.add_argument("--out", type=Path, default=Path("results/fall.json"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    res = fall_analogue(args.ratios, args.family, pretrain=TrainSchedule(max_epochs=args.pretrain_epochs),
                        finetune=TrainSchedule(max_epochs=args.finetune_epochs))
    out = {"family": args.family, "results": {str(r): v for r, v in res.items()}}
    for r, v in res.items():
        line = f"r={r:<3d} 10-class {v['pretrain']['accuracy']:.3f}  fall {v['accuracy']:.3f}"
        if args.scratch:
            s = scratch_fall_accuracy(r, args.family, schedule=TrainSchedule(max_epochs=args.finetune_epochs))
            out["results"][str(r)]["scratch"] = s
            line += f"  fall from scratch {s['accuracy']:.3f}"
        print(line)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(out, indent=1) + "\n")


if __name__ == "__main__":
    main()
