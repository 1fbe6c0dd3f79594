"""Command-line pipeline: synth -> make-matrix -> encode -> train -> eval.

Every verb writes fixed file names into ``--out``. Exit codes: 0 success,
1 usage error, 2 data/format error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import data as data_mod
from .core import FormatError, NumericalError
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.network import DEFAULT_TABLE, NetworkConfig
from .nn.optim import TrainSchedule
from .nn.training import evaluate, train
from .packing import MeasurementTensor, pack_array, pad_clip, save_tensor
from .recon import ReconConfig, privacy_gap
from .sensing import Family, build_matrix, load_matrix, make_config, save_matrix

log = logging.getLogger("csprivacy")

SUPPORTED_RATIOS = (1, 4, 16, 32, 64)
REPORT_RATIOS = (4, 16, 32, 64)
REPORT_FAMILIES = ("gaussian", "bernoulli", "smm", "lsmm", "convcs")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


@dataclass
class DataSection:
    classes: int = 10
    clips_per_class: int = 100
    T: int = 8
    H: int = 64
    W: int = 64
    seed: int = 0


@dataclass
class SensingSection:
    family: str = "gaussian"
    B: int = 16
    ratio: int = 4
    seed: int = 1
    sub_block: int = 0
    window: int = 0
    kernel: int = 0
    stride: int = 0


@dataclass
class ModelSection:
    stem_channels: int = 16
    table: list = field(default_factory=lambda: [list(r) for r in DEFAULT_TABLE])
    seed: int = 0


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    sensing: SensingSection = field(default_factory=SensingSection)
    model: ModelSection = field(default_factory=ModelSection)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    recon: dict = field(default_factory=dict)
    output: str = "run"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        sections = {"data": DataSection, "sensing": SensingSection, "model": ModelSection,
                    "schedule": TrainSchedule}
        kwargs = {}
        for key, value in d.items():
            if key in sections:
                known = {f.name for f in fields(sections[key])}
                unknown = set(value) - known
                if unknown:
                    raise UsageError(f"unknown {key} fields: {sorted(unknown)}")
                kwargs[key] = sections[key](**value)
            elif key in ("recon", "output"):
                kwargs[key] = value
            else:
                raise UsageError(f"unknown config section {key!r}")
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        except TypeError as exc:
            raise UsageError(f"invalid config {path}: {exc}") from exc

    def validate(self) -> None:
        if self.sensing.ratio not in SUPPORTED_RATIOS:
            raise UsageError(f"ratio must be one of {SUPPORTED_RATIOS}")
        self.sensing_config()

    def sensing_config(self):
        s = self.sensing
        try:
            cfg = make_config(s.family, s.B, s.ratio, s.seed, sub_block=s.sub_block,
                              window=s.window, kernel=s.kernel, stride=s.stride)
            build_matrix(cfg)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        return cfg

    def to_dict(self) -> dict:
        return {"data": asdict(self.data), "sensing": asdict(self.sensing),
                "model": asdict(self.model), "schedule": asdict(self.schedule),
                "recon": dict(self.recon), "output": self.output}


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    return path


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------- verbs

def cmd_synth(args, cfg: RunConfig) -> int:
    d = cfg.data
    for name in ("classes", "clips_per_class", "T", "H", "W"):
        if getattr(args, name, None) is not None:
            setattr(d, name, getattr(args, name))
    if args.seed is not None:
        d.seed = args.seed
    out = _out_dir(args, cfg)
    try:
        man = data_mod.synth_action_dataset(out, d.classes, d.clips_per_class, d.T, d.H, d.W, d.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    log.info("wrote %d clips (%d classes)", len(man.records), len(man.classes))
    print(out / "manifest.json")
    return EXIT_OK


def cmd_make_matrix(args, cfg: RunConfig) -> int:
    s = cfg.sensing
    for name in ("family", "B", "ratio", "sub_block", "window", "kernel", "stride"):
        if getattr(args, name, None) is not None:
            setattr(s, name, getattr(args, name))
    if args.seed is not None:
        s.seed = args.seed
    cfg.validate()
    phi = build_matrix(cfg.sensing_config())
    out = _out_dir(args, cfg)
    save_matrix(phi, out / "matrix.csm")
    log.info("%s matrix %dx%d (r=%g)", phi.config.family.name.lower(), phi.rows, phi.cols, phi.ratio)
    print(out / "matrix.csm")
    return EXIT_OK


def _sensing_meta(phi) -> dict:
    c = phi.config
    return {"family": c.family.name.lower(), "B": c.block_size, "M": c.measurements,
            "N": c.n, "ratio": c.ratio, "seed": c.seed, "sub_block": c.sub_block,
            "window": c.window, "kernel": c.kernel, "stride": c.stride}


def cmd_encode(args, cfg: RunConfig) -> int:
    man = data_mod.load_manifest(args.manifest)
    if man.kind != "clips":
        raise FormatError(f"{args.manifest}: expected a clip manifest")
    phi = load_matrix(args.matrix)
    out = _out_dir(args, cfg)
    (out / "tensors").mkdir(exist_ok=True)
    records, geometry = [], None
    for i, rec in enumerate(man.records):
        frames = data_mod.load_record(man, rec)
        clip = pad_clip(data_mod.VideoClip(frames), phi.config.block_size)
        mt = MeasurementTensor(pack_array(clip.scaled(), phi), phi.config.block_size, phi.rows)
        rel = f"tensors/{Path(rec.path).stem}.mst"
        save_tensor(mt, out / rel)
        records.append(data_mod.ClipRecord(rel, rec.label, rec.split, rec.motion))
        T, hb, wb, C = mt.shape
        geometry = {"T": T, "Hb": hb, "Wb": wb, "C": C}
        log.debug("%s -> %s %s (element ratio %.3f)", rec.path, rel, mt.shape, frames.size / mt.data.size)
    cman = data_mod.DatasetManifest(man.classes, records, geometry, man.seed, out, "tensors",
                                    _sensing_meta(phi))
    data_mod.save_manifest(cman, out / "manifest.json")
    log.info("encoded %d clips to %s tensors", len(records), tuple(geometry.values()))
    print(out / "manifest.json")
    return EXIT_OK


def _network_config(cfg: RunConfig, man) -> NetworkConfig:
    g = man.geometry
    return NetworkConfig((g["T"], g["Hb"], g["Wb"], g["C"]), len(man.classes),
                         cfg.model.stem_channels, tuple(tuple(r) for r in cfg.model.table))


def _tensor_manifest(path):
    man = data_mod.load_manifest(path)
    if man.kind != "tensors":
        raise FormatError(f"{path}: expected a compressed (tensor) manifest; run encode first")
    return man


def cmd_train(args, cfg: RunConfig) -> int:
    man = _tensor_manifest(args.manifest)
    if args.max_epochs is not None:
        cfg.schedule.max_epochs = args.max_epochs
    seed = args.seed if args.seed is not None else cfg.model.seed
    try:
        tr = data_mod.load_split(man, "train")
        va = data_mod.load_split(man, "val")
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    net_cfg = _network_config(cfg, man)
    init = None
    if args.init:
        init, net_cfg, _ = load_checkpoint(args.init, num_classes=net_cfg.num_classes,
                                           head_seed=seed, expect=net_cfg)
    out = _out_dir(args, cfg)
    params, history = train(tr, va, net_cfg, cfg.schedule, seed, init=init)
    meta = {"sensing": man.sensing, "classes": man.classes, "epochs": len(history),
            "schedule": asdict(cfg.schedule), "init": str(args.init) if args.init else None}
    save_checkpoint(out / "checkpoint.ckp", params, net_cfg, seed, meta)
    _write_json(out / "history.json", {"history": history, "meta": meta})
    log.info("trained %d epochs, best val loss %.4f", len(history),
             min(h["val_loss"] for h in history))
    print(out / "checkpoint.ckp")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    man = _tensor_manifest(args.manifest)
    params, net_cfg, header = load_checkpoint(args.checkpoint)
    try:
        x, y = data_mod.load_split(man, args.split)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if x.shape[1:] != net_cfg.input_shape:
        raise FormatError(f"data geometry {x.shape[1:]} does not match checkpoint {net_cfg.input_shape}")
    acc, confusion = evaluate(params, net_cfg, x, y)
    sensing = man.sensing or {}
    report = {"accuracy": acc, "confusion": confusion.tolist(), "split": args.split,
              "count": int(len(y)), "classes": man.classes,
              "family": sensing.get("family"), "ratio": sensing.get("ratio")}
    out = _out_dir(args, cfg)
    _write_json(out / "eval.json", report)
    print(f"accuracy {acc:.4f} on {len(y)} {args.split} clips")
    return EXIT_OK


def cmd_privacy_eval(args, cfg: RunConfig) -> int:
    man = data_mod.load_manifest(args.manifest)
    if man.kind != "clips":
        raise FormatError(f"{args.manifest}: expected a clip manifest")
    true_phi = load_matrix(args.matrix)
    wrong_cfg = true_phi.config
    if wrong_cfg.family is Family.IDENTITY:
        wrong_phi = true_phi
    else:
        wrong_phi = build_matrix(replace(wrong_cfg, seed=args.wrong_seed))
    rcfg = ReconConfig(**cfg.recon)
    recs = man.split(args.split)[: args.max_clips]
    if not recs:
        raise UsageError(f"split {args.split!r} is empty")
    rows = []
    for rec in recs:
        clip = data_mod.VideoClip(data_mod.load_record(man, rec))
        pt, pw, gap = privacy_gap(clip, true_phi, wrong_phi, rcfg)
        rows.append({"path": rec.path, "psnr_true": pt, "psnr_wrong": pw, "gap": gap})
    mean = lambda k: float(np.mean([r[k] for r in rows]))  # noqa: E731
    report = {"true_seed": true_phi.config.seed, "wrong_seed": wrong_phi.config.seed,
              "family": true_phi.config.family.name.lower(), "ratio": true_phi.ratio,
              "mean_psnr_true": mean("psnr_true"), "mean_psnr_wrong": mean("psnr_wrong"),
              "mean_gap": mean("gap"), "clips": rows, "recon": asdict(rcfg)}
    out = _out_dir(args, cfg)
    # JSON has no infinity; the +inf marker is written as the string "inf"
    text = json.dumps(report, indent=1, sort_keys=True, default=str)
    text = text.replace("Infinity", '"inf"').replace("NaN", '"nan"')
    (out / "privacy.json").write_text(text + "\n")
    print(f"psnr true {report['mean_psnr_true']:.2f} dB, wrong {report['mean_psnr_wrong']:.2f} dB, "
          f"gap {report['mean_gap']:.2f} dB")
    return EXIT_OK


def report_table(evals) -> str:
    """CSV with one row per family and one column per ratio; missing cells empty."""
    cells = {}
    for e in evals:
        fam, ratio = e.get("family"), e.get("ratio")
        if fam is None or ratio is None:
            continue
        cells[(str(fam).lower(), int(round(float(ratio))))] = e["accuracy"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["family"] + [f"r={r}" for r in REPORT_RATIOS])
    for fam in REPORT_FAMILIES:
        w.writerow([fam] + ["" if (fam, r) not in cells else repr(cells[(fam, r)])
                            for r in REPORT_RATIOS])
    return buf.getvalue()


def parse_report(text: str) -> dict:
    rows = list(csv.reader(io.StringIO(text)))
    ratios = [int(h.split("=")[1]) for h in rows[0][1:]]
    return {(row[0], r): float(v) for row in rows[1:] for r, v in zip(ratios, row[1:]) if v != ""}


def cmd_report(args, cfg: RunConfig) -> int:
    evals = []
    for p in args.inputs:
        try:
            evals.append(json.loads(Path(p).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise FormatError(f"{p}: {exc}") from exc
    text = report_table(evals)
    out = _out_dir(args, cfg)
    (out / "report.csv").write_text(text)
    print(text, end="")
    return EXIT_OK


# -------------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _global_flags(default) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=default, help="JSON run config")
    p.add_argument("--seed", type=int, default=default, help="override the verb's primary seed")
    p.add_argument("--out", default=default, help="output directory")
    p.add_argument("--quiet", action="store_true", default=False if default is None else default)
    return p


def build_parser() -> argparse.ArgumentParser:
    # flags work before or after the verb; the verb's copy must not reset them
    common = _global_flags(argparse.SUPPRESS)
    parser = _Parser(prog="csprivacy", description=__doc__.splitlines()[0],
                     parents=[_global_flags(None)])
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="render a synthetic dataset")
    p.add_argument("--classes", type=int)
    p.add_argument("--clips-per-class", dest="clips_per_class", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--H", type=int)
    p.add_argument("--W", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("make-matrix", parents=[common], help="write a CSM1 sensing matrix")
    p.add_argument("--family", choices=[f.name.lower() for f in Family])
    p.add_argument("--B", type=int)
    p.add_argument("--ratio", "-r", type=int)
    p.add_argument("--sub-block", dest="sub_block", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--kernel", type=int)
    p.add_argument("--stride", type=int)
    p.set_defaults(func=cmd_make_matrix)

    p = sub.add_parser("encode", parents=[common], help="pack clips into MST1 tensors")
    p.add_argument("--manifest", required=True)
    p.add_argument("--matrix", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", parents=[common], help="train the 3D ConvNet")
    p.add_argument("--manifest", required=True, help="compressed manifest")
    p.add_argument("--init", help="checkpoint to fine-tune from")
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="accuracy and confusion matrix")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=data_mod.SPLITS)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("privacy-eval", parents=[common], help="true-key vs wrong-key PSNR")
    p.add_argument("--manifest", required=True, help="clip manifest")
    p.add_argument("--matrix", required=True)
    p.add_argument("--wrong-seed", dest="wrong_seed", type=int, required=True)
    p.add_argument("--split", default="test", choices=data_mod.SPLITS)
    p.add_argument("--max-clips", dest="max_clips", type=int, default=5)
    p.set_defaults(func=cmd_privacy_eval)

    p = sub.add_parser("report", parents=[common], help="family x ratio accuracy CSV")
    p.add_argument("inputs", nargs="+", help="eval.json files")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        return args.func(args, cfg)
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
