"""Command line: ``deeplstm {train,eval,gradcheck,viz-weights,cooccurrence,synth}``.

Run configurations are JSON objects; unknown keys are rejected at every
level. Relative paths inside a config file are resolved against the config
file's directory. Every command writes only below its output directory.

Exit codes: 0 success, 1 gradient check above threshold, 2 usage, config
or data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .cooccurrence import RegConfig, group_column_energy, partition_groups
from .heatmap import Heatmap
from .network import Network, NetworkConfig, SequenceSample
from .skeleton import (
    PreprocessConfig,
    SynthSpec,
    joint_covariance,
    load_sequence,
    preprocess,
    read_manifest,
    save_sequence,
    synth_generate,
    write_manifest,
)
from .training import SgdConfig, evaluate, gradient_check_tensors, train

log = logging.getLogger("deeplstm")

GRADCHECK_THRESHOLD = 1e-6


class ConfigError(ValueError):
    pass


def _strict(cls, d, where: str):
    if d is None:
        return None
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = set(d) - set(cls.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from None


@dataclass
class DataConfig:
    manifest: Optional[str] = None
    test_folds: list = field(default_factory=list)


@dataclass
class GradcheckConfig:
    length: int = 5
    label: int = 0
    seed: int = 0
    step: float = 1e-5
    bias_scale: float = 0.5  # biases are randomized so no gate sits at a symmetric point
    min_abs_weight: float = 1e-3  # applied to penalized tensors when a penalty is active


@dataclass
class RunConfig:
    network: dict
    sgd: SgdConfig = field(default_factory=SgdConfig)
    reg: Optional[RegConfig] = None
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    data: DataConfig = field(default_factory=DataConfig)
    gradcheck: GradcheckConfig = field(default_factory=GradcheckConfig)
    workers: int = 1
    out: Optional[str] = None

    @classmethod
    def from_dict(cls, d: dict, base: Path = Path(".")) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
        if "network" not in d:
            raise ConfigError("config needs a 'network' section")
        net = dict(d["network"])
        unknown = set(net) - set(NetworkConfig.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown keys in network: {sorted(unknown)}")
        reg = d.get("reg")
        if reg is not None:
            reg = _strict(RegConfig, reg, "reg")
        data = _strict(DataConfig, d.get("data", {}), "data")
        if data.manifest is not None:
            data.manifest = str((base / data.manifest).resolve())
        out = d.get("out")
        if out is not None:
            out = str((base / out).resolve())
        workers = d.get("workers", 1)
        if not isinstance(workers, int) or workers < 1:
            raise ConfigError("workers must be a positive integer")
        return cls(network=net,
                   sgd=_strict(SgdConfig, d.get("sgd", {}), "sgd"),
                   reg=reg,
                   preprocess=_strict(PreprocessConfig, d.get("preprocess", {}), "preprocess"),
                   data=data,
                   gradcheck=_strict(GradcheckConfig, d.get("gradcheck", {}), "gradcheck"),
                   workers=workers, out=out)

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.reg is not None:
            d["reg"]["target_layers"] = list(self.reg.target_layers)
            d["reg"]["groups_per_layer"] = list(self.reg.groups_per_layer)
        return d

    def network_config(self) -> NetworkConfig:
        try:
            return NetworkConfig.from_dict(self.network)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid network: {exc}") from None


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return RunConfig.from_dict(raw, base=path.parent)


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _out_dir(args, cfg: Optional[RunConfig] = None) -> Path:
    out = args.out or (cfg.out if cfg is not None else None)
    if out is None:
        raise ConfigError("no output directory: pass --out or set 'out' in the config")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_dataset(manifest_path, pre: PreprocessConfig):
    """Read a manifest and its sequences, preprocessed; returns (manifest, samples)."""
    manifest = read_manifest(manifest_path)
    root = Path(manifest_path).parent
    samples = []
    for e in manifest.entries:
        seq = preprocess(load_sequence(root / e.path), pre)
        samples.append(SequenceSample(seq.frames, e.label))
    return manifest, samples


# -- train -------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg.sgd.seed = args.seed
    out = _out_dir(args, cfg)
    cfg.out = str(out)
    if cfg.data.manifest is None:
        raise ConfigError("data.manifest is required for train")
    manifest, samples = load_dataset(cfg.data.manifest, cfg.preprocess)
    net_dict = dict(cfg.network)
    net_dict.setdefault("input_dim", samples[0].frames.shape[1])
    net_dict.setdefault("num_classes", len(manifest.classes))
    cfg.network = net_dict
    net_cfg = cfg.network_config()
    held = set(cfg.data.test_folds)
    train_set = [s for s, e in zip(samples, manifest.entries) if e.fold not in held]
    val_set = [s for s, e in zip(samples, manifest.entries) if e.fold in held]
    if not train_set:
        raise ConfigError("every sequence is held out; nothing to train on")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")

    rng = np.random.default_rng(cfg.sgd.seed)
    net = Network.initialize(net_cfg, rng)
    report = train(net, train_set, cfg.sgd, cfg.reg, val=val_set or None,
                   metrics_path=out / "metrics.jsonl", rng=rng, workers=cfg.workers)
    with open(out / "timing.jsonl", "w", encoding="utf-8") as fh:
        for rec in report.epochs:
            fh.write(json.dumps({"epoch": rec.epoch, "wall_time": rec.wall_time}) + "\n")
    run = cfg.to_dict()
    # execution settings stay out of the checkpoint so it depends only on the model run
    del run["out"], run["workers"]
    save_checkpoint(out / "checkpoint.bin", net, rng, extra=run)
    final = report.final
    summary = {
        "epochs": len(report.epochs),
        "final": None if final is None else final.metrics(),
        "train_size": len(train_set),
        "val_size": len(val_set),
    }
    if val_set:
        acc, conf = evaluate(net, val_set)
        summary["val_confusion"] = conf.tolist()
    (out / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if final is None:
        print("trained 0 epochs")
    else:
        val = "n/a" if final.val_accuracy is None else f"{final.val_accuracy:.4f}"
        print(f"epochs {final.epoch}  loss {final.train_loss:.6f}  "
              f"train_acc {final.train_accuracy:.4f}  val_acc {val}")
    return 0


# -- eval --------------------------------------------------------------------

def cmd_eval(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    net = ck.network
    pre = PreprocessConfig()
    if isinstance(ck.extra, dict) and ck.extra.get("preprocess") is not None:
        pre = PreprocessConfig.from_dict(ck.extra["preprocess"])
    manifest, samples = load_dataset(args.manifest, pre)
    if args.folds:
        keep = set(args.folds)
        samples = [s for s, e in zip(samples, manifest.entries) if e.fold in keep]
        if not samples:
            raise ConfigError(f"no sequences in folds {sorted(keep)}")
    width = samples[0].frames.shape[1]
    if width != net.config.input_dim:
        raise ConfigError(f"data width {width} does not match the network input width "
                          f"{net.config.input_dim}")
    if len(manifest.classes) > net.config.num_classes:
        raise ConfigError(f"manifest has {len(manifest.classes)} classes, network "
                          f"{net.config.num_classes}")
    out = _out_dir(args)
    acc, conf = evaluate(net, samples)
    names = manifest.classes + [str(k) for k in range(len(manifest.classes), net.config.num_classes)]
    with open(out / "confusion.csv", "w", encoding="utf-8") as fh:
        fh.write(",".join(["true\\pred", *names]) + "\n")
        for name, row in zip(names, conf):
            fh.write(",".join([name, *(str(int(v)) for v in row)]) + "\n")
    print(f"accuracy {acc:.4f}")
    width = max(len(n) for n in names)
    for name, row in zip(names, conf):
        print(f"{name:>{width}} " + " ".join(f"{int(v):4d}" for v in row))
    return 0


# -- gradcheck ---------------------------------------------------------------

def _prepare_gradcheck(cfg: RunConfig):
    gc = cfg.gradcheck
    net_cfg = cfg.network_config()
    rng = np.random.default_rng(gc.seed)
    net = Network.initialize(net_cfg, rng)
    params = net.parameters()
    for name, arr in params.items():
        if name.split(".")[-1].startswith("b"):
            arr[...] = rng.uniform(-gc.bias_scale, gc.bias_scale, size=arr.shape)
    reg = cfg.reg
    if reg is not None and reg.active:
        for _, mats, _ in net.penalty_terms(reg):
            for W in mats.values():
                small = np.abs(W) < gc.min_abs_weight
                W[small] = np.where(W[small] < 0, -1.0, 1.0) * (gc.min_abs_weight + rng.uniform(0, 0.1, small.sum()))
    if not 0 <= gc.label < net_cfg.num_classes:
        raise ConfigError("gradcheck.label outside the class range")
    frames = rng.standard_normal((gc.length, net_cfg.input_dim))
    return net, SequenceSample(frames, gc.label), rng


def cmd_gradcheck(args) -> int:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg.gradcheck.seed = args.seed
    net, sample, rng = _prepare_gradcheck(cfg)
    corrupt = None
    if args.corrupt:
        def corrupt(grads):
            name = next(iter(grads))
            grads[name].reshape(-1)[0] += 1e-3
    t0 = time.perf_counter()
    errors = gradient_check_tensors(net, sample, cfg.reg, cfg.gradcheck.step, rng=rng, corrupt=corrupt)
    worst = max(errors.values())
    width = max(len(n) for n in errors)
    for name, err in errors.items():
        flag = "ok" if err < GRADCHECK_THRESHOLD else "FAIL"
        print(f"{name:<{width}}  {err:.3e}  {flag}")
    verdict = "PASS" if worst < GRADCHECK_THRESHOLD else "FAIL"
    print(f"max relative error {worst:.3e} ({verdict}, threshold {GRADCHECK_THRESHOLD:g}, "
          f"{time.perf_counter() - t0:.1f}s)")
    if args.out:
        out = _out_dir(args)
        (out / "gradcheck.json").write_text(json.dumps({"max": worst, "tensors": errors}, indent=2) + "\n")
    return 0 if worst < GRADCHECK_THRESHOLD else 1


# -- viz-weights -------------------------------------------------------------

def cmd_viz_weights(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    net = ck.network
    n_layers = len(net.config.layers)
    if not 0 <= args.layer < n_layers:
        raise ConfigError(f"layer {args.layer} does not exist (network has {n_layers})")
    spec = net.config.layers[args.layer]
    layer = net.layers[args.layer]
    if spec.kind == "blstm":
        if args.gate not in "ifco" or len(args.gate) != 1:
            raise ConfigError(f"gate must be one of i, f, c, o for a blstm layer, got {args.gate!r}")
        params = layer[0] if args.direction == "fwd" else layer[1]
        W = params.input_weights()[args.gate]
        stem = f"L{args.layer}_{args.direction}_W_x{args.gate}"
    else:
        if args.gate != "h":
            raise ConfigError(f"a feedforward layer only has gate 'h', got {args.gate!r}")
        W = layer.W
        stem = f"L{args.layer}_W"
    out = _out_dir(args)
    cols = [f"x{j}" for j in range(W.shape[1])]
    if args.group_average:
        K = args.groups
        if K is None and isinstance(ck.extra, dict) and ck.extra.get("reg"):
            reg = RegConfig(**ck.extra["reg"])
            if args.layer in reg.target_layers:
                K = reg.groups_for(args.layer)
        if K is None:
            raise ConfigError("group count unknown: pass --groups")
        gs = partition_groups(W.shape[0], K)
        hm = Heatmap(group_column_energy(W, gs), [f"g{k}" for k in range(K)], cols)
        stem += f"_groups{K}"
    else:
        hm = Heatmap(np.abs(W), [f"n{r}" for r in range(W.shape[0])], cols)
    csv_path, pgm_path = hm.save(out / stem)
    print(f"wrote {csv_path} and {pgm_path} ({hm.rows}x{hm.cols})")
    return 0


# -- cooccurrence ------------------------------------------------------------

def cmd_cooccurrence(args) -> int:
    pre = None
    if args.config:
        pre = load_run_config(args.config).preprocess
    manifest = read_manifest(args.manifest)
    root = Path(args.manifest).parent
    wanted = args.classes or manifest.classes
    unknown = [c for c in wanted if c not in manifest.classes]
    if unknown:
        raise ConfigError(f"unknown classes {unknown}; manifest has {manifest.classes}")
    out = _out_dir(args)
    for name in wanted:
        label = manifest.classes.index(name)
        seqs = [load_sequence(root / e.path) for e in manifest.entries if e.label == label]
        if not seqs:
            raise ConfigError(f"class {name!r} has no sequences")
        if pre is not None:
            seqs = [preprocess(s, pre) for s in seqs]
        C = joint_covariance(seqs)
        labels = [f"j{j + 1}" for j in range(C.shape[0])]
        csv_path, _ = Heatmap(C, labels, labels).save(out / f"cooccurrence_{name}")
        print(f"{name}: {len(seqs)} sequences -> {csv_path.with_suffix('')}.{{csv,pgm}}")
    return 0


# -- synth -------------------------------------------------------------------

def cmd_synth(args) -> int:
    try:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.config}: not valid JSON ({exc})") from None
    try:
        spec = SynthSpec.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid synth spec: {exc}") from None
    if args.seed is not None:
        spec.seed = args.seed
    out = _out_dir(args)
    manifest, sequences = synth_generate(spec)
    for e, seq in zip(manifest.entries, sequences):
        save_sequence(seq, out / e.path)
    write_manifest(manifest, out / "manifest.jsonl")
    (out / "synth_spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    for c, name in enumerate(manifest.classes):
        count = sum(e.label == c for e in manifest.entries)
        print(f"{name}: {count} sequences, active joints {spec.active_joints[c]}")
    print(f"wrote {len(sequences)} sequences and manifest.jsonl to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deeplstm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON run configuration")
        sp.add_argument("--seed", type=_seed, help="override the configured seed")
        sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("train", help="preprocess, train, write checkpoint and metrics")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="accuracy and confusion matrix of a checkpoint")
    common(sp, config_required=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--folds", type=int, nargs="*", help="restrict to these fold ids")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="compare analytic and numerical gradients")
    common(sp)
    sp.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("viz-weights", help="export |input weights| of one gate as a heatmap")
    common(sp, config_required=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--layer", type=int, default=0)
    sp.add_argument("--gate", default="i", help="i, f, c or o (blstm); h (feedforward)")
    sp.add_argument("--direction", choices=("fwd", "bwd"), default="fwd")
    sp.add_argument("--group-average", action="store_true",
                    help="emit the K x J per-group column RMS energy instead")
    sp.add_argument("--groups", type=int, help="group count K (default: from the run config)")
    sp.set_defaults(func=cmd_viz_weights)

    sp = sub.add_parser("cooccurrence", help="per-class |covariance| of joint speeds")
    common(sp, config_required=False)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--class", dest="classes", action="append", help="class name (repeatable)")
    sp.set_defaults(func=cmd_cooccurrence)

    sp = sub.add_parser("synth", help="generate a planted co-occurrence dataset")
    common(sp)
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
