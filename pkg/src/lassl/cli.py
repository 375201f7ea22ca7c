"""Command-line entry point: ``lassl {gen-data,pretrain,probe,spectra,compare}``.

Experiments are described by a flat ``key = value`` file (``#`` starts a
comment). Every key has a default; ``--recipe`` swaps in one of the two
sampling hyperparameter bundles before the file is applied, so keys set in the
file always win.

A run directory holds one ``seed-<s>/`` subdirectory per seed with the
checkpoint, run log, and later the probe and spectrum reports, plus
run-level aggregates at the top.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from lassl import __version__
from lassl.augment import AugmentPolicy
from lassl.errors import ConfigError, ConsistencyError, DivergenceError, FormatError, LasslError
from lassl.eval import (
    ProbeConfig,
    extract,
    multiclass_subgroup_metrics,
    probe,
    spectrum,
    subgroup_metrics,
)
from lassl.io import atomic_write_text, write_csv, write_json
from lassl.plot import line_chart
from lassl.sampler import ScalingParams
from lassl.ssl import SslConfig
from lassl.synthdata import (
    AttributeSpec,
    ConfoundSpec,
    Dataset,
    GeneratorConfig,
    generate,
    heldout_config,
    partition_by_alignment,
)
from lassl.synthdata import read as read_dataset
from lassl.synthdata import write as write_dataset
from lassl.trainer import TrainConfig, checkpoint, pretrain, resume, summary

log = logging.getLogger("lassl")

EXIT_OK = 0
EXIT_CONFIG = 3
EXIT_FORMAT = 4
EXIT_DIVERGENCE = 5
EXIT_INPUT = 6

OUTPUT_ENV = "LASSL_OUTPUT_DIR"
CHECKPOINT_NAME = "checkpoint.lack"


# ------------------------------------------------------------------ config


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(",", " ").split())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(",", " ").split())


def _opt_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "auto", "none") else float(text)


# key -> (parser, default as written in a config file)
SCHEMA: dict[str, tuple] = {
    # generator
    "n": (int, "10000"),
    "input_dim": (int, "64"),
    "cardinality": (int, "10"),
    "n_confounds": (int, "1"),
    "aligned_ratio": (_floats, "0.95"),
    "confound_signal_scale": (_floats, "2.0"),
    "target_signal_scale": (float, "1.5"),
    "noise_sigma": (float, "0.25"),
    # augmentation
    "jitter_sigma": (float, "0.5"),
    "mask_fraction": (float, "0.2"),
    "scale_low": (float, "0.8"),
    "scale_high": (float, "1.25"),
    # contrastive objective
    "temperature": (float, "0.5"),
    "representation_dim": (int, "32"),
    "projection_dim": (int, "16"),
    "batch_size": (int, "128"),
    "symmetrize": (_bool, "false"),
    # sampler
    "gamma": (float, "10"),
    "r": (float, "0.01"),
    "floor": (float, "0"),
    "eta": (float, "0.1"),
    "warmup_epochs": (int, "50"),
    "update_every": (int, "20"),
    # optimization
    "mode": (str, "uniform"),
    "epochs": (int, "300"),
    "batches_per_epoch": (int, "0"),
    "lr_max": (float, "0.5"),
    "weight_decay": (float, "1e-4"),
    "lr_warmup_epochs": (int, "10"),
    "encoder_hidden": (_ints, "64"),
    "head_hidden": (_ints, "32"),
    "oracle_confound": (int, "0"),
    # evaluation
    "probe_max_iter": (int, "10000"),
    "probe_tol": (float, "1e-6"),
    "test_n": (int, "3000"),
    "test_aligned_ratio": (_opt_float, "auto"),
    # bookkeeping
    "seeds": (_ints, "0"),
    "output_dir": (str, "runs/default"),
}

REQUIRED = {"pretrain": ("mode",)}

RECIPES = {
    "cifar-like": {"gamma": "10", "r": "0.01", "update_every": "20", "warmup_epochs": "50"},
    "celeba-like": {"gamma": "10", "r": "0.1", "update_every": "2", "warmup_epochs": "10",
                    "epochs": "100", "lr_warmup_epochs": "10"},
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw ``key -> value`` strings; unknown or repeated keys are rejected."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {body!r}")
        key, value = (part.strip() for part in body.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate config key {key!r}")
        out[key] = value
    return out


def resolve_config(raw: dict[str, str], recipe: str | None = None, command: str | None = None) -> dict:
    """Typed settings: defaults, then the recipe bundle, then the file."""
    missing = [k for k in REQUIRED.get(command, ()) if k not in raw]
    if missing:
        raise ConfigError(f"{command} needs config key(s): {', '.join(missing)}")
    merged = {k: default for k, (_, default) in SCHEMA.items()}
    if recipe is not None:
        merged.update(RECIPES[recipe])
    merged.update(raw)
    typed = {}
    for key, text in merged.items():
        try:
            typed[key] = SCHEMA[key][0](text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from exc
    return typed


def load_config(path, recipe: str | None = None, command: str | None = None) -> dict:
    if path is None:
        return resolve_config({}, recipe, None)
    text = Path(path).read_text(encoding="utf-8")
    return resolve_config(parse_config_text(text, str(path)), recipe, command)


def _per_confound(values: tuple[float, ...], j: int, key: str) -> tuple[float, ...]:
    if len(values) == 1:
        return values * j
    if len(values) != j:
        raise ConfigError(f"{key} lists {len(values)} values for {j} confounds")
    return values


def generator_config(cfg: dict, seed: int) -> GeneratorConfig:
    j = cfg["n_confounds"]
    if j < 1:
        raise ConfigError("n_confounds must be >= 1")
    ratios = _per_confound(cfg["aligned_ratio"], j, "aligned_ratio")
    scales = _per_confound(cfg["confound_signal_scale"], j, "confound_signal_scale")
    k = cfg["cardinality"]
    confounds = tuple(ConfoundSpec(AttributeSpec(f"confound{i}", k), ratios[i], scales[i]) for i in range(j))
    gen = GeneratorConfig(cfg["n"], cfg["input_dim"], AttributeSpec("target", k), confounds,
                          cfg["target_signal_scale"], cfg["noise_sigma"], seed)
    gen.validate()
    return gen


def train_config(cfg: dict, seed: int, threads: int = 1) -> TrainConfig:
    tc = TrainConfig(
        epochs=cfg["epochs"],
        batches_per_epoch=cfg["batches_per_epoch"] or None,
        lr_max=cfg["lr_max"],
        weight_decay=cfg["weight_decay"],
        lr_warmup_epochs=cfg["lr_warmup_epochs"],
        ssl=SslConfig(cfg["temperature"], cfg["representation_dim"], cfg["projection_dim"],
                      cfg["batch_size"], cfg["symmetrize"]),
        scaling=ScalingParams(cfg["gamma"], cfg["r"], cfg["floor"]),
        warmup_epochs=cfg["warmup_epochs"],
        update_every=cfg["update_every"],
        eta=cfg["eta"],
        mode=cfg["mode"],
        seed=seed,
        encoder_hidden=cfg["encoder_hidden"],
        head_hidden=cfg["head_hidden"],
        augment=AugmentPolicy(cfg["jitter_sigma"], cfg["mask_fraction"],
                              (cfg["scale_low"], cfg["scale_high"]), seed),
        oracle_confound=cfg["oracle_confound"],
        threads=threads,
    )
    tc.validate()
    return tc


def output_dir(cli_value: str | None, cfg: dict) -> Path:
    if cli_value:
        return Path(cli_value)
    return Path(os.environ.get(OUTPUT_ENV) or cfg["output_dir"])


def _seed_dir(run: Path, seed: int) -> Path:
    return run / f"seed-{seed}"


def _dataset_for(cfg: dict, seed: int, data_path) -> Dataset:
    return read_dataset(data_path) if data_path else generate(generator_config(cfg, seed))


def _run_seeds(run: Path) -> list[int]:
    path = run / "summary.json"
    if not path.exists():
        raise FileNotFoundError(f"{run} has no summary.json; is it a pretrain output directory?")
    return [int(s) for s in _read_json(path)["seeds"]]


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def _mean(values) -> float | None:
    vals = [v for v in values if v is not None and not (isinstance(v, float) and math.isnan(v))]
    return float(np.mean(vals)) if vals else None


# ------------------------------------------------------------------ subcommands


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config, args.recipe, "gen-data")
    seed = cfg["seeds"][0] if args.seed is None else args.seed
    ds = generate(generator_config(cfg, seed))
    write_dataset(ds, args.out)
    if args.test_out:
        ratio = cfg["test_aligned_ratio"]
        write_dataset(generate(heldout_config(ds.config, cfg["test_n"], ratio)), args.test_out)
    log.info("wrote %d examples to %s", ds.n, args.out)
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = load_config(args.config, args.recipe, "pretrain")
    run = output_dir(args.out_dir, cfg)
    run.mkdir(parents=True, exist_ok=True)
    if args.config:
        atomic_write_text(run / "config.txt", Path(args.config).read_text(encoding="utf-8"))
    per_seed = {}
    for seed in cfg["seeds"]:
        ds = _dataset_for(cfg, seed, args.data)
        tc = train_config(cfg, seed, args.threads)
        sd = _seed_dir(run, seed)
        res = pretrain(ds, tc)
        checkpoint(res, tc, sd / CHECKPOINT_NAME)
        res.log.to_csv(sd / "runlog.csv")
        epochs = res.log.column("epoch")
        atomic_write_text(sd / "similarity.svg", line_chart(
            {"aligned": (epochs, res.log.column("sim_aligned_mean")),
             "conflicting": (epochs, res.log.column("sim_conflicting_mean"))},
            f"two-view cosine ({tc.mode}, seed {seed})", "epoch", "mean cosine"))
        info = summary(res, tc, {"seed": seed, "data": str(args.data) if args.data else None})
        write_json(sd / "summary.json", info)
        per_seed[str(seed)] = {"final_gap": info["final_gap"], "final_loss": info["final"]["loss"]}
        log.info("seed %d done: gap %.4f", seed, info["final_gap"])
    write_json(run / "summary.json", {
        "seeds": list(cfg["seeds"]),
        "mode": cfg["mode"],
        "runs": per_seed,
        "mean_final_gap": _mean(v["final_gap"] for v in per_seed.values()),
        "version": __version__,
    })
    return EXIT_OK


def _subgroup_report(pp, phi_te, te: Dataset) -> dict:
    probs = pp.predict_proba(phi_te)
    report = {}
    for j in range(te.confounds.shape[1]):
        groups = np.where(te.aligned[:, j], "aligned", "conflicting")
        if pp.binary:
            metrics = subgroup_metrics(probs, te.targets, groups)
        else:
            metrics = multiclass_subgroup_metrics(probs, te.targets, groups)
        report[f"confound{j}"] = {name: m.to_dict() for name, m in metrics.items()}
    return report


def cmd_probe(args) -> int:
    cfg = load_config(args.config, args.recipe, "probe")
    run = Path(args.run_dir)
    pconf = ProbeConfig(cfg["probe_max_iter"], cfg["probe_tol"])
    agg: dict[str, list] = {}
    for seed in _run_seeds(run):
        sd = _seed_dir(run, seed)
        result, _ = resume(sd / CHECKPOINT_NAME)
        train = _dataset_for(cfg, seed, args.data)
        test = read_dataset(args.test_data) if args.test_data else generate(
            heldout_config(train.config, cfg["test_n"], cfg["test_aligned_ratio"]))
        if train.n != result.state.n:
            raise ConsistencyError(f"seed {seed}: checkpoint covers {result.state.n} examples, data has {train.n}")
        pp = probe(extract(result.params, train), train.targets, pconf, train.config.cardinality)
        report = _subgroup_report(pp, extract(result.params, test), test)
        report["probe"] = {"iterations": pp.iterations, "converged": pp.converged}
        write_json(sd / "probe.json", report)
        rows = []
        for part, groups in report.items():
            if part == "probe":
                continue
            for name, m in groups.items():
                rows.append([part, name] + [m[k] for k in ("size", "prevalence", "accuracy", "auroc",
                                                           "precision", "recall")])
                agg.setdefault(f"{part}/{name}", []).append(m["accuracy"])
        write_csv(sd / "probe.csv", ["partition", "subgroup", "size", "prevalence", "accuracy", "auroc",
                                     "precision", "recall"], rows)
    write_json(run / "probe.json", {"mean_accuracy": {k: _mean(v) for k, v in agg.items()}})
    return EXIT_OK


def cmd_spectra(args) -> int:
    cfg = load_config(args.config, args.recipe, "spectra")
    run = Path(args.run_dir)
    tails, curves = [], {}
    for seed in _run_seeds(run):
        sd = _seed_dir(run, seed)
        result, _ = resume(sd / CHECKPOINT_NAME)
        ds = _dataset_for(cfg, seed, args.data)
        rep = spectrum(extract(result.params, ds))
        write_json(sd / "spectrum.json", rep.to_dict())
        write_csv(sd / "spectrum.csv", ["index", "singular_value", "normalized"],
                  [[i + 1, repr(float(s)), repr(float(v))]
                   for i, (s, v) in enumerate(zip(rep.singular_values, rep.normalized))])
        tails.append(rep.tail_mass)
        curves[f"seed {seed}"] = (np.arange(1, rep.normalized.size + 1), rep.normalized)
    write_json(run / "spectrum.json", {"mean_tail_mass": _mean(tails), "tail_mass": tails})
    if args.svg:
        atomic_write_text(run / "spectrum.svg", line_chart(curves, "normalized singular values", "index",
                                                           "sigma / sigma_1"))
    return EXIT_OK


def _flatten_probe(path: Path) -> dict[str, float]:
    if not path.exists():
        return {}
    out = {}
    for part, groups in _read_json(path).items():
        if part == "probe":
            continue
        for name, m in groups.items():
            out[f"{part}/{name}"] = m["accuracy"]
    return out


def compare_runs(run_a: Path, run_b: Path) -> dict:
    """Per-seed and mean deltas, always ``b - a``."""
    seeds_a, seeds_b = _run_seeds(run_a), _run_seeds(run_b)
    if seeds_a != seeds_b:
        raise ConsistencyError(f"seed lists differ: {seeds_a} vs {seeds_b}")
    per_seed = {}
    for seed in seeds_a:
        sa, sb = _seed_dir(run_a, seed), _seed_dir(run_b, seed)
        entry: dict = {}
        ga = _read_json(sa / "summary.json")["final_gap"]
        gb = _read_json(sb / "summary.json")["final_gap"]
        entry["similarity_gap_delta"] = gb - ga
        pa, pb = _flatten_probe(sa / "probe.json"), _flatten_probe(sb / "probe.json")
        entry["accuracy_delta"] = {k: pb[k] - pa[k] for k in sorted(pa.keys() & pb.keys())
                                   if pa[k] is not None and pb[k] is not None}
        if (sa / "spectrum.json").exists() and (sb / "spectrum.json").exists():
            entry["tail_mass_delta"] = (_read_json(sb / "spectrum.json")["tail_mass"]
                                        - _read_json(sa / "spectrum.json")["tail_mass"])
        per_seed[str(seed)] = entry
    keys = sorted({k for e in per_seed.values() for k in e["accuracy_delta"]})
    mean = {
        "similarity_gap_delta": _mean(e["similarity_gap_delta"] for e in per_seed.values()),
        "accuracy_delta": {k: _mean(e["accuracy_delta"].get(k) for e in per_seed.values()) for k in keys},
        "tail_mass_delta": _mean(e.get("tail_mass_delta") for e in per_seed.values()),
    }
    return {"a": str(run_a), "b": str(run_b), "seeds": seeds_a, "per_seed": per_seed, "mean": mean}


def cmd_compare(args) -> int:
    result = compare_runs(Path(args.run_a), Path(args.run_b))
    out = Path(args.out_dir) if args.out_dir else Path(os.environ.get(OUTPUT_ENV) or ".")
    write_json(out / "compare.json", result)
    print(json.dumps(result["mean"], indent=2, sort_keys=True))
    return EXIT_OK


# ------------------------------------------------------------------ entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="flat key = value experiment file")
    # SUPPRESS keeps a top-level --recipe from being reset by the subcommand default
    common.add_argument("--recipe", choices=sorted(RECIPES), default=argparse.SUPPRESS,
                        help="sampling hyperparameter bundle")

    p = argparse.ArgumentParser(prog="lassl", description="Learning-speed aware contrastive pretraining.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for similarity sweeps; bit-exact output only at 1")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--recipe", choices=sorted(RECIPES), help="sampling hyperparameter bundle")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset file")
    g.add_argument("-o", "--out", required=True)
    g.add_argument("--test-out", help="also write the held-out split")
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("pretrain", parents=[common], help="contrastive pretraining for every seed")
    t.add_argument("--data", help="dataset file; by default each seed generates its own")
    t.add_argument("-o", "--out-dir")
    t.set_defaults(func=cmd_pretrain)

    pr = sub.add_parser("probe", parents=[common], help="linear probe with subgroup metrics")
    pr.add_argument("run_dir")
    pr.add_argument("--data")
    pr.add_argument("--test-data")
    pr.set_defaults(func=cmd_probe)

    s = sub.add_parser("spectra", parents=[common], help="singular spectra of the representations")
    s.add_argument("run_dir")
    s.add_argument("--data")
    s.add_argument("--svg", action="store_true")
    s.set_defaults(func=cmd_spectra)

    c = sub.add_parser("compare", help="paired deltas between two run directories (b - a)")
    c.add_argument("run_a")
    c.add_argument("run_b")
    c.add_argument("-o", "--out-dir")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (ConsistencyError, FileNotFoundError, LasslError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
