"""Command-line pipeline: synth, train, infer, eval-sim, project, mule-bench.

Settings come from a flat ``key = value`` file (``#`` starts a comment),
then ``--seed`` and ``--set key=value`` overrides. Every run writes the
fully resolved settings to ``resolved_config.txt`` in the output directory;
feeding that file back with ``--config`` reproduces the run.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import downstream, evaluate, model, sampler, synth, trainer
from .graph import NodeType, build_graph, load_graph, write_records
from ._rng import derive

log = logging.getLogger("txsage")

# (prefix, dataclass); the shared ``seed`` key replaces each section's own seed
_SECTIONS = (
    ("", model.ModelConfig),
    ("", trainer.TrainConfig),
    ("", sampler.SamplerConfig),
    ("", synth.PopulationConfig),
    ("mule_", synth.MuleConfig),
    ("logreg_", downstream.LogRegConfig),
)
_EXTRA = {"seed": 0, "eval_n_neg": 0, "eval_core_only": True, "train_week": 1,
          "project_label": "region"}
RESOLVED_NAME = "resolved_config.txt"


class ConfigError(ValueError):
    pass


def _defaults() -> dict:
    out = dict(_EXTRA)
    for prefix, cls in _SECTIONS:
        for f in dataclasses.fields(cls):
            if f.name == "seed":
                continue
            key = prefix + f.name
            if key in out:
                raise AssertionError(f"duplicate config key {key}")
            out[key] = getattr(cls(), f.name)
    return out


DEFAULTS = _defaults()


def _parse_value(key: str, text: str):
    default = DEFAULTS[key]
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0"):
                raise ValueError(text)
            return low in ("true", "1")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            kind = type(default[0]) if default else str
            return tuple(kind(t) for t in items)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _parse_value(key, value)
    return out


def resolve(config_path: str | None, seed: int | None, overrides: list[str]) -> dict:
    cfg = dict(DEFAULTS)
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {config_path}")
        cfg.update(parse_config_text(path.read_text(encoding="utf-8"), config_path))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}")
        cfg[key] = _parse_value(key, value)
    if seed is not None:
        cfg["seed"] = seed
    return cfg


def format_config(cfg: dict) -> str:
    return "".join(f"{k} = {_format_value(cfg[k])}\n" for k in sorted(cfg))


def section(cfg: dict, cls, prefix: str = ""):
    kwargs = {}
    for f in dataclasses.fields(cls):
        kwargs[f.name] = cfg["seed"] if f.name == "seed" else cfg[prefix + f.name]
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _configs(cfg: dict):
    return (section(cfg, model.ModelConfig), section(cfg, trainer.TrainConfig),
            section(cfg, sampler.SamplerConfig))


def _need_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return p


def cmd_synth(cfg: dict, out: Path, args) -> None:
    pop_cfg = section(cfg, synth.PopulationConfig)
    mule_cfg = section(cfg, synth.MuleConfig, "mule_")
    pop = synth.generate_population(pop_cfg)
    truth, scheme = pop.truth, None
    for w in range(pop_cfg.weeks):
        recs = synth.generate_week(pop, truth, w, pop_cfg, derive(pop_cfg.seed, "week", w))
        recs, truth, scheme = synth.inject_mules(recs, truth, mule_cfg.n_mules, mule_cfg.spokes_per_mule,
                                                 derive(pop_cfg.seed, "mules", w), mule_cfg, scheme, w)
        write_records(out / f"week_{w}.csv", recs)
        log.info("week %d: %d records", w, len(recs))
    synth.write_truth(out / "truth.csv", truth)


def cmd_train(cfg: dict, out: Path, args) -> None:
    model_cfg, train_cfg, sampler_cfg = _configs(cfg)
    g = load_graph(_need_file(args.week))
    result = trainer.train(g, model_cfg, train_cfg, sampler_cfg)
    model.save_checkpoint(out / "model.ckpt", result.params, seed=train_cfg.seed)
    trainer.write_training_log(out / "train_log.csv", result)


def cmd_infer(cfg: dict, out: Path, args) -> None:
    _, _, sampler_cfg = _configs(cfg)
    params, _ = model.load_checkpoint(_need_file(args.checkpoint))
    g = load_graph(_need_file(args.week))
    table = model.embed_graph(g, params, sampler_cfg)
    model.write_embeddings(out / f"embeddings_{g.week}.csv", g, table)


def cmd_eval_sim(cfg: dict, out: Path, args) -> None:
    if len(args.weeks) < 2:
        raise ValueError(f"eval-sim needs at least 2 week files, got {len(args.weeks)}")
    _, _, sampler_cfg = _configs(cfg)
    params, _ = model.load_checkpoint(_need_file(args.checkpoint))
    weeks = [load_graph(_need_file(p)) for p in args.weeks]
    n_neg = cfg["eval_n_neg"] or None
    series = evaluate.weekly_series(params, weeks, sampler_cfg, n_neg, cfg["eval_core_only"])
    evaluate.write_reports(out / "similarity.csv", series.reports)
    evaluate.write_trends(out / "trend.csv", series)


def cmd_project(cfg: dict, out: Path, args) -> None:
    ids, types, vectors = model.read_embeddings(_need_file(args.embeddings))
    truth = synth.read_truth(_need_file(args.truth))
    field = cfg["project_label"]
    if field not in {f.name for f in dataclasses.fields(synth.Account)}:
        raise ConfigError(f"project_label must name a truth column, got {field!r}")
    labels = [getattr(truth[i], field) if i in truth else "" for i in ids]
    labels = [int(v) if isinstance(v, bool) else (v.value if isinstance(v, NodeType) else v)
              for v in labels]
    proj = evaluate.project_2d(vectors)
    evaluate.write_projection(out / "projection.csv", ids, types, proj.coords, labels)


def cmd_mule_bench(cfg: dict, out: Path, args) -> None:
    model_cfg, train_cfg, sampler_cfg = _configs(cfg)
    result = downstream.mule_benchmark(
        section(cfg, synth.PopulationConfig), section(cfg, synth.MuleConfig, "mule_"),
        model_cfg, train_cfg, sampler_cfg, section(cfg, downstream.LogRegConfig, "logreg_"),
        train_week=cfg["train_week"])
    downstream.write_results(out / "results.csv", result.comparison)


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval-sim": cmd_eval_sim,
    "project": cmd_project,
    "mule-bench": cmd_mule_bench,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value settings file")
    common.add_argument("--seed", type=int, help="overrides the seed key")
    common.add_argument("--out", default=".", help="output directory (created if missing)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one setting; repeatable")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="txsage", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write week CSVs and truth.csv")
    p = sub.add_parser("train", parents=[common], help="train on one week file")
    p.add_argument("week")
    p = sub.add_parser("infer", parents=[common], help="embed every node of a week file")
    p.add_argument("checkpoint")
    p.add_argument("week")
    p = sub.add_parser("eval-sim", parents=[common], help="weekly cosine-gap report")
    p.add_argument("checkpoint")
    p.add_argument("weeks", nargs="+")
    p = sub.add_parser("project", parents=[common], help="2-D PCA projection of embeddings")
    p.add_argument("embeddings")
    p.add_argument("truth")
    sub.add_parser("mule-bench", parents=[common], help="baseline vs embedding-augmented mule detection")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve(args.config, args.seed, args.set)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / RESOLVED_NAME).write_text(format_config(cfg), encoding="utf-8")
        COMMANDS[args.command](cfg, out, args)
    except Exception as exc:  # one parsable line, never a traceback
        msg = " ".join(str(exc).split())
        print(f"txsage: error: {args.command}: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
