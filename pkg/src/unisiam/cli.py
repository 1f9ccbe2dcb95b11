"""Command-line interface.

Subcommands: pretrain, distill, eval, mi-bench, diag, gen-data. Every
run prints its fully resolved configuration (in config-file grammar)
before doing any work, so any run can be reproduced by saving that
banner to a file and passing --config. Exit codes: 0 success, 1
configuration or path problem, 2 runtime failure (divergence, corrupt
file formats).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from . import config as cfgmod
from .data import write_dataset
from .diagnostics import (alignment_uniformity, singular_spectrum,
                          write_rank_summary_csv, write_spectrum_csv)
from .errors import ConfigError, DivergenceError, FormatError, UnisiamError
from .fewshot import evaluate, write_episode_csv, write_summary_csv
from .mibench import analytic_mi, run_bias_sweep, write_mi_csv
from .models import default_stack, load_checkpoint, save_checkpoint
from .plots import line_chart, write_svg
from .trainer import distill, pretrain


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of calling sys.exit(2)."""

    def error(self, message):
        raise ConfigError(message)


def _add_set_flags(p: _Parser) -> None:
    p.add_argument("--config", metavar="PATH", help="config file to load")
    p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                   help="override one config key, e.g. --set train.lr=0.05")


# flag -> config key aliases per subcommand; every alias is sugar for --set
_ALIASES = {
    "pretrain": {"regime": "train.regime", "epochs": "train.epochs",
                 "batch_size": "train.batch_size", "lr": "train.lr",
                 "seed": "train.seed", "augment": "train.augment"},
    "distill": {"alpha": "loss.alpha", "epochs": "train.epochs",
                "batch_size": "train.batch_size", "lr": "train.lr",
                "seed": "train.seed", "augment": "train.augment"},
    "eval": {"nway": "eval.n_way", "kshot": "eval.k_shot",
             "queries": "eval.n_query", "episodes": "eval.episodes",
             "seed": "eval.seed", "workers": "eval.workers"},
    "mi-bench": {"dim": "mi.dim", "rho": "mi.rho", "seeds": "mi.seeds",
                 "steps": "mi.steps", "batch": "mi.batch",
                 "workers": "mi.workers", "seed": "mi.seeds"},
    "diag": {"split": "diag.split", "max_rows": "diag.max_rows"},
    "gen-data": {"seed": "world.seed", "classes": "world.class_count",
                 "per_class": "world.per_class", "dim": "world.ambient_dim"},
}


def build_parser() -> _Parser:
    root = _Parser(prog="unisiam", description=__doc__)
    sub = root.add_subparsers(dest="command", required=True,
                              parser_class=_Parser)

    p = sub.add_parser("pretrain",
                       help="self-supervised pretraining run")
    _add_set_flags(p)
    for flag in _ALIASES["pretrain"]:
        p.add_argument(f"--{flag.replace('_', '-')}", dest=flag)
    p.add_argument("--out", default="pretrain.usia", help="checkpoint path")
    p.add_argument("--log", default="train_log.csv", help="epoch log CSV path")

    p = sub.add_parser("distill",
                       help="train a student against a frozen teacher")
    _add_set_flags(p)
    p.add_argument("--teacher", required=True, help="teacher checkpoint")
    for flag in _ALIASES["distill"]:
        p.add_argument(f"--{flag.replace('_', '-')}", dest=flag)
    p.add_argument("--out", default="student.usia", help="checkpoint path")
    p.add_argument("--log", default="distill_log.csv", help="epoch log CSV path")

    p = sub.add_parser("eval", help="episodic few-shot evaluation")
    _add_set_flags(p)
    p.add_argument("--ckpt", help="encoder checkpoint (omit for random init)")
    for flag in _ALIASES["eval"]:
        p.add_argument(f"--{flag.replace('_', '-')}", dest=flag)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--shuffle-labels", action="store_true",
                   help="chance-level control: permute support labels")
    p.add_argument("--out-episodes", default="episodes.csv")
    p.add_argument("--out-summary", default="summary.csv")

    p = sub.add_parser("mi-bench",
                       help="MI estimator bias sweep on correlated Gaussians")
    _add_set_flags(p)
    for flag in set(_ALIASES["mi-bench"]):
        p.add_argument(f"--{flag.replace('_', '-')}", dest=flag)
    p.add_argument("--out", default="mi_sweep.csv")
    p.add_argument("--svg", help="optional estimate-vs-truth plot path")

    p = sub.add_parser("diag",
                       help="embedding spectrum and collapse diagnostics")
    _add_set_flags(p)
    p.add_argument("--ckpt", required=True, help="encoder checkpoint")
    for flag in _ALIASES["diag"]:
        p.add_argument(f"--{flag.replace('_', '-')}", dest=flag)
    p.add_argument("--out-spectrum", default="spectrum.csv")
    p.add_argument("--out-summary", default="rank_summary.csv")
    p.add_argument("--svg", help="optional spectrum plot path")

    p = sub.add_parser("gen-data",
                       help="generate a synthetic world and dump one split")
    _add_set_flags(p)
    for flag in _ALIASES["gen-data"]:
        p.add_argument(f"--{flag.replace('_', '-')}", dest=flag)
    p.add_argument("--split", default="train", choices=("train", "val", "test"))
    p.add_argument("--out", default="world.fsds")
    return root


def _resolve(args) -> cfgmod.Config:
    file_values = cfgmod.load_config_file(args.config) if args.config else {}
    overrides: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    aliases = _ALIASES[args.command]
    for flag, key in aliases.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return cfgmod.resolve(file_values, overrides)


def _banner(cfg: cfgmod.Config) -> None:
    sys.stdout.write("# resolved config\n")
    sys.stdout.write(cfg.render())
    sys.stdout.flush()


def _pool(cfg: cfgmod.Config, split: str):
    _, pools = cfgmod.build_world(cfg)
    return pools, pools[split]


def _cmd_pretrain(args) -> int:
    cfg = _resolve(args)
    _banner(cfg)
    _, pools = cfgmod.build_world(cfg)
    stack, log = pretrain(cfgmod.build_train_config(cfg), pools)
    save_checkpoint(stack, args.out)
    log.to_csv(args.log)
    last = log.rows[-1]
    print(f"checkpoint {args.out}  log {args.log}  final_loss {last.total:.6f}")
    return 0


def _cmd_distill(args) -> int:
    cfg = _resolve(args)
    _banner(cfg)
    teacher = load_checkpoint(args.teacher)
    teacher.freeze()
    _, pools = cfgmod.build_world(cfg)
    tc = cfgmod.build_train_config(cfg)
    if tc.regime != "distill":
        # the subcommand itself decides the regime
        tc = dataclasses.replace(tc, regime="distill")
    student, log = distill(tc, teacher, pools)
    save_checkpoint(student, args.out)
    log.to_csv(args.log)
    print(f"checkpoint {args.out}  log {args.log}  final_loss {log.rows[-1].total:.6f}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _resolve(args)
    _banner(cfg)
    pools, pool = _pool(cfg, args.split)
    if args.ckpt:
        stack = load_checkpoint(args.ckpt)
    else:
        stack = default_stack(cfg["world.ambient_dim"],
                              np.random.default_rng(cfg["eval.seed"]))
    result = evaluate(stack, pool, cfgmod.build_episode_spec(cfg),
                      cfgmod.build_probe_config(cfg),
                      workers=cfg["eval.workers"],
                      shuffle_labels=args.shuffle_labels)
    write_episode_csv(result, args.out_episodes)
    write_summary_csv(result, args.out_summary)
    print(f"{result.mean:.6f},{result.ci95:.6f},{result.spec.episodes}")
    return 0


def _cmd_mi_bench(args) -> int:
    cfg = _resolve(args)
    _banner(cfg)
    results = run_bias_sweep(cfg["mi.rho"], cfg["mi.seeds"],
                             dim=cfg["mi.dim"], batch=cfg["mi.batch"],
                             steps=cfg["mi.steps"], lr0=cfg["mi.lr0"],
                             eval_batches=cfg["mi.eval_batches"],
                             workers=cfg["mi.workers"])
    write_mi_csv(results, args.out)
    for r in results:
        print(f"rho {r.rho:.3f} seed {r.seed}: true {r.true_mi:.4f} "
              f"nce {r.est_nce:.4f} mine {r.est_mine:.4f}")
    if args.svg:
        rhos = sorted({r.rho for r in results})
        def mean_of(field):
            return np.array([np.mean([getattr(r, field) for r in results
                                      if r.rho == rho]) for rho in rhos])
        xs = np.array(rhos)
        svg = line_chart([("true MI", xs, mean_of("true_mi")),
                          ("I_NCE", xs, mean_of("est_nce")),
                          ("I_MINE", xs, mean_of("est_mine"))],
                         title="MI estimates vs correlation",
                         xlabel="rho", ylabel="nats")
        write_svg(svg, args.svg)
    print(f"wrote {args.out}" + (f" and {args.svg}" if args.svg else ""))
    return 0


def _cmd_diag(args) -> int:
    cfg = _resolve(args)
    _banner(cfg)
    stack = load_checkpoint(args.ckpt)
    pools, pool = _pool(cfg, cfg["diag.split"])
    rows = np.concatenate(pool.class_data)[:cfg["diag.max_rows"]]
    z = stack.project(rows, training=False).data
    report = singular_spectrum(z, source="projection")
    write_spectrum_csv(report, args.out_spectrum)
    write_rank_summary_csv(report, z.shape[1], args.out_summary)
    if args.svg:
        sigma = report.singular_values
        svg = line_chart([("singular values", np.arange(1, sigma.size + 1), sigma)],
                         title="projection embedding spectrum",
                         xlabel="index", ylabel="sigma")
        write_svg(svg, args.svg)
    print(f"effective_rank {report.effective_rank:.6f}  n {report.sample_count}")
    return 0


def _cmd_gen_data(args) -> int:
    cfg = _resolve(args)
    _banner(cfg)
    pools, pool = _pool(cfg, args.split)
    vectors = np.concatenate(pool.class_data)
    labels = np.concatenate([np.full(m.shape[0], cid, dtype=np.uint32)
                             for cid, m in zip(pool.class_ids, pool.class_data)])
    write_dataset(args.out, vectors.astype(np.float32), labels)
    print(f"wrote {args.out}: {vectors.shape[0]} vectors dim {vectors.shape[1]}")
    return 0


_COMMANDS = {
    "pretrain": _cmd_pretrain,
    "distill": _cmd_distill,
    "eval": _cmd_eval,
    "mi-bench": _cmd_mi_bench,
    "diag": _cmd_diag,
    "gen-data": _cmd_gen_data,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DivergenceError, FormatError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except UnisiamError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
