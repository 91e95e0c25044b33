"""Command-line driver: gen-demos -> augment -> train -> eval -> report.

Workspace layout under ``<workspace>/<name>/``::

    seed_<s>/demos/            expert demonstrations
    seed_<s>/demos_dart/       DART demonstrations (same scenes, noisy execution)
    seed_<s>/aug_<method>/     augmented transitions + manifest.json (ha, spartn)
    seed_<s>/<method>/         policy.bin, losses.csv, eval.csv
    report.csv, report.txt     per-method mean success and standard error
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import shutil
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import policy as po, sim
from .config import METHODS, ConfigError, RunConfig, echo, load_config
from .dataset import demo_dirs, hash_tree, read_demo, read_transitions, write_demo
from .pipeline import build_augmented_dataset
from .seeding import derive_seed

log = logging.getLogger("spartn")


class MissingArtifact(RuntimeError):
    pass


class CommandFailed(RuntimeError):
    pass


def _demo_root(cfg: RunConfig, seed: int, method: str) -> Path:
    return cfg.seed_dir(seed) / ("demos_dart" if method == "dart" else "demos")


def _need(path: Path, command: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"{path} not found; produce it with `spartn {command}`")
    return path


def collect_demos(cfg: RunConfig, seed: int, dart: bool) -> list:
    """``n_demos`` successful episodes; failed expert episodes are skipped."""
    noise = cfg.dart if dart else None
    out, i = [], 0
    while len(out) < cfg.n_demos:
        if i >= 4 * cfg.n_demos + 20:
            raise CommandFailed(f"only {len(out)} of {cfg.n_demos} demos succeeded in {i} attempts")
        scene = derive_seed(seed, "demo", i)
        try:
            out.append(sim.collect_demo(cfg.env, scene, dart_noise=noise,
                                        dart_seed=derive_seed(seed, "dart", i)))
        except sim.EpisodeFailed:
            log.info("seed %d: demo attempt %d failed, skipped", seed, i)
        except sim.PlacementFailure as exc:
            raise CommandFailed(f"scene placement failed: {exc}") from None
        i += 1
    return out


def cmd_gen_demos(cfg: RunConfig) -> list[str]:
    dart = cfg.method == "dart"
    hashes = []
    for s in cfg.seeds:
        final = _demo_root(cfg, s, cfg.method)
        tmp = final.with_name("." + final.name + ".tmp")
        if tmp.exists():
            shutil.rmtree(tmp)
        for j, d in enumerate(collect_demos(cfg, s, dart)):
            write_demo(tmp / f"demo_{j:04d}", d)
        if final.exists():
            shutil.rmtree(final)
        tmp.parent.mkdir(parents=True, exist_ok=True)
        tmp.rename(final)
        h = hash_tree(final)
        hashes.append(h)
        log.info("seed %d: %d demos in %s (hash %s)", s, cfg.n_demos, final, h[:12])
    return hashes


def cmd_augment(cfg: RunConfig) -> list[dict]:
    if cfg.method not in ("ha", "spartn"):
        raise CommandFailed(f"method {cfg.method!r} has nothing to augment; use ha or spartn")
    ws = (np.array(cfg.env.workspace_lo), np.array(cfg.env.workspace_hi))
    out = []
    for s in cfg.seeds:
        demos = _need(_demo_root(cfg, s, cfg.method), "gen-demos")
        m = build_augmented_dataset(demos, cfg.seed_dir(s) / f"aug_{cfg.method}",
                                    replace(cfg.augment, seed=s), cfg.parallelism, cfg.field,
                                    ws, kind=cfg.method)
        failed = [d for d in m["demos"] if not d["ok"]]
        if failed and len(failed) == len(m["demos"]):
            raise CommandFailed(f"seed {s}: every demo failed, first error: {failed[0]['error']}")
        if failed:
            log.warning("seed %d: %d of %d demos failed", s, len(failed), len(m["demos"]))
        log.info("seed %d: %d augmented transitions (hash %s)", s, m["total"], m["content_hash"][:12])
        out.append(m)
    return out


def load_training_sets(cfg: RunConfig, seed: int):
    bounds = cfg.env.action_bounds
    root = _need(_demo_root(cfg, seed, cfg.method), "gen-demos")
    demos = [read_demo(d) for d in demo_dirs(root)]
    original = po.demo_dataset(demos, bounds)
    augmented = None
    if cfg.method in ("ha", "spartn"):
        aug_dir = _need(cfg.seed_dir(seed) / f"aug_{cfg.method}", "augment")
        rows = []
        for d in sorted(aug_dir.glob("aug_*")):
            rows.extend(read_transitions(d, demo_id=int(d.name.split("_")[1])))
        augmented = po.transition_dataset(rows, bounds)
    return original, augmented


def cmd_train(cfg: RunConfig) -> list[str]:
    hashes = []
    for s in cfg.seeds:
        original, augmented = load_training_sets(cfg, s)
        res = po.train(original, augmented, replace(cfg.train, seed=s), cfg.env.action_bounds,
                       image_res=cfg.env.height)
        out = cfg.seed_dir(s) / cfg.method
        out.mkdir(parents=True, exist_ok=True)
        po.save_policy(out / "policy.bin", res.policy)
        with open(out / "losses.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "loss"])
            w.writerows((i, repr(float(x))) for i, x in enumerate(res.losses))
        h = hash_tree(out, exclude=("eval.csv",))
        hashes.append(h)
        log.info("seed %d: trained %s on %d original + %d augmented (aug fraction %.3f)", s,
                 cfg.method, len(original), 0 if augmented is None else len(augmented),
                 res.aug_fraction)
    return hashes


def cmd_eval(cfg: RunConfig) -> list[float]:
    rates = []
    for s in cfg.seeds:
        out = cfg.seed_dir(s) / cfg.method
        p = po.load_policy(_need(out / "policy.bin", "train"))
        r = po.evaluate(p, cfg.env, cfg.episodes, derive_seed(s, "eval"))
        r.write_csv(out / "eval.csv")
        rates.append(r.success_rate)
        log.info("seed %d: %s success %.3f (95%% CI %.3f-%.3f)", s, cfg.method, r.success_rate,
                 *r.interval)
    return rates


def summarize(rates: list[float]) -> tuple[float, float | None]:
    """Mean and standard error (sample std / sqrt(n)); no SE for a single seed."""
    mean = float(np.mean(rates))
    if len(rates) < 2:
        return mean, None
    return mean, float(np.std(rates, ddof=1) / math.sqrt(len(rates)))


def read_eval(path: Path) -> float:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise CommandFailed(f"{path} has no episodes")
    return sum(int(r["success"]) for r in rows) / len(rows)


def cmd_report(cfg: RunConfig, methods=METHODS) -> list[dict]:
    table = []
    for m in methods:
        rates = {}
        for s in cfg.seeds:
            path = cfg.seed_dir(s) / m / "eval.csv"
            if path.exists():
                rates[s] = read_eval(path)
        if not rates:
            continue
        mean, se = summarize(list(rates.values()))
        table.append({"method": m, "n_seeds": len(rates), "mean": mean, "se": se,
                      "per_seed": ";".join(f"{s}:{r:.3f}" for s, r in rates.items())})
    if not table:
        raise MissingArtifact(f"no eval.csv under {cfg.root}; produce them with `spartn eval`")
    cfg.root.mkdir(parents=True, exist_ok=True)
    with open(cfg.root / "report.csv", "w", newline="") as f:
        w = csv.DictWriter(f, ["method", "n_seeds", "mean", "se", "per_seed"])
        w.writeheader()
        for row in table:
            w.writerow({**row, "mean": f"{row['mean']:.4f}",
                        "se": "" if row["se"] is None else f"{row['se']:.4f}"})
    lines = [f"{'method':8s} {'seeds':>5s} {'success':>8s} {'se':>7s}"]
    for row in table:
        se = "" if row["se"] is None else f"{100 * row['se']:.1f}"
        lines.append(f"{row['method']:8s} {row['n_seeds']:5d} {100 * row['mean']:7.1f}% {se:>7s}")
    text = "\n".join(lines) + "\n"
    (cfg.root / "report.txt").write_text(text)
    print(text, end="")
    return table


def cmd_run(cfg: RunConfig, methods=METHODS) -> list[dict]:
    """Every stage for each method in turn, then the comparison report."""
    for m in methods:
        mc = replace(cfg, method=m)
        t0 = time.perf_counter()
        if m == "dart" or not _demo_root(mc, cfg.seeds[0], m).exists():
            cmd_gen_demos(mc)
        if m in ("ha", "spartn"):
            cmd_augment(mc)
        cmd_train(mc)
        cmd_eval(mc)
        log.info("%s finished in %.0f s", m, time.perf_counter() - t0)
    return cmd_report(cfg, methods)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spartn", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, hlp in (("gen-demos", "collect expert (or DART) demonstrations"),
                      ("augment", "build the augmented dataset (ha or spartn)"),
                      ("train", "train the behavior-cloning policy"),
                      ("eval", "closed-loop evaluation of the trained policy"),
                      ("report", "aggregate success rates across methods and seeds"),
                      ("run", "all stages for several methods, then report"),
                      ("show-config", "print the resolved configuration")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--config", help="INI run configuration")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one setting (repeatable)")
        if name in ("report", "run"):
            p.add_argument("--methods", default=",".join(METHODS),
                           help="comma-separated subset of " + ",".join(METHODS))
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        methods = tuple(m.strip() for m in getattr(args, "methods", "").split(",") if m.strip())
        bad = [m for m in methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown method(s): {', '.join(bad)}")
        if args.command == "gen-demos":
            cmd_gen_demos(cfg)
        elif args.command == "augment":
            cmd_augment(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "eval":
            cmd_eval(cfg)
        elif args.command == "report":
            cmd_report(cfg, methods)
        elif args.command == "run":
            cmd_run(cfg, methods)
        else:
            print(json.dumps(echo(cfg), indent=1))
    except (ConfigError, MissingArtifact, CommandFailed) as exc:
        print(f"spartn {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
