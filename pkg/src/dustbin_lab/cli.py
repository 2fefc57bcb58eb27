"""Command-line pipeline: train, attack, eval, select-outdist, plot.

Every subcommand takes --config (the experiment file), an optional --seed
override, --out for the output directory, and --threads (kept at 1 by
default; sample loops run sequentially either way, so results never depend
on it). Exit codes: 0 success, 2 usage/config error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys

from . import datasets, harness, models, outdist, viz
from .attacks import ATTACK_NAMES, run_attack, write_attack_csv
from .models import ConfigError
from .runconfig import (
    RunConfig,
    attack_names,
    build_attack_config,
    build_in_dist,
    build_interp_config,
    build_mix_spec,
    build_model_config,
    build_outdist,
    build_train_config,
    load_runconfig,
    stage_seed,
)


def _ensure_out(args) -> str:
    out = args.out or "runs"
    os.makedirs(out, exist_ok=True)
    return out


def _write_meta(cfg: RunConfig, out: str, stage: str, extra: dict) -> None:
    meta = {
        "experiment": cfg.name,
        "config_sha256": cfg.sha256,
        "master_seed": cfg.master_seed,
        "stage": stage,
    }
    meta.update(extra)
    path = os.path.join(out, f"{cfg.name}_{stage}_meta.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(meta, f, sort_keys=True, indent=2)


def _build_training_mix(cfg: RunConfig, naive_model):
    """Assemble the augmented training mix from the configured sources."""
    in_dist = build_in_dist(cfg, "train")
    spec = build_mix_spec(cfg)
    out_set = build_outdist(cfg, in_dist) if spec.out_dist_count else None
    interp_set = (
        datasets.interpolate(in_dist, naive_model, build_interp_config(cfg))
        if spec.interpolated_count
        else None
    )
    adv_set = None
    if spec.adversarial_count:
        adv_cfg = build_attack_config(cfg, "ifgs")
        adv_set = datasets.adversarial_dustbin(
            in_dist,
            naive_model,
            adv_cfg,
            spec.adversarial_count,
            stage_seed(cfg.master_seed, "adversarial"),
        )
    return datasets.build_mix(
        in_dist, out_set, interp_set, adv_set, spec, stage_seed(cfg.master_seed, "mix")
    )


def cmd_train(args) -> int:
    cfg = load_runconfig(args.config, args.seed)
    out = _ensure_out(args)
    in_dist = build_in_dist(cfg, "train")

    naive_cfg = build_model_config(cfg, in_dist, augmented=False)
    naive = models.build(naive_cfg, stage_seed(cfg.master_seed, "train-naive"))
    naive, naive_hist = models.train(
        naive, in_dist, build_train_config(cfg, stage_seed(cfg.master_seed, "train-naive"))
    )
    naive_path = os.path.join(out, f"{cfg.name}_naive.ckpt")
    models.save_checkpoint(naive, naive_path)
    _write_loss(naive_hist, os.path.join(out, f"{cfg.name}_naive_loss.csv"))
    written = {"naive_checkpoint": naive_path}

    if cfg.has("mix"):
        mix = _build_training_mix(cfg, naive)
        aug_cfg = build_model_config(cfg, in_dist, augmented=True)
        augmented = models.build(aug_cfg, stage_seed(cfg.master_seed, "train-augmented"))
        augmented, aug_hist = models.train(
            augmented,
            mix,
            build_train_config(cfg, stage_seed(cfg.master_seed, "train-augmented")),
        )
        aug_path = os.path.join(out, f"{cfg.name}_augmented.ckpt")
        models.save_checkpoint(augmented, aug_path)
        _write_loss(aug_hist, os.path.join(out, f"{cfg.name}_augmented_loss.csv"))
        written["augmented_checkpoint"] = aug_path
        written["mix_size"] = len(mix)

    shutil.copyfile(cfg.source_path, os.path.join(out, f"{cfg.name}_config.ini"))
    _write_meta(cfg, out, "train", written)
    print(f"wrote {', '.join(str(v) for v in written.values())}")
    return 0


def _write_loss(history, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("epoch,loss\n")
        for epoch, loss in enumerate(history):
            f.write(f"{epoch},{loss!r}\n")


def cmd_attack(args) -> int:
    cfg = load_runconfig(args.config, args.seed)
    out = _ensure_out(args)
    if args.attack not in ATTACK_NAMES:
        raise ConfigError(
            f"unknown attack {args.attack!r}; valid names: {', '.join(ATTACK_NAMES)}"
        )
    model = models.load_checkpoint(args.model)
    attack_cfg = build_attack_config(
        cfg,
        args.attack,
        {"epsilon": args.epsilon, "iterations": args.iterations, "kappa": args.kappa},
    )
    lset = build_in_dist(cfg, args.split)
    limit = args.limit or len(lset)
    rows = []
    adv_samples, adv_labels = [], []
    for i in range(min(limit, len(lset))):
        res = run_attack(
            model, lset.samples[i], lset.labels[i], args.attack, attack_cfg, lset.domain
        )
        rows.append((i, args.attack, lset.labels[i], res))
        adv_samples.append(res.x_adv)
        adv_labels.append(lset.labels[i])
    csv_path = os.path.join(out, f"{cfg.name}_{args.attack}_attacks.csv")
    write_attack_csv(csv_path, rows)
    written = [csv_path]
    if args.adv_out:
        adv_set = datasets.LabeledSet(
            adv_samples, adv_labels, lset.k_classes, lset.domain, f"{args.attack}-adv"
        )
        adv_set.to_csv(args.adv_out)
        written.append(args.adv_out)
    _write_meta(cfg, out, f"attack-{args.attack}", {"rows": len(rows)})
    print(f"wrote {', '.join(written)}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_runconfig(args.config, args.seed)
    out = _ensure_out(args)
    targets = [(os.path.basename(p), models.load_checkpoint(p)) for p in args.model]
    source = models.load_checkpoint(args.source) if args.source else None
    test_set = build_in_dist(cfg, "test")
    out_test = build_outdist(cfg, test_set, split="test") if cfg.has("outdist") else None
    threshold = cfg.get("eval", "confidence_threshold", default=0.5, cast=float)
    limit = cfg.get("eval", "attack_limit", default=200, cast=int)
    attack_set = test_set.subset(range(min(limit, len(test_set))))

    report = harness.EvalReport(
        metadata={
            "config_sha256": cfg.sha256,
            "master_seed": cfg.master_seed,
            "confidence_threshold": threshold,
        }
    )
    for name, model in targets:
        report.add(name, "in-dist", harness.evaluate(model, test_set, threshold))
        if out_test is not None:
            report.add(name, "out-dist", harness.evaluate(model, out_test, threshold))
        if source is not None:
            for attack in attack_names(cfg):
                cell = harness.blackbox_transfer(
                    source, model, attack, build_attack_config(cfg, attack), attack_set
                )
                report.add(name, attack, cell)
    csv_path = os.path.join(out, f"{cfg.name}_report.csv")
    report.to_csv(csv_path)
    txt_path = os.path.join(out, f"{cfg.name}_report.txt")
    with open(txt_path, "w", encoding="utf-8") as f:
        f.write(report.to_text())
    json_path = os.path.join(out, f"{cfg.name}_report.json")
    with open(json_path, "w", encoding="utf-8") as f:
        f.write(report.to_json())
    print(report.to_text())
    print(f"wrote {csv_path}, {txt_path}, {json_path}")
    return 0


def cmd_select_outdist(args) -> int:
    cfg = load_runconfig(args.config, args.seed)
    out = _ensure_out(args)
    model = models.load_checkpoint(args.model)
    if model.config.augmented:
        raise ConfigError("select-outdist needs the naive checkpoint")
    in_dist = build_in_dist(cfg, "train")
    sections = [s for s in cfg.sections if s == "outdist" or s.startswith("outdist.")]
    if not sections:
        raise ConfigError("no [outdist] sections to rank")
    candidates = []
    for section in sections:
        lset = build_outdist(cfg, in_dist, section=section)
        name = section.split(".", 1)[1] if "." in section else lset.name
        candidates.append((name, lset))
    threshold = cfg.get("eval", "confidence_threshold", default=0.5, cast=float)
    reports = outdist.rank_candidates(model, candidates, threshold)
    for report in reports:
        base = os.path.join(out, f"{cfg.name}_outdist_{report.set_name}")
        outdist.write_histogram_csv(report, base + ".csv")
        viz.write_ppm(viz.histogram_raster(report.histogram.counts), base + ".ppm")
    summary = os.path.join(out, f"{cfg.name}_outdist_ranking.csv")
    with open(summary, "w", encoding="utf-8") as f:
        f.write("rank,set,score\n")
        for rank, report in enumerate(reports):
            f.write(f"{rank},{report.set_name},{report.score!r}\n")
    print(f"wrote {summary}")
    for rank, report in enumerate(reports):
        print(f"  {rank}: {report.set_name} score={report.score:.4f}")
    return 0


def cmd_plot(args) -> int:
    cfg = load_runconfig(args.config, args.seed)
    out = _ensure_out(args)
    model = models.load_checkpoint(args.model)
    resolution = args.resolution
    if args.kind == "regions":
        bounds = tuple(float(v) for v in args.bounds.split(","))
        if len(bounds) != 4:
            raise ConfigError("--bounds needs xmin,xmax,ymin,ymax")
        grid = viz.decision_regions(model, bounds, resolution)
        path = os.path.join(out, f"{cfg.name}_regions.ppm")
        viz.write_ppm(grid, path)
        print(f"wrote {path}")
        return 0
    if args.kind == "church-window":
        lset = build_in_dist(cfg, "test")
        index = args.index
        attack_cfg = build_attack_config(cfg, args.attack or "fgs")
        res = run_attack(
            model,
            lset.samples[index],
            lset.labels[index],
            args.attack or "fgs",
            attack_cfg,
            lset.domain,
        )
        direction = res.x_adv - lset.samples[index]
        extent = args.extent or 2.0 * max(res.linf_norm, 1e-3)
        grids = viz.church_window(
            model,
            lset.samples[index],
            direction,
            n_orthogonal=args.windows,
            extent=extent,
            resolution=resolution,
            seed=stage_seed(cfg.master_seed, "plot"),
        )
        paths = []
        for i, grid in enumerate(grids):
            path = os.path.join(out, f"{cfg.name}_window_{index}_{i}.ppm")
            viz.write_ppm(grid, path)
            paths.append(path)
        print(f"wrote {', '.join(paths)}")
        return 0
    if args.kind == "pca":
        lset = build_in_dist(cfg, "test")
        feats = model.features(lset.stacked())
        projection = viz.pca_project(feats, k=3, seed=stage_seed(cfg.master_seed, "plot"))
        projection.group_labels = [str(y) for y in lset.labels]
        path = os.path.join(out, f"{cfg.name}_pca.csv")
        viz.write_projection_csv(projection, path)
        print(f"wrote {path}")
        return 0
    if args.kind == "histogram":
        in_dist = build_in_dist(cfg, "train")
        lset = build_outdist(cfg, in_dist)
        h = outdist.misclass_histogram(model, lset)
        path = os.path.join(out, f"{cfg.name}_histogram.ppm")
        viz.write_ppm(viz.histogram_raster(h.counts), path)
        print(f"wrote {path}")
        return 0
    raise ConfigError(f"unknown plot kind {args.kind!r}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dustbin-lab",
        description="Train and probe K+1 dustbin-class classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out", default=None, help="output directory (default runs/)")
        p.add_argument(
            "--threads",
            type=int,
            default=1,
            help="worker bound for sample loops (1 keeps runs exactly reproducible)",
        )

    p = sub.add_parser("train", help="train naive and augmented checkpoints")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="run one attack over a dataset split")
    common(p)
    p.add_argument("--model", required=True, help="checkpoint to attack")
    p.add_argument("--attack", required=True, help=f"one of {', '.join(ATTACK_NAMES)}")
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--kappa", type=float, default=None)
    p.add_argument("--limit", type=int, default=0, help="max samples (0 = all)")
    p.add_argument("--adv-out", default=None, help="also write adversaries as CSV")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("eval", help="Acc/Rej/Err report over models and attacks")
    common(p)
    p.add_argument("--model", action="append", required=True, help="target checkpoint (repeatable)")
    p.add_argument("--source", default=None, help="attack source checkpoint for transfer rows")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("select-outdist", help="rank candidate out-distribution sets")
    common(p)
    p.add_argument("--model", required=True, help="naive checkpoint")
    p.set_defaults(func=cmd_select_outdist)

    p = sub.add_parser("plot", help="emit decision regions, church windows, pca, histogram")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--kind", required=True, choices=("regions", "church-window", "pca", "histogram"))
    p.add_argument("--bounds", default="-3,3,-3,3")
    p.add_argument("--resolution", type=int, default=101)
    p.add_argument("--index", type=int, default=0, help="sample index for church windows")
    p.add_argument("--attack", default=None, help="attack defining the window direction")
    p.add_argument("--windows", type=int, default=4)
    p.add_argument("--extent", type=float, default=None)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ConfigError, datasets.ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
