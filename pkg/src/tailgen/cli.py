"""Command-line interface over the pipeline stages and sweeps.

Stage commands operate on one output directory: `make-data` seeds it,
later stages read the artifacts earlier ones wrote there.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import data as D
from .config import PipelineConfig, parse_config, with_master_seed, write_config
from .diffusion import generate_dataset, make_schedule
from .filtering import apply_filter
from .metrics import grouped_accuracy
from .models import (load_checkpoint, predict_labels, save_checkpoint, strip_head,
                     train_classifier, train_denoiser)
from .pipeline import (build_datasets, run_ablation_grid, run_filter_sweep,
                       run_omega_sweep, run_pipeline, run_role_study, run_tau_study)


def _load_cfg(args):
    cfg = parse_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = with_master_seed(cfg, args.seed)
    if getattr(args, "out", None):
        cfg = dataclasses.replace(cfg, out_dir=args.out)
    return cfg


def _out(cfg):
    if not cfg.out_dir:
        raise SystemExit("an output directory is required (--out)")
    out = Path(cfg.out_dir)
    for sub in ("data", "ckpt", "gen", "reports"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    return out


def _need(path, hint):
    if not Path(path).exists():
        raise SystemExit(f"missing artifact {path} (run `tailgen {hint}` first)")
    return path


def _sched(cfg):
    return make_schedule(cfg.schedule.num_steps, cfg.schedule.beta_start,
                         cfg.schedule.beta_end, cfg.schedule.kind)


def cmd_make_data(args):
    cfg = _load_cfg(args)
    out = _out(cfg)
    train, test = build_datasets(cfg.dataset)
    D.write_ltds(out / "data" / "train.ltds", train)
    D.write_ltds(out / "data" / "test.ltds", test)
    write_config(out / "config.effective", cfg)
    print(f"train: {len(train)} samples, counts {train.class_counts.tolist()}")
    print(f"test:  {len(test)} samples")


def cmd_train_diffusion(args):
    cfg = _load_cfg(args)
    out = _out(cfg)
    train = D.read_ltds(_need(out / "data" / "train.ltds", "make-data"))
    cbdm = cfg.cbdm if cfg.generator == "cbdm" else None
    model = train_denoiser(train, _sched(cfg), cbdm, cfg.denoiser_train,
                           curve_path=out / "reports" / "denoiser_curve.csv",
                           base_width=cfg.denoiser_width)
    save_checkpoint(out / "ckpt" / "denoiser.pt", model)
    print(f"denoiser saved to {out / 'ckpt' / 'denoiser.pt'}")


def cmd_generate(args):
    cfg = _load_cfg(args)
    out = _out(cfg)
    train = D.read_ltds(_need(out / "data" / "train.ltds", "make-data"))
    model = load_checkpoint(_need(out / "ckpt" / "denoiser.pt", "train-diffusion"))
    budget, total = D.generation_budget(train.class_counts, cfg.target_count)
    d_gen = generate_dataset(model, _sched(cfg), budget, cfg.sampling_seed,
                             train.num_classes)
    D.write_ltds(out / "gen" / "generated.ltds", d_gen)
    print(f"generated {total} samples (budget {budget.tolist()})")


def cmd_filter(args):
    cfg = _load_cfg(args)
    out = _out(cfg)
    if cfg.filter is None:
        raise SystemExit("config has no filter rule (filter: null)")
    train = D.read_ltds(_need(out / "data" / "train.ltds", "make-data"))
    d_gen = D.read_ltds(_need(out / "gen" / "generated.ltds", "generate"))
    f0_path = out / "ckpt" / "f0.pt"
    if f0_path.exists():
        f0 = load_checkpoint(f0_path)
    else:
        f0 = train_classifier(train, cfg.f0_train)
        save_checkpoint(f0_path, f0)
    d_filt, report = apply_filter(d_gen, cfg.filter, real=train, classifier=f0,
                                  extractor=strip_head(f0))
    D.write_ltds(out / "gen" / "filtered.ltds", d_filt)
    report.write_csv(out / "reports" / "filter.csv")
    print(f"kept {report.kept_count} of {len(d_gen)} generated samples")


def cmd_train_classifier(args):
    cfg = _load_cfg(args)
    out = _out(cfg)
    train = D.read_ltds(_need(out / "data" / "train.ltds", "make-data"))
    extra = None
    for name in ("filtered.ltds", "generated.ltds"):
        path = out / "gen" / name
        if path.exists():
            extra = D.read_ltds(path)
            break
    data = D.LongTailDataset.concat([train, extra]) if extra is not None and len(extra) else train
    model = train_classifier(data, cfg.classifier_train,
                             curve_path=out / "reports" / "classifier_curve.csv")
    save_checkpoint(out / "ckpt" / "final.pt", model)
    used = 0 if extra is None else len(extra)
    print(f"classifier trained on {len(train)} real + {used} generated samples")


def cmd_evaluate(args):
    cfg = _load_cfg(args)
    out = _out(cfg)
    train = D.read_ltds(_need(out / "data" / "train.ltds", "make-data"))
    test = D.read_ltds(_need(out / "data" / "test.ltds", "make-data"))
    model = load_checkpoint(_need(out / "ckpt" / "final.pt", "train-classifier"))
    groups = D.class_groups(train.class_counts, cfg.groups.many_min,
                            cfg.groups.few_max)
    report = grouped_accuracy(predict_labels(model, test.images), test.labels, groups)
    report.write_csv(out / "reports" / "eval.csv")
    print(f"overall {report.overall:.4f}  many {report.many:.4f}  "
          f"med {report.med:.4f}  few {report.few:.4f}")


def cmd_pipeline(args):
    cfg = _load_cfg(args)
    if not cfg.out_dir:
        raise SystemExit("an output directory is required (--out)")
    record = run_pipeline(cfg)
    print(json.dumps(record.to_dict(), indent=2))


def _seed_list(text):
    return [int(s) for s in text.split(",") if s.strip() != ""]


def cmd_sweep(args):
    cfg = _load_cfg(args)
    if not cfg.out_dir:
        raise SystemExit("an output directory is required (--out)")
    seeds = _seed_list(args.seeds)
    if args.kind == "ablation":
        rows = run_ablation_grid(cfg, seeds, out_dir=cfg.out_dir)
    elif args.kind == "omega":
        omegas = [float(v) for v in args.omegas.split(",")]
        rows = run_omega_sweep(cfg, omegas, seeds, out_dir=cfg.out_dir)
    elif args.kind == "filter":
        grid = []
        for item in args.grid.split(";"):
            item = item.strip()
            if item == "none":
                grid.append(None)
            else:
                metric, threshold = item.split(":")
                grid.append((metric, float(threshold)))
        rows = run_filter_sweep(cfg, grid, seeds, out_dir=cfg.out_dir)
    elif args.kind == "role":
        fractions = [float(v) for v in args.fractions.split(",")]
        rows = run_role_study(cfg, fractions, seeds, out_dir=cfg.out_dir)
    else:
        taus = [None if v.strip() == "none" else float(v)
                for v in args.taus.split(",")]
        rows = run_tau_study(cfg, taus, seeds, out_dir=cfg.out_dir)
    print(f"{len(rows)} rows written under {cfg.out_dir}/reports")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tailgen",
        description="Rebalance a long-tailed dataset with diffusion-generated samples.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.add_argument("--config", help="JSON config file (defaults apply if omitted)")
        p.add_argument("--seed", type=int, help="master seed overriding all stage seeds")
        p.add_argument("--out", help="output directory")
        p.set_defaults(fn=fn)
        return p

    add("make-data", cmd_make_data, help="build and persist the train/test datasets")
    add("train-diffusion", cmd_train_diffusion, help="train the conditional denoiser")
    add("generate", cmd_generate, help="sample the per-class generation budget")
    add("filter", cmd_filter, help="score and filter the generated samples")
    add("train-classifier", cmd_train_classifier, help="train the final classifier")
    add("evaluate", cmd_evaluate, help="evaluate the final classifier")
    add("pipeline", cmd_pipeline, help="run all stages end to end")
    sweep = add("sweep", cmd_sweep, help="run an experiment sweep")
    sweep.add_argument("kind", choices=["ablation", "omega", "filter", "role", "tau"])
    sweep.add_argument("--seeds", default="0,1,2", help="comma-separated master seeds")
    sweep.add_argument("--omegas", default="0,0.1,0.3,0.5,0.7,0.9,1.0")
    sweep.add_argument("--taus", default="none,1,5", help="comma-separated, 'none' allowed")
    sweep.add_argument("--fractions", default="0,0.5,1.0", help="many-class fractions")
    sweep.add_argument("--grid", default="none;prob:5e-7",
                       help="semicolon-separated metric:threshold pairs, or 'none'")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except (ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
