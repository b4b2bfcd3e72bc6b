"""Four-stage rebalancing pipeline and the experiment sweep runners.

Stages: (1) train the conditional denoiser and, when filtering is enabled, a
reference classifier on the long-tailed data; (2) generate per-class budgets
of synthetic samples; (3) filter them; (4) retrain a classifier on the union
with weighted cross-entropy. Every stage draws from a named seed, so runs
are reproducible row by row.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import data as D
from .config import (PipelineConfig, config_hash, config_to_dict, with_master_seed,
                     write_config)
from .diffusion import CbdmConfig, generate_dataset, make_schedule
from .filtering import FilterConfig, apply_filter
from .metrics import EvalReport, grouped_accuracy, proxy_fid, proxy_is
from .models import (classifier_logits, extract_features, predict_labels,
                     save_checkpoint, softmax_probs, strip_head, train_classifier,
                     train_denoiser)


class StageError(RuntimeError):
    """A pipeline stage failed; partial artifacts are left on disk."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage


@dataclass
class RunRecord:
    config_hash: str
    stage_seconds: dict
    n_gen: int
    n_filt: int
    report: EvalReport
    out_dir: Optional[str] = None

    def to_dict(self):
        rep = dataclasses.asdict(self.report)
        rep["per_class"] = [None if np.isnan(a) else float(a) for a in self.report.per_class]
        rep["per_class_count"] = [int(c) for c in self.report.per_class_count]
        return {
            "config_hash": self.config_hash,
            "stage_seconds": {k: round(v, 3) for k, v in self.stage_seconds.items()},
            "n_gen": self.n_gen,
            "n_filt": self.n_filt,
            "report": rep,
            "out_dir": self.out_dir,
        }


class StageCache:
    """Memoizes expensive stage outputs within one sweep invocation.

    Keys cover everything a stage depends on, so a cache hit is
    indistinguishable from recomputation.
    """

    def __init__(self):
        self._store = {}
        self.hits = 0

    def get_or(self, key, fn):
        if key in self._store:
            self.hits += 1
            return self._store[key]
        value = fn()
        self._store[key] = value
        return value


def _fingerprint(*parts):
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, np.ndarray):
            h.update(p.tobytes())
        else:
            h.update(repr(p).encode())
        h.update(b"|")
    return h.hexdigest()


def dataset_fingerprint(ds):
    return _fingerprint(ds.pixels, ds.labels, ds.origins, ds.num_classes)


def model_fingerprint(model):
    h = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.numpy().tobytes())
    return h.hexdigest()


def build_datasets(ds_cfg):
    """Construct the long-tailed train set and a balanced test set."""
    counts = D.build_longtail_counts(ds_cfg.n1, ds_cfg.ratio, ds_cfg.num_classes,
                                     ds_cfg.profile)
    if ds_cfg.source == "shapes":
        pool = D.generate_shapes_dataset(
            ds_cfg.num_classes, ds_cfg.n1, ds_cfg.height, ds_cfg.width,
            ds_cfg.channels, seed=ds_cfg.seed,
        )
        test = D.generate_shapes_dataset(
            ds_cfg.num_classes, ds_cfg.test_per_class, ds_cfg.height, ds_cfg.width,
            ds_cfg.channels, seed=ds_cfg.resolved_test_seed,
        )
    else:
        pool = D.load_cifar10_binary(list(ds_cfg.cifar_train))
        if not ds_cfg.cifar_test:
            raise ValueError("cifar10 source needs cifar_test paths")
        test = D.load_cifar10_binary(list(ds_cfg.cifar_test))
    train = D.subsample_longtail(pool, counts, seed=ds_cfg.seed)
    return train, test


def balanced_reference_dataset(ds_cfg, per_class, seed):
    """Balanced in-domain dataset used to train the metric yardstick models."""
    if ds_cfg.source == "shapes":
        return D.generate_shapes_dataset(
            ds_cfg.num_classes, per_class, ds_cfg.height, ds_cfg.width,
            ds_cfg.channels, seed=seed,
        )
    pool = D.load_cifar10_binary(list(ds_cfg.cifar_train))
    counts = np.full(ds_cfg.num_classes, per_class, dtype=np.int64)
    return D.subsample_longtail(pool, counts, seed=seed)


def evaluate_classifier(model, test, groups):
    preds = predict_labels(model, test.images)
    return grouped_accuracy(preds, test.labels, groups)


def _stage(timings, name):
    class _Timer:
        def __enter__(self):
            self.t0 = time.perf_counter()
            return self

        def __exit__(self, exc_type, exc, tb):
            timings[name] = time.perf_counter() - self.t0
            if exc is not None and not isinstance(exc, StageError):
                raise StageError(name, exc) from exc
            return False

    return _Timer()


def run_pipeline(cfg: PipelineConfig, cache: Optional[StageCache] = None) -> RunRecord:
    """Execute the full pipeline described by `cfg`.

    Artifacts (datasets, checkpoints, CSV reports, the effective config) are
    persisted under cfg.out_dir when it is set. A shared StageCache lets
    sweep runners reuse identical stage outputs across variants.
    """
    cache = cache if cache is not None else StageCache()
    timings: dict = {}
    out = Path(cfg.out_dir) if cfg.out_dir else None
    if out is not None:
        for sub in ("data", "ckpt", "gen", "reports"):
            (out / sub).mkdir(parents=True, exist_ok=True)
        write_config(out / "config.effective", cfg)

    with _stage(timings, "data"):
        train, test = cache.get_or(
            ("data", _fingerprint(config_to_dict(cfg.dataset))),
            lambda: build_datasets(cfg.dataset),
        )
        if out is not None:
            D.write_ltds(out / "data" / "train.ltds", train)
            D.write_ltds(out / "data" / "test.ltds", test)
    counts = train.class_counts
    groups = D.class_groups(counts, cfg.groups.many_min, cfg.groups.few_max)
    budget, n_gen_target = D.generation_budget(counts, cfg.target_count)
    train_fp = dataset_fingerprint(train)
    sched = make_schedule(cfg.schedule.num_steps, cfg.schedule.beta_start,
                          cfg.schedule.beta_end, cfg.schedule.kind)
    generating = cfg.generator != "none" and n_gen_target > 0

    denoiser = None
    if generating:
        with _stage(timings, "train_denoiser"):
            cbdm = cfg.cbdm if cfg.generator == "cbdm" else None
            key = ("denoiser", train_fp, config_to_dict(cfg.schedule),
                   None if cbdm is None else config_to_dict(cbdm),
                   config_to_dict(cfg.denoiser_train), cfg.denoiser_width)
            curve = out / "reports" / "denoiser_curve.csv" if out else None
            denoiser = cache.get_or(
                _fingerprint(key),
                lambda: train_denoiser(train, sched, cbdm, cfg.denoiser_train,
                                       curve_path=curve, base_width=cfg.denoiser_width),
            )
            if out is not None:
                save_checkpoint(out / "ckpt" / "denoiser.pt", denoiser)

    f0 = None
    if cfg.filter is not None:
        with _stage(timings, "train_f0"):
            f0 = cache.get_or(
                ("f0", train_fp, _fingerprint(config_to_dict(cfg.f0_train))),
                lambda: train_classifier(train, cfg.f0_train),
            )
            if out is not None:
                save_checkpoint(out / "ckpt" / "f0.pt", f0)

    if generating:
        with _stage(timings, "generate"):
            key = _fingerprint("gen", model_fingerprint(denoiser),
                               tuple(budget.tolist()), cfg.sampling_seed,
                               config_to_dict(cfg.schedule))
            d_gen = cache.get_or(
                key,
                lambda: generate_dataset(denoiser, sched, budget, cfg.sampling_seed,
                                         train.num_classes),
            )
            if out is not None:
                D.write_ltds(out / "gen" / "generated.ltds", d_gen)
    else:
        h, w, c = train.image_shape
        d_gen = D.LongTailDataset(
            np.zeros((0, h, w, c), np.uint8), np.zeros(0, np.int64),
            np.zeros(0, np.uint8), train.num_classes,
        )

    if cfg.filter is not None and len(d_gen):
        with _stage(timings, "filter"):
            d_filt, freport = apply_filter(
                d_gen, cfg.filter, real=train, classifier=f0,
                extractor=strip_head(f0),
            )
            if out is not None:
                D.write_ltds(out / "gen" / "filtered.ltds", d_filt)
                freport.write_csv(out / "reports" / "filter.csv")
    else:
        d_filt = d_gen

    with _stage(timings, "train_final"):
        final_data = D.LongTailDataset.concat([train, d_filt]) if len(d_filt) else train
        curve = out / "reports" / "classifier_curve.csv" if out else None
        final = train_classifier(final_data, cfg.classifier_train, curve_path=curve)
        if out is not None:
            save_checkpoint(out / "ckpt" / "final.pt", final)

    with _stage(timings, "evaluate"):
        report = evaluate_classifier(final, test, groups)
        if out is not None:
            report.write_csv(out / "reports" / "eval.csv")

    record = RunRecord(
        config_hash=config_hash(cfg), stage_seconds=timings,
        n_gen=len(d_gen), n_filt=len(d_filt), report=report,
        out_dir=str(out) if out else None,
    )
    if out is not None:
        (out / "run.json").write_text(json.dumps(record.to_dict(), indent=2) + "\n")
    return record


# ---------------------------------------------------------------------------
# Sweep runners
# ---------------------------------------------------------------------------

_ACC_COLUMNS = ["overall", "many", "med", "few"]


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.6g}"
    return value


def _write_rows(path, header, rows):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in header])


def _acc_fields(record):
    r = record.report
    return {"overall": r.overall, "many": r.many, "med": r.med, "few": r.few,
            "n_gen": record.n_gen, "n_filt": record.n_filt}


def _run_out(base_out, label):
    return None if base_out is None else str(Path(base_out) / "runs" / label)


ABLATION_VARIANTS = (
    ("baseline", "none", False, False),
    ("gen_d", "ddpm", False, False),
    ("gen_c", "cbdm", False, False),
    ("gen_d_w", "ddpm", True, False),
    ("gen_c_w", "cbdm", True, False),
    ("gen_c_w_f", "cbdm", True, True),
)


def run_ablation_grid(base_cfg, seeds, variants=ABLATION_VARIANTS, out_dir=None):
    """One row per (module combination, seed): generator x weighting x filtering.

    Weighting off trains with omega = 1 (generated samples count fully);
    filtering off skips the filter stage. The base config supplies the
    generator settings, omega, and filter rule used when a module is on.
    """
    if base_cfg.filter is None and any(v[3] for v in variants):
        raise ValueError("base config has no filter rule for filter-on variants")
    cache = StageCache()
    rows = []
    for seed in seeds:
        seeded = with_master_seed(base_cfg, seed)
        for label, gen, weight_on, filter_on in variants:
            omega = seeded.classifier_train.omega if weight_on else 1.0
            cfg = dataclasses.replace(
                seeded,
                generator=gen,
                target_count=0 if gen == "none" else seeded.target_count,
                filter=seeded.filter if filter_on else None,
                classifier_train=dataclasses.replace(
                    seeded.classifier_train, omega=omega),
                out_dir=_run_out(out_dir, f"{label}_seed{seed}"),
            )
            record = run_pipeline(cfg, cache=cache)
            rows.append({"variant": label, "gen": gen, "weight": int(weight_on),
                         "filter": int(filter_on), "seed": seed,
                         **_acc_fields(record)})
    if out_dir is not None:
        _write_rows(Path(out_dir) / "reports" / "ablation.csv",
                    ["variant", "gen", "weight", "filter", "seed"]
                    + _ACC_COLUMNS + ["n_gen", "n_filt"], rows)
    return rows


def run_omega_sweep(base_cfg, omegas, seeds, out_dir=None):
    """One row per (omega, seed); omega = 0 silences generated-sample gradients."""
    for omega in omegas:
        if not 0.0 <= omega <= 1.0:
            raise ValueError(f"omega must be in [0, 1], got {omega}")
    cache = StageCache()
    rows = []
    for seed in seeds:
        seeded = with_master_seed(base_cfg, seed)
        for omega in omegas:
            cfg = dataclasses.replace(
                seeded,
                classifier_train=dataclasses.replace(
                    seeded.classifier_train, omega=float(omega)),
                out_dir=_run_out(out_dir, f"omega{omega}_seed{seed}"),
            )
            record = run_pipeline(cfg, cache=cache)
            rows.append({"omega": float(omega), "seed": seed, **_acc_fields(record)})
    if out_dir is not None:
        _write_rows(Path(out_dir) / "reports" / "omega.csv",
                    ["omega", "seed"] + _ACC_COLUMNS + ["n_gen", "n_filt"], rows)
    return rows


def run_filter_sweep(base_cfg, grid, seeds, out_dir=None):
    """One row per (metric, threshold, seed); an entry of None disables filtering."""
    cache = StageCache()
    rows = []
    for seed in seeds:
        seeded = with_master_seed(base_cfg, seed)
        for entry in grid:
            if entry is None:
                fcfg, label = None, "none"
            else:
                metric, threshold = entry
                fcfg = FilterConfig(metric, float(threshold))
                label = f"{metric}{threshold}"
            cfg = dataclasses.replace(
                seeded, filter=fcfg,
                out_dir=_run_out(out_dir, f"filter_{label}_seed{seed}"),
            )
            record = run_pipeline(cfg, cache=cache)
            rows.append({
                "metric": "none" if fcfg is None else fcfg.metric,
                "threshold": "" if fcfg is None else fcfg.threshold,
                "seed": seed, **_acc_fields(record),
            })
    if out_dir is not None:
        _write_rows(Path(out_dir) / "reports" / "filter_sweep.csv",
                    ["metric", "threshold", "seed"] + _ACC_COLUMNS
                    + ["n_gen", "n_filt"], rows)
    return rows


def _role_subset(train, groups, many_fraction, seed):
    """Med/few samples plus a seeded fraction of each many class."""
    rng = np.random.default_rng(seed)
    keep = []
    for c in range(train.num_classes):
        idx = np.flatnonzero(train.labels == c)
        if c in groups.many:
            k = int(round(many_fraction * idx.size))
            if k > 0:
                keep.append(np.sort(rng.choice(idx, size=k, replace=False)))
        else:
            keep.append(idx)
    order = np.sort(np.concatenate(keep)) if keep else np.zeros(0, np.int64)
    return train.select(order)


def run_role_study(base_cfg, many_fractions, seeds, out_dir=None):
    """Vary how much head-class data the denoiser sees; generate tails only.

    Rows report the joint accuracy over medium+few test samples (acc_mf).
    The 'none' row is the no-generation baseline.
    """
    for p in many_fractions:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"many_fraction must be in [0, 1], got {p}")
    cache = StageCache()
    rows = []
    for seed in seeds:
        seeded = with_master_seed(base_cfg, seed)
        base_run = dataclasses.replace(
            seeded, generator="none", target_count=0, filter=None,
            out_dir=_run_out(out_dir, f"role_none_seed{seed}"),
        )
        record = run_pipeline(base_run, cache=cache)
        train, _ = cache.get_or(
            ("data", _fingerprint(config_to_dict(seeded.dataset))),
            lambda: build_datasets(seeded.dataset),
        )
        groups = D.class_groups(train.class_counts, seeded.groups.many_min,
                                seeded.groups.few_max)
        mf = groups.med | groups.few
        rows.append({"many_fraction": "none", "seed": seed,
                     "acc_mf": record.report.group_accuracy(mf),
                     "overall": record.report.overall})
        counts = train.class_counts
        budget, _ = D.generation_budget(counts, seeded.target_count)
        budget = np.where(np.isin(np.arange(train.num_classes), sorted(mf)),
                          budget, 0)
        sched = make_schedule(seeded.schedule.num_steps, seeded.schedule.beta_start,
                              seeded.schedule.beta_end, seeded.schedule.kind)
        for p in many_fractions:
            subset = _role_subset(train, groups, p, seed=seeded.dataset.seed + 17)
            cbdm = seeded.cbdm if seeded.generator == "cbdm" else None
            denoiser = cache.get_or(
                ("denoiser", dataset_fingerprint(subset),
                 _fingerprint(config_to_dict(seeded.schedule),
                              None if cbdm is None else config_to_dict(cbdm),
                              config_to_dict(seeded.denoiser_train),
                              seeded.denoiser_width)),
                lambda: train_denoiser(subset, sched, cbdm, seeded.denoiser_train,
                                       base_width=seeded.denoiser_width),
            )
            d_gen = cache.get_or(
                ("gen", model_fingerprint(denoiser), tuple(budget.tolist()),
                 seeded.sampling_seed),
                lambda: generate_dataset(denoiser, sched, budget,
                                         seeded.sampling_seed, train.num_classes),
            )
            if seeded.filter is not None and len(d_gen):
                f0 = cache.get_or(
                    ("f0", dataset_fingerprint(train),
                     _fingerprint(config_to_dict(seeded.f0_train))),
                    lambda: train_classifier(train, seeded.f0_train),
                )
                d_filt, _ = apply_filter(d_gen, seeded.filter, real=train,
                                         classifier=f0, extractor=strip_head(f0))
            else:
                d_filt = d_gen
            final_data = D.LongTailDataset.concat([train, d_filt]) if len(d_filt) else train
            final = train_classifier(final_data, seeded.classifier_train)
            _, test = cache.get_or(
                ("data", _fingerprint(config_to_dict(seeded.dataset))),
                lambda: build_datasets(seeded.dataset),
            )
            report = evaluate_classifier(final, test, groups)
            rows.append({"many_fraction": float(p), "seed": seed,
                         "acc_mf": report.group_accuracy(mf),
                         "overall": report.overall})
    if out_dir is not None:
        _write_rows(Path(out_dir) / "reports" / "role.csv",
                    ["many_fraction", "seed", "acc_mf", "overall"], rows)
    return rows


def run_tau_study(base_cfg, taus, seeds, out_dir=None, yardstick_per_class=200):
    """Regularizer-strength study: generation quality metrics vs accuracy.

    `taus` entries are floats or None (plain denoising loss). Proxy FID/IS
    are computed with a yardstick classifier trained on a balanced in-domain
    dataset under a separate seed, so rows share one fixed measuring stick.
    """
    cache = StageCache()
    rows = []
    if out_dir is None:
        out_dir = tempfile.mkdtemp(prefix="tailgen_tau_")
    yardstick_seed = base_cfg.dataset.seed + 7919
    reference = balanced_reference_dataset(base_cfg.dataset, yardstick_per_class,
                                           yardstick_seed)
    yardstick = train_classifier(
        reference,
        dataclasses.replace(base_cfg.f0_train, seed=yardstick_seed, omega=1.0),
    )
    extractor = strip_head(yardstick)
    for seed in seeds:
        seeded = with_master_seed(base_cfg, seed)
        train, _ = cache.get_or(
            ("data", _fingerprint(config_to_dict(seeded.dataset))),
            lambda: build_datasets(seeded.dataset),
        )
        real_features = extract_features(extractor, train.images)
        for tau in taus:
            if tau is None:
                cfg = dataclasses.replace(
                    seeded, generator="ddpm",
                    out_dir=_run_out(out_dir, f"tau_none_seed{seed}"),
                )
                label = "none"
            else:
                cfg = dataclasses.replace(
                    seeded, generator="cbdm",
                    cbdm=dataclasses.replace(seeded.cbdm, tau=float(tau)),
                    out_dir=_run_out(out_dir, f"tau_{tau}_seed{seed}"),
                )
                label = float(tau)
            record = run_pipeline(cfg, cache=cache)
            gen_path = Path(record.out_dir) / "gen" / "generated.ltds"
            d_gen = D.read_ltds(gen_path) if gen_path.exists() else None
            fid = is_score = float("nan")
            if d_gen is not None and len(d_gen) >= 2:
                gen_features = extract_features(extractor, d_gen.images)
                fid = proxy_fid(real_features, gen_features)
                probs = softmax_probs(classifier_logits(yardstick, d_gen.images))
                is_score = proxy_is(probs)
            rows.append({"tau": label, "seed": seed, "proxy_fid": fid,
                         "proxy_is": is_score, **_acc_fields(record)})
    if out_dir is not None:
        _write_rows(Path(out_dir) / "reports" / "tau.csv",
                    ["tau", "seed", "proxy_fid", "proxy_is"] + _ACC_COLUMNS
                    + ["n_gen", "n_filt"], rows)
    return rows
