import csv
import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest
import torch

from tailgen import (StageCache, StageError, build_datasets, class_groups,
                     evaluate_classifier, generation_budget, load_checkpoint,
                     read_ltds, run_ablation_grid, run_filter_sweep,
                     run_omega_sweep, run_pipeline, run_role_study, run_tau_study,
                     train_classifier, with_master_seed)
from tailgen.config import DatasetConfig

from helpers import tiny_pipeline_config


def _read_csv(path):
    with open(path) as f:
        return list(csv.DictReader(f))


def test_run_pipeline_artifacts_and_budget(tmp_path):
    cfg = tiny_pipeline_config(out_dir=str(tmp_path / "run"))
    record = run_pipeline(cfg)
    out = Path(record.out_dir)
    for rel in ("config.effective", "data/train.ltds", "data/test.ltds",
                "ckpt/denoiser.pt", "ckpt/f0.pt", "ckpt/final.pt",
                "gen/generated.ltds", "gen/filtered.ltds",
                "reports/filter.csv", "reports/eval.csv", "run.json"):
        assert (out / rel).exists(), rel

    train = read_ltds(out / "data" / "train.ltds")
    budget, n_gen = generation_budget(train.class_counts, cfg.target_count)
    d_gen = read_ltds(out / "gen" / "generated.ltds")
    d_filt = read_ltds(out / "gen" / "filtered.ltds")
    assert record.n_gen == n_gen == len(d_gen)
    assert d_gen.class_counts.tolist() == budget.tolist()
    assert (d_gen.origins == 1).all()
    assert record.n_filt == len(d_filt) <= record.n_gen
    combined = train.class_counts + d_gen.class_counts
    assert (combined == np.maximum(train.class_counts, cfg.target_count)).all()

    payload = json.loads((out / "run.json").read_text())
    assert payload["n_gen"] == record.n_gen
    assert set(payload["stage_seconds"]) >= {"data", "train_denoiser", "generate",
                                             "train_final", "evaluate"}


def test_run_pipeline_rerun_identical(tmp_path):
    cfg = tiny_pipeline_config()
    a = run_pipeline(dataclasses.replace(cfg, out_dir=str(tmp_path / "a")))
    b = run_pipeline(dataclasses.replace(cfg, out_dir=str(tmp_path / "b")))
    assert a.report.overall == b.report.overall
    assert np.array_equal(a.report.per_class, b.report.per_class, equal_nan=True)
    assert a.n_gen == b.n_gen and a.n_filt == b.n_filt
    ck_a = load_checkpoint(tmp_path / "a" / "ckpt" / "final.pt")
    ck_b = load_checkpoint(tmp_path / "b" / "ckpt" / "final.pt")
    for (ka, va), (_, vb) in zip(ck_a.state_dict().items(), ck_b.state_dict().items()):
        assert torch.equal(va, vb), ka


def test_degenerate_pipeline_equals_standalone_baseline(tmp_path):
    cfg = tiny_pipeline_config(generator="none", target_count=0, filter=None,
                               out_dir=str(tmp_path / "run"))
    record = run_pipeline(cfg)
    assert record.n_gen == 0 and record.n_filt == 0

    train, test = build_datasets(cfg.dataset)
    baseline = train_classifier(train, cfg.classifier_train)
    groups = class_groups(train.class_counts, cfg.groups.many_min, cfg.groups.few_max)
    report = evaluate_classifier(baseline, test, groups)
    assert report.overall == record.report.overall
    assert np.array_equal(report.per_class, record.report.per_class, equal_nan=True)
    saved = load_checkpoint(tmp_path / "run" / "ckpt" / "final.pt")
    for (ka, va), (_, vb) in zip(saved.state_dict().items(),
                                 baseline.state_dict().items()):
        assert torch.equal(va, vb), ka


def test_artifacts_recompute_eval_without_retraining(tmp_path):
    cfg = tiny_pipeline_config(out_dir=str(tmp_path / "run"))
    record = run_pipeline(cfg)
    out = Path(record.out_dir)
    train = read_ltds(out / "data" / "train.ltds")
    test = read_ltds(out / "data" / "test.ltds")
    final = load_checkpoint(out / "ckpt" / "final.pt")
    groups = class_groups(train.class_counts, cfg.groups.many_min, cfg.groups.few_max)
    report = evaluate_classifier(final, test, groups)
    assert report.overall == record.report.overall


def test_stage_error_names_stage():
    cfg = tiny_pipeline_config(
        dataset=DatasetConfig(source="cifar10", cifar_train=("/missing.bin",),
                              cifar_test=("/missing.bin",)),
    )
    with pytest.raises(StageError, match="stage 'data'"):
        run_pipeline(cfg)


def test_shared_cache_reuses_results(tmp_path):
    cfg = tiny_pipeline_config()
    cache = StageCache()
    a = run_pipeline(cfg, cache=cache)
    hits_before = cache.hits
    b = run_pipeline(cfg, cache=cache)
    assert cache.hits > hits_before
    assert a.report.overall == b.report.overall


# ---------------------------------------------------------------------------
# sweep runners
# ---------------------------------------------------------------------------


def test_ablation_grid_rows_and_baseline(tmp_path):
    cfg = tiny_pipeline_config()
    variants = (("baseline", "none", False, False),
                ("gen_c_w_f", "cbdm", True, True))
    rows = run_ablation_grid(cfg, seeds=[0], variants=variants,
                             out_dir=str(tmp_path))
    assert len(rows) == 2
    table = _read_csv(tmp_path / "reports" / "ablation.csv")
    assert list(table[0]) == ["variant", "gen", "weight", "filter", "seed",
                              "overall", "many", "med", "few", "n_gen", "n_filt"]
    baseline = [r for r in rows if r["variant"] == "baseline"][0]
    assert baseline["n_gen"] == 0 and baseline["n_filt"] == 0
    full = [r for r in rows if r["variant"] == "gen_c_w_f"][0]
    assert full["n_filt"] <= full["n_gen"]


def test_ablation_weight_on_without_gen_matches_baseline(tmp_path):
    cfg = tiny_pipeline_config()
    variants = (("baseline", "none", False, False),
                ("w_only", "none", True, False))
    rows = run_ablation_grid(cfg, seeds=[1], variants=variants,
                             out_dir=str(tmp_path))
    by = {r["variant"]: r for r in rows}
    assert by["baseline"]["overall"] == by["w_only"]["overall"]


def test_omega_sweep_rows(tmp_path):
    cfg = tiny_pipeline_config(filter=None)
    rows = run_omega_sweep(cfg, omegas=[0.0, 0.3, 1.0], seeds=[0, 1],
                           out_dir=str(tmp_path))
    assert len(rows) == 6
    table = _read_csv(tmp_path / "reports" / "omega.csv")
    assert {r["omega"] for r in table} == {"0", "0.3", "1"}
    with pytest.raises(ValueError, match="omega"):
        run_omega_sweep(cfg, omegas=[1.5], seeds=[0])


def test_filter_sweep_keep_all_matches_no_filter(tmp_path):
    cfg = tiny_pipeline_config()
    rows = run_filter_sweep(cfg, grid=[None, ("prob", 0.0), ("prob", 0.9)],
                            seeds=[0], out_dir=str(tmp_path))
    assert len(rows) == 3
    by_label = {(r["metric"], r["threshold"]): r for r in rows}
    none_row = by_label[("none", "")]
    keep_all = by_label[("prob", 0.0)]
    assert keep_all["n_filt"] == keep_all["n_gen"]
    assert none_row["overall"] == keep_all["overall"]
    tight = by_label[("prob", 0.9)]
    assert tight["n_filt"] <= keep_all["n_filt"]
    table = _read_csv(tmp_path / "reports" / "filter_sweep.csv")
    assert [r["n_filt"] for r in table] == [str(r["n_filt"]) for r in rows]


def test_role_study_rows(tmp_path):
    cfg = tiny_pipeline_config(filter=None)
    rows = run_role_study(cfg, many_fractions=[0.0, 1.0], seeds=[0],
                          out_dir=str(tmp_path))
    assert len(rows) == 3
    assert rows[0]["many_fraction"] == "none"
    fractions = [r["many_fraction"] for r in rows[1:]]
    assert fractions == [0.0, 1.0]
    for row in rows:
        assert 0.0 <= row["acc_mf"] <= 1.0
    table = _read_csv(tmp_path / "reports" / "role.csv")
    assert list(table[0]) == ["many_fraction", "seed", "acc_mf", "overall"]


def test_tau_study_rows_and_identity(tmp_path):
    cfg = tiny_pipeline_config(filter=None)
    rows = run_tau_study(cfg, taus=[None, 0.0], seeds=[0],
                         out_dir=str(tmp_path), yardstick_per_class=24)
    assert len(rows) == 2
    table = _read_csv(tmp_path / "reports" / "tau.csv")
    assert list(table[0]) == ["tau", "seed", "proxy_fid", "proxy_is",
                              "overall", "many", "med", "few", "n_gen", "n_filt"]
    none_ck = load_checkpoint(tmp_path / "runs" / "tau_none_seed0" / "ckpt" / "denoiser.pt")
    zero_ck = load_checkpoint(tmp_path / "runs" / "tau_0.0_seed0" / "ckpt" / "denoiser.pt")
    for (ka, va), (_, vb) in zip(none_ck.state_dict().items(),
                                 zero_ck.state_dict().items()):
        assert torch.equal(va, vb), ka
    by = {r["tau"]: r for r in rows}
    assert by["none"]["overall"] == by[0.0]["overall"]
    for row in rows:
        assert np.isfinite(row["proxy_fid"]) and row["proxy_fid"] >= 0
        assert 1.0 <= row["proxy_is"] <= cfg.dataset.num_classes


def test_master_seed_changes_data_and_models(tmp_path):
    cfg = tiny_pipeline_config(generator="none", target_count=0, filter=None)
    a = with_master_seed(cfg, 0)
    b = with_master_seed(cfg, 1)
    train_a, test_a = build_datasets(a.dataset)
    train_b, test_b = build_datasets(b.dataset)
    assert not np.array_equal(train_a.pixels, train_b.pixels)
    assert not np.array_equal(test_a.pixels, test_b.pixels)
    clf_a = train_classifier(train_a, a.classifier_train)
    clf_b = train_classifier(train_b, b.classifier_train)
    same = all(torch.equal(va, vb) for (_, va), (_, vb)
               in zip(clf_a.state_dict().items(), clf_b.state_dict().items()))
    assert not same
