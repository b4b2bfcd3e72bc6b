import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from tailgen import ClassGroups, class_groups, grouped_accuracy, proxy_fid, proxy_is


# ---------------------------------------------------------------------------
# grouped accuracy
# ---------------------------------------------------------------------------

GROUPS3 = ClassGroups(many=frozenset({0}), med=frozenset({1}), few=frozenset({2}))


def test_all_correct_gives_ones():
    labels = np.array([0, 0, 1, 2, 2, 2])
    report = grouped_accuracy(labels, labels, GROUPS3)
    assert report.overall == 1.0
    assert report.many == report.med == report.few == 1.0
    assert np.allclose(report.per_class, [1.0, 1.0, 1.0])


def test_empty_group_is_nan_not_zero():
    labels = np.array([0, 0, 1])
    preds = np.array([0, 1, 1])
    report = grouped_accuracy(preds, labels, GROUPS3)
    assert np.isnan(report.few)
    assert report.many == 0.5
    assert report.med == 1.0


def test_two_class_mixture():
    groups = ClassGroups(many=frozenset({0}), med=frozenset(), few=frozenset({1}))
    labels = np.array([0] * 8 + [1] * 2)
    preds = np.array([0] * 8 + [0] * 2)
    report = grouped_accuracy(preds, labels, groups)
    assert report.many == 1.0
    assert report.few == 0.0
    assert report.overall == 0.8
    assert np.isnan(report.med)


def test_length_mismatch_rejected():
    with pytest.raises(ValueError, match="length"):
        grouped_accuracy(np.array([0]), np.array([0, 1]), GROUPS3)


@given(n=st.integers(1, 300), m=st.integers(1, 12), seed=st.integers(0, 10**6))
@settings(max_examples=100, deadline=None)
def test_group_accuracies_recombine_to_overall(n, m, seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, m, size=n)
    preds = rng.integers(0, m, size=n)
    counts = rng.integers(1, 300, size=m)
    groups = class_groups(counts, many_min=200, few_max=100)
    report = grouped_accuracy(preds, labels, groups)
    total = 0.0
    for cls in (groups.many, groups.med, groups.few):
        idx = sorted(cls)
        weight = report.per_class_count[idx].sum() if idx else 0
        if weight:
            total += report.group_accuracy(cls) * weight
    assert total / n == pytest.approx(report.overall, abs=1e-9)


def test_eval_report_csv(tmp_path):
    labels = np.array([0, 1, 2, 2])
    report = grouped_accuracy(labels, labels, GROUPS3)
    path = tmp_path / "eval.csv"
    report.write_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("overall,many,med,few,proxy_fid,proxy_is,class_0")
    assert len(lines) == 2


# ---------------------------------------------------------------------------
# proxy FID
# ---------------------------------------------------------------------------


def test_fid_identical_sets_zero():
    rng = np.random.default_rng(0)
    feats = rng.normal(size=(40, 6))
    assert proxy_fid(feats, feats) <= 1e-6


def test_fid_symmetry_and_nonnegativity():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(30, 5))
    b = rng.normal(loc=0.7, size=(25, 5))
    ab = proxy_fid(a, b)
    ba = proxy_fid(b, a)
    assert ab >= 0.0
    assert ab == pytest.approx(ba, abs=1e-8)


def test_fid_one_dimensional_closed_form():
    # sample mean 0/1 and sample std 1 exactly: FID = (0-1)^2 + (1-1)^2 = 1
    a = np.array([[-1.0], [0.0], [1.0]])
    b = a + 1.0
    assert proxy_fid(a, b) == pytest.approx(1.0, abs=1e-9)


def test_fid_matches_scipy_sqrtm_oracle():
    rng = np.random.default_rng(2)
    for trial in range(8):
        a = rng.normal(size=(60, 5)) @ rng.normal(size=(5, 5))
        b = rng.normal(loc=0.3, size=(50, 5)) @ rng.normal(size=(5, 5))
        eps = 1e-6
        mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
        ca = np.cov(a, rowvar=False) + eps * np.eye(5)
        cb = np.cov(b, rowvar=False) + eps * np.eye(5)
        covmean = scipy.linalg.sqrtm(ca @ cb)
        if np.iscomplexobj(covmean):
            covmean = covmean.real
        want = ((mu_a - mu_b) ** 2).sum() + np.trace(ca + cb - 2.0 * covmean)
        got = proxy_fid(a, b)
        assert got == pytest.approx(want, abs=1e-4), trial


def test_fid_handles_degenerate_covariance():
    fixed = np.tile(np.array([[1.0, 2.0, 3.0]]), (10, 1))
    value = proxy_fid(fixed, fixed + 0.5)
    assert value == pytest.approx(0.75, abs=1e-6)


def test_fid_input_validation():
    with pytest.raises(ValueError):
        proxy_fid(np.zeros((1, 3)), np.zeros((5, 3)))
    with pytest.raises(ValueError):
        proxy_fid(np.zeros((5, 3)), np.zeros((5, 4)))


# ---------------------------------------------------------------------------
# proxy IS
# ---------------------------------------------------------------------------


def test_is_collapsed_distribution():
    p = np.zeros((20, 6))
    p[:, 2] = 1.0
    assert proxy_is(p) == pytest.approx(1.0, abs=1e-9)


def test_is_uniform_one_hots():
    m = 5
    p = np.eye(m)
    assert proxy_is(np.tile(p, (4, 1))) == pytest.approx(m, rel=1e-9)


def test_is_all_uniform_rows():
    p = np.full((30, 8), 1.0 / 8)
    assert proxy_is(p) == pytest.approx(1.0, abs=1e-9)


def test_is_rejects_malformed():
    with pytest.raises(ValueError, match="sum"):
        proxy_is(np.full((3, 4), 0.3))
    with pytest.raises(ValueError, match="non-negative"):
        proxy_is(np.array([[1.2, -0.2]]))


@given(n=st.integers(1, 80), m=st.integers(2, 10), seed=st.integers(0, 10**6))
@settings(max_examples=100, deadline=None)
def test_is_in_range(n, m, seed):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(m) * rng.uniform(0.1, 5.0), size=n)
    score = proxy_is(p)
    assert 1.0 <= score <= m
