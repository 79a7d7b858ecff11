import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from floodgen.distribution_metrics import (aggregate_report, compare_all, compare_cell, cosine_sim, describe,
                                           kl_divergence, pearson, resample_interp, write_report_csv)
from floodgen.errors import (ConstantVector, EmptyPartition, EmptySample, LengthMismatch, SynthSmallerThanTrain,
                             ZeroVector)
from floodgen.mesh import Mesh


def brute_resample(ds, m):
    # straight-line interpolation between neighbouring samples
    n = len(ds)
    out = []
    for i in range(m):
        x = i * (n - 1) / (m - 1)
        lo = min(int(math.floor(x)), n - 2)
        f = x - lo
        out.append(ds[lo] * (1 - f) + ds[lo + 1] * f)
    return out


def test_resample_examples():
    assert resample_interp([0.0, 10.0], 3).tolist() == [0.0, 5.0, 10.0]
    assert resample_interp([1.0, 2.0, 3.0], 3).tolist() == [1.0, 2.0, 3.0]
    assert resample_interp([4.0, 2.0], 1).tolist() == [4.0]
    assert resample_interp([7.0], 4).tolist() == [7.0] * 4
    with pytest.raises(EmptySample):
        resample_interp([], 3)


def test_resample_oracle():
    ds = np.sort(np.random.default_rng(0).uniform(0, 4, 17))
    for m in (2, 5, 16, 40):
        assert np.allclose(resample_interp(ds, m), brute_resample(ds, m), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(2, 30), elements=st.floats(0, 50)), st.integers(2, 60))
def test_resample_keeps_order_and_ends(ds, m):
    ds = np.sort(ds)
    out = resample_interp(ds, m)
    assert len(out) == m and out[0] == ds[0] and out[-1] == ds[-1]
    assert np.all(np.diff(out) >= -1e-12)


def test_metric_examples():
    assert cosine_sim([1, 2], [2, 1]) == pytest.approx(0.8)
    assert pearson([1, 2, 3], [2, 4, 7]) == pytest.approx(5 / math.sqrt(2 * 114 / 9), rel=1e-12)
    assert kl_divergence([1, 0], [1, 1]) == pytest.approx(math.log(2), abs=1e-8)
    assert kl_divergence([3, 1, 2], [3, 1, 2]) == 0.0
    with pytest.raises(ZeroVector):
        cosine_sim([0, 0], [1, 2])
    with pytest.raises(ConstantVector):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(LengthMismatch):
        kl_divergence([1, 2], [1, 2, 3])


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 6, elements=st.floats(0, 20)), arrays(np.float64, 6, elements=st.floats(0, 20)))
def test_kl_non_negative(a, b):
    assert kl_divergence(a, b) >= 0.0


def test_compare_identical_and_shift():
    t = np.array([0.0, 0.5, 1.0, 2.0, 3.5])
    same = compare_cell(t, t, repeats=5)
    assert (same.rmse, same.cosine, same.pearson, same.kl) == (0.0, 1.0, 1.0, 0.0)
    shift = compare_cell(t, t + 1.0, repeats=5)
    assert shift.rmse == pytest.approx(1.0)
    with pytest.raises(SynthSmallerThanTrain):
        compare_cell(t, t[:3])


def test_compare_undefined_counts():
    c = compare_cell(np.zeros(4), np.zeros(8), repeats=6)
    assert math.isnan(c.cosine) and math.isnan(c.pearson)
    assert c.undefined == {"cosine": 6, "pearson": 6}
    assert c.rmse == 0.0


def test_compare_brute_force():
    rng = np.random.default_rng(2)
    t = rng.gamma(2.0, size=12)
    s = rng.gamma(2.0, size=30)
    got = compare_cell(t, s, repeats=4, seed=7)
    pick_rng = np.random.default_rng(7)
    rm, kl = [], []
    for _ in range(4):
        pick = pick_rng.choice(30, size=12, replace=False)
        sv = sorted(s[pick])
        tv = sorted(t)
        rm.append(math.sqrt(sum((a - b) ** 2 for a, b in zip(tv, sv)) / 12))
        p = [(x + 1e-10) / sum(y + 1e-10 for y in tv) for x in tv]
        q = [(x + 1e-10) / sum(y + 1e-10 for y in sv) for x in sv]
        kl.append(sum(a * math.log(a / b) for a, b in zip(p, q)))
    assert got.rmse == pytest.approx(np.mean(rm), rel=1e-12)
    assert got.kl == pytest.approx(np.mean(kl), rel=1e-9)


def test_compare_all_seeds_per_cell():
    rng = np.random.default_rng(3)
    train, synth = rng.gamma(2, size=(10, 3)), rng.gamma(2, size=(40, 3))
    comps = compare_all(train, synth, repeats=5, seed=11)
    assert [c.cell_id for c in comps] == [0, 1, 2]
    assert comps[1].rmse == compare_cell(train[:, 1], synth[:, 1], 5, (11, 1), 1).rmse


def test_describe_oracle():
    v = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0]
    d = describe(v)
    s = sorted(v)
    mean = sum(v) / len(v)

    def pct(p):
        x = p * (len(s) - 1)
        lo = int(x)
        return s[lo] + (x - lo) * (s[min(lo + 1, len(s) - 1)] - s[lo])

    assert d["count"] == 8 and d["mean"] == pytest.approx(mean) and d["min"] == 1.0 and d["max"] == 9.0
    assert d["std"] == pytest.approx(math.sqrt(sum((x - mean) ** 2 for x in v) / 7))
    assert (d["q25"], d["q50"], d["q75"]) == pytest.approx((pct(.25), pct(.5), pct(.75)))
    assert describe([2.0])["std"] == 0.0
    assert describe([1.0, float("nan")])["count"] == 1
    with pytest.raises(EmptyPartition):
        describe([float("nan")])


def test_aggregate_partitions(tmp_path):
    mesh = Mesh.regular_grid(4, 3, channel=np.tile([0, 1, 0, 0], 3))
    rng = np.random.default_rng(4)
    comps = compare_all(rng.gamma(2, size=(8, 12)), rng.gamma(2, size=(30, 12)), repeats=3)
    rep = aggregate_report(comps, mesh)
    for m in ("rmse", "cosine", "pearson", "kl"):
        assert rep["channel"][m]["count"] + rep["non_channel"][m]["count"] == rep["overall"][m]["count"] == 12
    write_report_csv(tmp_path / "r.csv", rep)
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert len(rows) == 12 and float(rows[0]["mean"]) == rep["overall"]["rmse"]["mean"]
    with pytest.raises(EmptyPartition):
        aggregate_report(comps[:5], mesh)
    with pytest.raises(EmptyPartition):
        aggregate_report(comps, Mesh.regular_grid(4, 3))
