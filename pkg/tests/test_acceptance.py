"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import json
import math
import time

import numpy as np
import pytest
from scipy.stats import norm

from conftest import record
from floodgen.benchmark import benchmark_mesh
from floodgen.depth_estimator import (GbtConfig, evaluate_estimator, load_estimator, save_estimator,
                                      train_cellwise, train_universal)
from floodgen.distribution_metrics import compare_all, cosine_sim, kl_divergence, pearson, resample_interp
from floodgen.errors import CorruptStore
from floodgen.event_synth import KnnRule, generate_batch
from floodgen.mesh import Mesh, StormEvent
from floodgen.point_generator import (PointRecords, constraint_mask, fit_generator, ks_statistic, quality_score,
                                      sample_constrained)
from floodgen.pools import N_BUCKETS, aggregate_duration_bounds, build_pools, compute_all_thresholds
from floodgen.precip_features import heavy_ratio
from floodgen.probmap import probability_map, probability_maps

TOL = 1e-9


# brute-force oracles ------------------------------------------------------------


def ks_oracle(a, b):
    best = 0.0
    for x in list(a) + list(b):
        fa = sum(1 for v in a if v <= x) / len(a)
        fb = sum(1 for v in b if v <= x) / len(b)
        best = max(best, abs(fa - fb))
    return best


def cosine_oracle(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    return dot / (math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)))


def pearson_oracle(a, b):
    ma, mb = sum(a) / len(a), sum(b) / len(b)
    cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    va = sum((x - ma) ** 2 for x in a)
    vb = sum((y - mb) ** 2 for y in b)
    return cov / math.sqrt(va * vb)


def kl_oracle(t, s, eps=1e-10):
    st = sum(x + eps for x in t)
    ss = sum(x + eps for x in s)
    return sum((x + eps) / st * math.log(((x + eps) / st) / ((y + eps) / ss)) for x, y in zip(t, s))


def resample_oracle(ds, m):
    n = len(ds)
    if m == 1:
        return [ds[0]]
    out = []
    for i in range(m):
        pos = i * (n - 1) / (m - 1)
        lo = min(int(math.floor(pos)), n - 1)
        hi = min(lo + 1, n - 1)
        out.append(ds[lo] + (pos - lo) * (ds[hi] - ds[lo]))
    return out


def heavy_ratio_oracle(area, watershed, values, w, thr):
    total = heavy = 0.0
    for a, ws, v in zip(area, watershed, values):
        if ws == w:
            total += a
            if v > thr:
                heavy += a
    return heavy / total


def thresholds_oracle(column, theta1, theta2):
    n = len(column)
    mu = sum(column) / n
    sd = math.sqrt(sum((x - mu) ** 2 for x in column) / (n - 1))
    b1 = max(0.0, mu - theta1 * sd)
    b2 = mu + theta2 * sd
    if b2 <= b1:
        b2 = b1 + 1e-9
    return mu, sd, b1, b2


# criterion 1 --------------------------------------------------------------------


def test_criterion_1_formula_oracles():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = {}
    n_inst = 1000

    def upd(name, d):
        worst[name] = max(worst.get(name, 0.0), d)

    for _ in range(n_inst):
        na, nb = rng.integers(1, 25, 2)
        # rounding creates ties
        a = np.round(rng.normal(0, 1, na), int(rng.integers(0, 3)))
        b = np.round(rng.normal(0.3, 1.2, nb), int(rng.integers(0, 3)))
        upd("ks_statistic", abs(ks_statistic(a, b) - ks_oracle(a.tolist(), b.tolist())))

        n = int(rng.integers(2, 30))
        x = rng.uniform(-2, 3, n)
        y = x * rng.uniform(-1, 1) + rng.normal(0, 1, n)
        upd("cosine_sim", abs(cosine_sim(x, y) - cosine_oracle(x.tolist(), y.tolist())))
        upd("pearson", abs(pearson(x, y) - pearson_oracle(x.tolist(), y.tolist())))

        t = rng.exponential(1.0, n) * (rng.random(n) > 0.2)
        s = rng.exponential(1.0, n) * (rng.random(n) > 0.2)
        upd("kl_divergence", abs(kl_divergence(t, s) - kl_oracle(t.tolist(), s.tolist())))

        m = int(rng.integers(1, 40))
        ds = rng.normal(0, 1, int(rng.integers(1, 40)))
        got = resample_interp(ds, m)
        upd("resample_interp", float(np.max(np.abs(got - np.array(resample_oracle(ds.tolist(), m))))))

    meshes = []
    for k in range(10):
        nx, ny = int(rng.integers(2, 7)), int(rng.integers(2, 7))
        ws = rng.integers(0, 3, nx * ny)
        ws[:3] = [0, 1, 2]
        meshes.append(Mesh.regular_grid(nx, ny, ws, spacing_deg=0.01 * (1 + k % 3)))
    for i in range(n_inst):
        mesh = meshes[i % len(meshes)]
        vals = rng.gamma(1.5, 1.5, mesh.n_cells)
        vals[rng.random(mesh.n_cells) < 0.1] = 2.0  # exactly at the threshold: not heavy
        w = int(rng.integers(0, 3))
        got = heavy_ratio(mesh, w, vals, 2.0)
        upd("heavy_ratio", abs(got - heavy_ratio_oracle(mesh.area.tolist(), mesh.watershed.tolist(), vals, w, 2.0)))

    for i in range(n_inst):
        mesh = meshes[i % len(meshes)]
        ne = int(rng.integers(2, 8))
        events = []
        for e in range(ne):
            cum = rng.gamma(2, 1.5, mesh.n_cells)
            if rng.random() < 0.1:
                cum[:] = 1.0  # constant column: zero spread
            events.append(StormEvent(e, cum, cum * 0.5, float(rng.integers(1, 30))))
        th1, th2 = rng.uniform(0.1, 2.0, 2)
        got = compute_all_thresholds(events, mesh, th1, th2)
        d = 0.0
        for c in range(mesh.n_cells):
            for j, col in enumerate((
                    [e.cumulative[c] for e in events], [e.peak[c] for e in events], [e.duration for e in events])):
                mu, sd, b1, b2 = thresholds_oracle(col, th1, th2)
                d = max(d, abs(got.mu[c, j] - mu), abs(got.sigma[c, j] - sd),
                        abs(got.b1[c, j] - b1), abs(got.b2[c, j] - b2))
        upd("compute_thresholds", d)

    elapsed = time.perf_counter() - t0
    ok = all(v <= TOL for v in worst.values()) and elapsed < 30
    record(1, ok, f"{n_inst} instances x {len(worst)} formulas, worst |d| = {max(worst.values()):.2e} "
                  f"(tol {TOL}), {elapsed:.1f} s (< 30 s)")
    assert ok, worst


# criterion 2 --------------------------------------------------------------------


@pytest.fixture(scope="module")
def trained(bench):
    mesh, train, val, test, truth = bench
    t0 = time.perf_counter()
    cell = train_cellwise(mesh, train, GbtConfig())
    uni = train_universal(mesh, train, GbtConfig())
    return cell, uni, time.perf_counter() - t0


def test_criterion_2_cellwise_beats_universal(bench, trained):
    mesh, train, val, test, truth = bench
    cell, uni, train_s = trained
    t0 = time.perf_counter()
    rc = evaluate_estimator(cell, mesh, test).rmse()
    ru = evaluate_estimator(uni, mesh, test).rmse()
    elapsed = train_s + time.perf_counter() - t0
    ok = rc <= 0.8 * ru and elapsed < 300 and mesh.n_cells >= 200 and mesh.watershed_count >= 3
    record(2, ok, f"{mesh.n_cells} cells, {mesh.watershed_count} watersheds, split "
                  f"{len(train)}/{len(val)}/{len(test)}; cell-wise RMSE {rc:.4f} <= 0.8 x universal "
                  f"{ru:.4f} (ratio {rc / ru:.3f}), {elapsed:.1f} s (< 300 s)")
    assert ok


# criterion 3 --------------------------------------------------------------------


def correlated_records(mesh, n, seed):
    rng = np.random.default_rng(seed)
    lat = rng.uniform(mesh.lat.min(), mesh.lat.max(), n)
    lon = rng.uniform(mesh.lon.min(), mesh.lon.max(), n)
    z = rng.multivariate_normal(np.zeros(3), [[1, .7, .4], [.7, 1, .5], [.4, .5, 1]], n)
    cum = np.exp(0.8 + 0.6 * z[:, 0])
    dur = np.clip(np.round(np.exp(2.0 + 0.5 * z[:, 2])), 1, 48)
    frac = 1 / dur + (1 - 1 / dur) * (0.1 + 0.8 * norm.cdf(z[:, 1]))
    data = np.column_stack([lat, lon, cum, cum * frac, dur])
    return PointRecords(data[constraint_mask(data, mesh)])


def test_criterion_3_generator_fidelity():
    mesh = Mesh.regular_grid(20, 20)
    train = correlated_records(mesh, 10_050, seed=7)
    train = PointRecords(train.data[:10_000])
    assert len(train) == 10_000
    model = fit_generator(train, "copula")
    synth = sample_constrained(model, 100_000, mesh, seed=1)
    report = quality_score(train, synth)
    mask = constraint_mask(synth.data, mesh)
    d = synth.data
    # exhaustive, each constraint on its own
    c1 = bool(np.all(d[:, 4] >= 1))
    c2 = bool(np.all(d[:, 2] > d[:, 3]))
    c3 = bool(np.all(d[:, 3] > d[:, 2] / d[:, 4]))
    c4 = bool(np.all(mesh.contains(d[:, 0], d[:, 1])))
    ok = report.score >= 0.90 and mask.all() and c1 and c2 and c3 and c4 and len(synth) == 100_000
    record(3, ok, f"quality_score {report.score:.4f} (>= 0.90) on {len(synth)} records; "
                  f"constraints satisfied {int(mask.sum())}/{len(synth)}")
    assert ok


# criterion 4 --------------------------------------------------------------------


def test_criterion_4_pool_conservation():
    mesh = Mesh.regular_grid(20, 20)
    rng = np.random.default_rng(4)
    events = []
    for i in range(30):
        cum = rng.gamma(2, 1.5, mesh.n_cells)
        events.append(StormEvent(i, cum, cum * 0.5, float(rng.integers(1, 30))))
    thr = compute_all_thresholds(events, mesh)
    n = 1_000_000
    pad = 0.02  # some points fall outside the study area
    lat = rng.uniform(mesh.lat.min() - pad, mesh.lat.max() + pad, n)
    lon = rng.uniform(mesh.lon.min() - pad, mesh.lon.max() + pad, n)
    cum = rng.gamma(2, 1.5, n)
    dur = rng.integers(1, 30, n).astype(float)
    cloud = PointRecords(np.column_stack([lat, lon, cum, cum * 0.5, dur]))
    t0 = time.perf_counter()
    pools = build_pools(cloud, mesh, thr, aggregate_duration_bounds(events, 0.5, 0.5))
    elapsed = time.perf_counter() - t0

    total = int(pools.sizes.sum()) + pools.skipped
    seen = np.zeros(n, dtype=np.int64)
    for c in range(mesh.n_cells):
        for code in range(N_BUCKETS):
            np.add.at(seen, pools.bucket(c, code), 1)
    inside = mesh.contains(lat, lon)
    once = bool(np.all(seen[inside] == 1) and np.all(seen[~inside] == 0))
    ok = total == n and once and pools.skipped == int((~inside).sum()) and elapsed < 10
    record(4, ok, f"sum(buckets) {int(pools.sizes.sum())} + skipped {pools.skipped} = {total} of {n}; "
                  f"each inside index exactly once: {once}; build {elapsed:.2f} s (< 10 s)")
    assert ok


# criterion 5 --------------------------------------------------------------------


def test_criterion_5_generation_determinism_and_scale():
    mesh = benchmark_mesh(20, 20)
    assert mesh.n_cells == 400
    rng = np.random.default_rng(5)
    events = []
    for i in range(40):
        cum = rng.gamma(2, 1.5, mesh.n_cells)
        dur = float(rng.integers(2, 30))
        peak = cum * rng.uniform(1 / dur + 0.01, 0.9, mesh.n_cells)
        events.append(StormEvent(i, cum, peak, dur, np.maximum(0.2 * (cum - 1.5), 0)))
    # the estimator's size is not under test; 50 trees keeps training short
    est = train_cellwise(mesh, events, GbtConfig(n_trees=50))
    thr = compute_all_thresholds(events, mesh)
    cloud = PointRecords.from_events(mesh, events)
    pools = build_pools(cloud, mesh, thr, aggregate_duration_bounds(events, 0.5, 0.5))
    t0 = time.perf_counter()
    one = generate_batch(pools, mesh, est, 1000, base_seed=11, workers=1)
    elapsed = time.perf_counter() - t0
    eight = generate_batch(pools, mesh, est, 1000, base_seed=11, workers=8)
    same = len(one) == len(eight) == 1000 and all(a.same_as(b) for a, b in zip(one, eight))
    ok = same and elapsed < 60
    record(5, ok, f"1000 events on {mesh.n_cells} cells in {elapsed:.1f} s (< 60 s); "
                  f"1-worker == 8-worker: {same}")
    assert ok


# criterion 6 --------------------------------------------------------------------


def test_criterion_6_distribution_sanity(bench, trained):
    mesh, train, val, test, truth = bench
    cell, _, _ = trained
    thr = compute_all_thresholds(train, mesh)
    pools = build_pools(PointRecords.from_events(mesh, train), mesh, thr,
                        aggregate_duration_bounds(train, 0.5, 0.5))
    synth = generate_batch(pools, mesh, cell, 500, base_seed=6, knn_rule=KnnRule(fixed_k=1))
    T = np.stack([e.depth for e in train])
    S = np.stack([e.depth for e in synth])
    comps = compare_all(T, S, repeats=50, seed=0)
    cos = np.array([c.cosine for c in comps])
    kl = np.array([c.kl for c in comps])
    med_cos, med_kl = float(np.nanmedian(cos)), float(np.nanmedian(kl))
    ch = mesh.channel == 1
    ok = med_cos >= 0.95 and med_kl <= 0.1
    record(6, ok, f"median cosine {med_cos:.4f} (>= 0.95), median KL {med_kl:.4f} (<= 0.1); "
                  f"channel cells: cosine {np.nanmedian(cos[ch]):.4f}, KL {np.nanmedian(kl[ch]):.4f}")
    assert ok


# criterion 7 --------------------------------------------------------------------


def test_criterion_7_probability_map_laws():
    rng = np.random.default_rng(7)
    depth = rng.gamma(1.2, 1.5, (1000, 300))
    depth[:, :5] = [0.0, 1.0, 2.0, 4.0, 6.0]  # depth equal to a threshold counts as exceeding
    maps = probability_maps(depth, (1, 2, 4, 6))
    P = np.stack([m.probability for m in maps])
    monotone = bool(np.all(np.diff(P, axis=0) <= 0))

    example = np.zeros((1000, 1))
    example[:350] = 3.0
    exact = probability_map(example, 2.0).probability[0] == 0.35

    a, b = depth[:370], depth[370:]
    additive = True
    for t in (1, 2, 4, 6):
        pa, pb, pab = probability_map(a, t), probability_map(b, t), probability_map(depth, t)
        combined = (pa.probability * len(a) + pb.probability * len(b)) / len(depth)
        additive &= bool(np.array_equal(pa.counts + pb.counts, pab.counts))
        additive &= bool(np.max(np.abs(combined - pab.probability)) <= 4 * np.finfo(float).eps)
    ok = monotone and exact and additive
    record(7, ok, f"non-increasing in threshold for all {P.shape[1]} cells: {monotone}; "
                  f"350/1000 -> 0.35 exactly: {exact}; concatenation additivity: {additive}")
    assert ok


# criterion 8 --------------------------------------------------------------------


def test_criterion_8_resample_endpoints():
    rng = np.random.default_rng(8)
    bad = []
    pairs = 0
    for n in range(1, 61):
        for m in range(1, 61):
            ds = rng.normal(0, 10, n)
            out = resample_interp(ds, m)
            pairs += 1
            if len(out) != m or out[0] != ds[0] or (m > 1 and out[-1] != ds[-1]):
                bad.append((n, m))
    ok = not bad
    record(8, ok, f"first/last preserved for {pairs - len(bad)}/{pairs} (n, m) pairs in [1, 60]^2 "
                  f"incl. n=1 and m=1")
    assert ok, bad[:10]


# criterion 9 --------------------------------------------------------------------


def test_criterion_9_persistence(bench, tmp_path):
    mesh, train, val, test, truth = bench
    cfg = GbtConfig(n_trees=60)
    results = {}
    for mode, est in (("cellwise", train_cellwise(mesh, train, cfg)), ("universal", train_universal(mesh, train, cfg))):
        path = tmp_path / mode
        save_estimator(path, est)
        back = load_estimator(path, mesh)
        p0 = est.predict_events(mesh, test)
        p1 = back.predict_events(mesh, test)
        results[mode] = p0.tobytes() == p1.tobytes()

    rejected = []
    path = tmp_path / "cellwise"
    man = path / "manifest.json"
    original = man.read_text()
    doc = json.loads(original)
    doc["config"]["learning_rate"] = 0.5  # edit without resealing
    man.write_text(json.dumps(doc))
    try:
        load_estimator(path, mesh)
    except CorruptStore:
        rejected.append("edited manifest")
    man.write_text(original[: len(original) // 2])  # truncated
    try:
        load_estimator(path, mesh)
    except CorruptStore:
        rejected.append("truncated manifest")
    man.write_text(original)
    tree = sorted((path / "models").iterdir())[3]
    raw = bytearray(tree.read_bytes())
    raw[-1] ^= 0xFF
    tree.write_bytes(bytes(raw))
    try:
        load_estimator(path, mesh)
    except CorruptStore:
        rejected.append("flipped model byte")

    ok = all(results.values()) and len(rejected) == 3
    record(9, ok, f"bit-identical after reload: {results}; rejected: {', '.join(rejected)}")
    assert ok
