import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from floodgen.errors import AcceptanceRateTooLow, EmptySample, TooFewRecords
from floodgen.mesh import Mesh
from floodgen.point_generator import (CSV_HEADER, CopulaConfig, GeneratorModel, PointRecords, constraint_mask,
                                      fit_generator, inverse_ecdf, ks_statistic, nearest_psd_correlation,
                                      quality_score, sample_constrained, select_generator)


@pytest.fixture(scope="module")
def mesh():
    return Mesh.regular_grid(6, 6)


def training_records(mesh, n, seed=0):
    rng = np.random.default_rng(seed)
    lat = rng.uniform(mesh.lat.min(), mesh.lat.max(), n)
    lon = rng.uniform(mesh.lon.min(), mesh.lon.max(), n)
    dur = rng.integers(2, 25, n).astype(float)
    cum = rng.gamma(2.0, 1.5, n) + 0.1
    peak = cum * (1 / dur + (1 - 1 / dur) * rng.uniform(0.2, 0.8, n))
    return PointRecords(np.column_stack([lat, lon, cum, peak, dur]))


def ks_oracle(a, b):
    pts = sorted(set(a) | set(b))
    return max(abs(sum(v <= x for v in a) / len(a) - sum(v <= x for v in b) / len(b)) for x in pts)


def test_ks_examples():
    assert ks_statistic([1, 2], [1, 3]) == 0.5
    assert ks_statistic([0, 0], [1, 1]) == 1.0
    assert ks_statistic([3, 1, 2], [1, 2, 3]) == 0.0
    with pytest.raises(EmptySample):
        ks_statistic([], [1])


samples = arrays(np.float64, st.integers(1, 15), elements=st.integers(-5, 5).map(float))


@settings(max_examples=80, deadline=None)
@given(samples, samples)
def test_ks_properties(a, b):
    k = ks_statistic(a, b)
    assert 0.0 <= k <= 1.0
    assert k == ks_statistic(b, a)
    assert ks_statistic(a, a) == 0.0
    assert k == pytest.approx(ks_oracle(a.tolist(), b.tolist()), abs=1e-12)


def test_quality_score_examples(mesh):
    train = training_records(mesh, 200)
    assert quality_score(train, train).score == 1.0
    # K values (0.2, 0.4, 0.0) -> 0.8
    t = PointRecords(np.column_stack([np.zeros(5), np.zeros(5), [1, 2, 3, 4, 5], [1, 2, 3, 4, 5], [1, 1, 1, 1, 1]]))
    s = PointRecords(np.column_stack([np.zeros(5), np.zeros(5), [2, 2, 3, 4, 5], [3, 3, 3, 4, 5], [1, 1, 1, 1, 1]]))
    rep = quality_score(t, s)
    assert [rep.ks[f] for f in ("cumulative", "peak", "duration")] == pytest.approx([0.2, 0.4, 0.0])
    assert rep.score == pytest.approx(0.8)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000))
def test_quality_score_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    a = PointRecords(rng.normal(size=(30, 5)))
    b = PointRecords(rng.normal(size=(40, 5)))
    r1 = quality_score(a, b).score
    r2 = quality_score(PointRecords(a.data[rng.permutation(30)]), PointRecords(b.data[rng.permutation(40)])).score
    assert r1 == r2 and 0 <= r1 <= 1


def test_constraint_mask_rules(mesh):
    lat, lon = mesh.lat[0], mesh.lon[0]
    rows = np.array([
        [lat, lon, 4.0, 2.0, 4.0],   # ok
        [lat, lon, 4.0, 4.0, 4.0],   # cum == peak
        [lat, lon, 4.0, 1.0, 4.0],   # peak == cum / dur
        [lat, lon, 4.0, 2.0, 0.5],   # dur < 1
        [0.0, 0.0, 4.0, 2.0, 4.0],   # outside
        [lat, lon, 0.0, 0.0, 3.0],   # dry
    ])
    assert constraint_mask(rows, mesh).tolist() == [True, False, False, False, False, False]
    assert constraint_mask(rows, mesh, allow_dry=True).tolist() == [True, False, False, False, False, True]


def test_independent_features_near_zero_correlation():
    rng = np.random.default_rng(0)
    data = rng.normal(size=(10_000, 5))
    m = fit_generator(PointRecords(data))
    off = m.correlation[~np.eye(5, dtype=bool)]
    assert np.max(np.abs(off)) < 0.1


def test_duplicated_feature_correlation_one():
    rng = np.random.default_rng(0)
    x = rng.normal(size=500)
    data = np.column_stack([x, x, rng.normal(size=500), rng.normal(size=500), rng.normal(size=500)])
    m = fit_generator(PointRecords(data))
    assert m.correlation[0, 1] == pytest.approx(1.0, abs=1e-9)
    draws = m.draw(1000, np.random.default_rng(1))
    assert np.all(np.isfinite(draws))


def test_constant_feature_identity_row():
    rng = np.random.default_rng(0)
    data = rng.normal(size=(200, 5))
    data[:, 4] = 3.0
    m = fit_generator(PointRecords(data))
    assert m.degenerate == [4]
    assert m.correlation[4].tolist() == [0, 0, 0, 0, 1]
    assert np.all(m.draw(100, np.random.default_rng(0))[:, 4] == 3.0)


def test_too_few_records():
    with pytest.raises(TooFewRecords):
        fit_generator(PointRecords(np.ones((3, 5))))


def test_inverse_ecdf_no_extrapolation():
    sv = np.array([1.0, 2.0, 4.0])
    u = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
    # order statistics sit at 1/4, 2/4, 3/4
    assert inverse_ecdf(sv, u).tolist() == [1.0, 1.0, 2.0, 4.0, 4.0]
    assert inverse_ecdf(sv, np.array([0.375]))[0] == 1.5


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_psd_projection(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1, 1, (4, 4))
    a = (a + a.T) / 2
    np.fill_diagonal(a, 1.0)
    c = nearest_psd_correlation(a)
    assert np.allclose(np.diag(c), 1.0)
    assert np.min(np.linalg.eigvalsh(c)) > -1e-9


def test_sample_constrained_exact_and_valid(mesh):
    m = fit_generator(training_records(mesh, 2000))
    assert len(sample_constrained(m, 0, mesh)) == 0
    out = sample_constrained(m, 5000, mesh, seed=3)
    assert len(out) == 5000
    assert constraint_mask(out.data, mesh).all()
    # prefix property of chunked streams
    small = sample_constrained(m, 100, mesh, seed=3)
    assert np.array_equal(small.data, out.data[:100])


def test_sample_marginals_close_to_training(mesh):
    train = training_records(mesh, 5000, seed=1)
    m = fit_generator(train)
    out = sample_constrained(m, 100_000, mesh, seed=2)
    rep = quality_score(train, out)
    assert max(rep.ks.values()) <= 0.05


def test_acceptance_rate_too_low(mesh):
    data = training_records(mesh, 100).data.copy()
    data[:, 3] = data[:, 2] * 2  # peak > cumulative everywhere: nothing is accepted
    m = fit_generator(PointRecords(data))
    with pytest.raises(AcceptanceRateTooLow):
        sample_constrained(m, 50, mesh, max_attempt_factor=2)


def test_select_generator_prefers_clean(mesh):
    train = training_records(mesh, 1500)
    cands = [CopulaConfig(marginal_jitter=2.0), CopulaConfig()]
    best, reports = select_generator(train, cands, 3000, seed=0, mesh=mesh)
    assert reports[1][1].score > reports[0][1].score
    assert best.to_json() == fit_generator(train, config=CopulaConfig()).to_json()
    only, reps = select_generator(train, [CopulaConfig(marginal_jitter=3.0)], 500, mesh=mesh)
    assert len(reps) == 1 and only is not None


def test_model_and_csv_round_trip(tmp_path, mesh):
    train = training_records(mesh, 300)
    m = fit_generator(train)
    m.save(tmp_path / "g.json")
    back = GeneratorModel.load(tmp_path / "g.json")
    rng1, rng2 = np.random.default_rng(0), np.random.default_rng(0)
    assert np.array_equal(m.draw(50, rng1), back.draw(50, rng2))
    train.to_csv(tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == ",".join(CSV_HEADER)
    assert np.array_equal(PointRecords.from_csv(tmp_path / "p.csv").data, train.data)
