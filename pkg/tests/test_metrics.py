import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from oracles import pairwise_auroc, sweep_average_precision, sweep_min_p_se
from ragehr.errors import UndefinedMetricError
from ragehr.training import EvalReport, auprc, auroc, bootstrap_eval, min_p_se, point_metrics, replay


def random_case(seed, n=200, ties=False):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    y[:2] = [0, 1]
    s = rng.random(n)
    if ties:
        s = np.round(s, 1)
    return s, y


def test_auroc_examples():
    assert auroc([0.9, 0.1], [1, 0]) == 1.0
    assert auroc([0.5, 0.5], [1, 0]) == 0.5
    assert auroc([0.1, 0.9], [1, 0]) == 0.0


def test_auprc_examples():
    assert auprc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    for n in (2, 5, 10):
        scores = np.arange(n, 0, -1) / n
        labels = [0] * (n - 1) + [1]
        assert auprc(scores, labels) == pytest.approx(1 / n, abs=1e-15)


def test_min_p_se_examples():
    assert min_p_se([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert min_p_se([0.9, 0.8, 0.7, 0.1], [1, 0, 1, 0]) == pytest.approx(2 / 3, abs=1e-15)


@pytest.mark.parametrize("fn", [auroc, min_p_se])
def test_single_class_is_undefined(fn):
    with pytest.raises(UndefinedMetricError):
        fn([0.1, 0.2], [1, 1])
    with pytest.raises(UndefinedMetricError):
        fn([0.1, 0.2], [0, 0])


def test_auprc_needs_a_positive():
    with pytest.raises(UndefinedMetricError):
        auprc([0.1, 0.2], [0, 0])


@pytest.mark.parametrize("ties", [False, True])
@pytest.mark.parametrize("seed", range(5))
def test_metrics_match_oracles(seed, ties):
    s, y = random_case(seed, ties=ties)
    assert abs(auroc(s, y) - pairwise_auroc(s.tolist(), y.tolist())) < 1e-12
    assert abs(auprc(s, y) - sweep_average_precision(s.tolist(), y.tolist())) < 1e-10
    assert min_p_se(s, y) == sweep_min_p_se(s.tolist(), y.tolist())


labelled = st.integers(4, 60).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(0, 1000).map(lambda k: k / 1000), min_size=n, max_size=n),
        st.lists(st.integers(0, 1), min_size=n, max_size=n),
    )
)


@given(labelled)
@settings(max_examples=200)
def test_metric_properties(case):
    s, y = np.array(case[0]), np.array(case[1])
    assume(0 < y.sum() < len(y))
    vals = point_metrics(s, y)
    assert all(0.0 <= v <= 1.0 for v in vals.values())
    assert auroc(np.exp(s), y) == pytest.approx(vals["auroc"], abs=1e-12)
    assert auroc(3 * s - 7, y) == pytest.approx(vals["auroc"], abs=1e-12)
    assert auprc(s, y) == pytest.approx(sweep_average_precision(s.tolist(), y.tolist()), abs=1e-10)
    if len(np.unique(s)) == len(s):
        assert auroc(-s, y) == pytest.approx(1 - vals["auroc"], abs=1e-12)


def test_bootstrap_deterministic():
    s, y = random_case(0)
    a, b = bootstrap_eval(s, y, n=10, seed=3), bootstrap_eval(s, y, n=10, seed=3)
    assert a.to_dict() == b.to_dict() and a.resample_indices == b.resample_indices
    assert a.n_bootstrap == 10 and len(a.resample_indices) == 10
    assert bootstrap_eval(s, y, n=10, seed=4).resample_indices != a.resample_indices


def test_bootstrap_degenerate_input():
    with pytest.raises(UndefinedMetricError):
        bootstrap_eval([0.5] * 10, [1] * 10)


def test_bootstrap_redraw_limit():
    # One positive among many: most resamples miss it, and a tiny retry budget fails.
    s = np.linspace(0, 1, 400)
    y = np.zeros(400, dtype=int)
    y[0] = 1
    draws = iter([np.zeros(400, dtype=int) + 5] * 3)
    with pytest.raises(UndefinedMetricError):
        bootstrap_eval(s, y, n=1, max_redraws=3, resampler=lambda rng, n: next(draws))


def test_single_class_resample_redrawn():
    s, y = random_case(1, n=20)
    pos, neg = np.flatnonzero(y == 1)[0], np.flatnonzero(y == 0)[0]
    draws = iter([np.full(20, neg), np.full(20, pos), np.arange(20)])
    rep = bootstrap_eval(s, y, n=1, resampler=lambda rng, n: next(draws))
    assert rep.resample_indices == [list(range(20))]


def test_replay_matches_logged_indices():
    s, y = random_case(2)
    rep = bootstrap_eval(s, y, n=10, seed=11)
    again = replay(s, y, rep.resample_indices)
    for name in ("auroc", "auprc", "min_p_se"):
        assert abs(again[name].mean - rep[name].mean) < 1e-12
        assert abs(again[name].std - rep[name].std) < 1e-12
        vals = np.array([r[name] for r in rep.per_resample])
        assert rep[name].std == pytest.approx(vals.std(ddof=0), abs=1e-15)


def test_identity_resample_equals_point_metrics():
    s, y = random_case(3)
    rep = bootstrap_eval(s, y, n=1, resampler=lambda rng, n: np.arange(n))
    point = point_metrics(s, y)
    for name, value in point.items():
        assert rep[name].mean == value and rep[name].std == 0.0


def test_report_round_trip():
    s, y = random_case(4)
    rep = bootstrap_eval(s, y, n=3, seed=1, config={"d": 8})
    back = EvalReport.from_dict(rep.to_dict(), rep.indices_dict())
    assert back.to_dict() == rep.to_dict() and back.resample_indices == rep.resample_indices
    assert "resample_indices" not in rep.to_dict()
