import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import roc_auc_score

from ragehr.ehr import (
    FeatureSpec,
    PatientParseError,
    TimeSeriesMatrix,
    VisitEvent,
    consolidate,
    load_patients,
    normalize_note,
    split_cohort,
    write_patients,
)
from ragehr.ehr.records import patient_from_dict, validate_cohort
from ragehr.ehr.split import split_sizes
from ragehr.ehr.synthetic import SyntheticConfig, generate_synthetic_cohort, planted_signal
from ragehr.errors import ValidationError

SPECS = [{"index": 0, "name": "heart rate", "kind": "numeric"}, {"index": 1, "name": "gcs", "kind": "categorical"}]


def patient(pid="a", visits=2, **over):
    obj = {
        "id": pid,
        "features": SPECS,
        "values": [[80.0 + t, 3] for t in range(visits)],
        "note": "Patient has [**Name**] sepsis.",
        "label_mortality": 0,
        "label_readmission": 1,
    }
    obj.update(over)
    return obj


def write_lines(path, objs):
    path.write_text("".join(json.dumps(o) + "\n" for o in objs))


def test_load_two_lines_in_file_order(tmp_path):
    f = tmp_path / "p.jsonl"
    write_lines(f, [patient("z"), patient("a")])
    recs = load_patients(f)
    assert [r.id for r in recs] == ["z", "a"]
    assert recs[0].note.text == "patient has sepsis"


def test_missing_label_names_field_and_line(tmp_path):
    bad = patient("b")
    del bad["label_mortality"]
    f = tmp_path / "p.jsonl"
    write_lines(f, [patient("a"), bad])
    with pytest.raises(PatientParseError) as info:
        load_patients(f)
    assert info.value.line == 2 and info.value.field == "label_mortality"
    assert "label_mortality" in str(info.value) and "2" in str(info.value)


def test_duplicate_id_rejected(tmp_path):
    f = tmp_path / "p.jsonl"
    write_lines(f, [patient("a"), patient("a")])
    with pytest.raises(ValidationError, match="duplicate"):
        load_patients(f)


def test_long_stay_truncated_to_first_48(tmp_path, caplog):
    f = tmp_path / "p.jsonl"
    write_lines(f, [patient("a", visits=60)])
    with caplog.at_level("WARNING"):
        rec = load_patients(f)[0]
    assert rec.ts.visit_count == 48
    assert rec.ts.values[0, 0] == 80.0 and rec.ts.values[-1, 0] == 80.0 + 47
    assert any("48" in r.message for r in caplog.records)


def test_missing_cell_is_not_zero():
    rec = patient_from_dict(patient(values=[[None, 0], [0.0, 1]]))
    assert rec.ts.missing[0, 0] and not rec.ts.missing[1, 0]
    assert rec.ts.values[1, 0] == 0.0


def test_malformed_json_line(tmp_path):
    f = tmp_path / "p.jsonl"
    f.write_text(json.dumps(patient("a")) + "\n{not json\n")
    with pytest.raises(PatientParseError) as info:
        load_patients(f)
    assert info.value.line == 2


def test_round_trip(tmp_path):
    f, g = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    objs = [patient("a", values=[[1.5, None], [2, 3]]), patient("b", note="fever")]
    write_lines(f, objs)
    write_patients(load_patients(f), g)
    again = [json.loads(line) for line in g.read_text().splitlines()]
    for before, after in zip(objs, again):
        assert after["values"] == before["values"]
        assert after["features"] == before["features"]
        assert after["note"] == normalize_note(before["note"]).text
    h = tmp_path / "c.jsonl"
    write_patients(load_patients(g), h)
    assert h.read_bytes() == g.read_bytes()


def test_feature_specs_must_be_contiguous():
    with pytest.raises(ValidationError):
        TimeSeriesMatrix(np.zeros((1, 2)), (FeatureSpec(0, "a", "numeric"), FeatureSpec(2, "b", "numeric")))
    with pytest.raises(ValidationError):
        TimeSeriesMatrix(np.zeros((1, 2)), (FeatureSpec(0, "a", "numeric"), FeatureSpec(1, "a", "numeric")))


def test_cohort_layout_check():
    a = patient_from_dict(patient("a"))
    b = patient_from_dict(patient("b", features=[SPECS[0], {"index": 1, "name": "other"}]))
    with pytest.raises(ValidationError):
        validate_cohort([a, b])


# --- notes -----------------------------------------------------------------


def test_normalize_example():
    assert normalize_note("Patient [**Name**] has Sepsis.", [r"\[\*\*.*?\*\*\]"]).text == "patient has sepsis"


def test_normalize_empty_and_normalized():
    assert normalize_note("").text == ""
    assert normalize_note("patient has sepsis").text == "patient has sepsis"


def test_raw_length_recorded():
    assert normalize_note("A  B").raw_length == 4


@given(st.text(max_size=200))
@settings(max_examples=300)
def test_normalize_properties(raw):
    once = normalize_note(raw).text
    assert normalize_note(once).text == once
    assert len(once) <= len(raw)
    assert once == once.lower()
    assert "  " not in once and once == once.strip()
    assert "[**" not in once


# --- splitting -------------------------------------------------------------


def _cohort(n, seed=0):
    return generate_synthetic_cohort(SyntheticConfig(n_patients=n, n_visits=4, seed=seed))[0]


def test_split_ten_patients():
    split = split_cohort(_cohort(10), seed=7)
    assert split.sizes == (7, 1, 2)
    again = split_cohort(_cohort(10), seed=7)
    assert [r.id for r in split.train] == [r.id for r in again.train]


def test_split_ten_thousand_sizes():
    assert split_sizes(10_000) == (7000, 1000, 2000)


def test_split_too_small():
    with pytest.raises(ValidationError):
        split_cohort(_cohort(2))


@given(n=st.integers(3, 400), seed=st.integers(0, 10_000))
@settings(max_examples=100, deadline=None)
def test_split_partitions(n, seed):
    ids = [f"p{i}" for i in range(n)]

    class R:
        def __init__(self, i):
            self.id = i

    split = split_cohort([R(i) for i in ids], seed=seed)
    parts = [{r.id for r in part} for part in (split.train, split.val, split.test)]
    assert sum(len(p) for p in parts) == n
    assert set().union(*parts) == set(ids)
    assert all(len(p) >= 1 for p in parts)
    for got, ratio in zip(split.sizes, (0.7, 0.1, 0.2)):
        assert abs(got - ratio * n) <= 1 or (n < 10 and got >= 1)


# --- consolidation -----------------------------------------------------------


def test_consolidate_windows():
    specs = (FeatureSpec(0, "hr", "numeric"), FeatureSpec(1, "gcs", "categorical"))
    events = [VisitEvent(1, 0, 80), VisitEvent(5, 0, 90), VisitEvent(2, 1, 3), VisitEvent(11, 1, 4), VisitEvent(13, 0, 70)]
    ts = consolidate(events, specs, window_hours=12)
    assert ts.visit_count == 2
    assert ts.values[0, 0] == 85 and ts.values[0, 1] == 4
    assert ts.values[1, 0] == 70 and math.isnan(ts.values[1, 1])


# --- synthetic generator -----------------------------------------------------


def test_synthetic_deterministic(tmp_path):
    cfg = SyntheticConfig(n_patients=100, seed=1)
    a, kg_a = generate_synthetic_cohort(cfg, seed=1)
    b, kg_b = generate_synthetic_cohort(cfg, seed=1)
    write_patients(a, tmp_path / "a.jsonl")
    write_patients(b, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert kg_a == kg_b


def test_synthetic_signal_strength_validated():
    with pytest.raises(ValidationError):
        SyntheticConfig(signal_strength=1.2)


def test_synthetic_kg_covers_vocabulary():
    cfg = SyntheticConfig(n_patients=10)
    _, kg = generate_synthetic_cohort(cfg)
    names = {n.name for n in kg.nodes}
    assert set(cfg.disease_vocab) <= names
    assert len(names) > len(cfg.disease_vocab)  # distractors


def _planted_auroc(records, cfg, which):
    sig = planted_signal(records, cfg)
    x = np.asarray(getattr(sig, which)).reshape(-1, 1)
    y = np.array([r.label_mortality for r in records])
    clf = LogisticRegression().fit(x, y)
    return roc_auc_score(y, clf.decision_function(x))


def test_null_signal_is_unlearnable():
    cfg = SyntheticConfig(n_patients=2000, signal_strength=0.0, seed=3)
    records, _ = generate_synthetic_cohort(cfg)
    for which in ("ts_excursion", "risk_mentions"):
        assert abs(_planted_auroc(records, cfg, which) - 0.5) <= 0.05


def test_strong_signal_is_learnable_from_one_variable():
    cfg = SyntheticConfig(n_patients=2000, signal_strength=0.9, seed=4)
    records, _ = generate_synthetic_cohort(cfg)
    assert _planted_auroc(records, cfg, "ts_excursion") >= 0.8


def test_positive_rate_close_to_configured():
    cfg = SyntheticConfig(n_patients=5000, positive_rate=0.15, n_visits=2, seed=5)
    records, _ = generate_synthetic_cohort(cfg)
    rate = np.mean([r.label_mortality for r in records])
    assert abs(rate - 0.15) <= 0.02
