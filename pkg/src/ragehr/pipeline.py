"""Pipeline stages. Every stage reads and writes plain files under the
configured output directory, so a run can be restarted at any stage."""

from __future__ import annotations

import json
import logging
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, NamedTuple

import numpy as np
import torch

from .config import PipelineConfig, build_gateway
from .ehr import load_patients, split_cohort, write_patients
from .ehr.synthetic import generate_synthetic_cohort
from .gateway import ConfigurationError
from .errors import PipelineRuntimeError, UndefinedMetricError, ValidationError
from .kg import (
    NodeEmbeddingIndex,
    build_index,
    load_kg,
    match_entity,
    node_knowledge,
    sample_triples,
    write_kg,
)
from .model import FusionConfig, FusionModel
from .note_entities import EXTRACTOR_PROFILE, extract_note_entities
from .summarizer import SUMMARIZER_PROFILE, EnhancementBundle, generate_summary
from .training import (
    SplitBatches,
    evaluate_model,
    fit,
    grid_search,
    make_split_batches,
    run_ablation,
    write_ablation_csv,
)
from .ts_entities import EntityMention, compute_feature_stats, extract_ts_entities, write_entities_line

logger = logging.getLogger("ragehr.pipeline")

NOTE_ENCODER = "note_encoder"
ENTITY_ENCODER = "entity_encoder"

ENTITIES_TS = "entities_ts.jsonl"
ENTITIES_NOTE = "entities_note.jsonl"
MATCHES = "matches.jsonl"
KG_INDEX = "kg_index.bin"
BUNDLES = "bundles.jsonl"
SUMMARY_RUN = "summarize_run.json"
MODEL = "model.pt"
HISTORY = "training_history.json"
REPORT = "report.json"
RESAMPLES = "report_resamples.json"
ABLATION_CSV = "ablation_table.csv"
ABLATION_JSON = "ablation_reports.json"


@dataclass
class StageResult:
    stage: str
    processed: int = 0
    skipped: int = 0
    failed: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


class _PatientRef(NamedTuple):
    id: str


# --- file helpers ---------------------------------------------------------


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_jsonl(path: Path, rows: Iterable[dict]) -> None:
    _atomic_write(path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))


def write_json(path: Path, obj) -> None:
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_jsonl(path: Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _require(*paths: Path) -> None:
    missing = [str(p) for p in paths if not Path(p).exists()]
    if missing:
        raise ValidationError("required input(s) not found: " + ", ".join(missing))


def _by_id(path: Path) -> dict[str, dict]:
    return {row["patient_id"]: row for row in read_jsonl(path)}


def _for_each_patient(stage: str, items, fn: Callable, jobs: int, keep_going: bool):
    """Apply ``fn`` per record; returns ``(results by id, failed ids)``.

    Each patient gets one JSON log line. Without ``keep_going`` the first
    failure propagates unchanged.
    """

    def run(item):
        start = time.perf_counter()
        try:
            out = fn(item)
        except Exception as exc:
            ms = round((time.perf_counter() - start) * 1000)
            extra = {"stage": stage, "patient_id": item.id, "duration_ms": ms}
            if not keep_going:
                raise
            logger.warning("failed: %s: %s", type(exc).__name__, exc, extra=extra)
            return item.id, None, exc
        ms = round((time.perf_counter() - start) * 1000)
        logger.debug("done", extra={"stage": stage, "patient_id": item.id, "duration_ms": ms})
        return item.id, out, None

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run, items))
    else:
        outcomes = [run(item) for item in items]
    results = {pid: out for pid, out, err in outcomes if err is None}
    failed = sorted(pid for pid, _, err in outcomes if err is not None)
    return results, failed


def _vocabulary(config: PipelineConfig, profiles: Iterable[str]) -> list[str]:
    if not any(config.gateway.get(p, {}).get("kind") == "keyword" for p in profiles):
        return []
    _require(config.paths.kg_nodes, config.paths.kg_edges)
    return [n.name for n in load_kg(config.paths.kg_nodes, config.paths.kg_edges).nodes]


# --- stages ---------------------------------------------------------------


def cmd_ingest(config: PipelineConfig, source: Path) -> StageResult:
    """Validate a patients file and write its normalized form."""
    _require(source)
    records = load_patients(source)
    config.paths.patients.parent.mkdir(parents=True, exist_ok=True)
    write_patients(sorted(records, key=lambda r: r.id), config.paths.patients)
    return StageResult("ingest", processed=len(records), outputs=[str(config.paths.patients)])


def cmd_synth(config: PipelineConfig) -> StageResult:
    records, kg = generate_synthetic_cohort(config.synthetic)
    for p in (config.paths.patients, config.paths.kg_nodes, config.paths.kg_edges):
        p.parent.mkdir(parents=True, exist_ok=True)
    write_patients(records, config.paths.patients)
    write_kg(kg, config.paths.kg_nodes, config.paths.kg_edges)
    positives = sum(r.label(config.task) for r in records)
    return StageResult(
        "synth",
        processed=len(records),
        outputs=[str(config.paths.patients), str(config.paths.kg_nodes), str(config.paths.kg_edges)],
        extra={"positives": positives, "kg_nodes": len(kg.nodes), "kg_edges": len(kg.edges)},
    )


def _load_records(config: PipelineConfig):
    _require(config.paths.patients)
    return sorted(load_patients(config.paths.patients), key=lambda r: r.id)


def cmd_extract(config: PipelineConfig, *, force: bool = False, keep_going: bool = False, gateway=None) -> StageResult:
    """Abnormal lab features and note disease entities for every patient.

    Patients already present in both output files are skipped unless
    ``force``; z-score statistics always come from the training split.
    """
    records = _load_records(config)
    out_ts = config.paths.output(ENTITIES_TS)
    out_note = config.paths.output(ENTITIES_NOTE)
    done_ts, done_note = {}, {}
    if not force and out_ts.exists() and out_note.exists():
        done_ts, done_note = _by_id(out_ts), _by_id(out_note)
    ids = {r.id for r in records}
    done = {pid for pid in done_ts if pid in done_note and pid in ids}
    todo = [r for r in records if r.id not in done]

    if todo and gateway is None:
        gateway = build_gateway(config, _vocabulary(config, [EXTRACTOR_PROFILE]), [EXTRACTOR_PROFILE])
    stats = compute_feature_stats(list(split_cohort(records, seed=config.seed).train))

    def work(rec):
        mentions = extract_ts_entities(rec.ts, stats, config.epsilon)
        entities, trace = extract_note_entities(rec.note, gateway, config.max_rounds)
        note_row = {
            "patient_id": rec.id,
            "entities": sorted(entities),
            "rounds": trace.total_rounds,
            "converged": trace.converged,
        }
        return write_entities_line(rec.id, mentions), note_row

    results, failed = _for_each_patient("extract", todo, work, config.jobs, keep_going)
    for pid, (ts_row, note_row) in results.items():
        done_ts[pid], done_note[pid] = ts_row, note_row
    keep = sorted(pid for pid in ids if pid in done_ts and pid in done_note)
    write_jsonl(out_ts, (done_ts[pid] for pid in keep))
    write_jsonl(out_note, (done_note[pid] for pid in keep))
    return StageResult(
        "extract",
        processed=len(results),
        skipped=len(done),
        failed=failed,
        outputs=[str(out_ts), str(out_note)],
    )


def _mentions(ts_row: dict, note_row: dict) -> list[EntityMention]:
    out = [EntityMention(source="timeseries", **m) for m in ts_row["mentions"]]
    out += [EntityMention.from_note(e) for e in note_row["entities"]]
    return out


def load_or_build_index(config: PipelineConfig, gateway, force: bool = False) -> NodeEmbeddingIndex:
    """The node index on disk, built first if absent (or ``force``).

    A freshly built index is saved and read back, so every run matches
    against exactly the stored (float32) vectors.
    """
    path = config.paths.output(KG_INDEX)
    if force or not path.exists():
        _require(config.paths.kg_nodes, config.paths.kg_edges)
        kg = load_kg(config.paths.kg_nodes, config.paths.kg_edges)
        path.parent.mkdir(parents=True, exist_ok=True)
        build_index(kg, gateway.embedder(ENTITY_ENCODER)).save(path)
    return NodeEmbeddingIndex.load(path)


def cmd_match(config: PipelineConfig, *, force: bool = False, keep_going: bool = False, gateway=None) -> StageResult:
    out_ts, out_note = config.paths.output(ENTITIES_TS), config.paths.output(ENTITIES_NOTE)
    _require(out_ts, out_note)
    ts_rows, note_rows = _by_id(out_ts), _by_id(out_note)
    gateway = gateway or build_gateway(config, profiles=[ENTITY_ENCODER])
    index = load_or_build_index(config, gateway, force)
    embed = gateway.embedder(ENTITY_ENCODER)

    def work(item):
        return [
            match_entity(m, index, embed, config.eta).to_dict()
            for m in _mentions(ts_rows[item.id], note_rows.get(item.id, {"entities": []}))
        ]

    items = [_PatientRef(pid) for pid in sorted(ts_rows)]
    results, failed = _for_each_patient("match", items, work, config.jobs, keep_going)
    out = config.paths.output(MATCHES)
    write_jsonl(out, ({"patient_id": pid, "matches": results[pid]} for pid in sorted(results)))
    n_matched = sum(bool(m["node_ids"]) for ms in results.values() for m in ms)
    n_total = sum(len(ms) for ms in results.values())
    return StageResult(
        "match", processed=len(results), failed=failed, outputs=[str(out)],
        extra={"entities": n_total, "matched": n_matched},
    )


def build_bundle(patient_id: str, ts_row: dict, note_row: dict, match_row: dict, kg, config: PipelineConfig) -> EnhancementBundle:
    node_ids = sorted({nid for m in match_row["matches"] for nid in m["node_ids"]})
    triples = [
        (kg.node(e.head).name, e.relation, kg.node(e.tail).name)
        for e in sample_triples(kg, node_ids, config.n_triples, seed=config.seed)
    ]
    return EnhancementBundle(
        patient_id=patient_id,
        abnormal_features=[EntityMention(source="timeseries", **m) for m in ts_row["mentions"]],
        diseases=list(note_row["entities"]),
        knowledge_texts=[node_knowledge(kg, nid) for nid in node_ids],
        triples=triples,
    )


def cmd_summarize(config: PipelineConfig, *, keep_going: bool = False, gateway=None) -> StageResult:
    """Knowledge-grounded summary per patient.

    Content-policy refusals become the literal ``"None"``; the count is
    reported in the stage result and in ``summarize_run.json``.
    """
    paths = [config.paths.output(n) for n in (ENTITIES_TS, ENTITIES_NOTE, MATCHES)]
    _require(*paths, config.paths.kg_nodes, config.paths.kg_edges)
    ts_rows, note_rows, match_rows = (_by_id(p) for p in paths)
    kg = load_kg(config.paths.kg_nodes, config.paths.kg_edges)
    if gateway is None:
        gateway = build_gateway(config, [n.name for n in kg.nodes], [SUMMARIZER_PROFILE])

    def work(item):
        pid = item.id
        bundle = build_bundle(pid, ts_rows[pid], note_rows[pid], match_rows[pid], kg, config)
        generate_summary(bundle, gateway)
        return bundle

    items = [_PatientRef(pid) for pid in sorted(match_rows) if pid in ts_rows and pid in note_rows]
    results, failed = _for_each_patient("summarize", items, work, config.jobs, keep_going)
    out = config.paths.output(BUNDLES)
    write_jsonl(out, (results[pid].to_dict() for pid in sorted(results)))
    fallback = sorted(pid for pid, b in results.items() if b.summary_fallback)
    run = {
        "patients": len(items),
        "summaries": len(results),
        "none_substitutions": len(fallback),
        "none_patients": fallback,
        "failed": failed,
    }
    write_json(config.paths.output(SUMMARY_RUN), run)
    logger.info(
        "%d summaries, %d replaced with None", len(results), len(fallback),
        extra={"stage": "summarize", "none_substitutions": len(fallback)},
    )
    return StageResult(
        "summarize", processed=len(results), failed=failed,
        outputs=[str(out), str(config.paths.output(SUMMARY_RUN))],
        extra={"none_substitutions": len(fallback), "none_patients": fallback},
    )


# --- training -------------------------------------------------------------


def _embed_text(gateway, text: str, dim: int) -> np.ndarray:
    # empty notes carry no text signal; do not spend a request on them
    if not text.strip():
        return np.zeros(dim)
    return gateway.embed(NOTE_ENCODER, text)


def _check_split(name: str, records, task: str) -> None:
    labels = [r.label(task) for r in records]
    pos = sum(labels)
    if pos == 0 or pos == len(labels):
        raise UndefinedMetricError(
            f"{name} split has {pos} positive and {len(labels) - pos} negative {task} labels; "
            "metrics are undefined"
        )


def prepare_data(config: PipelineConfig, gateway=None) -> tuple[SplitBatches, dict]:
    records = _load_records(config)
    bundles_path = config.paths.output(BUNDLES)
    _require(bundles_path)
    bundles = _by_id(bundles_path)
    missing = [r.id for r in records if r.id not in bundles]
    if missing:
        raise ValidationError(f"{len(missing)} patient(s) have no summary bundle, e.g. {missing[0]}")
    gateway = gateway or build_gateway(config, profiles=[NOTE_ENCODER])
    backend = gateway.embed_backends.get(NOTE_ENCODER)
    if backend is None:
        raise ConfigurationError(f"no embedding profile named {NOTE_ENCODER!r}")
    dim = backend.dim
    note_vecs = {r.id: _embed_text(gateway, r.note.text, dim) for r in records}
    rag_vecs = {r.id: _embed_text(gateway, bundles[r.id]["summary"] or "", dim) for r in records}
    split = split_cohort(records, seed=config.seed)
    for name, part in (("train", split.train), ("validation", split.val), ("test", split.test)):
        _check_split(name, part, config.task)
    stats = compute_feature_stats(list(split.train))
    data = make_split_batches(split, stats, note_vecs, rag_vecs, config.task)
    return data, {"task": config.task, "split_sizes": list(split.sizes), "split_seed": config.seed}


def _write_report(config: PipelineConfig, report, meta: dict) -> list[str]:
    body = {**meta, **report.to_dict()}
    write_json(config.paths.output(REPORT), body)
    write_json(config.paths.output(RESAMPLES), report.indices_dict())
    return [str(config.paths.output(REPORT)), str(config.paths.output(RESAMPLES))]


def cmd_train(config: PipelineConfig, *, use_grid_search: bool = False, gateway=None) -> StageResult:
    torch.manual_seed(config.seed)
    data, meta = prepare_data(config, gateway)
    tc = config.training
    extra = {}
    if use_grid_search:
        gs = grid_search(data, tc)
        extra["grid"] = [asdict(c) for c in gs.cells]
        tc = tc.__class__(**{**tc.to_dict(), "learning_rate": gs.learning_rate, "hidden_dim": gs.hidden_dim})
    result = fit(data, tc)
    model = result.model
    model_path = config.paths.output(MODEL)
    model_path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {"config": {**asdict(model.config), "modalities": list(model.config.modalities)},
         "training": tc.to_dict(), "state": model.state_dict()},
        model_path,
    )
    history = {
        "best_epoch": result.best_epoch,
        "stopped_epoch": result.stopped_epoch,
        "epochs": [asdict(e) for e in result.history],
        **extra,
    }
    write_json(config.paths.output(HISTORY), history)
    meta = {**meta, "best_epoch": result.best_epoch}
    report = evaluate_model(model, data.test, tc)
    outputs = [str(model_path), str(config.paths.output(HISTORY))]
    outputs += _write_report(config, report, meta)
    return StageResult(
        "train", processed=len(data.train), outputs=outputs,
        extra={"best_epoch": result.best_epoch, "auroc": report["auroc"].mean},
    )


def load_model(path: Path) -> tuple[FusionModel, dict]:
    blob = torch.load(path, weights_only=False)
    cfg = dict(blob["config"])
    cfg["modalities"] = tuple(cfg["modalities"])
    model = FusionModel(FusionConfig(**cfg))
    model.load_state_dict(blob["state"])
    model.eval()
    return model, blob


def cmd_evaluate(config: PipelineConfig, *, gateway=None) -> StageResult:
    model_path = config.paths.output(MODEL)
    _require(model_path)
    data, meta = prepare_data(config, gateway)
    model, blob = load_model(model_path)
    history_path = config.paths.output(HISTORY)
    if history_path.exists():
        meta["best_epoch"] = json.loads(history_path.read_text())["best_epoch"]
    tc = config.training.__class__(**blob["training"])
    report = evaluate_model(model, data.test, tc)
    return StageResult(
        "evaluate", processed=len(data.test), outputs=_write_report(config, report, meta),
        extra={"auroc": report["auroc"].mean},
    )


def cmd_ablate(config: PipelineConfig, suite: str, *, gateway=None) -> StageResult:
    data, meta = prepare_data(config, gateway)
    rows = run_ablation(suite, data, config.training)
    csv_path = config.paths.output(ABLATION_CSV)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    write_ablation_csv(rows, csv_path)
    write_json(
        config.paths.output(ABLATION_JSON),
        {
            **meta,
            "suite": suite,
            "rows": [
                {"cell": r.cell, "error": r.error, "report": r.report.to_dict() if r.report else None}
                for r in rows
            ],
        },
    )
    failed = [r.cell for r in rows if r.error]
    if len(failed) == len(rows):
        raise PipelineRuntimeError(f"every cell of the {suite} suite failed")
    return StageResult(
        "ablate", processed=len(rows), failed=failed,
        outputs=[str(csv_path), str(config.paths.output(ABLATION_JSON))],
    )
