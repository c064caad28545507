"""Synthetic multimodal cohort with planted, learnable signal.

Each patient draws two independent latent risk factors: one is written into
the lab series as a sustained excursion of a few signal features, the other
into the note as an ordinal number of high-risk disease mentions. Labels
threshold ``s * latent + (1 - s) * noise`` at the normal quantile matching the
configured positive rate, so ``signal_strength = 0`` yields labels independent
of the data and the expected positive rate is exact for any strength.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import NamedTuple

import numpy as np

from ..errors import ValidationError
from ..kg import KGEdge, KGNode, KnowledgeGraph
from .notes import normalize_note
from .records import MAX_VISITS, FeatureSpec, PatientRecord, TimeSeriesMatrix

# name, kind, typical mean, typical sd (categorical: number of codes in "mean")
LAB_FEATURES: tuple[tuple[str, str, float, float], ...] = (
    ("fraction inspired oxygen", "numeric", 0.45, 0.12),
    ("mean blood pressure", "numeric", 80.0, 12.0),
    ("heart rate", "numeric", 86.0, 16.0),
    ("respiratory rate", "numeric", 19.0, 5.0),
    ("oxygen saturation", "numeric", 96.0, 2.5),
    ("glucose", "numeric", 135.0, 40.0),
    ("systolic blood pressure", "numeric", 120.0, 18.0),
    ("diastolic blood pressure", "numeric", 62.0, 11.0),
    ("temperature", "numeric", 36.9, 0.6),
    ("ph", "numeric", 7.38, 0.06),
    ("weight", "numeric", 82.0, 20.0),
    ("height", "numeric", 169.0, 10.0),
    ("capillary refill rate", "categorical", 2, 0),
    ("glascow coma scale eye opening", "categorical", 4, 0),
    ("glascow coma scale motor response", "categorical", 6, 0),
    ("glascow coma scale verbal response", "categorical", 5, 0),
    ("glascow coma scale total", "categorical", 13, 0),
)
# (feature position, sign of the excursion per unit of latent risk)
SIGNAL_FEATURES: tuple[tuple[int, float], ...] = ((0, 1.0), (1, -1.0), (2, 1.0))

DEFAULT_DISEASE_VOCAB: tuple[str, ...] = (
    # first half: risk-bearing, planted according to the note latent
    "sepsis",
    "septic shock",
    "acute kidney injury",
    "acute respiratory failure",
    "cardiac arrest",
    "pneumonia",
    "metastatic cancer",
    "intracranial hemorrhage",
    # second half: background comorbidities, label independent
    "hypertension",
    "hyperlipidemia",
    "hypothyroidism",
    "gastroesophageal reflux disease",
    "osteoarthritis",
    "seasonal allergies",
    "migraine",
    "anemia",
)

_FILLER = (
    "Pt seen and examined at bedside.",
    "Family updated on plan of care by [**Name (NI) 1234**].",
    "Admitted from [**Hospital 18**] ED on [**2101-3-4**].",
    "Vitals reviewed; tolerating diet.",
    "Lines: R IJ CVL placed [**2101-3-5**], site clean.",
    "Continue current management, reassess in AM!!",
    "Labs as noted below -- see flowsheet.",
    "Dispo: remains in ICU for monitoring.",
)
_RELATIONS = ("associated_with", "risk_factor_of", "complication_of", "phenotype_of")


@dataclass(frozen=True)
class SyntheticConfig:
    n_patients: int = 1000
    n_features: int = 17
    n_visits: int = 24
    positive_rate: float = 0.15
    signal_strength: float = 0.8
    disease_vocab: tuple[str, ...] = DEFAULT_DISEASE_VOCAB
    seed: int = 0
    readmission_rate: float | None = None
    demographics: bool = True
    missing_rate: float = 0.1
    n_distractor_nodes: int = 24

    def __post_init__(self):
        object.__setattr__(self, "disease_vocab", tuple(self.disease_vocab))
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ValidationError(f"signal_strength must lie in [0, 1], got {self.signal_strength}")
        for name in ("positive_rate", "readmission_rate"):
            rate = getattr(self, name)
            if rate is not None and not 0.0 < rate < 1.0:
                raise ValidationError(f"{name} must lie in (0, 1), got {rate}")
        if self.n_patients < 1 or self.n_features < 1:
            raise ValidationError("n_patients and n_features must be positive")
        if not 1 <= self.n_visits <= MAX_VISITS:
            raise ValidationError(f"n_visits must lie in 1..{MAX_VISITS}")
        if len(self.disease_vocab) < 2:
            raise ValidationError("disease_vocab needs at least two entries")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ValidationError("missing_rate must lie in [0, 1)")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "SyntheticConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(mapping) - known
        if unknown:
            raise ValidationError(f"unknown synthetic config keys: {sorted(unknown)}")
        return cls(**mapping)


def feature_specs(config: SyntheticConfig) -> tuple[FeatureSpec, ...]:
    specs = []
    for i in range(config.n_features):
        if i < len(LAB_FEATURES):
            name, kind = LAB_FEATURES[i][:2]
        else:
            name, kind = f"lab {i + 1}", "numeric"
        specs.append(FeatureSpec(i, name, kind))
    if config.demographics:
        specs.append(FeatureSpec(len(specs), "age", "numeric"))
        specs.append(FeatureSpec(len(specs), "gender", "categorical"))
    return tuple(specs)


def _feature_profile(i: int) -> tuple[str, float, float]:
    if i < len(LAB_FEATURES):
        _, kind, mean, sd = LAB_FEATURES[i]
        return kind, mean, sd
    return "numeric", 50.0, 10.0


def _label(latent: np.ndarray, noise: np.ndarray, strength: float, rate: float) -> np.ndarray:
    score = strength * latent + (1.0 - strength) * noise
    scale = math.hypot(strength, 1.0 - strength)
    cut = scale * NormalDist().inv_cdf(1.0 - rate)
    return (score > cut).astype(int)


def _note_text(rng, risk_terms, background_terms, u_note) -> str:
    k = len(risk_terms)
    # Staggered thresholds turn the latent into an ordinal mention count.
    cuts = np.linspace(-1.0, 2.0, k)
    jitter = 0.25 * rng.standard_normal(k)
    mentioned = [t for t, c, j in zip(risk_terms, cuts, jitter) if u_note + j > c]
    mentioned += [t for t in background_terms if rng.random() < 0.2]
    rng.shuffle(mentioned)
    sentences = list(rng.choice(_FILLER, size=3, replace=False))
    templates = (
        "History notable for {}.",
        "Concern for {} per team.",
        "PMH: {}.",
        "Assessment: {}, will follow.",
    )
    for term in mentioned:
        tpl = templates[int(rng.integers(len(templates)))]
        text = term.upper() if rng.random() < 0.2 else term.capitalize()
        sentences.insert(int(rng.integers(len(sentences) + 1)), tpl.format(text))
    return " ".join(sentences)


def _build_kg(config: SyntheticConfig, specs, rng) -> KnowledgeGraph:
    nodes: list[KGNode] = []
    for term in config.disease_vocab:
        nodes.append(
            KGNode(
                len(nodes),
                term,
                f"{term} is a disease entity recorded in clinical practice.",
                f"Patients with {term} may need close monitoring.",
            )
        )
    for spec in specs:
        if spec.kind != "numeric" or spec.name in ("age", "height", "weight"):
            continue
        for word in ("high", "low"):
            nodes.append(
                KGNode(
                    len(nodes),
                    f"{word} {spec.name}",
                    f"Abnormally {word} {spec.name}.",
                    "",
                )
            )
    for j in range(config.n_distractor_nodes):
        nodes.append(KGNode(len(nodes), f"rare syndrome type {j + 1}", "A rare disorder.", ""))
    n = len(nodes)
    edges = []
    for head in range(n):
        for _ in range(int(rng.integers(1, 5))):
            tail = int(rng.integers(n))
            if tail != head:
                edges.append(KGEdge(head, _RELATIONS[int(rng.integers(len(_RELATIONS)))], tail))
    return KnowledgeGraph(tuple(nodes), tuple(edges))


def generate_synthetic_cohort(
    config: SyntheticConfig, seed: int | None = None
) -> tuple[list[PatientRecord], KnowledgeGraph]:
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    specs = feature_specs(config)
    n = config.n_patients
    half = len(config.disease_vocab) // 2
    risk_terms = config.disease_vocab[:half]
    background_terms = config.disease_vocab[half:]

    u_ts = rng.standard_normal(n)
    u_note = rng.standard_normal(n)
    latent = (u_ts + u_note) / math.sqrt(2.0)
    y_mort = _label(latent, rng.standard_normal(n), config.signal_strength, config.positive_rate)
    readm_rate = config.readmission_rate or config.positive_rate
    y_readm = _label(latent, rng.standard_normal(n), config.signal_strength, readm_rate)

    signal = {pos: sign for pos, sign in SIGNAL_FEATURES if pos < config.n_features}
    records = []
    width = len(str(n))
    for p in range(n):
        t_len = int(rng.integers(max(1, (config.n_visits + 1) // 2), config.n_visits + 1))
        grid = np.empty((t_len, len(specs)))
        for i in range(config.n_features):
            kind, mean, sd = _feature_profile(i)
            if kind == "categorical":
                top = int(mean)
                base = int(rng.integers(1, top + 1))
                col = np.clip(base + rng.integers(-1, 2, size=t_len), 1, top).astype(float)
            else:
                shift = signal.get(i, 0.0) * 1.5 * u_ts[p]
                drift = np.cumsum(0.05 * rng.standard_normal(t_len))
                col = mean + sd * (shift + 0.5 * rng.standard_normal(t_len) + drift)
                col = np.round(col, 4)
            grid[:, i] = col
        if config.demographics:
            grid[:, config.n_features] = float(rng.integers(18, 91))
            grid[:, config.n_features + 1] = float(rng.integers(0, 2))
        holes = rng.random((t_len, config.n_features)) < config.missing_rate
        grid[:, : config.n_features][holes] = np.nan
        raw_note = _note_text(rng, risk_terms, background_terms, u_note[p])
        records.append(
            PatientRecord(
                id=f"p{p:0{width}d}",
                ts=TimeSeriesMatrix(grid, specs),
                note=normalize_note(raw_note),
                label_mortality=int(y_mort[p]),
                label_readmission=int(y_readm[p]),
            )
        )
    kg = _build_kg(config, specs, np.random.default_rng([seed, 1]))
    return records, kg


class PlantedSignal(NamedTuple):
    ts_excursion: np.ndarray
    risk_mentions: np.ndarray


def planted_signal(records, config: SyntheticConfig) -> PlantedSignal:
    """Observable planted signal per patient.

    ``ts_excursion`` is the mean signed standardized shift of the signal
    features, ``risk_mentions`` the number of risk-bearing terms in the note.
    """
    half = len(config.disease_vocab) // 2
    risk_terms = config.disease_vocab[:half]
    exc, counts = [], []
    for r in records:
        vals = []
        for pos, sign in SIGNAL_FEATURES:
            if pos >= config.n_features:
                continue
            _, mean, sd = _feature_profile(pos)
            col = r.ts.values[:, pos]
            col = col[~np.isnan(col)]
            if col.size:
                vals.append(sign * (col.mean() - mean) / sd)
        exc.append(float(np.mean(vals)) if vals else 0.0)
        counts.append(sum(t in r.note.text for t in risk_terms))
    return PlantedSignal(np.array(exc), np.array(counts, dtype=float))
