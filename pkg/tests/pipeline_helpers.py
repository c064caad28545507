"""Run the offline pipeline on a synthetic cohort inside a temp directory."""

from dataclasses import replace
from pathlib import Path

from ragehr import pipeline
from ragehr.config import config_from_mapping


def make_config(root: Path, n_patients: int = 300, seed: int = 0, **synthetic):
    data = {"seed": seed, "synthetic": {"n_patients": n_patients, **synthetic}}
    return config_from_mapping(data, Path(root))


def run_until_summaries(config, gateway=None):
    pipeline.cmd_synth(config)
    pipeline.cmd_extract(config, gateway=gateway)
    pipeline.cmd_match(config, gateway=gateway)
    pipeline.cmd_summarize(config, gateway=gateway)
    return config


def with_training(config, **changes):
    return replace(config, training=replace(config.training, **changes))
