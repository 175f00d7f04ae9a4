"""Plackett-Luce profile selection with REINFORCE training."""

import json

from ._purple import (
    AlignmentError,
    ConfigError,
    Error,
    GuardError,
    NumericError,
    ParseError,
    Scorer,
    ShapeError,
    TransportError,
    ValidationError,
    WorldSpec,
    bm25_scores,
    enumerate_profiles,
    hash_embed,
    normalize_rewards,
    optimal_utilities,
    permutation_count,
    profile_logprob,
    profile_prob,
    rouge1,
    rougeL,
    sample_profiles,
    synthetic_utility,
    top_k_profile,
)
from . import _purple


def generate_dataset(spec, users):
    """Synthetic users as (list of example dicts, header dict)."""
    lines, header = _purple.generate_dataset(spec, users)
    return [json.loads(line) for line in lines], json.loads(header)


def train_synthetic(settings=None, users=32, out_dir=""):
    """Trains on a generated world; settings use the config-file keys."""
    result = _purple.train_synthetic({k: str(v) for k, v in (settings or {}).items()}, users, out_dir)
    result["log"] = [json.loads(line) for line in result["log"]]
    return result


def evaluate_outputs(ids, predictions, references, metric_set="all"):
    return json.loads(_purple.evaluate_outputs(ids, predictions, references, metric_set))


def run_oracle_suite(name, seed=0):
    return json.loads(_purple.run_oracle_suite(name, seed))


__all__ = [name for name in dir() if not name.startswith("_") and name != "json"]
