"""Python access to the diffusion emotion-transfer model, corpus generator and probes."""

import json as _json

# libtorch must be loaded before the extension resolves its symbols.
import torch as _torch  # noqa: F401

from ._core import (
    Checkpoint,
    DicletError,
    diffusion_oracle_json,
    evaluate,
    gen_data,
    length_regulate,
    linear_probe,
    orthogonal_projection_loss,
    read_mel,
    schedule,
    synth,
    train,
    write_mel,
)

__all__ = [
    "Checkpoint",
    "DicletError",
    "checkpoint_config",
    "diffusion_oracle",
    "evaluate",
    "gen_data",
    "generate_corpus",
    "length_regulate",
    "linear_probe",
    "orthogonal_projection_loss",
    "read_mel",
    "schedule",
    "synth",
    "train",
    "write_mel",
]


def generate_corpus(out_dir, **config):
    """Writes a corpus under out_dir. Keyword arguments override the generator defaults."""
    from ._core import generate_corpus_json

    return _json.loads(generate_corpus_json(_json.dumps(config), str(out_dir)))


def diffusion_oracle(paths=100000, sampler_runs=10000, seed=11):
    return _json.loads(diffusion_oracle_json(paths, sampler_runs, seed))


def checkpoint_config(checkpoint):
    return _json.loads(checkpoint.config_json())
