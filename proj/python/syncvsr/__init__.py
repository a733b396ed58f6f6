"""Python bindings for the syncvsr C++ core."""

import json as _json

from ._core import (
    Codebook,
    Error,
    World,
    align_tokens,
    ctc_loss,
    fit_codebook,
    levenshtein,
    levenshtein_str,
    lm_loss,
    load_codebook,
    load_split,
    lr_schedule,
    masked_sync_loss,
    mean_attention_distance,
    perplexity,
    render_sample,
    run_cli,
    sync_loss,
    task_loss,
    total_loss,
    wer,
    word_ce,
)
from . import _core


def build_world(config=None, seed=0):
    return _core.build_world(_json.dumps(config or {}), seed)


def train(config, data_dir, out_dir):
    return _core.train(_json.dumps(config), str(data_dir), str(out_dir))


def evaluate(checkpoint, split_dir):
    return _json.loads(_core.evaluate(str(checkpoint), str(split_dir)))


__all__ = [name for name in dir() if not name.startswith("_")]
