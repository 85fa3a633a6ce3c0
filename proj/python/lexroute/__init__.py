"""Python bindings for the lexroute engine."""

import json

from ._core import (
    Engine as _Engine,
    LexrouteError,
    aggregate,
    bleu,
    compute_reward,
    cosine,
    embed,
    f1,
    fuse_scores,
    gate,
    normalize,
    rouge_l,
    softmax,
    top_k,
    train_transe,
)

__all__ = [
    "Engine",
    "LexrouteError",
    "aggregate",
    "bleu",
    "compute_reward",
    "cosine",
    "embed",
    "f1",
    "fuse_scores",
    "gate",
    "normalize",
    "rouge_l",
    "softmax",
    "top_k",
    "train_transe",
]


class Engine:
    """Thin wrapper that speaks dicts instead of JSON strings."""

    def __init__(self, config=None, base_dir=".", *, config_path=None):
        if config_path is not None:
            self._e = _Engine.from_file(str(config_path))
        else:
            self._e = _Engine(json.dumps(config or {}), str(base_dir))

    def __getattr__(self, name):
        return getattr(self._e, name)

    def query(self, text, case_id=""):
        return json.loads(self._e.query(text, case_id))

    def case(self, case_id):
        return json.loads(self._e.case(case_id))

    def feedback(self, record):
        return self._e.feedback(json.dumps(record))

    def metrics(self):
        return json.loads(self._e.metrics())
