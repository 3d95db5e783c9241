"""Checkpoints, run reports, and resolved run configurations.

Checkpoints are JSON documents with every float stored in C99 hex
notation, so save/load round-trips are bit-exact and a double save is
byte-identical. Run reports collect per-step metrics and a summary;
they serialize to JSON and to plot-ready CSV with identical values.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .data import DatasetSource
from .errors import CheckpointError, ConfigError, ContractError, FormatError
from .model import ModelConfig, TrainState, init_state

__all__ = [
    "FORMAT_VERSION",
    "RunReport",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_config",
    "resolve_run_config",
    "config_hash",
]

FORMAT_VERSION = 1

TRAIN_DEFAULTS = {
    "steps": 2000,
    "record_every": 1,
    "gap_every": 0,
    "probe_size": 64,
    "eval_batch_size": 256,
}


def _encode_array(arr: np.ndarray) -> dict:
    return {
        "shape": list(arr.shape),
        "dtype": str(arr.dtype),
        "hex": [float(v).hex() for v in arr.ravel()],
    }


def _decode_array(doc: dict) -> np.ndarray:
    values = [float.fromhex(h) for h in doc["hex"]]
    return np.array(values, dtype=np.dtype(doc["dtype"])).reshape(doc["shape"])


def _codebook_doc(codebook) -> dict:
    return {
        "embeddings": _encode_array(codebook.embeddings.data),
        "ema_cluster_size": _encode_array(codebook.ema_cluster_size),
        "ema_embed_sum": _encode_array(codebook.ema_embed_sum),
        "gamma": codebook.gamma,
        "laplace_eps": codebook.laplace_eps,
    }


def save_checkpoint(state: TrainState, path, dataset: DatasetSource | None = None) -> None:
    """Write ``state`` to ``path`` as a versioned, bit-exact JSON document."""
    embedding_ids = {id(cb.embeddings) for cb in state.codebooks}
    doc = {
        "format_version": FORMAT_VERSION,
        "config": {
            "model": state.config.to_dict(),
            "dataset": dataset.to_dict() if dataset is not None else None,
        },
        "step": state.step,
        "adam_t": state.adam_t,
        "params": {
            name: _encode_array(p.data)
            for name, p in state.params.items()
            if id(p) not in embedding_ids
        },
        "codebooks": [_codebook_doc(cb) for cb in state.codebooks],
        "adam_m": {name: _encode_array(arr) for name, arr in state.adam_m.items()},
        "adam_v": {name: _encode_array(arr) for name, arr in state.adam_v.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _read_document(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}: malformed JSON at line {err.lineno} column {err.colno}: "
                          f"{err.msg}") from err


def checkpoint_config(path) -> dict:
    """Read only the config section of a checkpoint."""
    doc = _read_document(path)
    if doc.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {doc.get('format_version')!r} is not "
            f"supported (reader expects {FORMAT_VERSION})"
        )
    return doc["config"]


def load_checkpoint(path) -> TrainState:
    """Rebuild a TrainState from a checkpoint written by ``save_checkpoint``."""
    doc = _read_document(path)
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version!r} is not supported "
            f"(reader expects {FORMAT_VERSION})"
        )
    try:
        config = ModelConfig.from_dict(doc["config"]["model"])
        state = init_state(config)
        for name, entry in doc["params"].items():
            if name not in state.params:
                raise CheckpointError(f"{path}: unknown parameter {name!r}")
            state.params[name].data = _decode_array(entry)
        if len(doc["codebooks"]) != len(state.codebooks):
            raise CheckpointError(
                f"{path}: {len(doc['codebooks'])} codebooks for a model with "
                f"{len(state.codebooks)}"
            )
        for cb, entry in zip(state.codebooks, doc["codebooks"]):
            cb.embeddings.data = _decode_array(entry["embeddings"])
            cb.ema_cluster_size = _decode_array(entry["ema_cluster_size"])
            cb.ema_embed_sum = _decode_array(entry["ema_embed_sum"])
            cb.gamma = float(entry["gamma"])
            cb.laplace_eps = float(entry["laplace_eps"])
        state.adam_m = {k: _decode_array(v) for k, v in doc["adam_m"].items()}
        state.adam_v = {k: _decode_array(v) for k, v in doc["adam_v"].items()}
        state.adam_t = int(doc["adam_t"])
        state.step = int(doc["step"])
    except KeyError as err:
        raise CheckpointError(f"{path}: missing checkpoint field {err}") from err
    return state


def resolve_run_config(raw: dict) -> dict:
    """Expand a run config to its full form with every default filled in."""
    if not isinstance(raw, dict):
        raise ConfigError("run config must be a JSON object")
    unknown = set(raw) - {"model", "dataset", "train"}
    if unknown:
        raise ConfigError(f"unknown run config sections: {sorted(unknown)}")
    model = ModelConfig.from_dict(raw.get("model", {}))
    dataset = DatasetSource.from_dict(raw.get("dataset", {}))
    train = dict(TRAIN_DEFAULTS)
    extra = set(raw.get("train", {})) - set(TRAIN_DEFAULTS)
    if extra:
        raise ConfigError(f"unknown train config keys: {sorted(extra)}")
    train.update(raw.get("train", {}))
    return {"model": model.to_dict(), "dataset": dataset.to_dict(), "train": train}


def config_hash(resolved: dict) -> str:
    """Stable hash of a resolved configuration document."""
    canonical = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class RunReport:
    """Per-step training records plus a run summary.

    Records are appended with strictly increasing step numbers. ``gap``
    and ``usage`` are optional per record (probes may be sparse).
    """

    records: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def add_record(self, step: int, recon: float, vq: float, gap: float | None = None,
                   temperature: float | None = None, usage=None) -> None:
        if self.records and step <= self.records[-1]["step"]:
            raise ContractError(
                f"steps must increase: got {step} after {self.records[-1]['step']}"
            )
        self.records.append({
            "step": int(step),
            "recon": float(recon),
            "vq": float(vq),
            "gap": None if gap is None else float(gap),
            "temperature": None if temperature is None else float(temperature),
            "usage": None if usage is None else [int(c) for c in usage],
        })

    def set_summary(self, **kwargs) -> None:
        self.summary.update(kwargs)

    @property
    def usage_width(self) -> int:
        widths = {len(r["usage"]) for r in self.records if r["usage"] is not None}
        if len(widths) > 1:
            raise ContractError(f"inconsistent usage widths in report: {sorted(widths)}")
        return widths.pop() if widths else 0

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"records": self.records, "summary": self.summary}, fh, indent=1)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "RunReport":
        doc = _read_document(path)
        report = cls()
        report.records = doc["records"]
        report.summary = doc["summary"]
        return report

    def to_csv(self, path) -> None:
        width = self.usage_width
        columns = ["step", "recon", "vq", "gap", "temperature"]
        columns += [f"usage_{i}" for i in range(width)]
        lines = [",".join(columns)]
        for r in self.records:
            cells = [str(r["step"]), repr(r["recon"]), repr(r["vq"])]
            cells.append("" if r["gap"] is None else repr(r["gap"]))
            cells.append("" if r["temperature"] is None else repr(r["temperature"]))
            usage = r["usage"] if r["usage"] is not None else []
            cells += [str(usage[i]) if i < len(usage) else "" for i in range(width)]
            lines.append(",".join(cells))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
