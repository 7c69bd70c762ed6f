"""JSON artifacts for fitted models."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..kernels import parse_kernel
from ..likelihoods import parse_likelihood
from ..params import load_snapshot, snapshot
from .base import Dataset, GPModel
from .exact import GPR, SGPR
from .mcmc import GPMC, SGPMC
from .variational import SVGP, VGP

FORMAT_VERSION = 1

_KINDS = {cls.kind: cls for cls in (GPR, SGPR, SVGP, VGP, GPMC, SGPMC)}


def model_to_dict(model: GPModel) -> dict:
    doc = {
        "format": FORMAT_VERSION,
        "kind": model.kind,
        "kernel": model.kernel.to_expr(),
        "likelihood": model.likelihood.to_spec(),
        "jitter": model.jitter,
        "params": snapshot(model.parameters()),
        "data": {"X": model.data.X.tolist(), "Y": model.data.Y.tolist()},
    }
    if hasattr(model, "Z"):
        doc["Z"] = model.Z.value.tolist()
    if hasattr(model, "q_mu"):
        doc["q_mu"] = model.q_mu.value.tolist()
        doc["q_sqrt"] = [f.tolist() for f in model.q_sqrt]
        doc["whiten"] = model.whiten
    return doc


def model_from_dict(doc: dict) -> GPModel:
    kind = doc["kind"]
    if kind not in _KINDS:
        raise ValueError(f"unknown model kind {kind!r} in artifact")
    data = Dataset(np.array(doc["data"]["X"], dtype=np.float64), np.array(doc["data"]["Y"], dtype=np.float64))
    kernel = parse_kernel(doc["kernel"], data.input_dim)
    likelihood = parse_likelihood(doc["likelihood"])
    kwargs = {"jitter": float(doc.get("jitter", 1e-6))}
    cls = _KINDS[kind]
    if kind in ("gpr", "vgp", "gpmc"):
        model = cls(data, kernel, likelihood, **kwargs)
    elif kind == "sgpr":
        model = cls(data, kernel, doc["Z"], likelihood, **kwargs)
    elif kind == "svgp":
        model = cls(data, kernel, likelihood, doc["Z"], whiten=bool(doc.get("whiten", True)), **kwargs)
    else:
        model = cls(data, kernel, likelihood, doc["Z"], **kwargs)
    load_snapshot(model.parameters(), doc["params"])
    return model


def save_model(model: GPModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)) + "\n")


def load_model(path) -> GPModel:
    return model_from_dict(json.loads(Path(path).read_text()))
