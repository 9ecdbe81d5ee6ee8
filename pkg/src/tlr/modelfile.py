"""Versioned on-disk format for trained pipelines.

Layout (all multi-byte numbers little-endian)::

    TLRMODEL\\n
    <one line of JSON header, keys sorted>\\n
    <float64 arrays, row-major, in the order listed in header["arrays"]>

The header holds ``format_version``, ``n``, ``m``, ``k``, ``lambda``,
``clip_low``, the regressor block ``{d, names, weights, residual_std}``,
the feature configuration, the CV table and the S2 history needed to seed
autoregressive features at score time. The arrays are ``U`` (n x k),
``singular_values`` (k), ``V`` (m x k), the folding index ``G`` (n x k)
and ``H`` (m x k), and ``reference_deviations`` (S2 absolute residuals).
Writing the same pipeline twice yields identical bytes.
"""
from __future__ import annotations

import dataclasses
import json

import numpy as np

from .coldstart import FoldingIndex
from .errors import ModelFormatError
from .lowrank import ModelMatrix, SvdFactors
from .training import FeatureConfig, Regressor, TrainedPipeline

MAGIC = b"TLRMODEL\n"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f8")


def save_pipeline(p: TrainedPipeline, path) -> None:
    f = p.model.factors
    arrays = [("U", f.U), ("singular_values", f.singular_values), ("V", f.V),
              ("G", p.folding.G), ("H", p.folding.H),
              ("reference_deviations", p.reference_deviations)]
    header = {
        "format_version": FORMAT_VERSION,
        "n": p.model.n,
        "m": p.model.m,
        "k": p.model.k,
        "lambda": p.model.lam,
        "clip_low": p.model.clip_low,
        "lambda_star": p.lambda_star,
        "cv_scores": sorted([float(k), float(v)] for k, v in p.cv_scores.items()),
        "regressor": {
            "d": int(p.regressor.weights.size),
            "names": list(p.regressor.feature_names),
            "weights": [float(w) for w in p.regressor.weights],
            "residual_std": p.regressor.train_residual_std,
        },
        "features": dataclasses.asdict(p.features),
        "impute_ll": p.impute_ll,
        "reference_id": p.reference_id,
        "s2_history": sorted([int(k), float(v)] for k, v in p.s2_history.items()),
        "arrays": [[name, list(np.shape(a))] for name, a in arrays],
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True, allow_nan=False).encode() + b"\n")
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype=_DTYPE).tobytes())


def load_pipeline(path) -> TrainedPipeline:
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise ModelFormatError(f"{path}: not a model file")
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: corrupt header ({exc})") from None
        version = header.get("format_version")
        if version != FORMAT_VERSION:
            raise ModelFormatError(f"{path}: format version {version}, "
                                   f"expected {FORMAT_VERSION}")
        arrays = {}
        for name, shape in header["arrays"]:
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * _DTYPE.itemsize)
            if len(raw) != count * _DTYPE.itemsize:
                raise ModelFormatError(f"{path}: truncated array {name}")
            arrays[name] = np.frombuffer(raw, dtype=_DTYPE).reshape(shape).copy()
        if fh.read(1):
            raise ModelFormatError(f"{path}: trailing bytes")

    factors = SvdFactors(arrays["U"], arrays["singular_values"], arrays["V"])
    model = ModelMatrix(factors, header["lambda"], header["clip_low"])
    if (model.n, model.m, model.k) != (header["n"], header["m"], header["k"]):
        raise ModelFormatError(f"{path}: header dimensions disagree with arrays")
    folding = FoldingIndex(arrays["G"], arrays["H"], factors.U, factors.V)
    r = header["regressor"]
    regressor = Regressor(np.array(r["weights"], dtype=np.float64), tuple(r["names"]),
                          r["residual_std"])
    features = FeatureConfig(**header["features"])
    if tuple(features.names()) != regressor.feature_names:
        raise ModelFormatError(f"{path}: regressor features do not match feature config")
    return TrainedPipeline(
        model=model, folding=folding, regressor=regressor,
        lambda_star=header["lambda_star"],
        cv_scores={k: v for k, v in header["cv_scores"]},
        features=features, impute_ll=header["impute_ll"],
        reference_id=header["reference_id"],
        s2_history={int(k): v for k, v in header["s2_history"]},
        reference_deviations=arrays["reference_deviations"])
