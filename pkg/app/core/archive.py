"""
app/core/archive.py - Versioned JSON archive of a fitted model
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from app.core.design import BasisKind, ModelConfig, ModelDesign, ParametricColumn, SmoothTerm
from app.core.exceptions import ArchiveError, ConfigError
from app.core.families.cox import CoxBaseline
from app.core.inference import FitResult
from app.core.model import FitOptions, SmoothModel
from app.core.numerics import array_from_json, array_to_json
from app.core.outer_optimizer import OuterRecord, OuterTrace

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def _optional_array(a: Optional[np.ndarray]) -> Optional[Dict[str, Any]]:
    return None if a is None else array_to_json(a)


def _load_optional(raw: Optional[Dict[str, Any]]) -> Optional[np.ndarray]:
    return None if raw is None else array_from_json(raw)


def _term_to_dict(term: SmoothTerm) -> Dict[str, Any]:
    return {
        "covariate_name": term.covariate_name,
        "basis_kind": term.basis_kind.value,
        "k": term.k,
        "m": term.m,
        "centered": term.centered,
        "column_range": list(term.column_range),
        "predictor_index": term.predictor_index,
        "knots": _optional_array(term.knots),
        "constraint": _optional_array(term.constraint),
        "levels": _optional_array(term.levels),
        "covariate_range": list(term.covariate_range),
    }


def _term_from_dict(raw: Dict[str, Any]) -> SmoothTerm:
    return SmoothTerm(
        covariate_name=raw["covariate_name"],
        basis_kind=BasisKind(raw["basis_kind"]),
        k=int(raw["k"]),
        m=int(raw["m"]),
        centered=bool(raw["centered"]),
        column_range=tuple(raw["column_range"]),
        predictor_index=int(raw["predictor_index"]),
        knots=_load_optional(raw["knots"]),
        constraint=_load_optional(raw["constraint"]),
        levels=_load_optional(raw["levels"]),
        covariate_range=tuple(raw["covariate_range"]),
    )


def model_to_dict(model: SmoothModel) -> Dict[str, Any]:
    if model.result is None or model.design is None:
        raise ConfigError("only fitted models can be archived")
    design = model.design
    return {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "options": model.options.__dict__.copy(),
        "design": {
            "P": design.P,
            "response_name": design.response_name,
            "intercepts": list(design.intercepts),
            "widths": design.widths or [x.shape[1] for x in design.X],
            "parametric": [p.__dict__.copy() for p in design.parametric],
            "terms": [_term_to_dict(t) for t in design.terms],
            "term_ranks": list(model.term_ranks),
        },
        "result": model.result.to_dict(),
        "psi": array_to_json(model.psi_full),
        "converged": model.converged,
        "trace": model.trace.to_dict() if model.trace is not None else None,
        "stats": model.stats,
        "baseline": model.baseline.to_dict() if model.baseline is not None else None,
    }


def model_from_dict(raw: Dict[str, Any]) -> SmoothModel:
    if not isinstance(raw, dict) or "format_version" not in raw:
        raise ArchiveError("not a model archive")
    version = raw["format_version"]
    if not isinstance(version, int) or version > FORMAT_VERSION:
        raise ArchiveError(f"archive format version {version} is newer than the supported version {FORMAT_VERSION}")
    try:
        config = ModelConfig.from_dict(raw["config"])
        model = SmoothModel(config, FitOptions(**raw["options"]))
        d = raw["design"]
        model.design = ModelDesign(
            X=[],
            offsets=[],
            parametric=[ParametricColumn(**p) for p in d["parametric"]],
            terms=[_term_from_dict(t) for t in d["terms"]],
            P=int(d["P"]),
            y=np.zeros(0),
            weights=np.zeros(0),
            response_name=d["response_name"],
            intercepts=[bool(i) for i in d["intercepts"]],
            formulas=config.formulas,
            widths=[int(w) for w in d["widths"]],
        )
        model.term_ranks = [int(r) for r in d["term_ranks"]]
        model.result = FitResult.from_dict(raw["result"])
        model.psi_full = array_from_json(raw["psi"])
        model.converged = bool(raw["converged"])
        if raw.get("trace") is not None:
            t = raw["trace"]
            model.trace = OuterTrace([OuterRecord(**r) for r in t["records"]], bool(t["converged"]))
        model.stats = dict(raw.get("stats") or {})
        if raw.get("baseline") is not None:
            model.baseline = CoxBaseline.from_dict(raw["baseline"])
    except (KeyError, TypeError, ValueError, ConfigError) as e:
        raise ArchiveError(f"corrupt model archive: {e!r}")
    return model


def save_model(model: SmoothModel, path: Union[str, Path]) -> None:
    """Write the archive; floats keep full round-trip precision"""
    payload = model_to_dict(model)
    with open(path, "w") as f:
        json.dump(payload, f)
    logger.info("model archive written to %s", path)


def load_model(path: Union[str, Path]) -> SmoothModel:
    try:
        with open(path, "r") as f:
            raw = json.load(f)
    except OSError as e:
        raise ArchiveError(f"{path}: cannot read archive ({e.strerror})")
    except json.JSONDecodeError as e:
        raise ArchiveError(f"{path}: malformed archive at line {e.lineno}, column {e.colno}")
    return model_from_dict(raw)
