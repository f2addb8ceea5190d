"""
app/core/design.py - Spline bases, penalties, identifiability constraints and model matrix assembly
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.interpolate import BSpline
from scipy.linalg import solve_triangular

from app.core.exceptions import BasisError, ConfigError, DataError
from app.core.numerics import RANK_TOL, numerical_rank
from app.core.penalty_algebra import PenaltyBlock, PenaltyStructure

logger = logging.getLogger(__name__)


class BasisKind(Enum):
    CUBIC_REGRESSION_SPLINE = "cr"
    PSPLINE = "ps"
    RANDOM_EFFECT = "re"


@dataclass(frozen=True)
class SmoothTerm:
    covariate_name: str
    basis_kind: BasisKind
    k: int
    m: int = 2
    centered: bool = False
    column_range: Tuple[int, int] = (0, 0)
    predictor_index: int = 0
    knots: Optional[np.ndarray] = None
    constraint: Optional[np.ndarray] = None
    levels: Optional[np.ndarray] = None
    covariate_range: Tuple[float, float] = (0.0, 1.0)

    @property
    def label(self) -> str:
        suffix = f".{self.predictor_index}" if self.predictor_index else ""
        return f"s({self.covariate_name}){suffix}"

    @property
    def spline_degree(self) -> int:
        return self.m + 1

    @property
    def n_columns(self) -> int:
        return self.column_range[1] - self.column_range[0]

    def validate(self) -> None:
        if self.basis_kind is BasisKind.PSPLINE and self.k < self.m + 2:
            raise BasisError(f"{self.label}: pspline needs k >= m + 2 (k={self.k}, m={self.m})")
        if self.basis_kind is BasisKind.CUBIC_REGRESSION_SPLINE and self.k < 4:
            raise BasisError(f"{self.label}: cubic regression spline needs k >= 4 (k={self.k})")
        if self.m < 1:
            raise BasisError(f"{self.label}: penalty order must be positive")

    def evaluate(self, covariate: np.ndarray) -> np.ndarray:
        """Basis matrix at new covariate values, constraint included"""
        basis = _raw_basis(self, np.asarray(covariate, dtype=float))
        if self.constraint is not None:
            basis = basis @ self.constraint
        return basis


def place_knots(term: SmoothTerm, covariate: np.ndarray) -> SmoothTerm:
    """Return a copy of term with knots (or factor levels) fixed from the training covariate"""
    x = np.asarray(covariate, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DataError(f"{term.label}: covariate contains non-finite values")
    distinct = np.unique(x)
    if term.basis_kind is BasisKind.RANDOM_EFFECT:
        if np.any(distinct != np.round(distinct)):
            raise DataError(f"{term.label}: random effect levels must be integer coded")
        return replace(term, levels=distinct, k=len(distinct))
    if len(distinct) < 2:
        raise BasisError(f"{term.label}: covariate is constant")
    if len(distinct) < term.k:
        raise BasisError(
            f"{term.label}: {len(distinct)} distinct covariate values, fewer than k={term.k}"
        )
    lo, hi = float(distinct[0]), float(distinct[-1])
    if term.basis_kind is BasisKind.CUBIC_REGRESSION_SPLINE:
        knots = np.quantile(distinct, np.linspace(0.0, 1.0, term.k))
    else:
        # B-splines of degree m + 1, so m + 1 exterior knots each side
        degree = term.spline_degree
        pad = 0.001 * (hi - lo)
        xl, xu = lo - pad, hi + pad
        n_int = term.k - degree
        dx = (xu - xl) / n_int
        knots = np.linspace(xl - degree * dx, xu + degree * dx, n_int + 2 * degree + 1)
    return replace(term, knots=knots, covariate_range=(lo, hi))


def _cr_matrices(knots: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    k = len(knots)
    h = np.diff(knots)
    d = np.zeros((k - 2, k))
    b = np.zeros((k - 2, k - 2))
    for i in range(k - 2):
        d[i, i] = 1.0 / h[i]
        d[i, i + 1] = -1.0 / h[i] - 1.0 / h[i + 1]
        d[i, i + 2] = 1.0 / h[i + 1]
        b[i, i] = (h[i] + h[i + 1]) / 3.0
        if i < k - 3:
            b[i, i + 1] = b[i + 1, i] = h[i + 1] / 6.0
    f = np.zeros((k, k))
    f[1:-1] = np.linalg.solve(b, d)
    return d, b, f


def _cr_basis(x: np.ndarray, knots: np.ndarray) -> np.ndarray:
    """Natural cubic spline parameterized by its values at the knots"""
    k = len(knots)
    h = np.diff(knots)
    _, _, f = _cr_matrices(knots)
    n = len(x)
    out = np.zeros((n, k))
    j = np.clip(np.searchsorted(knots, x, side="right") - 1, 0, k - 2)
    xc = np.clip(x, knots[0], knots[-1])
    hj = h[j]
    xl, xu = knots[j], knots[j + 1]
    am = (xu - xc) / hj
    ap = (xc - xl) / hj
    cm = ((xu - xc) ** 3 / hj - hj * (xu - xc)) / 6.0
    cp = ((xc - xl) ** 3 / hj - hj * (xc - xl)) / 6.0
    rows = np.arange(n)
    out[rows, j] += am
    out[rows, j + 1] += ap
    out += cm[:, None] * f[j] + cp[:, None] * f[j + 1]

    # linear continuation beyond the boundary knots
    below = x < knots[0]
    if np.any(below):
        h0 = h[0]
        slope = np.zeros(k)
        slope[0], slope[1] = -1.0 / h0, 1.0 / h0
        slope += -h0 / 3.0 * f[0] - h0 / 6.0 * f[1]
        out[below] += (x[below] - knots[0])[:, None] * slope
    above = x > knots[-1]
    if np.any(above):
        hk = h[-1]
        slope = np.zeros(k)
        slope[-2], slope[-1] = -1.0 / hk, 1.0 / hk
        slope += hk / 6.0 * f[-2] + hk / 3.0 * f[-1]
        out[above] += (x[above] - knots[-1])[:, None] * slope
    return out


def _raw_basis(term: SmoothTerm, x: np.ndarray) -> np.ndarray:
    if term.basis_kind is BasisKind.RANDOM_EFFECT:
        levels = term.levels if term.levels is not None else np.unique(x)
        return (x[:, None] == levels[None, :]).astype(float)
    if term.knots is None:
        raise BasisError(f"{term.label}: knots not placed")
    if term.basis_kind is BasisKind.CUBIC_REGRESSION_SPLINE:
        return _cr_basis(x, term.knots)
    spline = BSpline(term.knots, np.eye(term.k), term.spline_degree, extrapolate=True)
    return np.asarray(spline(x))


def _raw_penalty(term: SmoothTerm) -> np.ndarray:
    if term.basis_kind is BasisKind.RANDOM_EFFECT:
        return np.eye(term.k)
    if term.basis_kind is BasisKind.CUBIC_REGRESSION_SPLINE:
        d, b, _ = _cr_matrices(term.knots)
        s = d.T @ np.linalg.solve(b, d)
    else:
        diff = np.diff(np.eye(term.k), n=term.m, axis=0)
        s = diff.T @ diff
    return 0.5 * (s + s.T)


def build_basis(term: SmoothTerm, covariate: np.ndarray) -> Tuple[np.ndarray, np.ndarray, int]:
    """
    Basis matrix, penalty matrix and penalty rank of a smooth term.

    Knots are placed from the covariate when the term carries none.
    """
    term.validate()
    x = np.asarray(covariate, dtype=float)
    if term.knots is None and term.levels is None:
        term = place_knots(term, x)
    elif not np.all(np.isfinite(x)):
        raise DataError(f"{term.label}: covariate contains non-finite values")
    basis = _raw_basis(term, x)
    penalty = _raw_penalty(term)
    if term.basis_kind is BasisKind.CUBIC_REGRESSION_SPLINE:
        rank = term.k - 2
    elif term.basis_kind is BasisKind.PSPLINE:
        rank = term.k - term.m
    else:
        rank = term.k
    return basis, penalty, rank


def apply_centering(
    basis: np.ndarray, penalty: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Absorb the sum-to-zero constraint; returns (basis Z, Z'SZ, Z)"""
    col_sums = basis.sum(axis=0)
    n = basis.shape[0]
    if np.max(np.abs(col_sums)) < 1e-10 * max(n, 1):
        logger.warning("basis columns already sum to zero; centering anyway")
    q, _ = np.linalg.qr(col_sums.reshape(-1, 1), mode="complete")
    z = q[:, 1:]
    new_basis = basis @ z
    new_penalty = z.T @ penalty @ z
    new_penalty = 0.5 * (new_penalty + new_penalty.T)
    before, after = numerical_rank(penalty), numerical_rank(new_penalty)
    if after < before:
        logger.warning("centering reduced penalty rank from %d to %d", before, after)
    return new_basis, new_penalty, z


@dataclass
class DRBasis:
    columns: np.ndarray
    eigenvalues: np.ndarray
    transform: np.ndarray
    inverse_transform: np.ndarray

    @property
    def penalty(self) -> np.ndarray:
        return np.diag(self.eigenvalues)

    @property
    def null_dimension(self) -> int:
        return int(np.sum(self.eigenvalues == 0.0))


def demmler_reinsch(basis: np.ndarray, penalty: np.ndarray, name: str = "term") -> DRBasis:
    """Orthonormal-on-data reparameterization in which the penalty is diagonal"""
    q, r = np.linalg.qr(basis)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or np.min(diag) <= 1e-8 * np.max(diag):
        raise BasisError(f"{name}: basis is rank deficient on the data")
    rinv = solve_triangular(r, np.eye(r.shape[0]))
    m = rinv.T @ penalty @ rinv
    ev, u = np.linalg.eigh(0.5 * (m + m.T))
    top = np.max(np.abs(ev)) if ev.size else 0.0
    ev = np.where(ev > RANK_TOL * top, ev, 0.0)
    return DRBasis(
        columns=q @ u,
        eigenvalues=ev,
        transform=rinv @ u,
        inverse_transform=u.T @ r,
    )


# ----------------------------------------------------------------------------
# Model configuration
# ----------------------------------------------------------------------------


@dataclass
class SmoothSpec:
    var: str
    basis: str = "cr"
    k: int = 0
    m: int = 2


@dataclass
class FormulaSpec:
    response: Optional[str] = None
    event: Optional[str] = None
    intercept: bool = True
    parametric: List[str] = field(default_factory=list)
    smooths: List[SmoothSpec] = field(default_factory=list)
    offset: Optional[str] = None


@dataclass
class ModelConfig:
    family: str
    formulas: List[FormulaSpec]
    family_params: Dict[str, Any] = field(default_factory=dict)
    weights: Optional[str] = None
    fit: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "ModelConfig":
        if not isinstance(raw, dict):
            raise ConfigError("model config must be a mapping")
        if "family" not in raw:
            raise ConfigError("model config is missing 'family'")
        formulas_raw = raw.get("formulas")
        if not isinstance(formulas_raw, list) or not formulas_raw:
            raise ConfigError("model config needs a non-empty 'formulas' list")
        formulas = []
        for i, f in enumerate(formulas_raw):
            if not isinstance(f, dict):
                raise ConfigError(f"formulas[{i}] must be a mapping")
            smooths = []
            for j, s in enumerate(f.get("smooths", []) or []):
                if not isinstance(s, dict) or "var" not in s:
                    raise ConfigError(f"formulas[{i}].smooths[{j}] needs 'var'")
                basis = str(s.get("basis", "cr"))
                # random effects take their dimension from the factor levels
                if "k" not in s and basis != BasisKind.RANDOM_EFFECT.value:
                    raise ConfigError(f"formulas[{i}].smooths[{j}] needs a basis dimension 'k'")
                try:
                    smooths.append(
                        SmoothSpec(
                            var=str(s["var"]),
                            basis=basis,
                            k=int(s.get("k", 0)),
                            m=int(s.get("m", 2)),
                        )
                    )
                except (TypeError, ValueError) as e:
                    raise ConfigError(f"formulas[{i}].smooths[{j}]: {e}")
            formulas.append(
                FormulaSpec(
                    response=f.get("response"),
                    event=f.get("event"),
                    intercept=bool(f.get("intercept", True)),
                    parametric=[str(p) for p in f.get("parametric", []) or []],
                    smooths=smooths,
                    offset=f.get("offset"),
                )
            )
        return cls(
            family=str(raw["family"]),
            formulas=formulas,
            family_params=dict(raw.get("family_params", {}) or {}),
            weights=raw.get("weights"),
            fit=dict(raw.get("fit", {}) or {}),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "family": self.family,
            "family_params": self.family_params,
            "formulas": [
                {
                    "response": f.response,
                    "event": f.event,
                    "intercept": f.intercept,
                    "parametric": list(f.parametric),
                    "smooths": [s.__dict__.copy() for s in f.smooths],
                    "offset": f.offset,
                }
                for f in self.formulas
            ],
            "weights": self.weights,
            "fit": self.fit,
        }


@dataclass
class ParametricColumn:
    name: str
    predictor_index: int
    column: int


@dataclass
class ModelDesign:
    X: List[np.ndarray]
    offsets: List[np.ndarray]
    parametric: List[ParametricColumn]
    terms: List[SmoothTerm]
    P: int
    y: np.ndarray
    weights: np.ndarray
    event: Optional[np.ndarray] = None
    response_name: str = ""
    intercepts: List[bool] = field(default_factory=list)
    formulas: List[FormulaSpec] = field(default_factory=list)
    widths: List[int] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def K(self) -> int:
        return len(self.widths) if self.widths else len(self.X)

    @property
    def predictor_slices(self) -> List[slice]:
        out, start = [], 0
        widths = self.widths or [x.shape[1] for x in self.X]
        for w in widths:
            out.append(slice(start, start + w))
            start += w
        return out

    def model_matrices(self, data: pd.DataFrame) -> Tuple[List[np.ndarray], List[np.ndarray]]:
        """Rebuild the per-predictor matrices and offsets on new data"""
        n = len(data)
        mats, offs = [], []
        for k, formula in enumerate(self.formulas):
            cols = []
            if self.intercepts[k]:
                cols.append(np.ones((n, 1)))
            for name in formula.parametric:
                cols.append(_column(data, name).reshape(-1, 1))
            for term in self.terms:
                if term.predictor_index == k:
                    cols.append(term.evaluate(_column(data, term.covariate_name)))
            mats.append(np.hstack(cols) if cols else np.zeros((n, 0)))
            offs.append(_column(data, formula.offset) if formula.offset else np.zeros(n))
        return mats, offs


def _column(data: pd.DataFrame, name: str) -> np.ndarray:
    if name not in data.columns:
        raise ConfigError(f"unknown column '{name}'")
    values = np.asarray(data[name], dtype=float)
    if not np.all(np.isfinite(values)):
        raise DataError(f"column '{name}' contains non-finite values")
    return values


def assemble_design(
    config: ModelConfig,
    data: pd.DataFrame,
    n_predictors: int,
    absorbs_intercept: bool = False,
) -> Tuple[ModelDesign, PenaltyStructure]:
    """
    Build the model matrices of every linear predictor and the penalty blocks.

    Args:
        config: parsed model configuration
        data: data table holding every referenced column
        n_predictors: number of linear predictors the family expects
        absorbs_intercept: family has no identifiable intercept (smooths still centered)
    """
    if len(config.formulas) != n_predictors:
        raise ConfigError(
            f"family '{config.family}' needs {n_predictors} formulas, got {len(config.formulas)}"
        )
    first = config.formulas[0]
    if not first.response:
        raise ConfigError("first formula must name a response column")
    y = _column(data, first.response)
    n = len(y)
    event = _column(data, first.event) if first.event else None
    weights = _column(data, config.weights) if config.weights else np.ones(n)
    if np.any(weights < 0):
        raise DataError("prior weights must be non-negative")

    mats: List[np.ndarray] = []
    offsets: List[np.ndarray] = []
    parametric: List[ParametricColumn] = []
    terms: List[SmoothTerm] = []
    blocks: List[PenaltyBlock] = []
    intercepts: List[bool] = []
    col = 0
    for k, formula in enumerate(config.formulas):
        intercept = formula.intercept and not absorbs_intercept
        center = intercept or absorbs_intercept
        intercepts.append(intercept)
        cols: List[np.ndarray] = []
        if intercept:
            cols.append(np.ones((n, 1)))
            parametric.append(ParametricColumn("(Intercept)", k, col))
            col += 1
        for name in formula.parametric:
            cols.append(_column(data, name).reshape(-1, 1))
            parametric.append(ParametricColumn(name, k, col))
            col += 1
        for spec in formula.smooths:
            try:
                kind = BasisKind(spec.basis)
            except ValueError:
                raise ConfigError(f"unknown basis '{spec.basis}' for {spec.var}")
            term = SmoothTerm(spec.var, kind, spec.k, spec.m, predictor_index=k)
            term.validate()
            term = place_knots(term, _column(data, spec.var))
            basis, penalty, rank = build_basis(term, _column(data, spec.var))
            constraint = None
            if center and kind is not BasisKind.RANDOM_EFFECT:
                basis, penalty, constraint = apply_centering(basis, penalty)
            dim = basis.shape[1]
            term = replace(
                term, centered=constraint is not None, constraint=constraint, column_range=(col, col + dim)
            )
            terms.append(term)
            cols.append(basis)
            blocks.append(PenaltyBlock.single(col, penalty, len(blocks), rank))
            col += dim
        mats.append(np.hstack(cols) if cols else np.zeros((n, 0)))
        offsets.append(_column(data, formula.offset) if formula.offset else np.zeros(n))

    design = ModelDesign(
        X=mats,
        offsets=offsets,
        parametric=parametric,
        terms=terms,
        P=col,
        y=y,
        weights=weights,
        event=event,
        response_name=first.response,
        intercepts=intercepts,
        formulas=config.formulas,
        widths=[m.shape[1] for m in mats],
    )
    logger.info("assembled design: n=%d, K=%d, P=%d, %d smooths", n, design.K, col, len(terms))
    return design, PenaltyStructure(col, blocks)
