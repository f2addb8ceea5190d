"""
app/core/model.py - Smooth model orchestration: data ingestion, fitting, prediction and summaries
"""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
import yaml

from app.core.design import ModelConfig, ModelDesign, assemble_design
from app.core.exceptions import ConfigError, DataError, OuterConvergenceError
from app.core.families import Family, get_family
from app.core.families.cox import CoxBaseline, cox_baseline, cox_predict, cox_residuals
from app.core.inference import FitResult, build_fit_result, credible_band
from app.core.inner_solver import InnerOptions, fit_coefficients
from app.core.likelihood import ObservationLikelihood
from app.core.outer_optimizer import OuterOptions, OuterTrace, optimize_extended
from app.core.penalty_algebra import PenaltyStructure, preprocess_blocks

logger = logging.getLogger(__name__)

PLOT_GRID = 100


@dataclass
class FitOptions:
    inner_tol: float = 1e-7
    outer_tol: float = 1e-6
    max_iter: int = 100
    outer_max_iter: int = 200
    seed: int = 42
    drop_tol: float = 1e-4

    @classmethod
    def from_mapping(cls, defaults: Optional[Dict[str, Any]] = None, overrides: Optional[Dict[str, Any]] = None) -> "FitOptions":
        """Defaults (e.g. from settings) with per-model 'fit' overrides applied on top"""
        merged: Dict[str, Any] = {}
        for source in (defaults or {}, overrides or {}):
            for key, value in source.items():
                if value is not None:
                    merged[key] = value
        unknown = set(merged) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown fit options: {', '.join(sorted(unknown))}")
        try:
            return cls(
                inner_tol=float(merged.get("inner_tol", cls.inner_tol)),
                outer_tol=float(merged.get("outer_tol", cls.outer_tol)),
                max_iter=int(merged.get("max_iter", cls.max_iter)),
                outer_max_iter=int(merged.get("outer_max_iter", cls.outer_max_iter)),
                seed=int(merged.get("seed", cls.seed)),
                drop_tol=float(merged.get("drop_tol", cls.drop_tol)),
            )
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad fit option: {e}")

    def outer_options(self) -> OuterOptions:
        return OuterOptions(
            tol=self.outer_tol,
            max_iter=self.outer_max_iter,
            drop_tol=self.drop_tol,
            inner=InnerOptions(tol=self.inner_tol, max_iter=self.max_iter),
        )


def load_model_config(path: Union[str, Path]) -> ModelConfig:
    """Read a JSON or YAML model config"""
    try:
        with open(path, "r") as f:
            raw = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"{path}: cannot read model config ({e.strerror})")
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark is not None else ""
        raise ConfigError(f"{path}: malformed model config{where}")
    return ModelConfig.from_dict(raw)


def read_data(path: Union[str, Path]) -> pd.DataFrame:
    """
    Read a CSV with a header row into an all-numeric table.

    Rows with missing values and non-numeric cells are rejected with their
    1-based data row number and column.
    """
    try:
        frame = pd.read_csv(path, skipinitialspace=True)
    except FileNotFoundError:
        raise DataError(f"{path}: file not found")
    except pd.errors.EmptyDataError:
        raise DataError(f"{path}: file is empty")
    except pd.errors.ParserError as e:
        raise DataError(f"{path}: cannot parse CSV ({e})")
    for col in frame.columns:
        raw = frame[col]
        values = pd.to_numeric(raw, errors="coerce")
        bad = values.isna() & raw.notna()
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0]) + 1
            raise DataError(f"{path}: non-numeric value {raw[bad].iloc[0]!r} in column '{col}' at row {row}")
        frame[col] = values.astype(float)
    missing = frame.isna().any(axis=1).to_numpy()
    if missing.any():
        rows = (np.flatnonzero(missing) + 1).tolist()
        raise DataError(f"{path}: missing values in rows {rows[:10]}{' ...' if len(rows) > 10 else ''}")
    return frame


class SmoothModel:
    """
    A penalized regression model with smooth terms.

    Fitting builds the design, reparameterizes the penalties, maximizes the
    Laplace approximate marginal likelihood over the log smoothing
    parameters (and free extra parameters) and assembles the inferential
    summaries.
    """

    def __init__(self, config: ModelConfig, options: Optional[FitOptions] = None):
        self.config = config
        self.options = options or FitOptions.from_mapping(None, config.fit)
        self.family: Family = get_family(config.family, config.family_params)
        self.logger = logging.getLogger(__name__)
        self.design: Optional[ModelDesign] = None
        self.structure: Optional[PenaltyStructure] = None
        self.result: Optional[FitResult] = None
        self.trace: Optional[OuterTrace] = None
        self.psi_full = np.zeros(0)
        self.baseline: Optional[CoxBaseline] = None
        self.converged = False
        self.stats: Dict[str, Any] = {}
        self.term_ranks: List[int] = []
        self._lik = None

    # ------------------------------------------------------------------
    # fitting
    # ------------------------------------------------------------------

    def _likelihood(self, X: List[np.ndarray], offsets: List[np.ndarray], design: ModelDesign, psi=None, free=None):
        if self.family.is_general:
            if design.event is None:
                raise ConfigError(f"{self.family.name} needs an 'event' column in the first formula")
            return self.family.likelihood(X[0], offsets[0], design.y, design.event, design.weights)
        return ObservationLikelihood(self.family, X, offsets, design.y, design.weights, psi, free)

    def fit(self, data: pd.DataFrame) -> "SmoothModel":
        """
        Fit to data. On outer non-convergence the summaries are still
        assembled and OuterConvergenceError is raised with this model as result.
        """
        if len(data) == 0:
            raise DataError("data has no rows")
        design, structure = assemble_design(self.config, data, self.family.n_predictors, self.family.absorbs_intercept)
        self.family.check_response(design.y, design.event)
        self.design, self.structure = design, structure
        self.term_ranks = [int(b.rank) for b in structure.blocks]
        self.logger.info("fitting %s model: n=%d, P=%d, %d smoothing parameter(s)", self.family.name, design.n, design.P, structure.M)

        working = preprocess_blocks(structure)
        T = working.transform_matrix()
        if self.family.is_general:
            lik = self._likelihood(design.X, design.offsets, design)
        else:
            psi0 = self.family.initial_psi(design.y, design.weights)
            lik = self._likelihood(design.X, design.offsets, design, psi0, ~self.family.psi_fixed)
        self._lik = lik
        lik_w = lik.transform(T)

        error: Optional[OuterConvergenceError] = None
        try:
            state, derivs, trace = optimize_extended(lik_w, working, options=self.options.outer_options())
        except OuterConvergenceError as e:
            self.logger.warning("smoothing parameter optimization did not converge: %s", e)
            state, derivs, trace = e.result
            error = e
        self.trace = trace
        self.converged = error is None
        dropped = trace.records[-1].dropped if trace.records else []
        self.result = build_fit_result(state, derivs, T, dropped)
        self.psi_full = lik.full_psi(state.psi if len(state.psi) else None)
        self._summarize(lik)
        self.logger.info("fit finished: LAML=%.6g, edf=%.3f, converged=%s", self.result.laml, self.result.tau0, self.converged)
        if error is not None:
            raise OuterConvergenceError(str(error), trace=trace, result=self)
        return self

    def _summarize(self, lik) -> None:
        beta = self.result.beta
        stats: Dict[str, Any] = {"n": self.design.n}
        if self.family.is_general:
            self.baseline = cox_baseline(lik, beta)
            resid = cox_residuals(self.baseline, lik, beta)
            stats["martingale_residual_sum"] = float(np.sum(resid["martingale"]))
        else:
            design = self.design
            eta = lik.linear_predictors(beta)
            dev = self.family.deviance(design.y, eta, self.psi_full, design.weights)
            null_dev = self._null_deviance(design)
            stats["deviance"] = dev
            stats["null_deviance"] = null_dev
            stats["deviance_explained"] = 1.0 - dev / null_dev if null_dev > 0 else float("nan")
        self.stats = stats

    def _null_deviance(self, design: ModelDesign) -> float:
        """Deviance of the intercept-only fit at the fitted extra parameters"""
        n = design.n
        cols = 0 if self.family.absorbs_intercept else 1
        X0 = [np.ones((n, cols)) for _ in range(self.family.n_predictors)]
        free = np.zeros(self.family.n_psi, dtype=bool)
        lik0 = ObservationLikelihood(self.family, X0, design.offsets, design.y, design.weights, self.psi_full, free)
        P0 = lik0.P
        state = fit_coefficients(lik0, PenaltyStructure(P0, []), np.zeros(0), None, None, self.options.outer_options().inner)
        eta0 = lik0.linear_predictors(state.beta)
        return self.family.deviance(design.y, eta0, self.psi_full, design.weights)

    # ------------------------------------------------------------------
    # prediction
    # ------------------------------------------------------------------

    def _check_fitted(self) -> None:
        if self.result is None or self.design is None:
            raise ConfigError("model is not fitted")

    def linear_predictors(self, data: pd.DataFrame) -> List[np.ndarray]:
        self._check_fitted()
        X, offsets = self.design.model_matrices(data)
        slices = self.design.predictor_slices
        return [x @ self.result.beta[sl] + o for x, sl, o in zip(X, slices, offsets)]

    def predict(self, data: pd.DataFrame, kind: str = "link", se: bool = False, corrected: bool = True) -> pd.DataFrame:
        """
        Predictions on new data.

        kind is 'link', 'response' or 'survival' (coxph only). Standard
        errors use the smoothing-parameter corrected covariance unless
        corrected is False. With several linear predictors the columns
        are suffixed by predictor index.
        """
        self._check_fitted()
        if kind not in ("link", "response", "survival"):
            raise ConfigError(f"unknown prediction type '{kind}'")
        V = self.result.Vc if corrected else self.result.Vb
        X, offsets = self.design.model_matrices(data)
        slices = self.design.predictor_slices
        beta = self.result.beta

        if kind == "survival":
            if not self.family.is_general:
                raise ConfigError("survival predictions need a coxph model")
            times = np.asarray(data[self.design.response_name], dtype=float)
            out = cox_predict(self.baseline, X[0], beta, V, times, offsets[0])
            frame = pd.DataFrame({"survival": out["survival"], "cumhaz": out["cumhaz"]})
            if se:
                frame["se"] = out["se"]
            return frame

        K = len(X)
        frame = pd.DataFrame(index=range(len(data)))
        etas = []
        for k, (x, sl, o) in enumerate(zip(X, slices, offsets)):
            band = credible_band(x, beta[sl], V[sl, sl])
            eta = band["fit"].to_numpy() + o
            etas.append(eta)
            suffix = f".{k}" if K > 1 else ""
            frame[f"fit{suffix}"] = eta
            if se:
                frame[f"se{suffix}"] = band["se"].to_numpy()
        if kind == "response" and not self.family.is_general:
            mean = self.family.response_mean(etas, self.psi_full)
            if K == 1:
                frame["fit"] = mean
                if se:
                    link = self.family.links[0]
                    frame["se"] = frame["se"] / np.abs(link.derivatives(mean)[0])
            else:
                frame["response"] = mean
        return frame

    # ------------------------------------------------------------------
    # summaries
    # ------------------------------------------------------------------

    def term_summaries(self) -> List[Dict[str, Any]]:
        self._check_fitted()
        out = []
        for j, term in enumerate(self.design.terms):
            a, b = term.column_range
            out.append(
                {
                    "term": term.label,
                    "basis": term.basis_kind.value,
                    "k": term.k,
                    "edf": float(np.sum(self.result.edf[a:b])),
                    "lambda": float(np.exp(self.result.rho[j])),
                    "rank": self.term_ranks[j],
                }
            )
        return out

    def parametric_summaries(self) -> List[Dict[str, Any]]:
        self._check_fitted()
        se = np.sqrt(np.maximum(np.diag(self.result.Vc), 0.0))
        return [
            {
                "name": p.name if p.predictor_index == 0 else f"{p.name}.{p.predictor_index}",
                "estimate": float(self.result.beta[p.column]),
                "se": float(se[p.column]),
                "edf": float(self.result.edf[p.column]),
            }
            for p in self.design.parametric
        ]

    def extra_parameters(self) -> Dict[str, float]:
        names = list(getattr(self.family, "psi_names", []))
        out = {name: float(v) for name, v in zip(names, self.psi_full)}
        if hasattr(self.family, "power") and len(self.psi_full):
            out["p"] = float(self.family.power(self.psi_full[0])[0])
        if "log_scale" in out:
            out["scale"] = float(np.exp(out["log_scale"]))
        return out

    def summary(self) -> Dict[str, Any]:
        self._check_fitted()
        r = self.result
        return {
            "family": self.family.name,
            "n": self.stats.get("n", self.design.n),
            "converged": self.converged,
            "outer_iterations": self.trace.iterations if self.trace else 0,
            "laml": r.laml,
            "loglik": r.loglik,
            "tau0": r.tau0,
            "tau1": r.tau1,
            "tau": r.tau,
            "aic": r.aic,
            "aic_corrected": r.aic_corrected,
            "extra_parameters": self.extra_parameters(),
            "parametric": self.parametric_summaries(),
            "smooths": self.term_summaries(),
            **self.stats,
        }

    def plot_data(self, level: float = 0.95, corrected: bool = True) -> Dict[str, pd.DataFrame]:
        """Per smooth term: a grid over the training covariate range with fit and band"""
        self._check_fitted()
        V = self.result.Vc if corrected else self.result.Vb
        out = {}
        for term in self.design.terms:
            if term.levels is not None:
                grid = np.asarray(term.levels, dtype=float)
            else:
                lo, hi = term.covariate_range
                grid = np.linspace(lo, hi, PLOT_GRID)
            X = term.evaluate(grid)
            a, b = term.column_range
            band = credible_band(X, self.result.beta[a:b], V[a:b, a:b], level)
            band.insert(0, "x", grid)
            out[term.label] = band
        return out

    def residuals(self) -> Dict[str, np.ndarray]:
        """Martingale and deviance residuals of a coxph fit on its training data"""
        self._check_fitted()
        if not self.family.is_general or self._lik is None:
            raise ConfigError("residuals are available for fitted coxph models")
        return cox_residuals(self.baseline, self._lik, self.result.beta)

    def with_options(self, **changes: Any) -> "SmoothModel":
        return SmoothModel(self.config, replace(self.options, **changes))
