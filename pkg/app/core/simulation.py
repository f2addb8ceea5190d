"""
app/core/simulation.py - Gu-Wahba test data and the random effect AIC selection experiment
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from app.core.design import ModelConfig
from app.core.exceptions import ConfigError, OuterConvergenceError, SmoothModelError
from app.core.families import get_family

logger = logging.getLogger(__name__)

LATENT_CORRELATION = 0.9
N_COVARIATES = 4


def f0(x: np.ndarray) -> np.ndarray:
    return 2.0 * np.sin(np.pi * x)


def f1(x: np.ndarray) -> np.ndarray:
    return np.exp(2.0 * x)


def f2(x: np.ndarray) -> np.ndarray:
    return 0.2 * x**11 * (10.0 * (1.0 - x)) ** 6 + 10.0 * (10.0 * x) ** 3 * (1.0 - x) ** 10


def f3(x: np.ndarray) -> np.ndarray:
    return np.zeros_like(x)


TEST_FUNCTIONS = (f0, f1, f2, f3)


@dataclass(frozen=True)
class Scenario:
    """
    Noise settings of one family at three levels.

    levels holds the family's noise parameter per level: a scale factor d
    applied to the centred linear predictor or a distribution parameter.
    psi maps a level value to the family's extra parameters.
    """

    family: str
    levels: Tuple[float, float, float]
    params: Dict[str, object]


SCENARIOS: Dict[str, Scenario] = {
    "gaussian": Scenario("gaussian", (2.0, 1.0, 0.5), {}),
    "poisson": Scenario("poisson", (0.1, 0.2, 0.3), {}),
    "binomial": Scenario("binomial", (0.25, 0.5, 1.0), {}),
    "nb": Scenario("nb", (0.12, 0.2, 0.4), {"k": 3.0}),
    "beta": Scenario("beta", (0.02, 0.01, 0.001), {"d": 0.2}),
    "tw": Scenario("tw", (2.0, 1.0, 0.5), {"p": 1.5, "d": 0.2}),
    "ocat": Scenario("ocat", (0.3, 1.0, 2.0), {"cuts": (-1.0, 0.0, 3.0)}),
    "ziP": Scenario("ziP", (2.0, 2.5, 3.0), {"theta": (-2.0, 0.0)}),
    "ziplss": Scenario("ziplss", (2.0, 2.5, 3.0), {"theta": (-2.0, 0.0)}),
    "gaulss": Scenario("gaulss", (2.0, 1.0, 0.5), {}),
    "coxph": Scenario("coxph", (0.1, 0.2, 0.3), {}),
}


def covariates(n: int, rng: np.random.Generator, correlated: bool = False) -> np.ndarray:
    """
    n x 4 marginally uniform covariates; correlated ones are Phi(z) with z
    Gaussian, unit variances and all latent correlations 0.9.
    """
    if not correlated:
        return rng.uniform(size=(n, N_COVARIATES))
    cov = np.full((N_COVARIATES, N_COVARIATES), LATENT_CORRELATION)
    np.fill_diagonal(cov, 1.0)
    z = rng.multivariate_normal(np.zeros(N_COVARIATES), cov, size=n)
    return stats.norm.cdf(z)


def _sample(family: str, level: float, params: Dict[str, object], eta: np.ndarray, x: np.ndarray, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    centred = eta - np.mean(eta)
    standard = centred / np.std(centred)
    if family == "gaussian":
        fam = get_family("gaussian")
        return {"y": fam.sample([eta], np.array([2.0 * np.log(level)]), rng)}
    if family == "poisson":
        return {"y": get_family("poisson").sample([level * eta], np.zeros(0), rng)}
    if family == "binomial":
        return {"y": get_family("binomial").sample([level * centred], np.zeros(0), rng)}
    if family == "nb":
        return {"y": get_family("nb").sample([1.0 + level * centred], np.array([np.log(params["k"])]), rng)}
    if family == "beta":
        return {"y": get_family("beta").sample([params["d"] * centred], np.array([-np.log(level)]), rng)}
    if family == "tw":
        fam = get_family("tw")
        expit_p = (params["p"] - fam.a) / (fam.b - fam.a)
        psi = np.array([np.log(expit_p / (1.0 - expit_p)), np.log(level)])
        return {"y": fam.sample([1.0 + params["d"] * centred], psi, rng)}
    if family == "ocat":
        cuts = np.asarray(params["cuts"])
        fam = get_family("ocat", {"R": len(cuts) + 1})
        theta = np.log(np.diff(cuts))
        return {"y": fam.sample([level * centred], theta, rng)}
    if family == "ziP":
        return {"y": get_family("ziP").sample([level * standard], np.asarray(params["theta"]), rng)}
    if family == "ziplss":
        th = np.asarray(params["theta"])
        gamma = level * standard
        return {"y": get_family("ziplss").sample([gamma, th[0] + np.exp(th[1]) * gamma], np.zeros(0), rng)}
    if family == "gaulss":
        log_sd = np.log(level) + 0.5 * np.sin(2.0 * np.pi * x[:, 1])
        return {"y": get_family("gaulss").sample([eta, log_sd], np.zeros(0), rng)}
    if family == "coxph":
        times = rng.exponential(size=len(eta)) / np.exp(level * centred)
        censor = rng.uniform(0.0, 2.0 * np.median(times), size=len(eta))
        return {"y": np.minimum(times, censor), "event": (times <= censor).astype(float)}
    raise ConfigError(f"no simulation scenario for family '{family}'")


def simulate(
    family: str = "gaussian",
    n: int = 400,
    noise: int = 1,
    seed: int = 0,
    correlated: bool = False,
    scenario: str = "gu-wahba",
) -> pd.DataFrame:
    """
    Gu-Wahba additive truth eta = f0(x0) + f1(x1) + f2(x2) + f3(x3), f3 = 0,
    with a response drawn from the named family at noise level 1, 2 or 3.
    """
    if scenario != "gu-wahba":
        raise ConfigError(f"unknown scenario '{scenario}'")
    if family not in SCENARIOS:
        raise ConfigError(f"no simulation scenario for family '{family}'; available: {', '.join(SCENARIOS)}")
    if noise not in (1, 2, 3):
        raise ConfigError("noise level must be 1, 2 or 3")
    if n < 1:
        raise ConfigError("n must be positive")
    rng = np.random.default_rng(seed)
    sc = SCENARIOS[family]
    x = covariates(n, rng, correlated)
    frame = pd.DataFrame({f"x{j}": x[:, j] for j in range(N_COVARIATES)})
    terms = [f(x[:, j]) for j, f in enumerate(TEST_FUNCTIONS)]
    for j, t in enumerate(terms):
        frame[f"f{j}"] = t
    eta = np.sum(terms, axis=0)
    frame["eta"] = eta
    for name, values in _sample(family, sc.levels[noise - 1], sc.params, eta, x, rng).items():
        frame[name] = values
    logger.info("simulated %d rows: family=%s, noise=%d, correlated=%s", n, family, noise, correlated)
    return frame


# ----------------------------------------------------------------------------
# random effect AIC experiment
# ----------------------------------------------------------------------------

CRITERIA = ("conventional", "corrected", "tau1")


def _experiment_config(with_effect: bool, k: int) -> ModelConfig:
    smooths = [{"var": f"x{j}", "basis": "cr", "k": k} for j in range(N_COVARIATES)]
    if with_effect:
        smooths.append({"var": "fac", "basis": "re"})
    return ModelConfig.from_dict({"family": "gaussian", "formulas": [{"response": "y", "smooths": smooths}]})


def _fit(config: ModelConfig, data: pd.DataFrame):
    from app.core.model import SmoothModel

    try:
        return SmoothModel(config).fit(data)
    except OuterConvergenceError as e:
        return e.result


def experiment_data(effect_sd: float, seed, n: int = 500, sd: float = 2.0, levels: int = 40) -> pd.DataFrame:
    rng = np.random.default_rng(seed)
    x = covariates(n, rng)
    eta = sum(f(x[:, j]) for j, f in enumerate(TEST_FUNCTIONS))
    fac = np.arange(n) % levels
    b = rng.normal(0.0, 1.0, size=levels) * effect_sd
    frame = pd.DataFrame({f"x{j}": x[:, j] for j in range(N_COVARIATES)})
    frame["fac"] = fac.astype(float)
    frame["y"] = eta + b[fac] + rng.normal(0.0, sd, size=n)
    return frame


def _replicate(task) -> Optional[Dict[str, bool]]:
    effect_sd, seed, n, sd, levels, k = task
    data = experiment_data(effect_sd, seed, n, sd, levels)
    try:
        small = _fit(_experiment_config(False, k), data).result
        large = _fit(_experiment_config(True, k), data).result
    except SmoothModelError as e:
        logger.warning("replicate at effect sd %.3g failed: %s", effect_sd, e)
        return None
    return {
        "conventional": large.aic < small.aic,
        "corrected": large.aic_corrected < small.aic_corrected,
        "tau1": large.aic_tau1 < small.aic_tau1,
    }


def aic_experiment(
    effect_grid: Sequence[float] = tuple(np.linspace(0.0, 1.0, 6)),
    replicates: int = 100,
    seed: int = 0,
    n: int = 500,
    sd: float = 2.0,
    levels: int = 40,
    k: int = 10,
    workers: int = 1,
) -> pd.DataFrame:
    """
    Frequency with which each AIC variant prefers the model with a random
    effect, per effect standard deviation.

    Replicate seeds are spawned from one SeedSequence, so results do not
    depend on the worker count.
    """
    if replicates < 1:
        raise ConfigError("replicates must be positive")
    grid = [float(e) for e in effect_grid]
    children = np.random.SeedSequence(seed).spawn(len(grid) * replicates)
    tasks = [(e, children[i * replicates + r], n, sd, levels, k) for i, e in enumerate(grid) for r in range(replicates)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_replicate, tasks))
    else:
        outcomes = [_replicate(t) for t in tasks]

    rows: List[Dict[str, object]] = []
    for i, e in enumerate(grid):
        done = [o for o in outcomes[i * replicates : (i + 1) * replicates] if o is not None]
        for crit in CRITERIA:
            freq = float(np.mean([o[crit] for o in done])) if done else float("nan")
            rows.append({"effect_sd": e, "criterion": crit, "frequency": freq, "replicates": len(done)})
        logger.info("effect sd %.3g: %d/%d replicates fitted", e, len(done), replicates)
    return pd.DataFrame(rows)
