"""
app/core/families - Likelihood families and their registry
"""

from typing import Any, Callable, Dict, Optional

from app.core.exceptions import ConfigError
from app.core.families.base import Family, ObservationFamily
from app.core.families.cox import CoxPH
from app.core.families.exponential import Binomial, Gaussian, Poisson, exponential_families
from app.core.families.extended import Beta, NegativeBinomial
from app.core.families.gaulss import GaussianLocationScale
from app.core.families.links import get_link
from app.core.families.ocat import OrderedCategorical
from app.core.families.tweedie import Tweedie
from app.core.families.zip import ZipFamily, ZiplssFamily


def _link(params: Dict[str, Any], default: str):
    return get_link(params.get("link", default))


def _theta(params: Dict[str, Any]):
    return params.get("theta")


FAMILIES: Dict[str, Callable[[Dict[str, Any]], Family]] = {
    "gaussian": lambda p: Gaussian(_link(p, "identity"), scale=p.get("scale"), theta=_theta(p), fix_theta=p.get("fix_theta", False)),
    "poisson": lambda p: Poisson(_link(p, "log")),
    "binomial": lambda p: Binomial(_link(p, "logit")),
    "nb": lambda p: NegativeBinomial(_link(p, "log"), theta=_theta(p), fix_theta=p.get("fix_theta", False)),
    "beta": lambda p: Beta(_link(p, "logit"), theta=_theta(p), fix_theta=p.get("fix_theta", False)),
    "tw": lambda p: Tweedie(p.get("a", 1.01), p.get("b", 1.99), theta=_theta(p), fix_theta=p.get("fix_theta", False), scale=p.get("scale")),
    "ocat": lambda p: OrderedCategorical(p.get("R", 3), theta=_theta(p), fix_theta=p.get("fix_theta", False)),
    "ziP": lambda p: ZipFamily(theta=_theta(p), fix_theta=p.get("fix_theta", False)),
    "ziplss": lambda p: ZiplssFamily(),
    "gaulss": lambda p: GaussianLocationScale(),
    "coxph": lambda p: CoxPH(),
}


def get_family(name: str, params: Optional[Dict[str, Any]] = None) -> Family:
    """Instantiate a registered family from its config name and parameters"""
    try:
        factory = FAMILIES[name]
    except KeyError:
        raise ConfigError(f"unknown family '{name}'; available: {', '.join(sorted(FAMILIES))}")
    try:
        return factory(dict(params or {}))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad parameters for family '{name}': {e}")


__all__ = [
    "Family",
    "ObservationFamily",
    "Gaussian",
    "Poisson",
    "Binomial",
    "NegativeBinomial",
    "Beta",
    "Tweedie",
    "OrderedCategorical",
    "ZipFamily",
    "ZiplssFamily",
    "GaussianLocationScale",
    "CoxPH",
    "FAMILIES",
    "get_family",
    "exponential_families",
]
