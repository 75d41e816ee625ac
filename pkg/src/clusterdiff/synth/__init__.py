"""Data generators: the linear regression model and the application scenarios."""

from __future__ import annotations

import inspect
from dataclasses import dataclass

import numpy as np

from ..topology import ClusteredNetwork, CombinerSet, network_from_dict, uniform_combiners
from .linear import NodeEnvironment, Sample, draw_sample, illustrative_combiners, illustrative_env
from .localization import LocalizationEnv, localization_env
from .spectrum import SpectrumEnv, spectrum_env
from .unmixing import UnmixEnv, unmix_env

__all__ = [
    "NodeEnvironment",
    "Sample",
    "draw_sample",
    "illustrative_env",
    "illustrative_combiners",
    "LocalizationEnv",
    "localization_env",
    "SpectrumEnv",
    "spectrum_env",
    "UnmixEnv",
    "unmix_env",
    "Scenario",
    "build_scenario",
    "SCENARIOS",
]


@dataclass(frozen=True, eq=False)
class Scenario:
    """A network, its combiners and a streaming environment.

    For the unmixing scenario `network` and `combiners` are ``None``; the
    lattice weights live on the environment.
    """

    name: str
    env: object
    network: ClusteredNetwork | None = None
    combiners: CombinerSet | None = None
    w0: np.ndarray | None = None

    @property
    def has_moments(self) -> bool:
        """True when the environment exposes R_x and sigma2_z for the theory model."""
        return hasattr(self.env, "R_x") and hasattr(self.env, "sigma2_z")


def _checked_kwargs(fn, params: dict, where: str, skip=()) -> dict:
    allowed = set(inspect.signature(fn).parameters) - set(skip)
    for key in params:
        if key not in allowed:
            raise KeyError(f"{where}.{key}")
    return dict(params)


def _illustrative(params):
    _checked_kwargs(illustrative_env, params, "environment")
    net, env = illustrative_env(params.get("clusters"))
    return Scenario("illustrative", env, net, illustrative_combiners(net))


def _linear(params):
    for key in params:
        if key not in ("network", "w_star", "R_x", "sigma2_x", "sigma2_z", "w0"):
            raise KeyError(f"environment.{key}")
    for key in ("network", "w_star", "sigma2_z"):
        if key not in params:
            raise KeyError(f"environment.{key}")
    net, comb = network_from_dict(params["network"])
    w_star = np.asarray(params["w_star"], dtype=float)
    if "R_x" in params:
        R = np.asarray(params["R_x"], dtype=float)
    elif "sigma2_x" in params:
        R = np.asarray(params["sigma2_x"], dtype=float)[:, None, None] * np.eye(w_star.shape[1])
    else:
        raise KeyError("environment.R_x")
    env = NodeEnvironment(w_star, R, np.asarray(params["sigma2_z"], dtype=float), network=net)
    w0 = params.get("w0")
    return Scenario("linear", env, net, comb, None if w0 is None else np.asarray(w0, dtype=float))


def _localization(params):
    params = dict(params)
    w0 = params.pop("w0", None)
    env = localization_env(**_checked_kwargs(localization_env, params, "environment"))
    return Scenario("localization", env, env.network, env.combiners,
                    None if w0 is None else np.broadcast_to(np.asarray(w0, dtype=float), env.w_star.shape).copy())


def _spectrum(params):
    if "p0" not in params:
        raise KeyError("environment.p0")
    env = spectrum_env(**_checked_kwargs(spectrum_env, params, "environment"))
    return Scenario("spectrum", env, env.network, env.combiners)


def _unmixing(params):
    env = unmix_env(**_checked_kwargs(unmix_env, params, "environment"))
    return Scenario("unmixing", env)


SCENARIOS = {
    "illustrative": _illustrative,
    "linear": _linear,
    "localization": _localization,
    "spectrum": _spectrum,
    "unmixing": _unmixing,
}


def build_scenario(name: str, params: dict | None = None) -> Scenario:
    """Construct a scenario by name.

    Raises
    ------
    KeyError
        Unknown scenario name or parameter; the message is the dotted key.
    """
    if name not in SCENARIOS:
        raise KeyError("scenario")
    return SCENARIOS[name](dict(params or {}))
