"""Reference pandemic workflow: one weather model, two city-behavior
models, a mixing model, and two SEIR city models, registered as engine
functions and shipped with a ready-to-run flow spec and run config.

The dataflow shape is the point of this module; the functional forms
below (thermal response, risk damping, mixing composition) are
illustrative defaults, collected in DEFAULTS so they can be swapped
without touching the models.  The disease dynamics sit behind the
function registry, so a different epidemic model can be slotted in
without changes to the engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from typing import Mapping, Optional

import numpy as np

from .core import FlowGraph, SeriesWindow, Window
from .engine import RunConfig
from .errors import Divergence
from .flowspec import load_flow, load_run_config
from .registry import ModelRegistry

DEFAULTS = {
    "season_period": 28.0,      # ticks per seasonal temperature cycle
    "neutral_temp": 20.0,       # degC with thermal response exactly 1
    "temp_scale": 15.0,         # degC per radian of thermal response
    "thermal_swing": 0.2,       # amplitude of the bounded thermal response
    "risk_damping": (4.0, 12.0),  # contact damping vs infected fraction: (tolerant, averse)
    "contact_cap": 15.0,        # contacts/tick treated as full mixing drive
    "max_offdiag": 0.3,         # cap on the inter-city mixing fraction
}


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class WeatherParams:
    baseline: float
    amplitude: float
    offset: float

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("seasonal amplitude must be >= 0")


@dataclass(frozen=True)
class BehaviorParams:
    transmission_rate: float
    contact_rate: float
    risk_posture: int  # 0 = risk-tolerant, 1 = risk-averse

    def __post_init__(self):
        if self.transmission_rate < 0 or self.contact_rate < 0:
            raise ValueError("rates must be >= 0")
        if self.risk_posture not in (0, 1):
            raise ValueError("risk posture is encoded 0 (tolerant) or 1 (averse)")


@dataclass(frozen=True)
class MixingMatrix:
    """Row-stochastic 2x2 intra/inter-city mixing fractions for one tick."""

    rows: tuple[tuple[float, float], tuple[float, float]]

    def __post_init__(self):
        for row in self.rows:
            if abs(sum(row) - 1.0) > 1e-9:
                raise ValueError("mixing matrix rows must sum to 1")
            if any(not (0.0 <= x <= 1.0) for x in row):
                raise ValueError("mixing entries must be in [0, 1]")


@dataclass(frozen=True)
class SEIRState:
    s: float
    e: float
    i: float
    r: float
    n: float

    def __post_init__(self):
        if min(self.s, self.e, self.i, self.r) < 0:
            raise ValueError("compartments must be non-negative")
        if abs(self.s + self.e + self.i + self.r - self.n) > 1e-9 * max(self.n, 1.0):
            raise ValueError("compartments must sum to the population")

    def as_array(self) -> np.ndarray:
        return np.array([self.s, self.e, self.i, self.r], dtype=float)


# ---------------------------------------------------------------------------
# Model operations (pure functions over value inputs)


def weather_step(p: WeatherParams, window: Window, period: Optional[float] = None) -> np.ndarray:
    """Per-tick temperature: baseline + seasonal sine + sampled offset."""
    period = DEFAULTS["season_period"] if period is None else period
    t = np.arange(window[0], window[1], dtype=float)
    return p.baseline + p.amplitude * np.sin(2.0 * math.pi * t / period) + p.offset


def thermal_response(temperature: np.ndarray) -> np.ndarray:
    """Bounded contact response to temperature, 1 at the neutral point.

    Equals 1 + swing*cos(pi/2 + (T - T0)/scale), written in sine form so
    the neutral temperature maps to exactly 1.
    """
    x = (np.asarray(temperature, dtype=float) - DEFAULTS["neutral_temp"]) / DEFAULTS["temp_scale"]
    return 1.0 - DEFAULTS["thermal_swing"] * np.sin(x)


def risk_damping(infected_fraction: np.ndarray, risk_posture: int) -> np.ndarray:
    """Monotone-decreasing contact damping, stronger for the risk-averse."""
    kappa = DEFAULTS["risk_damping"][risk_posture]
    return 1.0 / (1.0 + kappa * np.maximum(np.asarray(infected_fraction, dtype=float), 0.0))


def behavior_step(
    p: BehaviorParams, temperature: np.ndarray, prior_infected: np.ndarray
) -> np.ndarray:
    """Effective contacts: c * g(T(t)) * h(i(t - lag); posture), >= 0."""
    c_eff = (
        p.contact_rate
        * thermal_response(temperature)
        * risk_damping(prior_infected, p.risk_posture)
    )
    return np.maximum(c_eff, 0.0)


def mixing_step(contact_a: np.ndarray, contact_b: np.ndarray) -> dict[str, np.ndarray]:
    """Per-tick mixing matrix from the two cities' effective contacts.

    Off-diagonals are proportional to the product of the normalized
    contacts, capped; rows renormalize to 1 by construction.  Zero contact
    on either side yields the identity matrix (no inter-city mixing).
    """
    na = np.clip(np.asarray(contact_a, dtype=float) / DEFAULTS["contact_cap"], 0.0, 1.0)
    nb = np.clip(np.asarray(contact_b, dtype=float) / DEFAULTS["contact_cap"], 0.0, 1.0)
    off = DEFAULTS["max_offdiag"] * na * nb
    return {
        "mix_aa": 1.0 - off,
        "mix_ab": off,
        "mix_ba": off,
        "mix_bb": 1.0 - off,
    }


def _seir_derivs(state, beta, c_eff, m_intra, m_inter, other_if, sigma, gamma, n):
    s, e, i, r = state
    lam = beta * c_eff * (m_intra * i / n + m_inter * other_if)
    flow_in = lam * s
    return np.array([-flow_in, flow_in - sigma * e, sigma * e - gamma * i, gamma * i])


def _rk4(state, h, derivs):
    k1 = derivs(state)
    k2 = derivs(state + 0.5 * h * k1)
    k3 = derivs(state + 0.5 * h * k2)
    k4 = derivs(state + h * k3)
    return state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


_NEG_TOL = 1e-9
_MAX_HALVINGS = 16


def seir_step(
    state: SEIRState,
    beta,
    c_eff,
    sigma: float,
    gamma: float,
    mixing_row,
    other_infected,
    window: Window,
    resolution: int = 1,
) -> tuple[SEIRState, dict[str, np.ndarray]]:
    """Advance a SEIR city over one window with fixed-step RK4 per tick.

    dS=-lam*S, dE=lam*S-sigma*E, dI=sigma*E-gamma*I, dR=gamma*I with force
    of infection lam(t) = beta*c_eff*(m_intra*I/N + m_inter*I_other/N_other).
    Forcing inputs may be scalars or per-tick arrays and are held constant
    within each tick.  If a step would push a compartment negative the tick
    is retried at halved substeps; Divergence is raised when halving is
    exhausted.  Emits S, E, I, R sampled at the output resolution.
    """
    if sigma < 0 or gamma < 0:
        raise ValueError("rates must be >= 0")
    lo, hi = window
    ticks = hi - lo
    m_intra, m_inter = mixing_row

    def per_tick(x):
        return np.broadcast_to(np.asarray(x, dtype=float), (ticks,))

    beta, c_eff = per_tick(beta), per_tick(c_eff)
    m_intra, m_inter = per_tick(m_intra), per_tick(m_inter)
    other_if = per_tick(other_infected)
    n = state.n
    vec = state.as_array()
    samples = []
    for j in range(ticks):
        def derivs(x, _j=j):
            return _seir_derivs(
                x, beta[_j], c_eff[_j], m_intra[_j], m_inter[_j], other_if[_j], sigma, gamma, n
            )

        substeps, h = 1, 1.0
        for _ in range(_MAX_HALVINGS + 1):
            with np.errstate(over="ignore", invalid="ignore"):
                candidate = vec
                for _ in range(substeps):
                    candidate = _rk4(candidate, h, derivs)
            if np.isfinite(candidate).all() and candidate.min() >= -_NEG_TOL * max(n, 1.0):
                break
            substeps *= 2
            h *= 0.5
        else:
            raise Divergence(
                f"SEIR step at tick {lo + j} stayed negative after "
                f"{_MAX_HALVINGS} halvings (pathological rates?)"
            )
        vec = np.maximum(candidate, 0.0)
        if (j + 1) % resolution == 0:
            samples.append(vec.copy())
    arr = np.array(samples)
    out = {"S": arr[:, 0], "E": arr[:, 1], "I": arr[:, 2], "R": arr[:, 3]}
    new_state = SEIRState(float(vec[0]), float(vec[1]), float(vec[2]), float(vec[3]), n)
    return new_state, out


# ---------------------------------------------------------------------------
# Engine function adapters


def _weather_fn(params, inputs, state, window, resolution):
    p = WeatherParams(
        baseline=params["baseline"], amplitude=params["amplitude"], offset=params["offset"]
    )
    temp = weather_step(p, window)
    return {"temperature": _resample(temp, resolution)}, None


def _behavior_fn(params, inputs, state, window, resolution):
    p = BehaviorParams(
        transmission_rate=params["transmission_rate"],
        contact_rate=params["contact_rate"],
        risk_posture=int(params["risk_posture"]),
    )
    temp = inputs["temperature"].tick_values()
    infected = inputs["infected_fraction"].tick_values()
    c_eff = behavior_step(p, temp, infected)
    n = (window[1] - window[0]) // resolution
    return {
        "effective_contact": _resample(c_eff, resolution),
        "transmission_rate": np.full(n, p.transmission_rate),
        "risk": np.full(n, float(p.risk_posture)),
    }, None


def _mixing_fn(params, inputs, state, window, resolution):
    rates = mixing_step(
        inputs["contact_a"].tick_values(), inputs["contact_b"].tick_values()
    )
    return {k: _resample(v, resolution) for k, v in rates.items()}, None


def _city_fn(params, inputs, state, window, resolution):
    n = float(params["population"])
    if state is None:
        i0 = float(params["seed_infected"])
        e0 = float(params["seed_exposed"])
        state = SEIRState(s=n - i0 - e0, e=e0, i=i0, r=0.0, n=n)
    new_state, series = seir_step(
        state,
        inputs["transmission_rate"].tick_values(),
        inputs["effective_contact"].tick_values(),
        float(params["incubation_rate"]),
        float(params["recovery_rate"]),
        (inputs["m_intra"].tick_values(), inputs["m_inter"].tick_values()),
        inputs["other_infected"].tick_values(),
        window,
        resolution,
    )
    return {
        "susceptible": series["S"],
        "exposed": series["E"],
        "infected": series["I"],
        "recovered": series["R"],
        "infected_fraction": series["I"] / n,
    }, new_state


def _resample(per_tick: np.ndarray, resolution: int) -> np.ndarray:
    if resolution == 1:
        return per_tick
    return per_tick.reshape(-1, resolution).mean(axis=1)


def build_registry() -> ModelRegistry:
    reg = ModelRegistry()
    reg.register("seasonal_weather", _weather_fn)
    reg.register("population_behavior", _behavior_fn)
    reg.register("contact_mixing", _mixing_fn)
    reg.register("city_epidemic", _city_fn)
    return reg


# ---------------------------------------------------------------------------
# Shipped demo scenario


def demo_flow() -> FlowGraph:
    with resources.as_file(
        resources.files("ensembleflow").joinpath("data/demo_flow.yaml")
    ) as path:
        return load_flow(path)


def demo_config(seed: Optional[int] = None) -> RunConfig:
    flow = demo_flow()
    with resources.as_file(
        resources.files("ensembleflow").joinpath("data/demo_run.yaml")
    ) as path:
        return load_run_config(path, flow, seed_override=seed)
