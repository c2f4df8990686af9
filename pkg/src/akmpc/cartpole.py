"""Cartpole plant: continuous-time equations of motion, RK4 stepping with
zero-order-hold force, and parameter scaling for mismatch studies."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


class IntegrationError(RuntimeError):
    """The integrator produced a non-finite state."""


@dataclass(frozen=True)
class CartpoleParams:
    m_c: float = 1.0       # cart mass [kg]
    m_p: float = 0.1       # pole mass [kg]
    l: float = 0.5         # pole half-length [m]
    gravity: float = 9.8   # [m/s^2]

    def __post_init__(self):
        for name in ("m_c", "m_p", "l", "gravity"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be strictly positive")

    def to_dict(self):
        return {"m_c": self.m_c, "m_p": self.m_p, "l": self.l,
                "gravity": self.gravity}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


NOMINAL_PARAMS = CartpoleParams(m_c=0.75, m_p=0.075, l=0.375)
TRUE_PARAMS = CartpoleParams(m_c=1.0, m_p=0.1, l=0.5)


def cartpole_rhs(state, force, params):
    """Time derivative [xdot, xddot, thdot, thddot] of the cartpole.

    The angular acceleration is self-contained; the cart acceleration then
    follows by substitution.
    """
    _, xd, th, thd = (float(v) for v in state)
    force = float(force)
    s, c = math.sin(th), math.cos(th)
    m_tot = params.m_c + params.m_p
    pole = params.m_p * params.l
    thdd = (params.gravity * s + c * (-force - pole * thd * thd * s) / m_tot) \
        / (params.l * (4.0 / 3.0 - params.m_p * c * c / m_tot))
    xdd = (force + pole * (thd * thd * s - thdd * c)) / m_tot
    return np.array([xd, xdd, thd, thdd])


def step(state, u, dt, params):
    """Classical RK4 over one control period with the force held constant."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    s = np.asarray(state, dtype=float)
    force = float(np.asarray(u).reshape(-1)[0]) if np.ndim(u) else float(u)
    k1 = cartpole_rhs(s, force, params)
    k2 = cartpole_rhs(s + 0.5 * dt * k1, force, params)
    k3 = cartpole_rhs(s + 0.5 * dt * k2, force, params)
    k4 = cartpole_rhs(s + dt * k3, force, params)
    out = s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise IntegrationError(f"non-finite state after step from {s}")
    return out


def scale_params(nominal, pct):
    """Masses and pole half-length scaled by (1 + pct); gravity unchanged."""
    if pct < 0.0:
        raise ValueError("pct must be non-negative")
    f = 1.0 + pct
    return replace(nominal, m_c=nominal.m_c * f, m_p=nominal.m_p * f,
                   l=nominal.l * f)
