"""Forcing terms psi(x, u, Du) and the admissibility certificate.

Built-in kinds:

* ``zero``       psi = 0
* ``capillary``  psi = h(x, u) omega with h = kappa (u - a(x)), h_u = kappa > 0
* ``linear``     psi = eps u
* ``constant``   psi = c
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .graph import slope_and_normal

KINDS = ("zero", "capillary", "linear", "constant")


@dataclass(frozen=True)
class ForcingSpec:
    kind: str = "zero"
    kappa: float = 1.0
    a: Union[float, Callable] = 0.0
    eps: float = 1.0
    c: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown forcing kind {self.kind!r}")
        if self.kind == "capillary" and not self.kappa > 0:
            raise ValueError("capillary forcing needs kappa > 0")
        if self.kind == "linear" and not self.eps > 0:
            raise ValueError("linear forcing needs eps > 0")

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def capillary(cls, kappa=1.0, a=0.0):
        return cls("capillary", kappa=kappa, a=a)

    @classmethod
    def linear(cls, eps):
        return cls("linear", eps=eps)

    @classmethod
    def constant(cls, c):
        return cls("constant", c=c)

    @property
    def gravity_floor(self):
        """Lower bound of psi_u valid for every state (omega >= 1)."""
        if self.kind == "capillary":
            return self.kappa
        if self.kind == "linear":
            return self.eps
        return 0.0

    def offset(self, x):
        if callable(self.a):
            return np.asarray(self.a(x), dtype=float)
        return float(self.a)

    def primitive(self, u, x=None):
        """g(x, u) with g_u = h(x, u); ``None`` when psi is not of the form h omega."""
        if self.kind == "zero":
            return np.zeros_like(u)
        if self.kind == "capillary":
            return self.kappa * (0.5 * u**2 - self.offset(x) * u)
        return None

    def to_dict(self):
        if callable(self.a):
            raise ValueError("callable offsets are not serializable")
        out = {"kind": self.kind}
        if self.kind == "capillary":
            out.update(kappa=self.kappa, a=self.a)
        elif self.kind == "linear":
            out["eps"] = self.eps
        elif self.kind == "constant":
            out["c"] = self.c
        return out


@dataclass
class ForcingEval:
    psi: np.ndarray
    psi_u: np.ndarray
    psi_grad: np.ndarray  # psi_k, x-derivative at fixed (u, Du)
    psi_du: np.ndarray  # psi_{u_k}, a vector


def evaluate(spec, u, p, omega, grad, x=None, da=None):
    """Evaluate psi and its partial derivatives.

    ``p`` are the covariant gradient components, ``grad`` the raised ones,
    ``omega`` the slope factor.  ``da`` holds the partials of the capillary
    offset a(x) when it varies in space.
    """
    u = np.asarray(u, dtype=float)
    zeros = np.zeros_like(u)
    zvec = np.zeros_like(np.asarray(p, dtype=float))
    if spec.kind == "zero":
        return ForcingEval(zeros, zeros.copy(), zvec, zvec.copy())
    if spec.kind == "linear":
        return ForcingEval(spec.eps * u, np.full_like(u, spec.eps), zvec, zvec.copy())
    if spec.kind == "constant":
        return ForcingEval(np.full_like(u, spec.c), zeros, zvec, zvec.copy())
    h = spec.kappa * (u - spec.offset(x))
    psi_grad = zvec if da is None else -spec.kappa * np.asarray(da, dtype=float) * omega[..., None]
    return ForcingEval(
        psi=h * omega,
        psi_u=spec.kappa * omega,
        psi_grad=psi_grad,
        psi_du=(h / omega)[..., None] * grad,
    )


@dataclass
class AdmissibilityReport:
    margins: dict
    C_min: float
    infeasible: bool = False
    names: tuple = field(default=("psi_u", "x_gradient", "euler", "du_gradient"))


def admissibility_margin(spec, u, p, sigma, sigma_inv, x=None, da=None):
    """Smallest C >= 0 for which the four admissibility inequalities hold.

    The inequalities are psi_u >= -C, sigma^kl psi_k psi_l <= C omega^2,
    psi - psi_{u_k} u_k >= -C and sigma_kl psi_{u_k} psi_{u_l} <= C; each
    margin is reported separately and ``C_min`` is their maximum.
    """
    omega, _, grad = slope_and_normal(p, sigma_inv)
    ev = evaluate(spec, u, p, omega, grad, x=x, da=da)
    m_psi_u = max(0.0, float(np.max(-ev.psi_u)))
    m_x = max(0.0, float(np.max(np.einsum("...kl,...k,...l->...", sigma_inv, ev.psi_grad, ev.psi_grad) / omega**2)))
    m_euler = max(0.0, float(np.max(-(ev.psi - np.einsum("...k,...k->...", ev.psi_du, p)))))
    m_du = max(0.0, float(np.max(np.einsum("...kl,...k,...l->...", sigma, ev.psi_du, ev.psi_du))))
    margins = {"psi_u": m_psi_u, "x_gradient": m_x, "euler": m_euler, "du_gradient": m_du}
    c_min = max(margins.values())
    return AdmissibilityReport(margins=margins, C_min=c_min, infeasible=not np.isfinite(c_min))
