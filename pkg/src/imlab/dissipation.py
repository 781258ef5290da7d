"""Nonlinear dissipation operator and its energy potential.

For a torus state ``u`` with ``theta(u) = exp(rho(|u|_{H^{s*}}))``::

    A(u) = theta(u) * ( a1 (-Lap)^{s1*} u
                        + a2 Lap(|Lap u|^{q-2} Lap u)
                        - a3 div(|grad u|^{2q-2} grad u) )

    G(u) = theta(u) * ( a1 |u|_{H^{s1*}}^2 + a2 int |Lap u|^q + a3 int |grad u|^{2q} )

so that ``<A(u), u> = G(u)``. Shell states support only the ``a1`` term,
with multiplier ``k_n^{2 s1*}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import spectral as sp
from .models import CapabilityError
from .spectral import SpectralField


@dataclass(frozen=True)
class Rho:
    """Strictly increasing convex weight with ``rho(0) = 0`` and ``rho(x) >= delta x``.

    ``linear``:     rho(x) = delta x
    ``affine-exp``: rho(x) = delta x + c (exp(beta x) - 1 - beta x)
    """

    kind: str = "linear"
    delta: float = 1.0
    c: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if self.kind not in ("linear", "affine-exp"):
            raise ValueError(f"unknown rho kind {self.kind!r}")
        if not self.delta > 0:
            raise ValueError("rho slope delta must be positive")
        if self.kind == "affine-exp" and (self.c < 0 or self.beta < 0):
            raise ValueError("affine-exp rho needs c >= 0 and beta >= 0")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = self.delta * x
        if self.kind == "affine-exp" and self.c > 0 and self.beta > 0:
            bx = self.beta * x
            out = out + self.c * (np.expm1(bx) - bx)
        return out[()] if out.ndim == 0 else out

    def inverse(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y < 0):
            raise ValueError("rho inverse needs a nonnegative argument")
        if self.kind == "linear" or self.c == 0 or self.beta == 0:
            out = y / self.delta
            return out[()] if out.ndim == 0 else out
        flat = [0.0 if t == 0 else brentq(lambda x, t=t: float(self(x)) - t, 0.0, t / self.delta,
                                          xtol=1e-15, rtol=4 * np.finfo(float).eps)
                for t in y.ravel()]
        out = np.array(flat).reshape(y.shape)
        return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class DissipationSpec:
    s_star: float = 4.0
    s1_star: float = 5.0
    q: int = 6
    flags: tuple = (1, 0, 0)
    rho: Rho = field(default_factory=Rho)

    def __post_init__(self):
        object.__setattr__(self, "flags", tuple(int(f) for f in self.flags))
        if self.s_star < 4:
            raise ValueError(f"s_star must be >= 4, got {self.s_star}")
        if not self.s1_star > self.s_star:
            raise ValueError(f"s1_star must exceed s_star ({self.s1_star} <= {self.s_star})")
        if int(self.q) != self.q or self.q < 2 or self.q % 2:
            raise ValueError(f"q must be an even integer >= 2, got {self.q}")
        if len(self.flags) != 3 or any(f not in (0, 1) for f in self.flags) or not any(self.flags):
            raise ValueError(f"flags must be three 0/1 values, not all zero, got {self.flags}")

    def canonical(self) -> str:
        return (f"DissipationSpec(s_star={self.s_star!r}, s1_star={self.s1_star!r}, q={self.q!r}, "
                f"flags={self.flags!r}, rho={self.rho!r})")


def _check_kind(spec: DissipationSpec, u: SpectralField) -> None:
    if u.kind == "shell" and (spec.flags[1] or spec.flags[2]):
        raise CapabilityError("shell states support only the linear (a1) dissipation term")


def theta(spec: DissipationSpec, u: SpectralField):
    """Exponential prefactor ``exp(rho(|u|_{H^{s*}}))``."""
    with np.errstate(over="ignore"):
        return np.exp(spec.rho(sp.norm(u, sp.H(spec.s_star))))


def linear_rate(spec: DissipationSpec, u: SpectralField) -> np.ndarray:
    """Symbol of the ``a1`` part without the prefactor: ``|m|^{2 s1*}``."""
    return sp.multiplier(u, 2.0 * spec.s1_star) * spec.flags[0]


def _a2_term(spec: DissipationSpec, u: SpectralField) -> np.ndarray:
    q = spec.q
    lap = sp.derivative_tensor_coeffs(u, 2, "laplacian")  # (..., ncomp, nm)
    M = sp.grid_size(u.basis, q - 1)
    g = sp.to_grid(u.basis, lap, M)
    mag2 = np.sum(g**2, axis=-u.basis.d - 1, keepdims=True)
    flux = sp.from_grid(u.basis, mag2 ** ((q - 2) // 2) * g, M)
    out = -u.basis.msq * flux
    return out if u.kind == "vector" else out[..., 0, :]


def _a3_term(spec: DissipationSpec, u: SpectralField) -> np.ndarray:
    q = spec.q
    d = u.basis.d
    c = u.coeffs if u.kind == "vector" else u.coeffs[..., None, :]
    m = u.basis.modes.astype(float)
    grads = np.stack([1j * m[:, j] * c for j in range(d)], axis=-2)  # (..., comp, d, nm)
    M = sp.grid_size(u.basis, 2 * q - 1)
    g = sp.to_grid(u.basis, grads, M)
    mag2 = np.sum(g**2, axis=(-d - 2, -d - 1), keepdims=True)
    flux = sp.from_grid(u.basis, mag2 ** (q - 1) * g, M)
    div = np.sum(1j * m.T * flux, axis=-2)
    out = -div
    return out if u.kind == "vector" else out[..., 0, :]


def apply_A(spec: DissipationSpec, u: SpectralField, prefactor: bool = True) -> SpectralField:
    """Projected dissipation operator; vector results are Leray projected."""
    _check_kind(spec, u)
    a1, a2, a3 = spec.flags
    out = np.zeros_like(u.coeffs)
    if a1:
        out = out + linear_rate(spec, u) * u.coeffs
    if a2:
        out = out + _a2_term(spec, u)
    if a3:
        out = out + _a3_term(spec, u)
    res = u.with_coeffs(out)
    if u.kind == "vector":
        res = sp.leray_project(res)
    if prefactor:
        th = np.asarray(theta(spec, u))
        res = res * th if th.ndim else res.with_coeffs(res.coeffs * th)
    return res


def nonlinear_part(spec: DissipationSpec, u: SpectralField) -> SpectralField:
    """The ``a2``/``a3`` terms without the prefactor."""
    _check_kind(spec, u)
    out = np.zeros_like(u.coeffs)
    if spec.flags[1]:
        out = out + _a2_term(spec, u)
    if spec.flags[2]:
        out = out + _a3_term(spec, u)
    res = u.with_coeffs(out)
    return sp.leray_project(res) if u.kind == "vector" else res


def nonlinear_potential(spec: DissipationSpec, u: SpectralField):
    """``a2 int |Lap u|^q + a3 int |grad u|^{2q}`` (no prefactor)."""
    if u.kind == "shell":
        return np.zeros(u.batch_shape)[()] if u.batch_shape else 0.0
    total = 0.0
    if spec.flags[1]:
        total = total + sp.w_norm_power(u, 2, spec.q, "laplacian")
    if spec.flags[2]:
        total = total + sp.w_norm_power(u, 1, 2 * spec.q, "tensor")
    return total


def G_potential(spec: DissipationSpec, u: SpectralField):
    """Energy pairing of the dissipation, computed from norms directly."""
    _check_kind(spec, u)
    total = spec.flags[0] * sp.hs_norm_sq(u, spec.s1_star) + nonlinear_potential(spec, u)
    out = theta(spec, u) * total
    return out[()] if np.ndim(out) == 0 else out


def xi(spec: DissipationSpec, x):
    """``rho^{-1}(3x)``; increasing and concave."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("xi is defined for x >= 0")
    return spec.rho.inverse(3.0 * x)


def xi_inverse(spec: DissipationSpec, y):
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise ValueError("xi inverse is defined for y >= 0")
    out = spec.rho(y) / 3.0
    return out


def coercivity_constant(spec: DissipationSpec, kind: str, basis, rng: np.random.Generator,
                        trials: int = 200, scales=None) -> float:
    """Smallest observed ``G(u) / |u|_{H^{s*}}^4`` over random directions and scales."""
    if scales is None:
        scales = np.geomspace(1e-3, 1e1, 25)
    u = sp.random_field(kind, basis, rng, (trials,))
    unit = u * (1.0 / sp.norm(u, sp.H(spec.s_star)))
    best = np.inf
    for s in scales:
        with np.errstate(over="ignore", invalid="ignore"):
            g = G_potential(spec, unit * s)
        ratio = np.asarray(g) / s**4
        best = min(best, float(np.nanmin(ratio)))
    return best
