"""Conservative bilinear forms and their conserved functionals.

Every model exposes ``bilinear(model, u, v)`` returning the Galerkin-projected
``B(u, v)``; the inviscid dynamics is ``du/dt = -B(u, u)`` (plus an optional
Coriolis term for 3D Euler).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import spectral as sp
from .spectral import ShapeError, SpectralField


class CapabilityError(ValueError):
    """Requested functional or operation is not defined for this model."""


# ---------------------------------------------------------------------------
# model definitions


@dataclass(frozen=True)
class Euler2DVorticity:
    """2D Euler in vorticity form, transport by the Biot-Savart velocity."""

    kind = "scalar"
    d = 2

    def canonical(self) -> str:
        return "Euler2DVorticity()"


@dataclass(frozen=True)
class GSQG:
    """Generalized SQG active scalar with velocity ``-grad_perp (-Lap)^(alpha_sqg - 1) u``."""

    alpha_sqg: float = 0.5
    allow_singular: bool = False
    kind = "scalar"
    d = 2

    def __post_init__(self):
        if self.alpha_sqg > 0.5 and not self.allow_singular:
            raise ValueError(
                f"alpha_sqg={self.alpha_sqg} > 1/2 is a singular active scalar; "
                "pass allow_singular=True to construct it")

    def canonical(self) -> str:
        return f"GSQG(alpha_sqg={self.alpha_sqg!r})"


@dataclass(frozen=True)
class Euler3DVelocity:
    """3D Euler in velocity form with optional constant Coriolis vector."""

    coriolis: tuple = (0.0, 0.0, 0.0)
    kind = "vector"
    d = 3

    def __post_init__(self):
        object.__setattr__(self, "coriolis", tuple(float(c) for c in self.coriolis))
        if len(self.coriolis) != 3:
            raise ValueError("Coriolis vector needs three components")

    def canonical(self) -> str:
        return f"Euler3DVelocity(coriolis={self.coriolis!r})"


@dataclass(frozen=True)
class _Shell:
    a: float = 1.0
    b: float = -3.0
    lam: float = 2.0
    k0: float = 0.5
    kind = "shell"
    d = 0

    def __post_init__(self):
        if not self.lam > 1:
            raise ValueError(f"shell ratio lam must exceed 1, got {self.lam}")
        if not self.k0 > 0:
            raise ValueError(f"k0 must be positive, got {self.k0}")

    @property
    def h_ratio(self) -> float:
        """Weight ratio of the second quadratic invariant, ``-a/(a+b)``."""
        if self.a + self.b == 0:
            raise CapabilityError("second invariant undefined for a + b = 0")
        return -self.a / (self.a + self.b)

    def canonical(self) -> str:
        return f"{type(self).__name__}(a={self.a!r}, b={self.b!r}, lam={self.lam!r}, k0={self.k0!r})"


@dataclass(frozen=True)
class Sabra(_Shell):
    pass


@dataclass(frozen=True)
class GOY(_Shell):
    pass


ModelSpec = Euler2DVorticity | GSQG | Euler3DVelocity | Sabra | GOY
MODEL_NAMES = {"Euler2DVorticity": Euler2DVorticity, "GSQG": GSQG,
               "Euler3DVelocity": Euler3DVelocity, "Sabra": Sabra, "GOY": GOY}


def basis_for(model: ModelSpec, N: int):
    """Galerkin basis for a model at truncation ``N`` (shell count for shells)."""
    if model.kind == "shell":
        return sp.shell_basis(N, model.k0, model.lam)
    return sp.torus_basis(model.d, N)


def random_state(model: ModelSpec, N: int, rng: np.random.Generator, batch: tuple = (),
                 decay: float = 1.0) -> SpectralField:
    return sp.random_field(model.kind, basis_for(model, N), rng, batch, decay)


def _check_kind(model: ModelSpec, *fields: SpectralField) -> None:
    for f in fields:
        if f.kind != model.kind:
            raise ShapeError(f"{model.canonical()} acts on {model.kind} fields, got {f.kind}")
        if model.kind != "shell" and f.basis.d != model.d:
            raise ShapeError(f"{model.canonical()} needs d={model.d}, got d={f.basis.d}")
        if model.kind == "shell" and (f.basis.k0, f.basis.lam) != (model.k0, model.lam):
            raise ShapeError("shell field parameters do not match the model")


# ---------------------------------------------------------------------------
# velocity and bilinear forms


def _sqg_exponent(model) -> float:
    return 0.0 if isinstance(model, Euler2DVorticity) else float(model.alpha_sqg)


def velocity_coeffs(model, u: SpectralField) -> np.ndarray:
    """Coefficients ``(..., 2, nmodes)`` of the transporting velocity."""
    alpha = _sqg_exponent(model)
    m = u.basis.modes.astype(float)
    w = u.basis.msq ** (alpha - 1.0)
    # -grad_perp with grad_perp = (-d2, d1): symbol i(m2, -m1)
    return np.stack([1j * m[:, 1] * w * u.coeffs, -1j * m[:, 0] * w * u.coeffs], axis=-2)


def velocity_from_scalar(model, u: SpectralField) -> SpectralField:
    if not isinstance(model, (GSQG, Euler2DVorticity)):
        raise CapabilityError("velocity reconstruction is defined for active scalars")
    _check_kind(model, u)
    return SpectralField("vector", u.basis, velocity_coeffs(model, u))


def _active_scalar_B(model, u: SpectralField, v: SpectralField) -> SpectralField:
    M = sp.grid_size(u.basis, 2)
    vel = sp.to_grid(u.basis, velocity_coeffs(model, u), M)
    grad = sp.gradient_on_grid(v, M)
    prod = np.sum(vel * grad, axis=-u.basis.d - 1)
    return SpectralField("scalar", u.basis, sp.from_grid(u.basis, prod, M))


def _euler3d_B(u: SpectralField, v: SpectralField) -> SpectralField:
    M = sp.grid_size(u.basis, 2)
    ug = sp.to_grid(u.basis, u.coeffs, M)  # (..., 3, grid)
    gv = sp.gradient_on_grid(v, M)  # (..., 3 comp, 3 deriv, grid)
    adv = np.sum(ug[..., None, :, :, :, :] * gv, axis=-4)
    out = SpectralField("vector", u.basis, sp.from_grid(u.basis, adv, M))
    return sp.leray_project(out)


def _shift(x: np.ndarray, s: int) -> np.ndarray:
    """``y_j = x_{j+s}`` with zeros outside the stored shells."""
    n = x.shape[-1]
    out = np.zeros_like(x)
    if s >= 0:
        if s < n:
            out[..., : n - s] = x[..., s:]
    else:
        if -s < n:
            out[..., -s:] = x[..., : n + s]
    return out


def _shell_B(model: _Shell, u: SpectralField, v: SpectralField) -> SpectralField:
    a, b, lam, k0 = model.a, model.b, model.lam, model.k0
    n = u.basis.n
    j = np.arange(1, n + 1, dtype=float)
    uc, vc = u.coeffs, v.coeffs
    if isinstance(model, Sabra):
        s = (a * lam ** (j + 1) * _shift(vc, 2) * np.conj(_shift(uc, 1))
             + b * lam**j * _shift(vc, 1) * np.conj(_shift(uc, -1))
             + a * lam ** (j - 1) * _shift(uc, -1) * _shift(vc, -2)
             + b * lam ** (j - 1) * _shift(vc, -1) * _shift(uc, -2))
        out = -1j * k0 * s
    else:
        # backward-coupling terms enter with a minus sign inside the conjugate
        s = (a * lam ** (j + 1) * _shift(vc, 2) * _shift(uc, 1)
             + b * lam**j * _shift(vc, 1) * _shift(uc, -1)
             - a * lam ** (j - 1) * _shift(uc, -1) * _shift(vc, -2)
             - b * lam ** (j - 1) * _shift(vc, -1) * _shift(uc, -2))
        out = -1j * k0 * np.conj(s)
    return SpectralField("shell", u.basis, out)


def bilinear(model: ModelSpec, u: SpectralField, v: SpectralField) -> SpectralField:
    """Galerkin-projected ``B(u, v)``; real-bilinear in both slots."""
    _check_kind(model, u, v)
    sp._check_compatible(u, v)
    if isinstance(model, (GSQG, Euler2DVorticity)):
        return _active_scalar_B(model, u, v)
    if isinstance(model, Euler3DVelocity):
        return _euler3d_B(u, v)
    if isinstance(model, (Sabra, GOY)):
        return _shell_B(model, u, v)
    raise CapabilityError(f"unknown model {model!r}")


def linear_term(model: ModelSpec, u: SpectralField) -> SpectralField | None:
    """Energy-neutral linear part of the drift (Coriolis), or None."""
    if isinstance(model, Euler3DVelocity) and any(model.coriolis):
        f = np.asarray(model.coriolis).reshape(3, 1)
        c = u.coeffs
        cross = np.stack([f[1] * c[..., 2, :] - f[2] * c[..., 1, :],
                          f[2] * c[..., 0, :] - f[0] * c[..., 2, :],
                          f[0] * c[..., 1, :] - f[1] * c[..., 0, :]], axis=-2)
        return sp.leray_project(u.with_coeffs(cross))
    return None


def drift(model: ModelSpec, u: SpectralField) -> SpectralField:
    """Right-hand side of the inviscid Galerkin flow."""
    out = -bilinear(model, u, u)
    lin = linear_term(model, u)
    if lin is not None:
        out = out - lin
    return out


def bilinear_mean(model: ModelSpec, u: SpectralField, v: SpectralField) -> np.ndarray:
    """Exact spatial mean of the unprojected product ``B(u, v)``.

    Shell basis functions have zero mean, so shells return zeros.
    """
    if model.kind == "shell":
        return np.zeros(u.batch_shape)
    M = sp.grid_size(u.basis, 2, integral=True)
    if model.kind == "scalar":
        vel = sp.to_grid(u.basis, velocity_coeffs(model, u), M)
        grad = sp.gradient_on_grid(v, M)
        prod = np.sum(vel * grad, axis=-u.basis.d - 1)
        return sp.grid_mean(u.basis, prod)
    ug = sp.to_grid(u.basis, u.coeffs, M)
    gv = sp.gradient_on_grid(v, M)
    adv = np.sum(ug[..., None, :, :, :, :] * gv, axis=-4)
    return np.linalg.norm(sp.grid_mean(u.basis, adv), axis=-1)


# ---------------------------------------------------------------------------
# conserved functionals


def energy(u: SpectralField):
    """Half the squared L2 norm of the state."""
    return 0.5 * sp.l2_sq(u)


def secondary_weights(model: ModelSpec, basis) -> np.ndarray:
    """Diagonal weights ``W`` with ``H(u) = <W u, u> / 2``."""
    if isinstance(model, (GSQG, Euler2DVorticity)):
        return basis.msq ** (_sqg_exponent(model) - 1.0)
    if isinstance(model, (Sabra, GOY)):
        return model.h_ratio ** np.arange(1, basis.n + 1, dtype=float)
    raise CapabilityError(f"{model.canonical()} has no secondary quadratic invariant")


def secondary_hamiltonian(model: ModelSpec, u: SpectralField):
    _check_kind(model, u)
    w = secondary_weights(model, u.basis)
    out = 0.5 * sp.inner_product(u.with_coeffs(u.coeffs * w), u)
    return out


@dataclass(frozen=True)
class Casimir:
    """Integrand ``f`` given by polynomial coefficients (increasing powers)
    or by a vectorized callable with a quadrature degree hint."""

    coeffs: tuple = ()
    fn: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)
    degree: int = 8

    def __post_init__(self):
        if self.fn is None and not self.coeffs:
            raise ValueError("Casimir needs polynomial coefficients or a callable")
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))

    @property
    def quad_degree(self) -> int:
        return max(len(self.coeffs) - 1, 1) if self.fn is None else self.degree

    def __call__(self, z: np.ndarray) -> np.ndarray:
        if self.fn is not None:
            return self.fn(z)
        return np.polynomial.polynomial.polyval(z, self.coeffs)


def casimir(u: SpectralField, f: Casimir | Sequence[float]):
    """``int f(u) dx`` for a torus scalar, exact for polynomial ``f``."""
    if u.kind != "scalar":
        raise CapabilityError("Casimirs are defined for active scalar states")
    if not isinstance(f, Casimir):
        f = Casimir(coeffs=tuple(f))
    M = sp.grid_size(u.basis, f.quad_degree, integral=True)
    vals = sp.to_grid(u.basis, u.coeffs, M)
    out = sp.grid_mean(u.basis, f(vals)) * u.basis.volume
    return out[()] if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# structural checks


STRUCTURE_CHECKS = ("antisymmetry", "cancellation", "zero_mean", "divergence_free", "bilinearity")
DEFAULT_N = {"Euler2DVorticity": 16, "GSQG": 16, "Euler3DVelocity": 8, "Sabra": 12, "GOY": 12}


@dataclass
class StructureReport:
    model: str
    N: int
    trials: int
    tol: float
    violations: dict

    @property
    def passed(self) -> dict:
        return {k: bool(v <= self.tol) for k, v in self.violations.items()}

    @property
    def all_pass(self) -> bool:
        return all(self.passed.values())


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    num = np.abs(num)
    den = np.abs(den)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.where(num > 0, np.inf, 0.0))


def _l2(u: SpectralField) -> np.ndarray:
    return np.sqrt(sp.l2_sq(u))


def verify_structure(model: ModelSpec, trials: int = 50, seed: int = 0, N: int | None = None,
                     tol: float = 1e-10) -> StructureReport:
    """Randomized check of the algebraic properties of ``B``.

    Each entry of ``violations`` is the maximum relative defect over trials.
    """
    name = type(model).__name__
    N = DEFAULT_N[name] if N is None else N
    rng = np.random.default_rng(seed)
    batch = (trials,)
    u, v, w = (random_state(model, N, rng, batch) for _ in range(3))
    al, be = rng.standard_normal(trials), rng.standard_normal(trials)

    Bvu, Bvw, Buu = bilinear(model, v, u), bilinear(model, v, w), bilinear(model, u, u)
    anti = _ratio(sp.inner_product(Bvu, w) + sp.inner_product(Bvw, u),
                  _l2(Bvu) * _l2(w) + _l2(Bvw) * _l2(u))
    canc = _ratio(sp.inner_product(Buu, u), _l2(Buu) * _l2(u))

    vol_sqrt = np.sqrt(u.basis.volume) if u.is_torus else 1.0
    mean = _ratio(bilinear_mean(model, u, u) * vol_sqrt**2, _l2(Buu) * vol_sqrt)

    if model.kind == "vector":
        div = sp.divergence(Buu)
        num = np.sqrt(np.sum(np.abs(div) ** 2, axis=-1))
        den = np.sqrt(np.sum(u.basis.msq * np.sum(np.abs(Buu.coeffs) ** 2, axis=-2), axis=-1))
        divf = _ratio(num, den)
    elif model.kind == "scalar":
        vel = velocity_from_scalar(model, u)
        div = sp.divergence(vel)
        num = np.sqrt(np.sum(np.abs(div) ** 2, axis=-1))
        den = np.sqrt(np.sum(u.basis.msq * np.sum(np.abs(vel.coeffs) ** 2, axis=-2), axis=-1))
        divf = _ratio(num, den)
    else:
        divf = np.zeros(trials)

    Buv, Buw = bilinear(model, u, v), bilinear(model, u, w)
    comb = v * al + w * be
    lin2 = bilinear(model, u, comb) - (Buv * al + Buw * be)
    Bvu_, Bwu = bilinear(model, v, u), bilinear(model, w, u)
    lin1 = bilinear(model, comb, u) - (Bvu_ * al + Bwu * be)
    bil = np.maximum(
        _ratio(_l2(lin2), np.abs(al) * _l2(Buv) + np.abs(be) * _l2(Buw)),
        _ratio(_l2(lin1), np.abs(al) * _l2(Bvu_) + np.abs(be) * _l2(Bwu)))

    viol = {"antisymmetry": anti, "cancellation": canc, "zero_mean": mean,
            "divergence_free": divf, "bilinearity": bil}
    viol = {k: float(np.max(v, initial=0.0)) for k, v in viol.items()}
    return StructureReport(model=model.canonical(), N=N, trials=trials, tol=tol, violations=viol)
