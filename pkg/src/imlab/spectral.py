"""Truncated spectral states on the torus and on shell chains.

Torus fields are stored densely over the retained lattice set
``{m in Z^d : 0 < |m|^2 <= N}`` in lexicographic order, with the physical
field ``u(x) = sum_m uhat_m exp(i m.x)``. Shell states are complex vectors
indexed by the shell number ``n = 1..n_shells`` with wavenumbers
``k_n = k0 * lam**n``.

Coefficient layouts (leading batch axes are allowed everywhere):

* scalar: ``(..., nmodes)``
* vector: ``(..., d, nmodes)``
* shell:  ``(..., n_shells)``
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.fft as sfft

TWO_PI = 2.0 * np.pi

# Maximum number of collocation points per field before a transform is refused.
GRID_BUDGET = 2**24


class ShapeError(ValueError):
    """Incompatible field kinds, bases or coefficient shapes."""


class TruncationError(ValueError):
    """Requested truncation is larger than the source truncation."""


class UnsupportedNormError(ValueError):
    """Norm family not available for this field kind."""


class ResourceError(RuntimeError):
    """A collocation grid would exceed the configured budget."""


# ---------------------------------------------------------------------------
# bases


@dataclass(frozen=True, eq=False)
class TorusBasis:
    """Retained Fourier modes on the d-torus with eigenvalue cutoff ``N``."""

    d: int
    N: int
    modes: np.ndarray = field(repr=False)
    neg: np.ndarray = field(repr=False)
    positive: np.ndarray = field(repr=False)

    @property
    def nmodes(self) -> int:
        return self.modes.shape[0]

    @property
    def K(self) -> int:
        """Largest absolute mode component (per-axis radius)."""
        return int(np.floor(np.sqrt(self.N)))

    @functools.cached_property
    def msq(self) -> np.ndarray:
        return np.sum(self.modes.astype(float) ** 2, axis=1)

    @functools.cached_property
    def mabs(self) -> np.ndarray:
        return np.sqrt(self.msq)

    @property
    def volume(self) -> float:
        return TWO_PI**self.d

    def index_of(self, m: Sequence[int]) -> int:
        hit = np.nonzero(np.all(self.modes == np.asarray(m), axis=1))[0]
        if hit.size == 0:
            raise KeyError(f"mode {tuple(m)} not retained at N={self.N}")
        return int(hit[0])

    def __reduce__(self):
        return (torus_basis, (self.d, self.N))


@functools.lru_cache(maxsize=None)
def torus_basis(d: int, N: int) -> TorusBasis:
    if d not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {d}")
    if N < 1:
        raise ValueError(f"truncation N must be >= 1, got {N}")
    K = int(np.floor(np.sqrt(N)))
    rng = range(-K, K + 1)
    modes = [m for m in itertools.product(rng, repeat=d) if 0 < sum(c * c for c in m) <= N]
    modes = np.array(sorted(modes), dtype=np.int64)
    lookup = {tuple(m): i for i, m in enumerate(modes.tolist())}
    neg = np.array([lookup[tuple(-c for c in m)] for m in modes.tolist()], dtype=np.int64)
    # representative of each +/- pair: first nonzero component positive
    first = np.array([next(c for c in m if c != 0) for m in modes.tolist()])
    positive = first > 0
    for arr in (modes, neg, positive):
        arr.setflags(write=False)
    return TorusBasis(d=d, N=N, modes=modes, neg=neg, positive=positive)


@dataclass(frozen=True)
class ShellBasis:
    """Shell chain with wavenumbers ``k_n = k0 * lam**n``."""

    n: int
    k0: float = 0.5
    lam: float = 2.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one shell")
        if not self.lam > 1:
            raise ValueError(f"shell ratio lam must exceed 1, got {self.lam}")
        if not self.k0 > 0:
            raise ValueError(f"k0 must be positive, got {self.k0}")

    @property
    def N(self) -> int:
        return self.n

    @functools.cached_property
    def k(self) -> np.ndarray:
        k = self.k0 * self.lam ** np.arange(1, self.n + 1, dtype=float)
        k.setflags(write=False)
        return k


def shell_basis(n: int, k0: float = 0.5, lam: float = 2.0) -> ShellBasis:
    return ShellBasis(int(n), float(k0), float(lam))


# ---------------------------------------------------------------------------
# fields

KINDS = ("scalar", "vector", "shell")


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Immutable truncated state. ``coeffs`` may carry leading batch axes."""

    kind: str
    basis: TorusBasis | ShellBasis
    coeffs: np.ndarray

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ShapeError(f"unknown field kind {self.kind!r}")
        c = np.array(self.coeffs, dtype=np.complex128)
        if self.kind == "shell":
            if not isinstance(self.basis, ShellBasis):
                raise ShapeError("shell field needs a ShellBasis")
            core = (self.basis.n,)
        else:
            if not isinstance(self.basis, TorusBasis):
                raise ShapeError("torus field needs a TorusBasis")
            core = (self.basis.nmodes,) if self.kind == "scalar" else (self.basis.d, self.basis.nmodes)
        if c.shape[c.ndim - len(core):] != core:
            raise ShapeError(f"{self.kind} coefficients need trailing shape {core}, got {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def core_ndim(self) -> int:
        return 2 if self.kind == "vector" else 1

    @property
    def batch_shape(self) -> tuple:
        return self.coeffs.shape[: self.coeffs.ndim - self.core_ndim]

    @property
    def is_torus(self) -> bool:
        return self.kind != "shell"

    def with_coeffs(self, coeffs: np.ndarray) -> "SpectralField":
        return SpectralField(self.kind, self.basis, coeffs)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        _check_compatible(self, other)
        return self.with_coeffs(self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        _check_compatible(self, other)
        return self.with_coeffs(self.coeffs - other.coeffs)

    def __mul__(self, c) -> "SpectralField":
        c = np.asarray(c, dtype=float)
        if c.ndim:
            c = c.reshape(c.shape + (1,) * self.core_ndim)
        return self.with_coeffs(self.coeffs * c)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return self.with_coeffs(-self.coeffs)

    def __getitem__(self, idx) -> "SpectralField":
        if not self.batch_shape:
            raise ShapeError("field has no batch axes")
        return self.with_coeffs(self.coeffs[idx])

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.coeffs)))


def _check_compatible(u: SpectralField, v: SpectralField) -> None:
    if u.kind != v.kind:
        raise ShapeError(f"kind mismatch: {u.kind} vs {v.kind}")
    if u.basis != v.basis and not (
        isinstance(u.basis, TorusBasis) and isinstance(v.basis, TorusBasis)
        and (u.basis.d, u.basis.N) == (v.basis.d, v.basis.N)
    ):
        raise ShapeError(f"basis mismatch: {u.basis} vs {v.basis}")


def zeros(kind: str, basis, batch: tuple = ()) -> SpectralField:
    if kind == "shell":
        core = (basis.n,)
    elif kind == "scalar":
        core = (basis.nmodes,)
    else:
        core = (basis.d, basis.nmodes)
    return SpectralField(kind, basis, np.zeros(tuple(batch) + core, dtype=np.complex128))


def from_modes(kind: str, basis: TorusBasis, values: dict) -> SpectralField:
    """Build a torus field from ``{mode tuple: amplitude}``; conjugates are added."""
    out = zeros(kind, basis).coeffs.copy()
    for m, val in values.items():
        i = basis.index_of(m)
        j = basis.neg[i]
        if kind == "scalar":
            out[i] = val
            out[j] = np.conj(val)
        else:
            out[:, i] = val
            out[:, j] = np.conj(val)
    return SpectralField(kind, basis, out)


def enforce_reality(u: SpectralField) -> SpectralField:
    """Average each coefficient with the conjugate of its mirror mode."""
    if not u.is_torus:
        return u
    c = u.coeffs
    return u.with_coeffs(0.5 * (c + np.conj(c[..., u.basis.neg])))


def reality_defect(u: SpectralField) -> float:
    if not u.is_torus:
        return 0.0
    c = u.coeffs
    return float(np.max(np.abs(c - np.conj(c[..., u.basis.neg])), initial=0.0))


def divergence(u: SpectralField) -> np.ndarray:
    """Coefficients of div u for a vector field (shape ``(..., nmodes)``)."""
    if u.kind != "vector":
        raise ShapeError("divergence needs a vector field")
    m = u.basis.modes.T.astype(float)
    return 1j * np.sum(m * u.coeffs, axis=-2)


def random_field(kind: str, basis, rng: np.random.Generator, batch: tuple = (),
                 decay: float = 1.0) -> SpectralField:
    """Gaussian random state with amplitude ``|m|^-decay`` (or ``k_n^-decay``).

    Torus fields are real and zero mean; vector fields are divergence free.
    """
    batch = tuple(batch)
    if kind == "shell":
        w = basis.k ** (-decay)
        z = rng.standard_normal(batch + (basis.n,)) + 1j * rng.standard_normal(batch + (basis.n,))
        return SpectralField("shell", basis, z * w)
    core = (basis.nmodes,) if kind == "scalar" else (basis.d, basis.nmodes)
    z = rng.standard_normal(batch + core) + 1j * rng.standard_normal(batch + core)
    u = SpectralField(kind, basis, z * basis.mabs ** (-decay))
    u = enforce_reality(u)
    if kind == "vector":
        u = leray_project(u)
    return u


# ---------------------------------------------------------------------------
# projections and inner products


def galerkin_project(u: SpectralField, N_new: int) -> SpectralField:
    """Drop modes above the new cutoff (shells: keep the first ``N_new``)."""
    if N_new > u.basis.N:
        raise TruncationError(f"cannot project N={u.basis.N} field to larger N={N_new}")
    if not u.is_torus:
        b = shell_basis(N_new, u.basis.k0, u.basis.lam)
        return SpectralField("shell", b, u.coeffs[..., :N_new])
    nb = torus_basis(u.basis.d, N_new)
    keep = u.basis.msq <= N_new
    return SpectralField(u.kind, nb, u.coeffs[..., keep])


def embed(u: SpectralField, N_new: int) -> SpectralField:
    """Zero-pad a field into a larger truncation."""
    if N_new < u.basis.N:
        raise TruncationError("embed needs a larger truncation")
    if not u.is_torus:
        b = shell_basis(N_new, u.basis.k0, u.basis.lam)
        out = np.zeros(u.batch_shape + (N_new,), dtype=complex)
        out[..., : u.basis.n] = u.coeffs
        return SpectralField("shell", b, out)
    nb = torus_basis(u.basis.d, N_new)
    out = zeros(u.kind, nb, u.batch_shape).coeffs.copy()
    out[..., nb.msq <= u.basis.N] = u.coeffs
    return SpectralField(u.kind, nb, out)


def leray_project(u: SpectralField) -> SpectralField:
    """Remove the gradient part of a vector field mode by mode."""
    if u.kind != "vector":
        raise ShapeError("Leray projection needs a vector field")
    m = u.basis.modes.T.astype(float)
    dot = np.sum(m * u.coeffs, axis=-2, keepdims=True)
    return u.with_coeffs(u.coeffs - m * dot / u.basis.msq)


def _mode_sum(u: SpectralField, arr: np.ndarray) -> np.ndarray:
    if u.kind == "vector":
        arr = np.sum(arr, axis=-2)
    return np.sum(arr, axis=-1)


def inner_product(u: SpectralField, v: SpectralField):
    """Real L2 pairing; returns a float or an array over batch axes."""
    _check_compatible(u, v)
    if u.coeffs.shape[-u.core_ndim:] != v.coeffs.shape[-v.core_ndim:]:
        raise ShapeError("coefficient shapes differ")
    prod = np.real(u.coeffs * np.conj(v.coeffs))
    s = _mode_sum(u, prod)
    if u.is_torus:
        s = s * u.basis.volume
    return s[()] if np.ndim(s) == 0 else s


def multiplier(u: SpectralField, s: float) -> np.ndarray:
    """Symbol ``|m|^s`` (torus) or ``k_n^s`` (shell) broadcastable to coeffs."""
    return u.basis.mabs**s if u.is_torus else u.basis.k**s


def apply_multiplier(u: SpectralField, s: float) -> SpectralField:
    return u.with_coeffs(u.coeffs * multiplier(u, s))


# ---------------------------------------------------------------------------
# collocation transforms


def grid_size(basis: TorusBasis, degree: int, integral: bool = False) -> int:
    """Grid points per axis making degree-``degree`` products alias free.

    With ``integral`` only the mean (zero mode) of the product must be exact.
    """
    K = basis.K
    need = degree * K + 1 if integral else (degree + 1) * K + 1
    need = max(need, 2 * K + 1)
    M = sfft.next_fast_len(need)
    if M**basis.d > GRID_BUDGET:
        raise ResourceError(f"grid {M}^{basis.d} exceeds budget {GRID_BUDGET}")
    return M


@functools.lru_cache(maxsize=64)
def _scatter_index(d: int, N: int, M: int) -> tuple:
    b = torus_basis(d, N)
    idx = tuple(np.mod(b.modes[:, ax], M) for ax in range(d))
    return idx


def to_grid(basis: TorusBasis, coeffs: np.ndarray, M: int) -> np.ndarray:
    """Evaluate ``sum_m c_m exp(i m.x)`` on the uniform ``M^d`` grid (real part)."""
    if M < 2 * basis.K + 1:
        raise ValueError("grid too coarse for the retained modes")
    if M**basis.d > GRID_BUDGET:
        raise ResourceError(f"grid {M}^{basis.d} exceeds budget {GRID_BUDGET}")
    lead = coeffs.shape[:-1]
    full = np.zeros(lead + (M,) * basis.d, dtype=np.complex128)
    idx = _scatter_index(basis.d, basis.N, M)
    full[(Ellipsis,) + idx] = coeffs
    axes = tuple(range(-basis.d, 0))
    return sfft.ifftn(full, axes=axes, norm="forward").real


def from_grid(basis: TorusBasis, values: np.ndarray, M: int) -> np.ndarray:
    """Fourier coefficients of grid values restricted to the retained modes."""
    axes = tuple(range(-basis.d, 0))
    spec = sfft.fftn(values, axes=axes, norm="forward")
    idx = _scatter_index(basis.d, basis.N, M)
    return spec[(Ellipsis,) + idx]


def grid_mean(basis: TorusBasis, values: np.ndarray) -> np.ndarray:
    """Mean over the collocation grid (equals the zero Fourier mode)."""
    return np.mean(values, axis=tuple(range(-basis.d, 0)))


def derivative_coeffs(u: SpectralField, axis: int) -> np.ndarray:
    return 1j * u.basis.modes[:, axis].astype(float) * u.coeffs


def gradient_on_grid(u: SpectralField, M: int) -> np.ndarray:
    """Grid values of grad u: scalar -> (..., d, grid); vector -> (..., d_comp, d, grid)."""
    d = u.basis.d
    parts = [derivative_coeffs(u, ax) for ax in range(d)]
    stacked = np.stack(parts, axis=-2)
    return to_grid(u.basis, stacked, M)


def laplacian_coeffs(u: SpectralField) -> np.ndarray:
    return -u.basis.msq * u.coeffs


def pointwise(fields: Sequence[SpectralField], fn: Callable[..., np.ndarray], degree: int,
              kind: str | None = None) -> SpectralField:
    """De-aliased evaluation of a polynomial nonlinearity of total degree ``degree``.

    ``fn`` receives the grid values of each field (vector fields with the
    component axis before the grid axes) and returns grid values of the
    result. The output is projected back onto the retained modes, which drops
    the zero mode.
    """
    u0 = fields[0]
    for f in fields[1:]:
        _check_compatible_torus(u0, f)
    M = grid_size(u0.basis, degree)
    vals = [to_grid(f.basis, f.coeffs, M) for f in fields]
    out = fn(*vals)
    coeffs = from_grid(u0.basis, out, M)
    return SpectralField(kind or u0.kind, u0.basis, coeffs)


def _check_compatible_torus(u: SpectralField, v: SpectralField) -> None:
    if not (u.is_torus and v.is_torus):
        raise ShapeError("pseudo-spectral products need torus fields")
    if (u.basis.d, u.basis.N) != (v.basis.d, v.basis.N):
        raise ShapeError("fields live on different truncations")


def quadratic_product(u: SpectralField, v: SpectralField,
                      op: Callable[[np.ndarray, np.ndarray], np.ndarray] = np.multiply) -> SpectralField:
    """Exact projected pointwise product of two scalar fields."""
    return pointwise([u, v], op, degree=2)


def product_mean(fields: Sequence[SpectralField], fn, degree: int) -> np.ndarray:
    """Exact spatial mean of a polynomial expression of the fields."""
    b = fields[0].basis
    M = grid_size(b, degree, integral=True)
    vals = [to_grid(f.basis, f.coeffs, M) for f in fields]
    return grid_mean(b, fn(*vals))


def sup_norm(u: SpectralField, oversample: int = 4) -> np.ndarray:
    """Max of |u| over an oversampled collocation grid."""
    M = sfft.next_fast_len(oversample * (2 * u.basis.K + 1))
    vals = to_grid(u.basis, u.coeffs, M)
    if u.kind == "vector":
        vals = np.sqrt(np.sum(vals**2, axis=-u.basis.d - 1))
    return np.max(np.abs(vals), axis=tuple(range(-u.basis.d, 0)))


# ---------------------------------------------------------------------------
# norms


@dataclass(frozen=True)
class NormSpec:
    """Norm selector.

    ``family='H'`` gives the multiplier norm with exponent ``s``.
    ``family='W'`` gives the homogeneous Lebesgue norm of derivatives,
    ``(int |D u|^p)^(1/p)``, where ``D`` is the full ``k``-th derivative tensor
    (``operator='tensor'``) or the Laplacian (``operator='laplacian'``, k=2).
    The pointwise magnitude is Euclidean/Frobenius over all components.
    """

    family: str = "H"
    s: float = 0.0
    k: int = 0
    p: int = 2
    operator: str = "tensor"
    oversample: int = 1

    def __post_init__(self):
        if self.family not in ("H", "W"):
            raise ValueError(f"unknown norm family {self.family!r}")
        if self.family == "H" and self.s < 0:
            raise ValueError("Sobolev exponent must be nonnegative")
        if self.family == "W":
            if self.p < 2 or self.p % 2:
                raise ValueError(f"Lebesgue exponent must be an even integer >= 2, got {self.p}")
            if self.k < 0:
                raise ValueError("derivative order must be nonnegative")
            if self.operator not in ("tensor", "laplacian"):
                raise ValueError(f"unknown derivative operator {self.operator!r}")
            if self.operator == "laplacian" and self.k != 2:
                raise ValueError("laplacian operator means k = 2")
            if self.oversample < 1:
                raise ValueError("oversample must be >= 1")


def H(s: float) -> NormSpec:
    return NormSpec("H", s=float(s))


def W(k: int, p: int, operator: str = "tensor") -> NormSpec:
    return NormSpec("W", k=int(k), p=int(p), operator=operator)


def hs_norm_sq(u: SpectralField, s: float):
    w = multiplier(u, 2.0 * s)
    a = np.abs(u.coeffs) ** 2 * w
    out = _mode_sum(u, a)
    if u.is_torus:
        out = out * u.basis.volume
    return out


def derivative_tensor_coeffs(u: SpectralField, k: int, operator: str = "tensor") -> np.ndarray:
    """Stack of Fourier coefficients for every component of ``D^k u``.

    Result has shape ``(..., ncomp, nmodes)`` where ``ncomp`` runs over the
    field components times all ordered derivative multi-indices.
    """
    c = u.coeffs if u.kind == "vector" else u.coeffs[..., None, :]
    if operator == "laplacian":
        return -u.basis.msq * c
    m = u.basis.modes.astype(float)
    parts = []
    for combo in itertools.product(range(u.basis.d), repeat=k):
        sym = np.ones(u.basis.nmodes, dtype=complex)
        for ax in combo:
            sym = sym * (1j * m[:, ax])
        parts.append(sym * c)
    return np.concatenate(parts, axis=-2) if parts else c


def w_norm_power(u: SpectralField, k: int, p: int, operator: str = "tensor",
                 oversample: int = 1) -> np.ndarray:
    """``int |D^k u|^p dx`` computed exactly by collocation (p even)."""
    if not u.is_torus:
        raise UnsupportedNormError("Lebesgue-derivative norms are defined for torus fields only")
    coeffs = derivative_tensor_coeffs(u, k, operator)
    M = grid_size(u.basis, p, integral=True)
    if oversample > 1:
        M = sfft.next_fast_len(max(M, oversample * (2 * u.basis.K + 1)))
    vals = to_grid(u.basis, coeffs, M)
    mag2 = np.sum(vals**2, axis=-u.basis.d - 1)
    return grid_mean(u.basis, mag2 ** (p // 2)) * u.basis.volume


def norm(u: SpectralField, spec: NormSpec = NormSpec()):
    if spec.family == "H":
        out = np.sqrt(hs_norm_sq(u, spec.s))
    else:
        out = w_norm_power(u, spec.k, spec.p, spec.operator, spec.oversample) ** (1.0 / spec.p)
    return out[()] if np.ndim(out) == 0 else out


def l2_sq(u: SpectralField):
    out = hs_norm_sq(u, 0.0)
    return out[()] if np.ndim(out) == 0 else out
