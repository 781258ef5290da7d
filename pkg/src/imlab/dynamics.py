"""Time integration of the Galerkin flow and of the damped, forced SDE

    du = (-B(u, u) - alpha A(u)) dt + sqrt(alpha) dzeta,

together with the noise model and Ito balance residuals.

Noise acts along real orthonormal directions ``e_k`` of the state space.
On the torus each retained lattice point ``m`` owns one direction: the cosine
mode for the lexicographic representative of ``{m, -m}`` and the sine mode
for its mirror, both with amplitude ``a_m``. A shell ``n`` owns two
directions (real and imaginary unit) with amplitude ``a_n / sqrt(2)`` each.
In both cases ``A0 = sum_k sigma_k^2 = sum_m a_m^2``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator

import numpy as np

from . import dissipation as dis
from . import models as mdl
from . import spectral as sp
from .spectral import SpectralField


class StiffnessError(RuntimeError):
    """Adaptive step size fell below the floor."""


class DivergenceError(RuntimeError):
    """State became non-finite."""


class DataError(ValueError):
    """A trajectory lacks the recorded quantities an analysis needs."""


class DissipationHalvingWarning(RuntimeWarning):
    pass


DT_FLOOR = 1e-12

# ---------------------------------------------------------------------------
# noise

# Generic direction used to build divergence-free vector amplitudes; irrational
# ratios keep it off every lattice line.
_GENERIC_DIRECTION = np.array([1.0, math.sqrt(2.0), math.sqrt(3.0)])


@dataclass(frozen=True)
class NoiseSpec:
    """Amplitude law ``a_m``.

    ``exponential``: A exp(-gamma |m|);  ``algebraic``: A |m|^-r;
    ``table``: explicit values in storage order (scalars, or 3-vectors for
    vector states). Shells use the shell number ``n`` in place of ``|m|``.
    """

    family: str = "exponential"
    amplitude: float = 1.0
    gamma: float = 0.7
    r: float = 2.0
    table: tuple | None = None

    def __post_init__(self):
        if self.family not in ("exponential", "algebraic", "table"):
            raise ValueError(f"unknown noise family {self.family!r}")
        if self.family == "table" and self.table is None:
            raise ValueError("table noise needs explicit amplitudes")
        if self.amplitude < 0:
            raise ValueError("noise amplitude must be nonnegative")

    def scaled(self, lam: float) -> "NoiseSpec":
        if self.family == "table":
            return replace(self, table=tuple(np.asarray(self.table, dtype=float) * lam))
        return replace(self, amplitude=self.amplitude * lam)


@dataclass(frozen=True, eq=False)
class BoundNoise:
    """Noise bound to a concrete Galerkin space."""

    kind: str
    basis: object
    sigma: np.ndarray
    direction: np.ndarray | None  # unit amplitude vectors for vector states
    mode_of_dir: np.ndarray  # storage index of the mode each direction lives on

    @property
    def A0(self) -> float:
        return float(np.sum(self.sigma**2))

    @property
    def ndir(self) -> int:
        return self.sigma.size

    def _scale(self) -> float:
        return math.sqrt(2.0) * math.sqrt(self.basis.volume)

    def coords(self, u: SpectralField) -> np.ndarray:
        """Coordinates ``<u, e_k>`` with shape ``(..., ndir)``."""
        if self.kind == "shell":
            return np.concatenate([u.coeffs.real, u.coeffs.imag], axis=-1)
        c = u.coeffs
        if self.kind == "vector":
            c = np.sum(self.direction * c, axis=-2)
        b = self.basis
        rep = np.where(b.positive, np.arange(b.nmodes), b.neg)
        z = c[..., rep]
        return self._scale() * np.where(b.positive, z.real, -z.imag)

    def synth(self, y: np.ndarray) -> SpectralField:
        """Field with coordinates ``y`` along the noise directions."""
        if self.kind == "shell":
            n = self.basis.n
            return SpectralField("shell", self.basis, y[..., :n] + 1j * y[..., n:])
        b = self.basis
        z = (y - 1j * y[..., b.neg]) / self._scale()
        z = np.where(b.positive, z, np.conj(z[..., b.neg]))
        if self.kind == "vector":
            z = self.direction * z[..., None, :]
        return SpectralField(self.kind, b, z)

    def increment(self, dt: float, rng: np.random.Generator, batch: tuple = ()) -> SpectralField:
        xi = rng.standard_normal(tuple(batch) + (self.ndir,))
        return self.synth(self.sigma * math.sqrt(dt) * xi)

    def rate_of_dir(self, rate_per_mode: np.ndarray) -> np.ndarray:
        """Map a per-mode (or per-shell) rate onto directions."""
        return rate_per_mode[..., self.mode_of_dir]


def _amplitudes(noise: NoiseSpec, radius: np.ndarray) -> np.ndarray:
    if noise.family == "exponential":
        return noise.amplitude * np.exp(-noise.gamma * radius)
    if noise.family == "algebraic":
        return noise.amplitude * radius ** (-noise.r)
    return None


def bind_noise(noise: NoiseSpec, kind: str, basis) -> BoundNoise:
    if kind == "shell":
        n = np.arange(1, basis.n + 1, dtype=float)
        a = _amplitudes(noise, n)
        if a is None:
            a = np.asarray(noise.table, dtype=float)
            if a.shape != (basis.n,):
                raise ValueError(f"shell noise table needs {basis.n} entries")
        sigma = np.concatenate([a, a]) / math.sqrt(2.0)
        mode = np.concatenate([np.arange(basis.n), np.arange(basis.n)])
        return BoundNoise(kind, basis, sigma, None, mode)

    a = _amplitudes(noise, basis.mabs)
    direction = None
    if kind == "vector":
        m = basis.modes.astype(float)
        if a is None:
            tab = np.asarray(noise.table, dtype=float)
            vec = tab if tab.ndim == 2 else tab[:, None] * _GENERIC_DIRECTION
        else:
            vec = a[:, None] * _GENERIC_DIRECTION
        vec = vec - m * np.sum(m * vec, axis=1, keepdims=True) / basis.msq[:, None]
        mag = np.linalg.norm(vec, axis=1)
        if a is None:
            a = mag
        direction = np.where(mag[:, None] > 0, vec / np.where(mag > 0, mag, 1.0)[:, None], 0.0).T
        direction = direction.copy()
        direction[:, ~basis.positive] = direction[:, basis.neg[~basis.positive]]
    elif a is None:
        a = np.asarray(noise.table, dtype=float)
        if a.shape != (basis.nmodes,):
            raise ValueError(f"noise table needs {basis.nmodes} entries")
    a = np.asarray(a, dtype=float)
    if kind == "scalar" or kind == "vector":
        a = 0.5 * (a + a[basis.neg])
    return BoundNoise(kind, basis, a.copy(), direction, np.arange(basis.nmodes))


def noise_increment(noise: BoundNoise, dt: float, rng: np.random.Generator, batch: tuple = ()) -> SpectralField:
    if not dt > 0:
        raise ValueError("noise increment needs dt > 0")
    return noise.increment(dt, rng, batch)


# ---------------------------------------------------------------------------
# deterministic integration


@dataclass(frozen=True)
class IntegratorConfig:
    dt_max: float = 0.01
    c_step: float = 1.0
    rtol: float = 1e-10
    atol: float = 1e-13
    seed: int = 0
    paths: int = 1
    norm_order: float | None = None  # H^m norm in the step cap; None -> 4 torus, 1 shells
    max_halvings: int = 20

    def __post_init__(self):
        if not self.dt_max > 0:
            raise ValueError("dt_max must be positive")
        if not 0 < self.c_step <= 1:
            raise ValueError("c_step must lie in (0, 1]")
        if self.paths < 1:
            raise ValueError("need at least one path")

    def cap_order(self, kind: str) -> float:
        if self.norm_order is not None:
            return self.norm_order
        return 1.0 if kind == "shell" else 4.0


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def step_cap(model, u: SpectralField, cfg: IntegratorConfig) -> float:
    nrm = np.max(np.atleast_1d(sp.norm(u, sp.H(cfg.cap_order(model.kind)))))
    return cfg.c_step / (1.0 + float(nrm))


@dataclass
class _StepState:
    h: float | None = None
    steps: int = 0
    rejects: int = 0


def advance(model, u: SpectralField, t0: float, t1: float, cfg: IntegratorConfig,
            state: _StepState | None = None) -> SpectralField:
    """Integrate ``du/dt = -B(u,u)`` from ``t0`` to ``t1`` (either direction).

    Batched states share one adaptive step sequence.
    """
    if state is None:
        state = _StepState()
    span = t1 - t0
    if span == 0:
        return u
    sgn = 1.0 if span > 0 else -1.0
    remaining = abs(span)
    c = u.coeffs
    f = lambda x: sgn * mdl.drift(model, u.with_coeffs(x)).coeffs
    k1 = f(c)
    h = state.h
    while remaining > 0:
        cap = step_cap(model, u.with_coeffs(c), cfg)
        if h is None:
            h = cap
        h = min(h, cap, remaining)
        if remaining - h < 1e-14 * max(abs(t0), abs(t1), 1.0):
            h = remaining
        if h < DT_FLOOR and h < remaining:
            raise StiffnessError(f"step size {h:.3e} below floor at t={t1 - sgn * remaining:.6g}")
        ks = [k1]
        for i in range(1, 7):
            inc = sum(a * kj for a, kj in zip(_A[i], ks) if a != 0.0)
            ks.append(f(c + h * inc))
        new = c + h * sum(b * kj for b, kj in zip(_B5, ks) if b != 0.0)
        err = h * sum(e * kj for e, kj in zip(_E, ks) if e != 0.0)
        scale = cfg.atol + cfg.rtol * np.maximum(np.abs(c), np.abs(new))
        en = np.sqrt(np.mean(np.abs(err / scale) ** 2, axis=-1))
        en = float(np.max(en)) if en.size else 0.0
        if not np.all(np.isfinite(new)):
            if h <= DT_FLOOR * 10:
                raise DivergenceError(f"non-finite state near t={t1 - sgn * remaining:.6g}")
            h *= 0.25
            state.rejects += 1
            continue
        if en <= 1.0:
            c = new
            k1 = ks[6]
            remaining -= h
            state.steps += 1
            fac = 5.0 if en == 0 else min(5.0, 0.9 * en ** (-0.2))
            state.h = h * fac
            h = state.h
        else:
            state.rejects += 1
            h = h * max(0.2, 0.9 * en ** (-0.2))
    out = u.with_coeffs(c)
    if not out.is_finite():
        raise DivergenceError("non-finite state")
    return out


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    observables: dict
    final: SpectralField
    stream: tuple | None = None
    steps: int = 0
    balance: dict | None = None
    snapshots: list = field(default_factory=list)

    def __post_init__(self):
        t = np.asarray(self.times)
        if t.size > 1 and not (np.all(np.diff(t) > 0) or np.all(np.diff(t) < 0)):
            raise ValueError("record times must be strictly monotone")


def default_observables(model) -> dict:
    obs = {"l2sq": sp.l2_sq}
    has_h = isinstance(model, (mdl.GSQG, mdl.Euler2DVorticity)) or (
        isinstance(model, (mdl.Sabra, mdl.GOY)) and model.a + model.b != 0)
    if has_h:
        obs["H"] = lambda u, model=model: mdl.secondary_hamiltonian(model, u)
    return obs


def _eval_obs(obs: dict, u: SpectralField) -> dict:
    return {k: np.asarray(fn(u), dtype=float) for k, fn in obs.items()}


def deterministic_flow(model, u0: SpectralField, times, cfg: IntegratorConfig,
                       observables: dict | None = None, keep_states: bool = False) -> TrajectoryRecord:
    """Inviscid Galerkin flow sampled at ``times`` (monotone, starting at t0).

    Negative or decreasing times integrate backwards.
    """
    times = np.asarray(times, dtype=float)
    obs = default_observables(model) if observables is None else observables
    st = _StepState()
    u = u0
    rec = {k: [v] for k, v in _eval_obs(obs, u).items()}
    states = [u] if keep_states else []
    for t_prev, t_next in zip(times[:-1], times[1:]):
        u = advance(model, u, t_prev, t_next, cfg, st)
        for k, v in _eval_obs(obs, u).items():
            rec[k].append(v)
        if keep_states:
            states.append(u)
    return TrajectoryRecord(times=times, observables={k: np.array(v) for k, v in rec.items()},
                            final=u, steps=st.steps, snapshots=states)


def local_growth_ratio(model, u0: SpectralField, c: float, cfg: IntegratorConfig,
                       m: float | None = None, n_check: int = 20) -> float:
    """``sup_{t<=T} |phi_t u0|_{H^m} / |u0|_{H^m}`` with ``T = c / |u0|_{H^m}``."""
    m = cfg.cap_order(model.kind) if m is None else m
    n0 = float(sp.norm(u0, sp.H(m)))
    if n0 == 0:
        return 0.0
    T = c / n0
    obs = {"hm": lambda u: sp.norm(u, sp.H(m))}
    rec = deterministic_flow(model, u0, np.linspace(0.0, T, n_check + 1), cfg, obs)
    return float(np.max(rec.observables["hm"]) / n0)


@dataclass
class ConvergenceTable:
    N_list: list
    N_ref: int
    T: float
    errors: list
    norm_s: float

    def strictly_decreasing(self) -> bool:
        e = self.errors
        return all(b < a for a, b in zip(e[:-1], e[1:]))


def galerkin_convergence_test(model, u0_ref: SpectralField, N_list, T: float, cfg: IntegratorConfig,
                              n_checkpoints: int = 10, s: float = 3.0) -> ConvergenceTable:
    """Sup-in-time ``H^s`` distance between truncated flows and the reference flow.

    ``u0_ref`` lives at the reference truncation; each ``N`` starts from its projection.
    """
    N_list = list(N_list)
    if sorted(N_list) != N_list:
        raise ValueError("N_list must be increasing")
    N_ref = u0_ref.basis.N
    if N_list and N_list[-1] > N_ref:
        raise ValueError("reference truncation must dominate N_list")
    times = np.linspace(0.0, T, n_checkpoints + 1)
    ref = deterministic_flow(model, u0_ref, times, cfg, observables={}, keep_states=True)
    errors = []
    for N in N_list:
        run = deterministic_flow(model, sp.galerkin_project(u0_ref, N), times, cfg,
                                 observables={}, keep_states=True)
        err = max(float(sp.norm(r - sp.embed(v, N_ref), sp.H(s)))
                  for r, v in zip(ref.snapshots, run.snapshots))
        errors.append(err)
    return ConvergenceTable(N_list, N_ref, T, errors, s)


# ---------------------------------------------------------------------------
# stochastic integration


def path_rng(seed: int, path: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for one Monte Carlo path."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(path)))))


class _PathNoise:
    """Per-path Gaussian streams drawn in chunks to amortize generator calls."""

    def __init__(self, seed: int, paths: int, ndir: int, stream: int = 0, chunk: int = 256):
        self.gens = [path_rng(seed, p, stream) for p in range(paths)]
        self.ndir = ndir
        self.chunk = chunk
        self._buf = None
        self._pos = chunk

    def next(self) -> np.ndarray:
        if self._pos >= self.chunk:
            self._buf = np.stack([g.standard_normal((self.chunk, self.ndir)) for g in self.gens], axis=1)
            self._pos = 0
        out = self._buf[self._pos]
        self._pos += 1
        return out


@dataclass
class StepInfo:
    t: float
    h: float
    l2sq: np.ndarray
    G: np.ndarray
    Q: np.ndarray
    dM: np.ndarray
    halvings: int


def _dissipative_substep(diss: dis.DissipationSpec, alpha: float, u: SpectralField, h: float,
                         max_halvings: int) -> tuple[SpectralField, int]:
    """Explicit update for the p-Laplacian parts, halving until nonexpansive."""
    th = np.asarray(dis.theta(diss, u))
    th = th.reshape(th.shape + (1,) * u.core_ndim)
    e0 = sp.l2_sq(u)
    p0 = dis.nonlinear_potential(diss, u)
    for halv in range(max_halvings + 1):
        n = 2**halv
        v = u
        ok = True
        e_prev, p_prev = e0, p0
        for _ in range(n):
            v = v.with_coeffs(v.coeffs - alpha * (h / n) * th * dis.nonlinear_part(diss, v).coeffs)
            e1, p1 = sp.l2_sq(v), dis.nonlinear_potential(diss, v)
            if not (np.all(e1 <= e_prev * (1 + 1e-14) + 1e-300) and np.all(p1 <= p_prev * (1 + 1e-14) + 1e-300)):
                ok = False
                break
            e_prev, p_prev = e1, p1
        if ok:
            return v, halv
    warnings.warn(f"dissipation substep halved {max_halvings} times without becoming contractive",
                  DissipationHalvingWarning, stacklevel=3)
    return v, max_halvings


def path_iterator(model, diss: dis.DissipationSpec, noise: BoundNoise, alpha: float,
                  u0: SpectralField, t0: float, t1: float, cfg: IntegratorConfig,
                  stream: int = 0) -> Iterator[tuple[SpectralField, StepInfo]]:
    """Yield ``(state after step, step info)`` for the split scheme.

    Each step: inviscid substep, p-Laplacian substep (if enabled), then the
    exact Ornstein-Uhlenbeck update of the linear damping plus noise with the
    prefactor frozen at the substep start.
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    paths = u0.batch_shape[0] if u0.batch_shape else 1
    single = not u0.batch_shape
    u = u0.with_coeffs(u0.coeffs[None]) if single else u0
    gen = _PathNoise(cfg.seed, paths, noise.ndir, stream)
    st = _StepState()
    n_steps = max(1, int(math.ceil((t1 - t0) / cfg.dt_max - 1e-9)))
    h = (t1 - t0) / n_steps
    nonlin = alpha > 0 and (diss.flags[1] or diss.flags[2])
    sigma = noise.sigma
    for n in range(n_steps):
        t = t0 + n * h
        x0 = noise.coords(u)
        l2 = sp.l2_sq(u)
        G = dis.G_potential(diss, u) if alpha > 0 else np.zeros(paths)
        Q = np.sum(sigma**2 * x0**2, axis=-1)
        xi = gen.next()

        u = advance(model, u, 0.0, h, cfg, st)
        halv = 0
        if nonlin:
            u, halv = _dissipative_substep(diss, alpha, u, h, cfg.max_halvings)
        if alpha > 0:
            th = np.asarray(dis.theta(diss, u)).reshape(paths, 1)
            lam_mode = alpha * th * dis.linear_rate(diss, u)  # (paths, nmodes)
            decay = np.exp(-lam_mode * h)
            lam_dir = noise.rate_of_dir(lam_mode)
            with np.errstate(divide="ignore", invalid="ignore"):
                var = np.where(lam_dir > 0, -np.expm1(-2.0 * lam_dir * h) / (2.0 * lam_dir), h)
            s = math.sqrt(alpha) * sigma * np.sqrt(var)
            xs = noise.coords(u)
            edir = noise.rate_of_dir(decay)
            dM = 2.0 * np.sum(edir * s * xs * xi, axis=-1) + np.sum(s**2 * (xi**2 - 1.0), axis=-1)
            dec = decay[:, None, :] if u.kind == "vector" else decay
            u = u.with_coeffs(u.coeffs * dec) + noise.synth(s * xi)
            if not u.is_finite():
                raise DivergenceError(f"non-finite state at t={t + h:.6g}")
        else:
            dM = np.zeros(paths)
        info = StepInfo(t=t, h=h, l2sq=np.atleast_1d(l2), G=np.atleast_1d(G), Q=np.atleast_1d(Q),
                        dM=dM, halvings=halv)
        yield (u[0] if single else u), info


def stochastic_path(model, diss: dis.DissipationSpec, noise: BoundNoise, alpha: float,
                    u0: SpectralField, t_span: tuple, cfg: IntegratorConfig,
                    record_every: int = 1, observables: dict | None = None,
                    record_balance: bool = True, stream: int = 0) -> TrajectoryRecord:
    """Run the split scheme on a batch of paths (leading axis of ``u0``)."""
    t0, t1 = t_span
    obs = default_observables(model) if observables is None else observables
    u = u0
    times = [t0]
    rec = {k: [v] for k, v in _eval_obs(obs, u).items()}
    bal = {k: [] for k in ("t", "h", "l2sq", "G", "Q", "dM")} if record_balance else None
    steps = 0
    for steps, (u, info) in enumerate(path_iterator(model, diss, noise, alpha, u0, t0, t1, cfg, stream), 1):
        if bal is not None:
            for k in bal:
                bal[k].append(getattr(info, k))
        if steps % record_every == 0:
            times.append(info.t + info.h)
            for k, v in _eval_obs(obs, u).items():
                rec[k].append(v)
    balance = None
    if bal is not None:
        balance = {k: np.array(v) for k, v in bal.items()}
        balance["l2sq_final"] = np.atleast_1d(sp.l2_sq(u))
        balance["alpha"] = alpha
        balance["A0"] = noise.A0
    return TrajectoryRecord(times=np.array(times), observables={k: np.array(v) for k, v in rec.items()},
                            final=u, stream=(cfg.seed, stream), steps=steps, balance=balance)


# ---------------------------------------------------------------------------
# Ito balances


@dataclass(frozen=True)
class ScalarFunction:
    """Smooth ``F`` with first and second derivatives."""

    f: Callable
    df: Callable
    d2f: Callable
    name: str = "F"


IDENTITY = ScalarFunction(lambda x: x, lambda x: np.ones_like(x), lambda x: np.zeros_like(x), "x")
SQUARE = ScalarFunction(lambda x: x**2, lambda x: 2 * x, lambda x: 2 * np.ones_like(x), "x^2")


def constant(c: float = 1.0) -> ScalarFunction:
    return ScalarFunction(lambda x: c * np.ones_like(x), lambda x: np.zeros_like(x),
                          lambda x: np.zeros_like(x), f"const({c})")


@dataclass
class BalanceResidual:
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    raw_mean: np.ndarray
    raw_stderr: np.ndarray
    scale: np.ndarray
    paths: int


def ito_balance_residual(F: ScalarFunction, traj: TrajectoryRecord) -> BalanceResidual:
    """Residual of ``E F(|u_t|^2) - F(|u_0|^2) - E int (F' (alpha A0 - 2 alpha G) + 2 alpha F'' Q)``.

    ``mean`` subtracts the recorded martingale increments as a control
    variate; ``raw_*`` is the plain Monte Carlo estimate. ``scale`` is the
    largest magnitude among the balance terms, per time.
    """
    b = traj.balance
    if not b or any(k not in b for k in ("l2sq", "G", "Q", "dM", "h")):
        raise DataError("trajectory has no recorded balance data; run with record_balance=True")
    alpha, A0 = b["alpha"], b["A0"]
    x = b["l2sq"]  # (steps, paths), left points
    xs = np.concatenate([x, b["l2sq_final"][None]], axis=0)
    h = b["h"][:, None]
    drift = (F.df(x) * (alpha * A0 - 2.0 * alpha * b["G"]) + 2.0 * alpha * F.d2f(x) * b["Q"]) * h
    mart = F.df(x) * b["dM"]
    change = F.f(xs[1:]) - F.f(xs[0])
    cum_drift = np.cumsum(drift, axis=0)
    raw = change - cum_drift
    cv = raw - np.cumsum(mart, axis=0)
    P = x.shape[1]
    se = lambda a: np.std(a, axis=1, ddof=1) / math.sqrt(P) if P > 1 else np.zeros(a.shape[0])
    terms = np.stack([np.abs(np.mean(change, axis=1)),
                      np.abs(np.mean(np.cumsum(F.df(x) * alpha * A0 * h, axis=0), axis=1)),
                      np.abs(np.mean(np.cumsum(F.df(x) * 2 * alpha * b["G"] * h, axis=0), axis=1)),
                      np.abs(np.mean(np.cumsum(2 * alpha * F.d2f(x) * b["Q"] * h, axis=0), axis=1))])
    times = b["t"] + b["h"]
    return BalanceResidual(times=times, mean=np.mean(cv, axis=1), stderr=se(cv),
                           raw_mean=np.mean(raw, axis=1), raw_stderr=se(raw),
                           scale=np.max(terms, axis=0), paths=P)
