"""Statistical ensembles of initial data with controlled orbit growth.

``B(i, j)`` is the closed ``H^r`` ball of radius ``xi(i + j)``. A state lies
in ``Sigma(i, j)`` when its inviscid orbit sits in ``B(i, j)`` at every
multiple ``k T_j`` of the local time ``T_j = c_T / xi(i + j)`` with
``0 <= k T_j <= e^j``. ``Sigma(i)`` is approximated by intersecting over
``j = 1..j_max``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from . import dissipation as dis
from . import dynamics as dyn
from . import models as mdl
from . import spectral as sp
from .measure import FAIL, INCONCLUSIVE, PASS, EmpiricalMeasure, Verdict
from .spectral import SpectralField

SKIPPED = "SKIPPED"


@dataclass(frozen=True)
class EnsembleSpec:
    i: int
    r: float
    diss: dis.DissipationSpec = field(default_factory=dis.DissipationSpec)
    j_max: int = 3
    c_T: float = 0.5
    both_directions: bool = True

    def __post_init__(self):
        if self.i < 1 or self.j_max < 1:
            raise ValueError("i and j_max must be positive integers")
        if self.r > self.diss.s_star:
            raise ValueError(f"r={self.r} exceeds s_star={self.diss.s_star}")
        if not self.c_T > 0:
            raise ValueError("c_T must be positive")

    def radius(self, j: int) -> float:
        return float(dis.xi(self.diss, self.i + j))

    def local_time(self, j: int) -> float:
        return self.c_T / self.radius(j)

    def check_times(self, j: int) -> np.ndarray:
        T = self.local_time(j)
        kmax = int(math.floor(math.exp(j) / T + 1e-12))
        return T * np.arange(kmax + 1)


def ball_membership(u: SpectralField, spec: EnsembleSpec, j: int | None = None):
    """Closed-ball test ``|u|_{H^r} <= xi(i + j)``; batch aware."""
    j = spec.j_max if j is None else j
    out = np.asarray(sp.norm(u, sp.H(spec.r))) <= spec.radius(j)
    return bool(out) if out.ndim == 0 else out


@dataclass
class MembershipResult:
    member: np.ndarray  # bool per state
    first_violation: list  # per state: None or (j, k, direction)
    max_ratio: np.ndarray  # max over checks of |u|_{H^r} / radius
    diverged: np.ndarray

    def __len__(self):
        return self.member.size


def _orbit_norms(model, u0: SpectralField, times: np.ndarray, r: float, cfg: dyn.IntegratorConfig):
    """``|phi_t u0|_{H^r}`` at increasing nonnegative ``times`` (signed by caller)."""
    obs = {"hr": lambda u: sp.norm(u, sp.H(r))}
    rec = dyn.deterministic_flow(model, u0, times, cfg, obs)
    hr = rec.observables["hr"]
    return hr if u0.batch_shape else hr[:, None]


def sigma_membership(u0: SpectralField, spec: EnsembleSpec, model, cfg: dyn.IntegratorConfig | None = None,
                     j_list=None) -> MembershipResult:
    """Orbit test over ``j in j_list`` (default ``1..j_max``) with one integration per direction."""
    cfg = cfg or dyn.IntegratorConfig()
    j_list = list(range(1, spec.j_max + 1)) if j_list is None else list(j_list)
    batched = bool(u0.batch_shape)
    u = u0 if batched else u0.with_coeffs(u0.coeffs[None])
    n = u.batch_shape[0]
    sched = {j: spec.check_times(j) for j in j_list}
    grid = np.unique(np.concatenate(list(sched.values())))
    grid = grid[np.concatenate([[True], np.diff(grid) > 1e-12])]
    directions = (1.0, -1.0) if spec.both_directions else (1.0,)
    member = np.ones(n, bool)
    first = [None] * n
    max_ratio = np.zeros(n)
    diverged = np.zeros(n, bool)
    for sgn in directions:
        try:
            norms = _orbit_norms(model, u, sgn * grid, spec.r, cfg)  # (len(grid), n)
        except (dyn.DivergenceError, dyn.StiffnessError):
            norms = np.full((grid.size, n), np.nan)
            for b in range(n):
                try:
                    norms[:, b] = _orbit_norms(model, u[b], sgn * grid, spec.r, cfg)[:, 0]
                except (dyn.DivergenceError, dyn.StiffnessError):
                    diverged[b] = True
        for j in j_list:
            idx = np.clip(np.searchsorted(grid, sched[j] - 1e-12), 0, grid.size - 1)
            ratio = norms[idx] / spec.radius(j)
            bad = ~(ratio <= 1.0)
            max_ratio = np.fmax(max_ratio, np.nanmax(np.where(np.isnan(ratio), np.inf, ratio), axis=0))
            for b in np.nonzero(bad.any(axis=0))[0]:
                if first[b] is None:
                    k = int(np.argmax(bad[:, b]))
                    first[b] = (j, k, int(sgn))
                member[b] = False
    member &= ~diverged
    if not batched:
        return MembershipResult(member[:1], first[:1], max_ratio[:1], diverged[:1])
    return MembershipResult(member, first, max_ratio, diverged)


def growth_bound(spec: EnsembleSpec, t) -> np.ndarray:
    """``2 xi(1 + i + log(1 + |t|))``."""
    return 2.0 * np.asarray(dis.xi(spec.diss, 1.0 + spec.i + np.log1p(np.abs(np.asarray(t, float)))))


def slow_growth_check(u0: SpectralField, spec: EnsembleSpec, model, t_grid,
                      cfg: dyn.IntegratorConfig | None = None,
                      membership: MembershipResult | None = None) -> Verdict:
    """Forward orbit against the logarithmic growth bound; skipped for non-members."""
    cfg = cfg or dyn.IntegratorConfig()
    ref = "orbit norms of ensemble members grow at most like xi(1 + i + log(1 + t))"
    if membership is None:
        membership = sigma_membership(u0, spec, model, cfg)
    if not bool(np.all(membership.member)):
        return Verdict("slow_growth", 1.0, math.nan, 0.0, "ratio<=1", SKIPPED, ref,
                       {"reason": "initial state is not an ensemble member"})
    t_grid = np.asarray(t_grid, float)
    try:
        norms = _orbit_norms(model, u0, t_grid, spec.r, cfg)
    except (dyn.DivergenceError, dyn.StiffnessError) as exc:
        return Verdict("slow_growth", 1.0, math.inf, 0.0, "ratio<=1", FAIL, ref, {"error": str(exc)})
    ratio = norms / growth_bound(spec, t_grid)[:, None]
    worst = float(np.max(ratio))
    return Verdict("slow_growth", 1.0, worst, 0.0, "ratio<=1", PASS if worst <= 1.0 else FAIL, ref,
                   {"t_max": float(t_grid[-1]), "states": int(norms.shape[1]),
                    "argmax_t": float(t_grid[np.argmax(np.max(ratio, axis=1))])})


def calibrate_c_T(model, N: int, cfg: dyn.IntegratorConfig | None = None, seed: int = 0,
                  n_val: int = 20, candidates=(2.0, 1.0, 0.5, 0.25, 0.125, 0.0625),
                  m: float | None = None, scales=(0.1, 1.0, 10.0)) -> float:
    """Largest candidate ``c`` with ``sup_{t <= c/|u0|} |phi_t u0|_{H^m} <= 2 |u0|_{H^m}`` on random data."""
    cfg = cfg or dyn.IntegratorConfig()
    rng = np.random.default_rng(seed)
    m = cfg.cap_order(model.kind) if m is None else m
    data = []
    for k in range(n_val):
        u = mdl.random_state(model, N, rng)
        u = u * (scales[k % len(scales)] / float(sp.norm(u, sp.H(m))))
        data.append(u)
    for c in sorted(candidates, reverse=True):
        if all(dyn.local_growth_ratio(model, u, c, cfg, m) <= 2.0 for u in data):
            return float(c)
    raise RuntimeError("no candidate local-time constant satisfied the growth bound")


@dataclass
class HarvestResult:
    i_list: list
    j_max: int
    c_T: float
    total: int
    members: dict  # i -> indices
    complement: dict  # i -> fraction or None
    membership: dict  # i -> MembershipResult

    def nonincreasing(self) -> bool:
        fr = [self.complement[i] for i in self.i_list]
        if any(f is None for f in fr):
            return False
        return all(b <= a for a, b in zip(fr[:-1], fr[1:]))


def ensemble_harvest(states, spec: EnsembleSpec, model, i_list=None,
                     cfg: dyn.IntegratorConfig | None = None) -> HarvestResult:
    """Filter reservoir snapshots by ensemble membership for each ``i``."""
    if isinstance(states, EmpiricalMeasure):
        states = states.reservoir
    states = list(states)
    i_list = [spec.i] if i_list is None else sorted(i_list)
    members, comp, mres = {}, {}, {}
    if not states:
        return HarvestResult(i_list, spec.j_max, spec.c_T, 0, {i: [] for i in i_list},
                             {i: None for i in i_list}, {})
    batch = states[0].with_coeffs(np.stack([s.coeffs for s in states]))
    for i in i_list:
        sp_i = EnsembleSpec(i=i, r=spec.r, diss=spec.diss, j_max=spec.j_max, c_T=spec.c_T,
                            both_directions=spec.both_directions)
        res = sigma_membership(batch, sp_i, model, cfg)
        idx = [int(k) for k in np.nonzero(res.member)[0]]
        members[i] = idx
        comp[i] = 1.0 - len(idx) / len(states)
        mres[i] = res
    return HarvestResult(i_list, spec.j_max, spec.c_T, len(states), members, comp, mres)


@dataclass
class PersistenceRow:
    m: float
    times: np.ndarray
    norms: np.ndarray
    envelope: np.ndarray
    C_fit: float
    passed: bool


def _xi_integral(diss: dis.DissipationSpec, t: float) -> float:
    if t == 0:
        return 0.0
    return float(quad(lambda s: float(dis.xi(diss, 1.0 + s)), 0.0, t, limit=200)[0])


def hm_growth_rate(model, u: SpectralField, m: float) -> float:
    """``d/dt log |u|_{H^m}`` along the inviscid flow."""
    nrm2 = float(sp.hs_norm_sq(u, m))
    if nrm2 == 0:
        return 0.0
    du = mdl.drift(model, u)
    return float(sp.inner_product(du.with_coeffs(du.coeffs * sp.multiplier(u, 2 * m)), u)) / nrm2


def regularity_persistence_check(model, u0: SpectralField, m_list, horizon: float,
                                 diss: dis.DissipationSpec | None = None,
                                 cfg: dyn.IntegratorConfig | None = None, n_checkpoints: int = 20,
                                 fit_samples: int = 10, rtol: float = 1e-9) -> list[PersistenceRow]:
    """Compare ``|u(t)|_{H^m}`` with ``|u0|_{H^m} exp(C int_0^t xi(1+s) ds)``.

    ``C`` is the largest observed ``(d/dt log|u|_{H^m}) / xi(1+t)`` over the
    first checkpoint interval, then frozen.
    """
    diss = diss or dis.DissipationSpec()
    cfg = cfg or dyn.IntegratorConfig()
    times = np.linspace(0.0, horizon, n_checkpoints + 1)
    t1 = times[1]
    fine = np.linspace(0.0, t1, fit_samples + 1)
    early = dyn.deterministic_flow(model, u0, fine, cfg, observables={}, keep_states=True)
    rec = dyn.deterministic_flow(model, u0, times, cfg, observables={}, keep_states=True)
    rows = []
    for m in m_list:
        rates = [max(0.0, hm_growth_rate(model, s, m)) / float(dis.xi(diss, 1.0 + t))
                 for s, t in zip(early.snapshots, fine)]
        C = max(rates)
        n0 = float(sp.norm(u0, sp.H(m)))
        norms = np.array([float(sp.norm(s, sp.H(m))) for s in rec.snapshots])
        env = n0 * np.exp(C * np.array([_xi_integral(diss, t) for t in times]))
        ok = bool(np.all(norms <= env * (1 + rtol) + 1e-300))
        rows.append(PersistenceRow(m, times, norms, env, C, ok))
    return rows
