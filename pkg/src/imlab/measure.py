"""Empirical stationary measures and the checks run against them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import dissipation as dis
from . import dynamics as dyn
from . import models as mdl
from . import spectral as sp
from .spectral import SpectralField
from .stats import Reservoir, pooled_estimate

PASS, FAIL, INCONCLUSIVE = "PASS", "FAIL", "INCONCLUSIVE"


class DomainError(ValueError):
    pass


class AveragingWindowError(RuntimeError):
    pass


@dataclass
class Verdict:
    check: str
    target: float
    estimate: float
    stderr: float
    tolerance: str
    status: str
    reference: str
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def as_dict(self) -> dict:
        return {"check": self.check, "target": _num(self.target), "estimate": _num(self.estimate),
                "stderr": _num(self.stderr), "tolerance": self.tolerance, "pass": self.passed,
                "status": self.status, "reference": self.reference, "details": _clean(self.details)}


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else repr(x)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return _num(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def gate(estimate: float, target: float, stderr: float, n_sigma: float = 3.0,
         rel_cap: float = 0.10) -> tuple[bool, float]:
    """Two-sided statistical gate: within ``n_sigma`` stderr and ``rel_cap`` relative."""
    diff = abs(estimate - target)
    z = diff / stderr if stderr > 0 else (0.0 if diff == 0 else math.inf)
    if target == 0:
        ok = z <= n_sigma
    else:
        ok = z <= n_sigma and diff <= rel_cap * abs(target)
    return bool(ok), z


# ---------------------------------------------------------------------------
# observables


@dataclass(frozen=True)
class ObservableSpec:
    """Scalar functional of the state.

    kinds: ``l2sq``, ``G``, ``hs`` (param s), ``H``, ``casimir`` (param coeffs),
    ``moment`` (param m: |u|^{2m} G), ``dh_a`` (DH(u)[A(u)]), ``theta``
    (exp(rho(|u|_{H^{s*}})), clipped at ``cap`` when given), ``cos_window``
    (cos of one coefficient over ``scale``; params index, part, scale),
    ``clipped_norm`` (min(|u|_{H^s}, cap) / cap).
    """

    kind: str
    s: float = 0.0
    m: int = 1
    coeffs: tuple = ()
    index: int = 0
    component: int = 0
    part: str = "re"
    scale: float = 1.0
    cap: float | None = None

    KINDS = ("l2sq", "G", "hs", "H", "casimir", "moment", "dh_a", "theta", "cos_window", "clipped_norm")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown observable kind {self.kind!r}")
        if self.kind == "clipped_norm" and not (self.cap and self.cap > 0):
            raise ValueError("clipped_norm needs a positive cap")

    @property
    def bounded(self) -> bool:
        return self.kind in ("cos_window", "clipped_norm") or (self.kind == "theta" and self.cap is not None)

    @property
    def name(self) -> str:
        k = self.kind
        if k == "hs":
            return f"hs{self.s:g}"
        if k == "moment":
            return f"moment{self.m}"
        if k == "cos_window":
            return f"cos_{self.part}{self.index}_{self.component}"
        if k == "clipped_norm":
            return f"clipH{self.s:g}"
        if k == "theta" and self.cap is not None:
            return "theta_clipped"
        return k

    def evaluate(self, u: SpectralField, model, diss: dis.DissipationSpec) -> np.ndarray:
        k = self.kind
        if k == "l2sq":
            out = sp.l2_sq(u)
        elif k == "G":
            out = dis.G_potential(diss, u)
        elif k == "hs":
            out = sp.norm(u, sp.H(self.s))
        elif k == "H":
            out = mdl.secondary_hamiltonian(model, u)
        elif k == "casimir":
            out = mdl.casimir(u, self.coeffs)
        elif k == "moment":
            out = sp.l2_sq(u) ** self.m * dis.G_potential(diss, u)
        elif k == "dh_a":
            w = mdl.secondary_weights(model, u.basis)
            out = sp.inner_product(u.with_coeffs(u.coeffs * w), dis.apply_A(diss, u))
        elif k == "theta":
            out = dis.theta(diss, u)
            if self.cap is not None:
                out = np.minimum(out, self.cap)
        elif k == "cos_window":
            c = u.coeffs[..., self.component, self.index] if u.kind == "vector" else u.coeffs[..., self.index]
            v = c.real if self.part == "re" else c.imag
            out = np.cos(v / self.scale)
        else:
            out = np.minimum(sp.norm(u, sp.H(self.s)), self.cap) / self.cap
        return np.asarray(out, dtype=float)


DEFAULT_OBSERVABLES = (ObservableSpec("l2sq"), ObservableSpec("G"))


# ---------------------------------------------------------------------------
# empirical measure


@dataclass(frozen=True)
class Budget:
    N: int
    horizon: float = 200.0
    dt: float = 0.01
    paths: int = 16
    burn_in: float = 0.2
    n_batches: int = 30
    sample_every: int = 1
    reservoir: int = 0
    reservoir_every: int = 10
    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        if not self.horizon > 0 or not self.dt > 0:
            raise ValueError("horizon and dt must be positive")
        if not 0 <= self.burn_in < 1:
            raise ValueError("burn_in is a fraction in [0, 1)")
        if self.paths < 1 or self.n_batches < 2:
            raise ValueError("need at least one path and two batches")


@dataclass
class EmpiricalMeasure:
    model: object
    diss: dis.DissipationSpec
    noise: dyn.NoiseSpec
    bound_noise: dyn.BoundNoise
    alpha: float
    budget: Budget
    observables: dict
    means: dict
    stderrs: dict
    batch_values: dict
    reservoir: list
    usable: bool = True
    provenance: dict = field(default_factory=dict)

    @property
    def A0(self) -> float:
        return self.bound_noise.A0

    def estimate(self, name: str):
        return self.means[name], self.stderrs[name]


def estimate_stationary(model, diss: dis.DissipationSpec, noise: dyn.NoiseSpec, alpha: float,
                        budget: Budget, observables: Sequence[ObservableSpec] = DEFAULT_OBSERVABLES,
                        cfg: dyn.IntegratorConfig | None = None) -> EmpiricalMeasure:
    """Time averages along ``paths`` trajectories started at zero, after burn-in."""
    if not alpha > 0:
        raise ValueError("stationary estimation needs alpha > 0")
    basis = mdl.basis_for(model, budget.N)
    bn = dyn.bind_noise(noise, model.kind, basis)
    cfg = cfg or dyn.IntegratorConfig()
    cfg = replace(cfg, dt_max=budget.dt, seed=budget.seed, paths=budget.paths)
    obs = {o.name: o for o in observables}
    P = budget.paths
    n_steps = max(1, int(math.ceil(budget.horizon / budget.dt - 1e-9)))
    burn = int(math.floor(budget.burn_in * n_steps))
    rec_steps = [k for k in range(burn + 1, n_steps + 1) if (k - burn) % budget.sample_every == 0]
    if len(rec_steps) < budget.n_batches:
        raise AveragingWindowError("averaging window holds fewer samples than batches")
    L = len(rec_steps) // budget.n_batches
    batch_of = {k: i // L for i, k in enumerate(rec_steps[: L * budget.n_batches])}
    sums = {name: np.zeros((budget.n_batches, P)) for name in obs}
    res = Reservoir(budget.reservoir, dyn.path_rng(budget.seed, 10**6, budget.stream))
    u0 = sp.zeros(model.kind, basis, (P,))
    usable = True
    err = None
    try:
        for step, (u, _info) in enumerate(
                dyn.path_iterator(model, diss, bn, alpha, u0, 0.0, budget.horizon, cfg, budget.stream), 1):
            bi = batch_of.get(step)
            if bi is not None:
                for name, o in obs.items():
                    sums[name][bi] += o.evaluate(u, model, diss)
            if budget.reservoir and step > burn and (step - burn) % budget.reservoir_every == 0:
                for p in range(P):
                    res.offer(u[p])
    except (dyn.DivergenceError, dyn.StiffnessError) as exc:
        usable = False
        err = str(exc)
    means, ses, bvals = {}, {}, {}
    for name in obs:
        bm = sums[name] / L
        est = pooled_estimate(bm)
        means[name], ses[name], bvals[name] = est.mean, est.stderr, bm
    prov = {"alpha": alpha, "N": budget.N, "seed": budget.seed, "stream": budget.stream,
            "paths": P, "dt": budget.dt, "horizon": budget.horizon, "burn_in": budget.burn_in,
            "n_batches": budget.n_batches, "batch_len": L, "reservoir_offered": res.seen}
    if err:
        prov["error"] = err
    return EmpiricalMeasure(model, diss, noise, bn, alpha, budget, obs, means, ses, bvals,
                            res.items, usable, prov)


def window_stability(em: EmpiricalMeasure, name: str) -> dict:
    """Mean over the first half of the batches versus all batches."""
    bm = em.batch_values[name]
    half = pooled_estimate(bm[: bm.shape[0] // 2])
    full = pooled_estimate(bm)
    return {"half_mean": half.mean, "half_stderr": half.stderr,
            "full_mean": full.mean, "full_stderr": full.stderr}


def stationary_identity_check(em: EmpiricalMeasure, n_sigma: float = 3.0, rel_cap: float = 0.10) -> Verdict:
    target = em.A0 / 2.0
    if "G" not in em.means:
        raise ValueError("measure was estimated without the G observable")
    est, se = em.means["G"], em.stderrs["G"]
    if se == 0 and target != 0:
        raise AveragingWindowError("zero standard error with nonzero forcing")
    ok, z = gate(est, target, se, n_sigma, rel_cap)
    if not em.usable:
        ok = False
    return Verdict("stationary_identity", target, est, se, f"{n_sigma}sigma & {rel_cap:.0%}",
                   PASS if ok else FAIL, "mean of <A(u),u> equals A0/2 under the stationary law",
                   {"z": z, "alpha": em.alpha, "N": em.budget.N})


def _reservoir_batch(em: EmpiricalMeasure) -> SpectralField | None:
    if not em.reservoir:
        return None
    u = em.reservoir[0]
    return u.with_coeffs(np.stack([v.coeffs for v in em.reservoir]))


def tail_check(em: EmpiricalMeasure, factors=(1, 2, 4, 8), min_exceed: int = 5,
               min_exponent: float = 0.8) -> Verdict:
    """Decay of ``E[G 1{|u|^2 > R}]`` in ``R`` fitted as a power law."""
    batch = _reservoir_batch(em)
    ref = "tail mass of G beyond |u|^2 > R decays at least like 1/R"
    if batch is None:
        return Verdict("tail", min_exponent, math.nan, math.nan, f"exponent>={min_exponent}",
                       INCONCLUSIVE, ref, {"reason": "empty reservoir"})
    x = np.asarray(sp.l2_sq(batch))
    g = np.asarray(dis.G_potential(em.diss, batch))
    med = float(np.median(x))
    if med == 0:
        vals = [0.0 for _ in factors]
        return Verdict("tail", min_exponent, math.inf, 0.0, f"exponent>={min_exponent}", PASS, ref,
                       {"R": [0.0] * len(factors), "tail": vals, "reason": "degenerate measure at zero"})
    Rs = [f * med for f in factors]
    tails, counts = [], []
    for R in Rs:
        mask = x > R
        tails.append(float(np.mean(g * mask)))
        counts.append(int(mask.sum()))
    good = [i for i, c in enumerate(counts) if c >= min_exceed and tails[i] > 0]
    details = {"R": Rs, "tail": tails, "counts": counts}
    if len(good) < 3:
        return Verdict("tail", min_exponent, math.nan, math.nan, f"exponent>={min_exponent}",
                       INCONCLUSIVE, ref, {**details, "reason": "too few exceedances"})
    lr = np.log([Rs[i] for i in good])
    lt = np.log([tails[i] for i in good])
    slope = float(np.polyfit(lr, lt, 1)[0])
    expo = -slope
    return Verdict("tail", min_exponent, expo, 0.0, f"exponent>={min_exponent}",
                   PASS if expo >= min_exponent else FAIL, ref, details)


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepPlan:
    model: object
    diss: dis.DissipationSpec
    noise: dyn.NoiseSpec
    alphas: tuple
    Ns: tuple
    budget: Budget
    observables: tuple = DEFAULT_OBSERVABLES

    def __post_init__(self):
        if not self.alphas or not self.Ns:
            raise ValueError("sweep needs nonempty alpha and N lists")
        if list(self.alphas) != sorted(self.alphas, reverse=True):
            raise ValueError("alpha list must be decreasing")
        if list(self.Ns) != sorted(self.Ns):
            raise ValueError("N list must be increasing")


@dataclass
class SweepResult:
    points: list  # (alpha, N, EmpiricalMeasure or None, error)
    trends: list  # Verdicts


def sweep(plan: SweepPlan, cfg: dyn.IntegratorConfig | None = None, rel_cap: float = 0.10) -> SweepResult:
    points = []
    for N in plan.Ns:
        for a in plan.alphas:
            try:
                em = estimate_stationary(plan.model, plan.diss, plan.noise, a,
                                         replace(plan.budget, N=N), plan.observables, cfg)
                points.append((a, N, em, None if em.usable else em.provenance.get("error")))
            except Exception as exc:  # one failed point must not poison the sweep
                points.append((a, N, None, str(exc)))
    trends = []
    bounded = [o.name for o in plan.observables if o.bounded]
    for N in plan.Ns:
        row = [(a, em) for a, n, em, e in points if n == N and em is not None and em.usable]
        if len(row) < 2:
            trends.append(Verdict(f"alpha_stabilization[N={N}]", 0.0, 0.0, 0.0, "2x combined stderr",
                                  PASS, "bounded observable means settle as alpha decreases",
                                  {"reason": "single point"}))
            continue
        (a1, e1), (a2, e2) = row[-2], row[-1]
        worst, ok, det = 0.0, True, {}
        for name in bounded:
            d = abs(e2.means[name] - e1.means[name])
            tol = 2.0 * math.hypot(e1.stderrs[name], e2.stderrs[name])
            det[name] = {"diff": d, "tol": tol}
            ok = ok and d <= tol
            worst = max(worst, d)
        trends.append(Verdict(f"alpha_stabilization[N={N}]", 0.0, worst, 0.0, "2x combined stderr",
                              PASS if ok else FAIL, "bounded observable means settle as alpha decreases",
                              {"alphas": [a1, a2], **det}))
    for a in plan.alphas:
        col = [(n, em) for aa, n, em, e in points if aa == a and em is not None and em.usable]
        if len(col) < 2:
            trends.append(Verdict(f"uniform_in_N[alpha={a}]", 0.0, 0.0, 0.0, "no upward trend",
                                  PASS, "energy moments bounded uniformly in the truncation",
                                  {"reason": "single point"}))
            continue
        n0, e0 = col[0]
        m0, s0 = e0.means["l2sq"], e0.stderrs["l2sq"]
        ok, det = True, {}
        for n, em in col[1:]:
            lim = (1 + rel_cap) * m0 + 3 * math.hypot(s0, em.stderrs["l2sq"])
            det[str(n)] = {"mean": em.means["l2sq"], "limit": lim}
            ok = ok and em.means["l2sq"] <= lim
        mx = max(em.means["l2sq"] for _, em in col)
        trends.append(Verdict(f"uniform_in_N[alpha={a}]", m0, mx, s0, "no upward trend",
                              PASS if ok else FAIL, "energy moments bounded uniformly in the truncation", det))
    return SweepResult(points, trends)


# ---------------------------------------------------------------------------
# invariance under the inviscid flow


def push_forward(model, states: SpectralField, t: float, cfg: dyn.IntegratorConfig):
    """Flow every state in the batch; returns (flowed batch, keep mask)."""
    try:
        return dyn.advance(model, states, 0.0, t, cfg), np.ones(states.batch_shape[0], bool)
    except (dyn.DivergenceError, dyn.StiffnessError):
        keep, out = [], []
        for i in range(states.batch_shape[0]):
            try:
                out.append(dyn.advance(model, states[i], 0.0, t, cfg).coeffs)
                keep.append(True)
            except (dyn.DivergenceError, dyn.StiffnessError):
                out.append(states[i].coeffs)
                keep.append(False)
        return states.with_coeffs(np.stack(out)), np.array(keep)


def invariance_test(em: EmpiricalMeasure, model, t: float, observables: Sequence[ObservableSpec],
                    cfg: dyn.IntegratorConfig | None = None, n_sigma: float = 3.0,
                    min_samples: int = 100) -> list[Verdict]:
    """Paired comparison of observable means before and after the flow map."""
    cfg = cfg or dyn.IntegratorConfig()
    batch = _reservoir_batch(em)
    ref = "stationary law of the inviscid flow is preserved by the flow map"
    if batch is None or batch.batch_shape[0] < min_samples:
        return [Verdict(f"invariance[{o.name}]", 0.0, math.nan, math.nan, f"{n_sigma}sigma",
                        INCONCLUSIVE, ref, {"reason": "reservoir too small"}) for o in observables]
    if t == 0:
        moved, keep = batch, np.ones(batch.batch_shape[0], bool)
    else:
        moved, keep = push_forward(model, batch, t, cfg)
    out = []
    for o in observables:
        f0 = o.evaluate(batch, model, em.diss)[keep]
        f1 = o.evaluate(moved, model, em.diss)[keep]
        d = f1 - f0
        K = d.size
        mean = float(np.mean(d))
        se = float(np.std(d, ddof=1) / math.sqrt(K)) if K > 1 else 0.0
        ok = abs(mean) <= n_sigma * se if se > 0 else mean == 0
        out.append(Verdict(f"invariance[{o.name}]", 0.0, mean, se, f"{n_sigma}sigma paired",
                           PASS if ok else FAIL, ref,
                           {"t": t, "samples": K, "excluded": int((~keep).sum()), "bounded": o.bounded}))
    return out


# ---------------------------------------------------------------------------
# second quadratic invariant


def second_balance_target(em_or_noise, model) -> float:
    """``(1/2) sum_k K_k sigma_k^2`` with ``K_k`` the Hessian weight of the invariant."""
    bn = em_or_noise.bound_noise if isinstance(em_or_noise, EmpiricalMeasure) else em_or_noise
    w = mdl.secondary_weights(model, bn.basis)
    return 0.5 * float(np.sum(bn.rate_of_dir(w) * bn.sigma**2))


def second_balance_check(em: EmpiricalMeasure, model, n_sigma: float = 3.0, rel_cap: float = 0.10) -> Verdict:
    if "dh_a" not in em.means:
        raise ValueError("measure was estimated without the dh_a observable")
    target = second_balance_target(em, model)
    est, se = em.means["dh_a"], em.stderrs["dh_a"]
    ok, z = gate(est, target, se, n_sigma, rel_cap)
    return Verdict("second_balance", target, est, se, f"{n_sigma}sigma & {rel_cap:.0%}",
                   PASS if ok else FAIL,
                   "mean of DH(u)[A(u)] equals half the Hessian-weighted noise power",
                   {"z": z, "alpha": em.alpha})


# ---------------------------------------------------------------------------
# absolute continuity of the energy law


def abs_continuity_histogram(samples, bins: int = 10, refinements: int = 2, min_samples: int = 1000,
                             slack: float = 1.5) -> Verdict:
    """No-atom diagnostic for the law of ``|u|^2``.

    ``C = max bin mass / width`` on the coarsest histogram must keep bounding
    the max bin mass (up to ``slack`` and a 3-sigma counting allowance) under
    successive bin halvings. Near zero, ``P(|u| <= delta) / delta`` must not
    blow up as delta shrinks.
    """
    if isinstance(samples, EmpiricalMeasure):
        batch = _reservoir_batch(samples)
        x = np.asarray(sp.l2_sq(batch)) if batch is not None else np.array([])
    else:
        x = np.asarray(samples, dtype=float)
    ref = "law of |u|^2 has no atoms (absolutely continuous)"
    K = x.size
    if K < min_samples:
        return Verdict("no_atom", 0.0, math.nan, math.nan, "bin refinement", INCONCLUSIVE, ref,
                       {"reason": f"{K} samples < {min_samples}"})
    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        return Verdict("no_atom", 0.0, 1.0, 0.0, "bin refinement", FAIL, ref,
                       {"reason": "all samples identical", "atom_at": lo})
    C = None
    levels = []
    ok = True
    for lev in range(refinements + 1):
        nb = bins * 2**lev
        counts, edges = np.histogram(x, bins=nb, range=(lo, hi))
        bw = (hi - lo) / nb
        mass = counts.max() / K
        if C is None:
            C = mass / bw
            levels.append({"bins": nb, "max_mass": mass, "bound": mass})
            continue
        expected = C * bw
        bound = slack * expected + 3.0 * math.sqrt(expected / K)
        levels.append({"bins": nb, "max_mass": mass, "bound": bound})
        ok = ok and mass <= bound
    r = np.sqrt(x)
    scale = float(np.median(r))
    deltas = [0.1 * scale, 0.05 * scale, 0.025 * scale]
    cnt = [int(np.sum(r <= dlt)) for dlt in deltas]
    near_ok = True
    for i in range(1, len(deltas)):
        exp_c = cnt[0] * deltas[i] / deltas[0]
        near_ok = near_ok and cnt[i] <= slack * exp_c + 3.0 * math.sqrt(max(exp_c, 1.0))
    ratios = [c / (K * dlt) if dlt > 0 else math.inf for c, dlt in zip(cnt, deltas)]
    status = PASS if (ok and near_ok) else FAIL
    return Verdict("no_atom", 0.0, max(lv["max_mass"] / lv["bound"] for lv in levels[1:]), 0.0,
                   "bin refinement", status, ref,
                   {"levels": levels, "C": C, "near_zero_counts": cnt, "near_zero_ratio": ratios,
                    "deltas": deltas})


# ---------------------------------------------------------------------------
# non-degeneracy matrix


def fp_prime(p: int, z: np.ndarray) -> np.ndarray:
    """Derivative of ``z^{2p} + z^2``."""
    return 2 * p * z ** (2 * p - 1) + 2 * z


def nondegeneracy_matrix(u: SpectralField, noise: dyn.BoundNoise, n: int = 3,
                         sup_tol: float = 1e-12) -> tuple[np.ndarray, float]:
    """``M_ij = sum_k sigma_k^2 <f_i'(u), e_k> <f_j'(u), e_k>`` and its determinant."""
    if u.kind != "scalar":
        raise DomainError("non-degeneracy matrix is defined for torus scalar states")
    if not 1 <= n <= 6:
        raise DomainError("n must be between 1 and 6")
    if np.any(noise.sigma == 0):
        raise DomainError("all noise amplitudes must be nonzero")
    if float(np.max(sp.sup_norm(u))) > 1 + sup_tol:
        raise DomainError("state exceeds 1 in sup norm; rescale it into [-1, 1]")
    rows = []
    for p in range(1, n + 1):
        fld = sp.pointwise([u], lambda z, p=p: fp_prime(p, z), degree=2 * p - 1)
        rows.append(noise.sigma * noise.coords(fld))
    Y = np.array(rows)
    M = Y @ Y.T
    return M, float(np.linalg.det(M))
