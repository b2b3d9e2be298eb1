"""Config-driven experiment presets at desk scale.

Every preset is a list of independent cells (one seed of one configuration),
each producing :class:`ErrorReport` rows.  Cells are plain top-level functions
of primitive arguments so they can be shipped to worker processes; results
are merged in submission order, which keeps the CSV output independent of the
worker count.
"""

from __future__ import annotations

import concurrent.futures
import json
import logging
import math
import platform
import subprocess
import time
import traceback
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from . import __version__
from .basis import FourierBasis, PolynomialBasis, Quadrature, gauss_legendre
from .dynamics import (
    OU1D,
    CubicStabilization1D,
    Linear1D,
    LinearND,
    NonlinearSin1D,
    UniformBox,
    UniformMesh,
    sample_transition_pairs,
    simulate_batch,
)
from .estimators import ClosedFormProvider, moment_provider
from .fdcoeff import fd_coefficients
from .galerkin import (
    CosCubeTarget,
    QuadraticTarget,
    assemble_be_projection,
    assemble_generator,
    assemble_phibe,
    be_rollout_deterministic,
    designed_reward,
    lq_be_value,
    lq_phibe_residual,
    lq_phibe_value,
    lq_true_value,
    lq_true_value_nd,
    quadratic_reward,
    solve,
    transition_law,
)
from .metrics import ErrorReport, error_report, fit_order, seed_summary, write_error_csv
from .modelfree import accumulate_lstd, accumulate_pairs_first_order, accumulate_phibe, solve_empirical

log = logging.getLogger(__name__)

DEFAULT_BUDGET = 900.0
QUAD_NODES = 400
HIGHDIM_MC_NODES = 200_000
HIGHDIM_MC_SEED = 20240101
LQ_Q, LQ_R, LQ_K = 1.0, 0.1, 2.0

# (alpha = b, sigma, beta, dt)
LQ_CASES = {
    "baseline": (0.25, 0.5, 1.0, 0.1),
    "smaller_dt": (0.25, 0.5, 1.0, 0.01),
    "quick": (1.0, 1.0, 1.0, 0.1),
    "smaller_beta": (0.25, 0.5, 0.1, 0.1),
}
# (alpha = b = kappa, sigma, beta, dt)
CUBIC_CASES = {
    "baseline": (0.1, 0.05, 1.0, 0.1),
    "smaller_dt": (0.1, 0.05, 1.0, 0.01),
    "quick": (0.5, 0.25, 1.0, 0.1),
    "smaller_beta": (0.1, 0.05, 0.1, 0.1),
}


# ---------------------------------------------------------------------------
# problem builders
# ---------------------------------------------------------------------------


def make_model(kind: str, **params):
    kinds = {
        "linear": lambda: Linear1D(params["lam"]),
        "sin": lambda: NonlinearSin1D(params["lam"]),
        "ou": lambda: OU1D(params["lam"], params.get("sigma", 1.0)),
    }
    if kind not in kinds:
        raise ValueError(f"unknown model kind {kind!r}")
    return kinds[kind]()


def _periodic_quads(n_nodes: int = QUAD_NODES):
    return gauss_legendre(-math.pi, math.pi, n_nodes), gauss_legendre(-math.pi, math.pi, 2 * n_nodes)


def _rollout_step(model, dt: float):
    if isinstance(model, Linear1D):
        factor = math.exp(model.lam * dt)
        return lambda s: factor * s
    if isinstance(model, NonlinearSin1D):
        return lambda s: model.flow(s, dt)
    raise ValueError(f"no deterministic step map for {model.model_id}")


def _substeps(dt: float, delta: float) -> int:
    return max(1, int(round(dt / delta)))


def generate_orthogonal_conjugation(d: int, eigenvalues, seed: int) -> np.ndarray:
    """``O^T diag(eigenvalues) O`` with ``O`` the Q factor of a seeded Gaussian matrix."""
    eig = np.asarray(eigenvalues, dtype=float).reshape(-1)
    if d < 1 or eig.size != d:
        raise ValueError("need d >= 1 and d eigenvalues")
    g = np.random.default_rng(seed).standard_normal((d, d))
    O, R = np.linalg.qr(g)
    O = O * np.sign(np.diag(R))
    M = O.T @ (eig[:, None] * O)
    return 0.5 * (M + M.T)


def highdim_problem(d: int = 10, seed: int = 0, diffusion: float = 0.3, beta: float = 1.0):
    Q = generate_orthogonal_conjugation(d, np.arange(1, d + 1), seed)
    A = generate_orthogonal_conjugation(d, -0.1 * np.arange(1, d + 1), seed + 1)
    model = LinearND(A, np.full(d, diffusion), name="lq10d")
    P, c = lq_true_value_nd(A, model.diffusion(), Q, beta)
    return model, Q, QuadraticTarget(P, c)


def _rho_quadrature(d: int, n: int, seed: int) -> Quadrature:
    """Monte Carlo nodes for the uniform probability density on ``[-1, 1]^d``."""
    nodes = UniformBox(-1.0, 1.0, d).sample(n, seed)
    return Quadrature("monte-carlo", nodes, np.full(n, 1.0 / n))


# ---------------------------------------------------------------------------
# cells
# ---------------------------------------------------------------------------


def model_based_cell(kind: str, lam: float, sigma: float, beta: float, k: float, dt: float, M: int,
                     orders=(1, 2), delta: float = 1e-4, label: str = "") -> list[ErrorReport]:
    """Exact-law BE and PhiBE solutions against ``V = cos^3(k s)``."""
    model = make_model(kind, lam=lam, sigma=sigma)
    target = CosCubeTarget(k)
    reward = designed_reward(target, model, beta)
    basis = FourierBasis(M)
    quad, qerr = _periodic_quads()
    meta = dict(dt=dt, n="inf", seed="")
    if model.stochastic:
        be = solve(assemble_be_projection(basis, transition_law(model, dt), beta, dt, quad, reward=reward), basis)
    else:
        be = be_rollout_deterministic(reward, _rollout_step(model, dt), beta, dt)
    out = [error_report(be, target, qerr, method=f"{label}be", order=1, **meta)]
    provider = moment_provider(model, substeps=_substeps(dt, delta))
    for i in orders:
        V = solve(assemble_phibe(basis, provider, beta, dt, i, quad, reward=reward), basis)
        out.append(error_report(V, target, qerr, method=f"{label}phibe", order=i, **meta))
    return out


def trajectory_cell(kind: str, lam: float, sigma: float, beta: float, k: float, dt: float, M: int,
                    J: int, seed: int, states: int = 4, orders=(1, 2), delta: float = 1e-4,
                    label: str = "") -> list[ErrorReport]:
    """Model-free PhiBE (each order) and LSTD on one shared batch of trajectories."""
    model = make_model(kind, lam=lam, sigma=sigma)
    target = CosCubeTarget(k)
    reward = designed_reward(target, model, beta)
    basis = FourierBasis(M)
    _, qerr = _periodic_quads()
    s0 = UniformBox(-math.pi, math.pi).sample(J, seed)
    exact = model.has_exact_transition
    X = simulate_batch(model, s0, dt, states - 1, substeps=1 if exact else _substeps(dt, delta),
                       seed=seed, exact=exact)
    meta = dict(dt=dt, n=J * states, seed=seed)
    out = []
    for i in orders:
        if i > states - 1:
            continue
        system = accumulate_phibe(None, X, reward, beta, fd_coefficients(i), basis, model.stochastic, dt=dt)
        V = solve_empirical(system, basis)
        out.append(error_report(V, target, qerr, method=f"{label}phibe-mf", order=i, **meta))
    V = solve_empirical(accumulate_lstd(None, X, reward, beta, dt, basis), basis)
    out.append(error_report(V, target, qerr, method=f"{label}lstd", order=1, **meta))
    return out


def ou_pairs_cell(lam: float, sigma: float, beta: float, k: float, dt: float, M: int, n: int, seed: int,
                  label: str = "") -> list[ErrorReport]:
    """First-order pairs estimator against the model-based first-order Galerkin solution."""
    model = OU1D(lam, sigma)
    target = CosCubeTarget(k)
    reward = designed_reward(target, model, beta)
    basis = FourierBasis(M)
    quad, qerr = _periodic_quads()
    ref = solve(assemble_phibe(basis, ClosedFormProvider(model), beta, dt, 1, quad, reward=reward), basis)
    pairs = sample_transition_pairs(model, UniformBox(-math.pi, math.pi), dt, n, seed=seed, reward=reward)
    V = solve_empirical(accumulate_pairs_first_order(None, pairs, beta, basis), basis)
    return [error_report(V, ref, qerr, method=f"{label}phibe-pairs-vs-galerkin", order=1, dt=dt, n=n, seed=seed)]


def lq_cell(case: str, n: int, seed: int, degree: int = 2, label: str = "") -> list[ErrorReport]:
    alpha, sigma, beta, dt = LQ_CASES[case]
    model = OU1D(alpha - alpha * LQ_K, sigma)
    a1, a2 = lq_true_value(LQ_Q, LQ_R, LQ_K, alpha, alpha, sigma, beta)
    truth = QuadraticTarget(np.array([[a1]]), a2)
    R = LQ_Q + LQ_R * LQ_K**2
    pairs = sample_transition_pairs(model, UniformMesh(-1.0, 1.0), dt, n, seed=seed,
                                    reward=quadratic_reward([[R]]))
    return _pairs_reports(pairs, beta, dt, PolynomialBasis(1, degree), truth,
                          gauss_legendre(-1.0, 1.0, 2 * QUAD_NODES), f"{label}{case}/", n, seed)


def cubic_truth(case: str, degree: int = 8):
    c, sigma, beta, _ = CUBIC_CASES[case]
    model = CubicStabilization1D(c, c, c, LQ_K, sigma)
    basis = PolynomialBasis(1, degree)
    reward = quadratic_reward([[LQ_Q + LQ_R * LQ_K**2]])
    return solve(assemble_generator(basis, model, beta, gauss_legendre(-1.0, 1.0, QUAD_NODES), reward=reward), basis)


def cubic_cell(case: str, n: int, seed: int, degree: int = 4, truth_degree: int = 8,
               delta: float = 1e-3, label: str = "") -> list[ErrorReport]:
    c, sigma, beta, dt = CUBIC_CASES[case]
    model = CubicStabilization1D(c, c, c, LQ_K, sigma)
    truth = cubic_truth(case, truth_degree)
    pairs = sample_transition_pairs(model, UniformMesh(-1.0, 1.0), dt, n, seed=seed,
                                    substeps=_substeps(dt, delta), exact=False,
                                    reward=quadratic_reward([[LQ_Q + LQ_R * LQ_K**2]]))
    return _pairs_reports(pairs, beta, dt, PolynomialBasis(1, degree), truth,
                          gauss_legendre(-1.0, 1.0, 2 * QUAD_NODES), f"{label}{case}/", n, seed)


def highdim_cell(dt: float, n: int, seed: int, d: int = 10, problem_seed: int = 0,
                 mc_nodes: int = HIGHDIM_MC_NODES, label: str = "") -> list[ErrorReport]:
    model, Q, truth = highdim_problem(d, problem_seed)
    pairs = sample_transition_pairs(model, UniformBox(-1.0, 1.0, d), dt, n, seed=seed,
                                    reward=quadratic_reward(Q))
    return _pairs_reports(pairs, 1.0, dt, PolynomialBasis(d, 2), truth,
                          _rho_quadrature(d, mc_nodes, HIGHDIM_MC_SEED), label, n, seed)


def _pairs_reports(pairs, beta, dt, basis, truth, qerr, prefix, n, seed) -> list[ErrorReport]:
    meta = dict(order=1, dt=dt, n=n, seed=seed)
    Vp = solve_empirical(accumulate_pairs_first_order(None, pairs, beta, basis), basis)
    Vl = solve_empirical(accumulate_lstd(None, pairs, None, beta, dt, basis), basis)
    return [
        error_report(Vp, truth, qerr, method=f"{prefix}phibe-pairs", **meta),
        error_report(Vl, truth, qerr, method=f"{prefix}lstd", **meta),
    ]


def lq_analytic_rows() -> list[dict]:
    """Closed-form coefficients and residuals for the four linear cases."""
    rows = []
    R = LQ_Q + LQ_R * LQ_K**2
    for case, (alpha, sigma, beta, dt) in LQ_CASES.items():
        lam = alpha - alpha * LQ_K
        a1, a2 = lq_true_value(LQ_Q, LQ_R, LQ_K, alpha, alpha, sigma, beta)
        a1R, a0R = lq_be_value(R, lam, sigma, beta, dt)
        a1P, a0P = lq_phibe_value(R, lam, sigma, beta, dt)
        r2, r0 = lq_phibe_residual(R, lam, sigma, beta, dt)
        rows.append(dict(case=case, a1=a1, a2=a2, a1R=a1R, a0R=a0R, a1P=a1P, a0P=a0P,
                         residual=max(abs(r2), abs(r0))))
    return rows


# ---------------------------------------------------------------------------
# harness
# ---------------------------------------------------------------------------


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""
    advisory: bool = False

    def line(self) -> str:
        tag = ("ADVISORY " if self.advisory else "") + ("PASS" if self.passed else "FAIL")
        return f"{tag} {self.name}: {self.detail}"


@dataclass
class ExperimentConfig:
    preset: str
    overrides: dict = field(default_factory=dict)
    out_dir: Optional[str] = None
    budget_seconds: float = DEFAULT_BUDGET
    workers: int = 1

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        doc = json.loads(Path(path).read_text())
        return cls(**doc)

    @staticmethod
    def parse_sets(pairs) -> dict:
        """``["key=value", ...]`` with JSON-decoded values (bare strings allowed)."""
        out = {}
        for item in pairs or []:
            key, sep, raw = item.partition("=")
            if not sep or not key:
                raise ValueError(f"override {item!r} is not of the form key=value")
            try:
                out[key.strip()] = json.loads(raw)
            except json.JSONDecodeError:
                out[key.strip()] = raw
        return out


@dataclass
class PresetResult:
    preset: str
    params: dict
    reports: list
    checks: list
    failures: list
    scale: float
    elapsed: float
    notes: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks if not c.advisory)


@dataclass
class Preset:
    name: str
    defaults: dict
    body: Callable[["Context"], None]
    # nominal seconds on the reference machine and the keys scaled by the budget guard
    cost: Callable[[dict], float]
    scale_keys: tuple = ()
    description: str = ""


class Context:
    def __init__(self, params: dict, workers: int = 1):
        self.params = params
        self.workers = workers
        self.reports: list[ErrorReport] = []
        self.checks: list[Check] = []
        self.failures: list[tuple[str, str]] = []
        self.notes: list[str] = []

    def run(self, cells: list[tuple[str, Callable, dict]]) -> dict[str, list[ErrorReport]]:
        """Run ``(key, fn, kwargs)`` cells; failed cells are recorded and skipped."""
        results: dict[str, list[ErrorReport]] = {}
        if self.workers > 1 and len(cells) > 1:
            with concurrent.futures.ProcessPoolExecutor(max_workers=self.workers) as pool:
                futures = [pool.submit(_guarded, fn, kw) for _, fn, kw in cells]
                outcomes = [f.result() for f in futures]
        else:
            outcomes = [_guarded(fn, kw) for _, fn, kw in cells]
        for (key, _, _), (rows, err) in zip(cells, outcomes):
            if err is not None:
                self.failures.append((key, err))
                log.warning("cell %s failed: %s", key, err.splitlines()[-1] if err else err)
                continue
            results[key] = rows
            self.reports.extend(rows)
        return results

    def check(self, name: str, passed: bool, detail: str = "", advisory: bool = False) -> Check:
        c = Check(name, bool(passed), detail, advisory)
        self.checks.append(c)
        return c


def _guarded(fn, kwargs):
    try:
        return fn(**kwargs), None
    except Exception as exc:  # recorded per cell, the preset continues
        return None, f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}"


def _errors(results: dict, method: str, keys=None, norm: str = "l2", order=None) -> np.ndarray:
    vals = []
    for key, rows in results.items():
        if keys is not None and key not in keys:
            continue
        for r in rows:
            if r.meta.get("method") == method and (order is None or r.meta.get("order") == order):
                vals.append(getattr(r, norm))
    return np.asarray(vals, dtype=float)


def _mean(x: np.ndarray) -> float:
    return float(np.mean(x)) if x.size else math.nan


def _slope_check(ctx: Context, name: str, dts, errs, target: float, tol: float, advisory=False):
    try:
        fit = fit_order(dts, errs)
        ctx.check(name, abs(fit.slope - target) <= tol,
                  f"slope {fit.slope:.3f} (target {target} +/- {tol}), r2 {fit.r2:.4f}", advisory)
    except ValueError as exc:
        ctx.check(name, False, f"fit failed: {exc}", advisory)


def _seeds(ctx: Context) -> list[int]:
    base = int(ctx.params.get("seed", 0))
    return [base + s for s in range(int(ctx.params["seeds"]))]


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------


def _fig1(ctx: Context):
    p = ctx.params
    cells = []
    for name, panel in p["panels"].items():
        kw = dict(kind="linear", lam=p["lam"], sigma=0.0, beta=panel["beta"], k=panel["k"], dt=panel["dt"],
                  M=panel["M"], label=f"{name}/")
        cells.append((f"{name}/model", model_based_cell, dict(kw, orders=(1, 2))))
        for seed in _seeds(ctx):
            cells.append((f"{name}/{seed}", trajectory_cell,
                          dict(kw, J=panel["J"], seed=seed, states=p["states"], orders=(1, 2))))
    res = ctx.run(cells)
    for name in p["panels"]:
        mb = res.get(f"{name}/model", [])
        be = [r.l2 for r in mb if r.meta["method"].endswith("be")]
        ph2 = [r.l2 for r in mb if r.meta["method"].endswith("phibe") and r.meta["order"] == 2]
        if be and ph2:
            ctx.check(f"{name} exact-law PhiBE-2 beats BE", ph2[0] < be[0], f"{ph2[0]:.3e} vs {be[0]:.3e}")
        mf = _errors(res, f"{name}/phibe-mf", order=2)
        ls = _errors(res, f"{name}/lstd")
        ctx.check(f"{name} model-free PhiBE-2 mean error below LSTD", _mean(mf) < _mean(ls),
                  f"{_mean(mf):.3e} vs {_mean(ls):.3e} over {mf.size} seeds")


def _fig3(ctx: Context):
    p = ctx.params
    cells = []
    for name, c in p["cases"].items():
        kw = dict(kind="sin", lam=c["lam"], sigma=0.0, beta=c["beta"], k=c["k"], dt=c["dt"], M=c["M"],
                  delta=p["delta"], label=f"{name}/")
        cells.append((f"{name}/model", model_based_cell, dict(kw, orders=(1, 2))))
        for seed in _seeds(ctx):
            cells.append((f"{name}/{seed}", trajectory_cell,
                          dict(kw, J=c["J"], seed=seed, states=p["states"], orders=(1, 2))))
    res = ctx.run(cells)
    for name, c in p["cases"].items():
        mb = res.get(f"{name}/model", [])
        be = [r.l2 for r in mb if r.meta["method"].endswith("be")]
        ph2 = [r.l2 for r in mb if r.meta["method"].endswith("phibe") and r.meta["order"] == 2]
        if be and ph2:
            ctx.check(f"{name} exact-law PhiBE-2 beats BE", ph2[0] < be[0], f"{ph2[0]:.3e} vs {be[0]:.3e}")
        mf = _errors(res, f"{name}/phibe-mf", order=2)
        ls = _errors(res, f"{name}/lstd")
        slow = c["lam"] <= 0.1 and c["k"] >= 1
        ctx.check(f"{name} model-free PhiBE-2 mean error below LSTD", _mean(mf) < _mean(ls),
                  f"{_mean(mf):.3e} vs {_mean(ls):.3e}", advisory=not slow)


def _fig4(ctx: Context):
    p = ctx.params
    base = dict(lam=p["lam"], sigma=0.0, beta=p["beta"], k=p["k"], M=p["M"])
    cells = [(f"decay/{dt}", model_based_cell, dict(base, kind="linear", dt=dt, orders=(1, 2), label="decay/"))
             for dt in p["dt_grid"]]
    if p["nonlinear"]:
        nl = dict(base, kind="sin", lam=p["nonlinear_lam"], delta=p["delta"], label="decay-sin/")
        cells += [(f"decay-sin/{dt}", model_based_cell, dict(nl, dt=dt, orders=(1, 2))) for dt in p["dt_grid"]]
    for J in p["J_grid"]:
        for seed in _seeds(ctx):
            cells.append((f"data/{J}/{seed}", trajectory_cell,
                          dict(base, kind="linear", dt=p["data_dt"], J=J, seed=seed, states=p["states"],
                               orders=(1, 2), label="data/")))
    res = ctx.run(cells)
    dts = list(p["dt_grid"])
    for prefix, adv in (("decay", False), ("decay-sin", True)):
        if prefix == "decay-sin" and not p["nonlinear"]:
            continue
        keys = [f"{prefix}/{dt}" for dt in dts]
        be = [_errors(res, f"{prefix}/be", keys=[k]) for k in keys]
        ph = {i: [_errors(res, f"{prefix}/phibe", keys=[k], order=i) for k in keys] for i in (1, 2)}
        if all(x.size for x in be):
            _slope_check(ctx, f"{prefix} BE slope", dts, [x[0] for x in be], 1.0, 0.35, adv)
        for i in (1, 2):
            if all(x.size for x in ph[i]):
                _slope_check(ctx, f"{prefix} PhiBE-{i} slope", dts, [x[0] for x in ph[i]], float(i), 0.35, adv)
        if all(x.size for x in be) and all(x.size for x in ph[2]):
            below = all(a[0] < b[0] for a, b in zip(ph[2], be))
            ctx.check(f"{prefix} PhiBE-2 error below BE at every dt", below, "", adv)
    J_grid = list(p["J_grid"])
    mf = [_mean(_errors(res, "data/phibe-mf", keys=[f"data/{J}/{s}" for s in _seeds(ctx)], order=2)) for J in J_grid]
    ls = [_mean(_errors(res, "data/lstd", keys=[f"data/{J}/{s}" for s in _seeds(ctx)])) for J in J_grid]
    ctx.notes.append("data scaling means (J, PhiBE-2, LSTD): " +
                     "; ".join(f"{J}: {a:.3e}, {b:.3e}" for J, a, b in zip(J_grid, mf, ls)))
    ctx.check("data scaling: PhiBE-2 keeps improving and ends below LSTD",
              mf[-1] < mf[0] and mf[-1] < ls[-1], f"PhiBE-2 {mf[0]:.3e} -> {mf[-1]:.3e}, LSTD {ls[-1]:.3e}",
              advisory=True)


def _fig5(ctx: Context):
    p = ctx.params
    base = dict(lam=p["lam"], sigma=p["sigma"], beta=p["beta"], k=p["k"], M=p["M"])
    seeds = _seeds(ctx)
    cells = [(f"decay/{dt}", model_based_cell, dict(base, kind="ou", dt=dt, orders=(1, 2), label="decay/"))
             for dt in p["dt_grid"]]
    for J in p["J_grid"]:
        cells += [(f"data/{J}/{s}", trajectory_cell,
                   dict(base, kind="ou", dt=p["data_dt"], J=J, seed=s, states=p["states"], orders=(1, 2),
                        label="data/")) for s in seeds]
    for dt in p["budget_dt_grid"]:
        J = int(p["budget"]) // p["states"]
        cells += [(f"budget/{dt}/{s}", trajectory_cell,
                   dict(base, kind="ou", dt=dt, J=J, seed=s, states=p["states"], orders=(1,), label="budget/"))
                  for s in seeds]
    for n in p["pairs_n_grid"]:
        cells += [(f"pairs/{n}/{s}", ou_pairs_cell, dict(base, dt=p["data_dt"], n=n, seed=s, label="pairs/"))
                  for s in seeds]
    res = ctx.run(cells)

    dts = list(p["dt_grid"])
    keys = [f"decay/{dt}" for dt in dts]
    be = [_errors(res, "decay/be", keys=[k]) for k in keys]
    ph = {i: [_errors(res, "decay/phibe", keys=[k], order=i) for k in keys] for i in (1, 2)}
    if all(x.size for x in be):
        _slope_check(ctx, "decay BE slope", dts, [x[0] for x in be], 1.0, 0.35)
    for i in (1, 2):
        if all(x.size for x in ph[i]):
            _slope_check(ctx, f"decay PhiBE-{i} slope", dts, [x[0] for x in ph[i]], float(i), 0.35)
    if all(x.size for x in be) and all(x.size for x in ph[2]):
        ctx.check("decay PhiBE-2 error below BE at every dt", all(a[0] < b[0] for a, b in zip(ph[2], be)))

    J_grid = list(p["J_grid"])
    mf1 = [_mean(_errors(res, "data/phibe-mf", keys=[f"data/{J}/{s}" for s in seeds], order=1)) for J in J_grid]
    ls = [_mean(_errors(res, "data/lstd", keys=[f"data/{J}/{s}" for s in seeds])) for J in J_grid]
    ctx.notes.append("data scaling means (J, PhiBE-1, LSTD): " +
                     "; ".join(f"{J}: {a:.3e}, {b:.3e}" for J, a, b in zip(J_grid, mf1, ls)))
    ctx.check("data scaling: PhiBE-1 mean error decreases and stays below LSTD",
              all(np.diff(mf1) < 0) and mf1[-1] < ls[-1], f"{mf1} vs LSTD {ls}", advisory=True)

    per = {}
    for dt in p["budget_dt_grid"]:
        per[dt] = {s: _errors(res, "budget/phibe-mf", keys=[f"budget/{dt}/{s}"], order=1) for s in seeds}
    means = {dt: _mean(np.concatenate([v for v in d.values() if v.size] or [np.array([])])) for dt, d in per.items()}
    ctx.notes.append("fixed budget means (dt: PhiBE-1): " + "; ".join(f"{dt}: {m:.3e}" for dt, m in means.items()))
    grid = sorted(p["budget_dt_grid"], reverse=True)
    if len(grid) >= 2:
        ctx.check(f"budget: PhiBE-1 error at dt={grid[1]} below dt={grid[0]}", means[grid[1]] < means[grid[0]],
                  f"{means[grid[1]]:.3e} vs {means[grid[0]]:.3e}")
    if len(grid) >= 3:
        wins = sum(1 for s in seeds if per[grid[2]][s].size and per[grid[1]][s].size
                   and per[grid[2]][s][0] > per[grid[1]][s][0])
        need = math.ceil(0.7 * len(seeds))
        ctx.check(f"budget: dt={grid[2]} error exceeds dt={grid[1]} per seed", wins >= need,
                  f"{wins} of {len(seeds)} seeds (need {need})", advisory=True)

    n_grid = list(p["pairs_n_grid"])
    pm = [_mean(_errors(res, "pairs/phibe-pairs-vs-galerkin", keys=[f"pairs/{n}/{s}" for s in seeds])) for n in n_grid]
    ctx.notes.append("pairs sample scaling means (n: error): " + "; ".join(f"{n}: {m:.3e}" for n, m in zip(n_grid, pm)))
    if len(n_grid) >= 3:
        _slope_check(ctx, "pairs sample-error slope in n", n_grid, pm, -0.5, 0.15)


def _table1(ctx: Context):
    p = ctx.params
    rows = lq_analytic_rows()
    for r in rows:
        ctx.notes.append("analytic {case}: a1={a1:.6f} a2={a2:.6f} a1R={a1R:.6f} a0R={a0R:.6f} "
                         "a1P={a1P:.6f} a0P={a0P:.6f} residual={residual:.2e}".format(**r))
        ctx.check(f"{r['case']} PhiBE closed form residual < 1e-12", r["residual"] < 1e-12, f"{r['residual']:.2e}")
        ctx.check(f"{r['case']} |a1P - a1| < |a1R - a1|", abs(r["a1P"] - r["a1"]) < abs(r["a1R"] - r["a1"]),
                  f"{abs(r['a1P'] - r['a1']):.3e} vs {abs(r['a1R'] - r['a1']):.3e}")
    seeds = _seeds(ctx)
    cells = [(f"{case}/{s}", lq_cell, dict(case=case, n=int(p["n"]), seed=s, degree=p["degree"]))
             for case in p["cases"] for s in seeds]
    res = ctx.run(cells)
    wins = 0
    for case in p["cases"]:
        ph = _errors(res, f"{case}/phibe-pairs")
        ls = _errors(res, f"{case}/lstd")
        if ph.size >= 2 and ls.size >= 2:
            sp, sl = seed_summary(ph), seed_summary(ls)
            ph_inf, ls_inf = _errors(res, f"{case}/phibe-pairs", norm="linf"), _errors(res, f"{case}/lstd", norm="linf")
            ctx.notes.append(
                f"{case}: L2 mean/median/var PhiBE {sp.mean:.3e}/{sp.median:.3e}/{sp.variance:.2e}, "
                f"LSTD {sl.mean:.3e}/{sl.median:.3e}/{sl.variance:.2e}; "
                f"Linf mean PhiBE {ph_inf.mean():.3e}, LSTD {ls_inf.mean():.3e}")
            wins += int(sp.mean < sl.mean)
    need = min(p["min_wins"], len(p["cases"]))
    ctx.check("PhiBE mean L2 error below LSTD in enough LQ cases", wins >= need,
              f"{wins} of {len(p['cases'])} (need {need})")


def _fig8(ctx: Context):
    p = ctx.params
    seeds = _seeds(ctx)
    for case in p["cases"]:
        try:
            coarse = cubic_truth(case, p["truth_degree"] - 2)
            fine = cubic_truth(case, p["truth_degree"])
            x = np.linspace(-1, 1, 401)
            ctx.notes.append(f"{case}: reference change from degree {p['truth_degree'] - 2} to "
                             f"{p['truth_degree']}: {np.abs(fine(x) - coarse(x)).max():.2e}")
        except Exception as exc:
            ctx.failures.append((f"{case}/truth", f"{type(exc).__name__}: {exc}"))
    cells = [(f"{case}/{s}", cubic_cell, dict(case=case, n=int(p["n"]), seed=s, degree=p["degree"],
                                              truth_degree=p["truth_degree"], delta=p["delta"]))
             for case in p["cases"] for s in seeds]
    res = ctx.run(cells)
    for case in p["cases"]:
        ph, ls = _errors(res, f"{case}/phibe-pairs"), _errors(res, f"{case}/lstd")
        if ph.size and ls.size:
            ctx.notes.append(f"{case}: mean/median PhiBE {ph.mean():.3e}/{np.median(ph):.3e}, "
                             f"LSTD {ls.mean():.3e}/{np.median(ls):.3e}")
        ctx.check(f"{case} PhiBE mean error below LSTD", _mean(ph) < _mean(ls),
                  f"{_mean(ph):.3e} vs {_mean(ls):.3e}", advisory=True)


def _fig9(ctx: Context):
    p = ctx.params
    seeds = _seeds(ctx)
    pts = [(float(dt), int(n)) for dt, n in zip(p["dt_grid"], p["n_grid"])]
    cells = [(f"{dt}/{s}", highdim_cell, dict(dt=dt, n=n, seed=s, d=p["d"], problem_seed=p["problem_seed"],
                                              mc_nodes=p["mc_nodes"]))
             for dt, n in pts for s in seeds]
    res = ctx.run(cells)
    means = {}
    for dt, n in pts:
        keys = [f"{dt}/{s}" for s in seeds]
        means[dt] = (_mean(_errors(res, "phibe-pairs", keys=keys)), _mean(_errors(res, "lstd", keys=keys)))
        ctx.notes.append(f"dt={dt} n={n}: rho-norm mean PhiBE {means[dt][0]:.3e}, LSTD {means[dt][1]:.3e}")
    order = [dt for dt, _ in pts]
    for j, name in ((0, "PhiBE"), (1, "LSTD")):
        seq = [means[dt][j] for dt in order]
        ctx.check(f"{name} error decreases as dt shrinks", all(b < a for a, b in zip(seq, seq[1:])),
                  " -> ".join(f"{v:.3e}" for v in seq))
    for dt in order:
        ctx.check(f"PhiBE error <= LSTD at dt={dt}", means[dt][0] <= means[dt][1],
                  f"{means[dt][0]:.3e} vs {means[dt][1]:.3e}")


PRESETS: dict[str, Preset] = {
    "fig1": Preset(
        "fig1",
        dict(lam=0.05, states=4, seeds=20, seed=0, panels={
            "a": dict(dt=5.0, beta=0.1, k=1.0, M=4, J=10),
            "b": dict(dt=0.5, beta=0.1, k=10.0, M=30, J=100),
            "c": dict(dt=0.1, beta=10.0, k=1.0, M=4, J=10),
        }),
        _fig1, lambda p: 5.0 + 0.05 * p["seeds"] * len(p["panels"]),
        description="deterministic linear dynamics, exact-law and trajectory solvers",
    ),
    "fig3": Preset(
        "fig3",
        dict(states=4, seeds=20, seed=0, delta=1e-4, cases={
            "a": dict(dt=5.0, beta=0.1, k=1.0, lam=0.1, M=4, J=20),
            "b": dict(dt=0.1, beta=10.0, k=1.0, lam=5.0, M=4, J=20),
            "c": dict(dt=0.1, beta=10.0, k=10.0, lam=2.0, M=30, J=100),
        }),
        _fig3, lambda p: 10.0 + 0.3 * p["seeds"] * len(p["cases"]) * 1e-4 / p["delta"],
        description="deterministic sin^2 dynamics simulated with Euler steps",
    ),
    "fig4": Preset(
        "fig4",
        dict(lam=0.05, beta=0.1, k=1.0, M=4, states=4, seeds=20, seed=0, dt_grid=[5.0, 2.5, 1.25, 0.625],
             data_dt=5.0, J_grid=[10, 100, 1000], nonlinear=True, nonlinear_lam=0.1, delta=1e-4),
        _fig4, lambda p: 15.0 + 2e-4 * p["seeds"] * sum(p["J_grid"]),
        scale_keys=("J_grid",),
        description="discretization order and data scaling, deterministic",
    ),
    "fig5": Preset(
        "fig5",
        dict(lam=0.05, sigma=1.0, beta=0.1, k=1.0, M=4, states=4, seeds=20, seed=0,
             dt_grid=[1.0, 0.5, 0.25, 0.125], data_dt=1.0, J_grid=[1000, 10000, 100000],
             budget=400000, budget_dt_grid=[1.0, 0.1, 0.01], pairs_n_grid=[1000, 10000, 100000]),
        _fig5,
        lambda p: 5.0 + p["seeds"] * (3e-5 * sum(p["J_grid"]) + 2e-5 * len(p["budget_dt_grid"]) * p["budget"] / 4
                                      + 5e-6 * sum(p["pairs_n_grid"])),
        scale_keys=("J_grid", "budget", "pairs_n_grid"),
        description="OU process: order, data scaling, fixed budget, pairs sample complexity",
    ),
    "table1": Preset(
        "table1",
        dict(n=100000, seeds=20, seed=0, degree=2, min_wins=3, cases=list(LQ_CASES)),
        _table1, lambda p: 1.0 + 1.3e-6 * p["seeds"] * p["n"] * len(p["cases"]),
        scale_keys=("n",),
        description="linear stabilization: closed forms and pairs solvers",
    ),
    "fig8": Preset(
        "fig8",
        dict(n=100000, seeds=20, seed=0, degree=4, truth_degree=8, delta=1e-3, cases=list(CUBIC_CASES)),
        _fig8, lambda p: 2.0 + 2e-7 * p["seeds"] * p["n"] * sum(c[3] for c in CUBIC_CASES.values()) / p["delta"],
        scale_keys=("n",),
        description="cubic stabilization with Euler-Maruyama data",
    ),
    "fig9": Preset(
        "fig9",
        dict(d=10, seeds=20, seed=0, problem_seed=0, dt_grid=[1.0, 0.1], n_grid=[10000, 100000],
             mc_nodes=HIGHDIM_MC_NODES),
        _fig9, lambda p: 5.0 + 2.5e-5 * p["seeds"] * sum(p["n_grid"]),
        scale_keys=("n_grid",),
        description="ten-dimensional linear-quadratic problem",
    ),
}
PRESETS["fig6"] = PRESETS["fig7"] = PRESETS["table1"]


def _typecheck(key: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise TypeError(f"override {key} must be a boolean")
        return value
    if isinstance(default, int) and isinstance(value, (int, float)) and float(value).is_integer():
        return int(value)
    if isinstance(default, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(default, (list, tuple)) and isinstance(value, (list, tuple)):
        return list(value)
    if isinstance(default, dict) and isinstance(value, dict):
        return value
    if isinstance(default, str) and isinstance(value, str):
        return value
    raise TypeError(f"override {key}={value!r} does not match the type of the default {default!r}")


def resolve_params(preset: Preset, overrides: dict) -> dict:
    params = json.loads(json.dumps(preset.defaults))
    for key, value in (overrides or {}).items():
        if key not in params:
            raise KeyError(f"unknown override {key!r} for preset {preset.name}; known: {sorted(params)}")
        params[key] = _typecheck(key, value, params[key])
    return params


def _calibration_ratio() -> float:
    """Speed of this machine relative to the one the nominal costs were measured on."""
    t = time.perf_counter()
    rng = np.random.default_rng(0)
    x = rng.standard_normal((200_000, 1))
    basis = FourierBasis(4)
    for _ in range(5):
        basis.generator(x, x, x[:, :, None])
    return max((time.perf_counter() - t) / 0.45, 0.25)


def apply_budget(preset: Preset, params: dict, budget: float) -> tuple[dict, float]:
    """Scale the sample-size keys down until the nominal cost fits the budget."""
    est = preset.cost(params) * _calibration_ratio()
    if est <= budget or not preset.scale_keys:
        return params, 1.0
    scale = budget / est
    out = dict(params)
    for key in preset.scale_keys:
        val = out[key]
        if isinstance(val, list):
            out[key] = [max(1, int(v * scale)) for v in val]
        else:
            out[key] = max(1, int(val * scale))
    log.warning("preset %s estimated at %.0f s exceeds budget %.0f s; sample sizes scaled by %.3g",
                preset.name, est, budget, scale)
    return out, scale


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], capture_output=True, text=True,
                             timeout=10, cwd=Path(__file__).resolve().parent)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def run_preset(config: ExperimentConfig) -> PresetResult:
    if config.preset not in PRESETS:
        raise KeyError(f"unknown preset {config.preset!r}; available: {sorted(PRESETS)}")
    preset = PRESETS[config.preset]
    params = resolve_params(preset, config.overrides)
    params, scale = apply_budget(preset, params, config.budget_seconds)
    ctx = Context(params, workers=max(1, int(config.workers)))
    t0 = time.perf_counter()
    preset.body(ctx)
    elapsed = time.perf_counter() - t0
    if ctx.failures:
        ctx.notes.append(f"{len(ctx.failures)} cells failed; results are partial")
    result = PresetResult(config.preset, params, ctx.reports, ctx.checks, ctx.failures, scale, elapsed, ctx.notes)
    if config.out_dir:
        write_outputs(result, config)
    return result


def write_outputs(result: PresetResult, config: ExperimentConfig) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_error_csv(out / "errors.csv", result.reports)
    seeds = sorted({r.meta.get("seed") for r in result.reports if r.meta.get("seed") != ""})
    manifest = dict(
        preset=result.preset,
        config=asdict(config),
        params=result.params,
        seeds=seeds,
        budget_scale=result.scale,
        elapsed_seconds=round(result.elapsed, 3),
        git_describe=git_describe(),
        package_version=__version__,
        python=platform.python_version(),
        numpy=np.__version__,
        failures=[dict(cell=k, error=e) for k, e in result.failures],
    )
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    lines = [f"preset {result.preset} ({'ok' if result.ok else 'FAILED'}), "
             f"{result.elapsed:.1f} s, sample scale {result.scale:.3g}"]
    lines += [c.line() for c in result.checks]
    lines += [f"note: {n}" for n in result.notes]
    lines += [f"cell failure {k}: {e.splitlines()[0]}" for k, e in result.failures]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return out
