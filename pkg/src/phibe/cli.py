"""Command-line entry point: ``phibe <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .basis import FourierBasis, gauss_legendre, make_basis
from .dynamics import (
    OU1D,
    CubicStabilization1D,
    Linear1D,
    LinearND,
    NonlinearSin1D,
    TransitionPairs,
    UniformBox,
    simulate_batch,
)
from .estimators import moment_provider
from .fdcoeff import fd_coefficients
from .galerkin import (
    CosCubeTarget,
    assemble_be_projection,
    assemble_phibe,
    designed_reward,
    quadratic_reward,
    solve,
    transition_law,
)
from .modelfree import accumulate_lstd, accumulate_pairs_first_order, accumulate_phibe, solve_empirical


def parse_params(text: str | None) -> dict:
    """``'{"lam": 0.05}'`` or ``lam=0.05,sigma=1``; list values as JSON."""
    if not text:
        return {}
    text = text.strip()
    if text.startswith("{"):
        return json.loads(text)
    out = {}
    for item in text.split(","):
        key, _, raw = item.partition("=")
        out[key.strip()] = json.loads(raw)
    return out


def build_model(name: str, params: dict):
    p = dict(params)
    if name == "linear":
        return Linear1D(p.get("lam", 0.05))
    if name == "sin":
        return NonlinearSin1D(p.get("lam", 0.1))
    if name == "ou":
        return OU1D(p.get("lam", 0.05), p.get("sigma", 1.0))
    if name == "cubic":
        return CubicStabilization1D(p.get("kappa", 0.1), p.get("alpha", 0.1), p.get("b", 0.1),
                                    p.get("K", 2.0), p.get("sigma", 0.05))
    if name == "linearnd":
        A = np.asarray(p["A"], dtype=float)
        return LinearND(A, np.asarray(p.get("sigma_diag", np.zeros(A.shape[0])), dtype=float))
    raise ValueError(f"unknown model {name!r} (linear, sin, ou, cubic, linearnd)")


def _reward(spec: str, model, beta: float):
    """``cos3:k`` (designed so that V = cos^3(k s)) or ``quad:c`` (r = c |s|^2)."""
    kind, _, arg = spec.partition(":")
    if kind == "cos3":
        if model is None:
            raise ValueError("a designed cos3 reward needs --model")
        return designed_reward(CosCubeTarget(float(arg or 1.0)), model, beta)
    if kind == "quad":
        c = float(arg or 1.0)
        d = model.dimension if model is not None else 1
        return quadratic_reward(c * np.eye(d))
    raise ValueError(f"unknown reward {spec!r}")


def _domain(basis, args):
    if args.domain:
        low, high = (float(x) for x in args.domain.split(","))
        return low, high
    return (-math.pi, math.pi) if isinstance(basis, FourierBasis) else (-1.0, 1.0)


def _write_solution(out: Path, V, grid: np.ndarray, sidecar: dict):
    out.parent.mkdir(parents=True, exist_ok=True)
    vals = V(grid)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"s_{j}" for j in range(grid.shape[1])] + ["V"])
        for row, v in zip(grid, vals):
            w.writerow([repr(float(x)) for x in row] + [repr(float(v))])
    sidecar = dict(sidecar, theta=V.theta.tolist(), residual=V.residual, condition=V.condition)
    out.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def _eval_grid(low, high, dim, n=201):
    if dim == 1:
        return np.linspace(low, high, n)[:, None]
    return UniformBox(low, high, dim).sample(n, 0)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_coeffs(args) -> int:
    coeffs = fd_coefficients(args.order)
    w = csv.writer(sys.stdout)
    w.writerow(["j", "a_j"])
    for j, a in enumerate(coeffs.weights):
        w.writerow([j, repr(float(a))])
    w.writerow(["k", "residual"])
    for k, r in enumerate(coeffs.moment_residuals()):
        w.writerow([k, repr(float(r))])
    return 0


def cmd_simulate(args) -> int:
    model = build_model(args.model, parse_params(args.params))
    low, high = (float(x) for x in args.init.split(","))
    s0 = UniformBox(low, high, model.dimension).sample(args.n_traj, args.seed)
    exact = model.has_exact_transition if args.exact is None else args.exact
    X = simulate_batch(model, s0, args.dt, args.m, substeps=args.substeps, seed=args.seed, exact=exact)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["traj_id", "step"] + [f"s_{j}" for j in range(model.dimension)])
        for t, traj in enumerate(X):
            for step, state in enumerate(traj):
                w.writerow([t, step] + [repr(float(x)) for x in state])
    return 0


def cmd_solve_galerkin(args) -> int:
    model = build_model(args.model, parse_params(args.params))
    basis = make_basis(args.basis, model.dimension)
    if model.dimension != 1:
        raise ValueError("solve-galerkin supports one-dimensional models")
    low, high = _domain(basis, args)
    quad = gauss_legendre(low, high, args.nodes)
    reward = _reward(args.reward, model, args.beta)
    if args.mode == "phibe":
        provider = moment_provider(model, substeps=args.substeps, n_samples=args.mc_samples, seed=args.seed)
        system = assemble_phibe(basis, provider, args.beta, args.dt, args.order, quad, reward=reward)
    else:
        law = transition_law(model, args.dt, substeps=args.substeps)
        system = assemble_be_projection(basis, law, args.beta, args.dt, quad, reward=reward)
    V = solve(system, basis)
    _write_solution(Path(args.out), V, _eval_grid(low, high, 1),
                    dict(mode=args.mode, model=model.model_id, basis=basis.name, order=args.order,
                         beta=args.beta, dt=args.dt))
    return 0


def load_data(path):
    """Trajectory CSV (``traj_id, step, s_*``) as ``(J, m+1, d)`` or pair CSV (``s_*, sp_*``)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(x) for x in r] for r in reader if r])
    cols = {name: i for i, name in enumerate(header)}
    s_cols = [cols[c] for c in header if c.startswith("s_")]
    reward = rows[:, cols["reward"]] if "reward" in cols else None
    if "traj_id" in cols:
        order = np.lexsort((rows[:, cols["step"]], rows[:, cols["traj_id"]]))
        rows = rows[order]
        ids = rows[:, cols["traj_id"]]
        J = np.unique(ids).size
        X = rows[:, s_cols].reshape(J, -1, len(s_cols))
        return X, None if reward is None else reward[order].reshape(J, -1)
    sp_cols = [cols[c] for c in header if c.startswith("sp_")]
    return TransitionPairs(rows[:, s_cols], rows[:, sp_cols], dt=1.0, rewards=reward), None


def cmd_solve_modelfree(args) -> int:
    data, traj_rewards = load_data(args.data)
    model = build_model(args.model, parse_params(args.params)) if args.model else None
    if isinstance(data, TransitionPairs):
        data = TransitionPairs(data.starts, data.ends, args.dt, data.rewards)
        dim = data.starts.shape[1]
    else:
        dim = data.shape[2]
    basis = make_basis(args.basis, dim)
    if traj_rewards is not None:
        rewards = traj_rewards
    elif isinstance(data, TransitionPairs) and data.rewards is not None:
        rewards = None
    else:
        rewards = _reward(args.reward, model, args.beta)

    if args.algo in ("phibe-det", "phibe-stoch"):
        if isinstance(data, TransitionPairs):
            raise ValueError(f"{args.algo} needs trajectory data")
        system = accumulate_phibe(None, data, rewards, args.beta, fd_coefficients(args.order), basis,
                                  args.algo == "phibe-stoch", dt=args.dt)
    elif args.algo == "phibe-pairs":
        pairs = data if isinstance(data, TransitionPairs) else _pairs_from_batch(data, rewards, args.dt)
        system = accumulate_pairs_first_order(None, pairs, args.beta, basis,
                                              reward=rewards if callable(rewards) else None)
    else:
        system = accumulate_lstd(None, data, rewards, args.beta, args.dt, basis)
    V = solve_empirical(system, basis)
    low, high = _domain(basis, args)
    _write_solution(Path(args.out), V, _eval_grid(low, high, dim),
                    dict(algo=args.algo, order=args.order, basis=basis.name, beta=args.beta, dt=args.dt,
                         seed=args.seed, samples=system.count, data=str(args.data)))
    return 0


def _pairs_from_batch(X, rewards, dt):
    d = X.shape[2]
    starts = X[:, :-1].reshape(-1, d)
    ends = X[:, 1:].reshape(-1, d)
    if callable(rewards):
        r = np.asarray(rewards(starts), dtype=float).reshape(-1)
    else:
        r = np.asarray(rewards)[:, :-1].reshape(-1)
    return TransitionPairs(starts, ends, dt, r)


def cmd_experiment(args) -> int:
    from .experiments import ExperimentConfig, run_preset

    if args.config:
        config = ExperimentConfig.from_json(args.config)
    else:
        if not args.preset:
            raise ValueError("--preset or --config is required")
        config = ExperimentConfig(args.preset)
    if args.preset:
        config.preset = args.preset
    config.overrides = {**config.overrides, **ExperimentConfig.parse_sets(args.set)}
    config.out_dir = args.out or config.out_dir
    if args.budget is not None:
        config.budget_seconds = args.budget
    if args.workers is not None:
        config.workers = args.workers
    result = run_preset(config)
    for c in result.checks:
        print(c.line())
    for key, err in result.failures:
        print(f"cell failure {key}: {err.splitlines()[0]}")
    return 0 if result.ok else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="phibe", description="Continuous-time policy evaluation toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("coeffs", help="difference weights of a given order and their moment residuals")
    p.add_argument("--order", type=int, required=True)
    p.set_defaults(func=cmd_coeffs)

    p = sub.add_parser("simulate", help="simulate trajectories to CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--params", default="")
    p.add_argument("--dt", type=float, required=True)
    p.add_argument("--m", type=int, required=True, help="number of steps; each trajectory holds m+1 states")
    p.add_argument("--n-traj", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--substeps", type=int, default=1)
    p.add_argument("--init", default=f"{-math.pi},{math.pi}", help="low,high of the uniform initial box")
    p.add_argument("--exact", dest="exact", action="store_true", default=None)
    p.add_argument("--euler", dest="exact", action="store_false")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--basis", default="fourier:4")
    common.add_argument("--order", type=int, default=1)
    common.add_argument("--beta", type=float, required=True)
    common.add_argument("--dt", type=float, required=True)
    common.add_argument("--reward", default="cos3:1")
    common.add_argument("--domain", default="", help="low,high of the evaluation interval")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", required=True)

    p = sub.add_parser("solve-galerkin", parents=[common], help="model-based PhiBE or projected BE")
    p.add_argument("--model", required=True)
    p.add_argument("--params", default="")
    p.add_argument("--mode", choices=("phibe", "be"), default="phibe")
    p.add_argument("--nodes", type=int, default=400)
    p.add_argument("--substeps", type=int, default=1000)
    p.add_argument("--mc-samples", type=int, default=1000)
    p.set_defaults(func=cmd_solve_galerkin)

    p = sub.add_parser("solve-modelfree", parents=[common], help="data-driven PhiBE or LSTD")
    p.add_argument("--algo", choices=("phibe-det", "phibe-stoch", "phibe-pairs", "lstd"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--model", default="")
    p.add_argument("--params", default="")
    p.set_defaults(func=cmd_solve_modelfree)

    p = sub.add_parser("experiment", help="run a named preset")
    p.add_argument("--preset", default="")
    p.add_argument("--config", default="", help="JSON file with preset, overrides, out_dir, budget_seconds")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", default="")
    p.add_argument("--budget", type=float, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
