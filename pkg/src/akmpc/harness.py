"""Experiment orchestration: configs, the four-controller comparison
(nominal iLQR, frozen Koopman, adaptive Koopman, RFF), metrics, the
sensitivity sweep, timing, and file outputs."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cartpole
from .adaptation import (AdaptationConfig, ReplayBuffer, TargetPair,
                         adapt_step, make_adaptation_optimizer)
from .cartpole import CartpoleParams
from .embedding import EmbeddingModel
from .mpc import (QuadraticCostSpec, SolverError, ilqr_solve,
                  koopman_mpc_step, shift_warm_start)
from .offline import (OfflineTrainConfig, default_init_sampler,
                      generate_dataset, train_offline)
from .rff import RffModel, augmented_step, median_heuristic_sigma

log = logging.getLogger(__name__)

CONTROLLERS = ("nominal", "koopman", "adaptive_koopman", "rff")
DT_DEFAULT = 1.0 / 15.0


@dataclass
class ExperimentConfig:
    dt: float = DT_DEFAULT
    episode_steps: int = 90
    horizon: int = 20
    q_state: tuple = (5.0, 0.1, 5.0, 0.1)
    r_input: float = 0.1
    nominal_params: CartpoleParams = field(
        default_factory=lambda: cartpole.NOMINAL_PARAMS)
    true_params: CartpoleParams | None = None
    mismatch_pct: float | None = None   # true = nominal * (1 + pct) if set
    controllers: tuple = CONTROLLERS
    runs: int = 10
    seed: int = 0
    force_limit: float | None = None
    checkpoint: str | None = None
    offline: OfflineTrainConfig = field(default_factory=OfflineTrainConfig)
    adaptation: AdaptationConfig = field(default_factory=AdaptationConfig)
    rff_features: int = 256
    rff_forgetting: float = 0.999
    rff_p0: float = 100.0
    rff_sigma: float | None = None   # None: median heuristic on nominal data

    def __post_init__(self):
        if self.episode_steps < 1 or self.runs < 1:
            raise ValueError("episode_steps and runs must be positive")
        if self.true_params is None:
            if self.mismatch_pct is not None:
                self.true_params = cartpole.scale_params(
                    self.nominal_params, self.mismatch_pct)
            else:
                self.true_params = cartpole.TRUE_PARAMS
        unknown = set(self.controllers) - set(CONTROLLERS)
        if unknown:
            raise ValueError(f"unknown controllers: {sorted(unknown)}")

    def cost(self):
        return QuadraticCostSpec.regulator(self.horizon, self.q_state,
                                           [[self.r_input]])

    def to_dict(self):
        d = dict(self.__dict__)
        d["nominal_params"] = self.nominal_params.to_dict()
        d["true_params"] = self.true_params.to_dict()
        d["q_state"] = list(self.q_state)
        d["controllers"] = list(self.controllers)
        d["offline"] = self.offline.to_dict()
        a = self.adaptation
        d["adaptation"] = {
            "tau": a.tau, "batch_size": a.batch_size,
            "gradient_steps": a.gradient_steps,
            "buffer_capacity": a.buffer_capacity,
            "learning_rate": a.learning_rate,
            "update_A": a.mask.update_A, "update_B": a.mask.update_B,
            "update_theta": a.mask.update_theta,
            "lam1": a.weights.lam1, "lam2": a.weights.lam2,
        }
        return d

    @classmethod
    def from_dict(cls, d):
        from .embedding import LossWeights, ParamMask
        d = dict(d)
        if "nominal_params" in d:
            d["nominal_params"] = CartpoleParams.from_dict(d["nominal_params"])
        if d.get("true_params") is not None:
            d["true_params"] = CartpoleParams.from_dict(d["true_params"])
        if "q_state" in d:
            d["q_state"] = tuple(d["q_state"])
        if "controllers" in d:
            d["controllers"] = tuple(d["controllers"])
        if "offline" in d:
            d["offline"] = OfflineTrainConfig.from_dict(d["offline"])
        if "adaptation" in d:
            a = dict(d["adaptation"])
            mask = ParamMask(a.pop("update_A", False),
                             a.pop("update_B", True),
                             a.pop("update_theta", True))
            weights = LossWeights(a.pop("lam1", 1.0), a.pop("lam2", 0.0))
            d["adaptation"] = AdaptationConfig(mask=mask, weights=weights, **a)
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass
class RunResult:
    controller: str
    run_index: int
    states: np.ndarray       # (K+1, n), includes x_0
    inputs: np.ndarray       # (K, p)
    errors: np.ndarray       # (K,), ||x_{k+1} - x_ref||
    losses: np.ndarray       # (K,), nan where not applicable
    a_drift: np.ndarray      # (K,), ||A_target - A_main||, nan where n/a
    solve_times: np.ndarray  # (K,), seconds per control computation
    iterations: np.ndarray   # (K,), solver iterations
    failed: bool = False
    failure_message: str = ""


class NominalMpcController:
    """Receding-horizon iLQR on the nominal plant model."""

    name = "nominal"

    def __init__(self, cfg):
        self.cost = cfg.cost()
        self.dt = cfg.dt
        self.params = cfg.nominal_params
        self.warm = None

    def control(self, x):
        sol = ilqr_solve(lambda s, u: cartpole.step(s, u, self.dt, self.params),
                         x, self.cost, warm_start=self.warm)
        self.warm = shift_warm_start(sol.inputs)
        return sol.inputs[0], {"iterations": sol.iterations}

    def observe(self, x, u, y):
        pass


class KoopmanMpcController:
    """Frozen linear-embedding MPC using the offline prior model."""

    name = "koopman"

    def __init__(self, cfg, model):
        self.cost = cfg.cost()
        self.model = model.copy()

    def control(self, x):
        sol = koopman_mpc_step(x, self.model, self.cost, return_solution=True)
        return sol.inputs[0], {"iterations": sol.iterations}

    def observe(self, x, u, y):
        pass


class AdaptiveKoopmanController:
    """Adaptive Koopman MPC with replay buffer and soft target update."""

    name = "adaptive_koopman"

    def __init__(self, cfg, model, seed=0):
        self.cost = cfg.cost()
        self.acfg = cfg.adaptation
        self.pair = TargetPair.from_prior(model)
        self.buffer = ReplayBuffer(self.acfg.buffer_capacity, seed=seed)
        self.opt = make_adaptation_optimizer(self.pair, self.acfg)
        self.last_loss = float("nan")

    def control(self, x):
        u = koopman_mpc_step(x, self.pair.target, self.cost)
        return u, {"iterations": 1}

    def observe(self, x, u, y):
        from .adaptation import learn_from_buffer, soft_update
        from .offline import Transition
        self.buffer.add(Transition(np.asarray(x, float).copy(),
                                   np.atleast_1d(np.asarray(u, float)).copy(),
                                   np.asarray(y, float).copy()))
        self.last_loss = learn_from_buffer(self.pair, self.buffer, self.opt,
                                           self.acfg)
        soft_update(self.pair, self.acfg.tau)

    @property
    def a_drift(self):
        return float(np.linalg.norm(self.pair.target.A - self.pair.main.A))


class RffMpcController:
    """iLQR on nominal-plus-RFF-residual dynamics, RLS-updated online."""

    name = "rff"

    def __init__(self, cfg, sigma=None, seed=0):
        self.cost = cfg.cost()
        self.dt = cfg.dt
        self.params = cfg.nominal_params
        self.model = RffModel(4, 1, n_features=cfg.rff_features,
                              sigma=sigma or cfg.rff_sigma or 1.0,
                              forgetting=cfg.rff_forgetting,
                              p0=cfg.rff_p0, seed=seed)
        self.warm = None

    def _nominal_step(self, x, u):
        return cartpole.step(x, u, self.dt, self.params)

    def control(self, x):
        f = augmented_step(self.model, self._nominal_step)
        sol = ilqr_solve(f, x, self.cost, warm_start=self.warm)
        self.warm = shift_warm_start(sol.inputs)
        return sol.inputs[0], {"iterations": sol.iterations}

    def observe(self, x, u, y):
        residual = np.asarray(y, float) - self._nominal_step(x, u)
        self.model.update(x, u, residual)


def make_controller(name, cfg, model=None, seed=0, rff_sigma=None):
    if name == "nominal":
        return NominalMpcController(cfg)
    if name == "koopman":
        if model is None:
            raise ValueError("koopman controller needs an offline model")
        return KoopmanMpcController(cfg, model)
    if name == "adaptive_koopman":
        if model is None:
            raise ValueError("adaptive controller needs an offline model")
        return AdaptiveKoopmanController(cfg, model, seed=seed)
    if name == "rff":
        return RffMpcController(cfg, sigma=rff_sigma, seed=seed)
    raise ValueError(f"unknown controller {name!r}")


def run_episode(cfg, controller, x0, run_index=0):
    """Closed-loop rollout on the true plant.

    Deterministic for a fixed (config, controller state, x0). A controller
    failure truncates the episode and is recorded on the result.
    """
    n_steps = cfg.episode_steps
    ref = cfg.cost().x_ref[0]
    x = np.asarray(x0, dtype=float).copy()
    states = [x.copy()]
    inputs, errors, losses, drifts, times, iters = [], [], [], [], [], []
    failed, message = False, ""
    for k in range(n_steps):
        try:
            t0 = time.perf_counter()
            u, diag = controller.control(x)
            u = np.atleast_1d(np.asarray(u, dtype=float))
            if cfg.force_limit is not None:
                u = np.clip(u, -cfg.force_limit, cfg.force_limit)
            y = cartpole.step(x, u, cfg.dt, cfg.true_params)
            controller.observe(x, u, y)
            times.append(time.perf_counter() - t0)
        except (SolverError, cartpole.IntegrationError, ArithmeticError) as exc:
            failed, message = True, f"step {k}: {exc}"
            log.warning("%s run %d failed at %s", controller.name,
                        run_index, message)
            break
        inputs.append(u)
        states.append(y.copy())
        errors.append(float(np.linalg.norm(y - ref)))
        losses.append(getattr(controller, "last_loss", float("nan")))
        drifts.append(getattr(controller, "a_drift", float("nan")))
        iters.append(diag.get("iterations", 1))
        x = y

    def pad(seq, fill=np.nan):
        arr = np.full(n_steps, fill, dtype=float)
        arr[:len(seq)] = seq
        return arr

    state_arr = np.full((n_steps + 1, 4), np.nan)
    state_arr[:len(states)] = states
    input_arr = np.full((n_steps, 1), np.nan)
    if inputs:
        input_arr[:len(inputs)] = inputs
    return RunResult(controller.name, run_index, state_arr, input_arr,
                     pad(errors), pad(losses), pad(drifts), pad(times),
                     pad(iters), failed, message)


def average_error(results):
    """Per-step mean of Euclidean tracking errors across runs."""
    if not results:
        raise ValueError("no results")
    lengths = {r.errors.shape[0] for r in results}
    if len(lengths) != 1:
        raise ValueError("error series lengths differ")
    return np.mean([r.errors for r in results], axis=0)


def timing_report(results_by_controller):
    """Episode and per-solve wall-time statistics per controller."""
    out = {}
    for name, results in results_by_controller.items():
        episode_times = [float(np.nansum(r.solve_times)) for r in results
                         if np.any(np.isfinite(r.solve_times))]
        solves = np.concatenate([r.solve_times for r in results]) \
            if results else np.array([])
        solves = solves[np.isfinite(solves)]
        if not episode_times:
            out[name] = {"episodes": 0}
            continue
        out[name] = {
            "episodes": len(episode_times),
            "episode_mean_s": float(np.mean(episode_times)),
            "episode_std_s": float(np.std(episode_times)),
            "episode_median_s": float(np.median(episode_times)),
            "solve_mean_us": float(np.mean(solves) * 1e6),
            "solve_median_us": float(np.median(solves) * 1e6),
        }
    return out


def obtain_offline_model(cfg, workdir=None):
    """Load the checkpoint if configured, else generate data and train."""
    if cfg.checkpoint:
        return EmbeddingModel.load(cfg.checkpoint)
    data = generate_dataset(cfg.nominal_params, cfg.cost(), cfg.dt,
                            cfg.offline.n_traj, cfg.offline.traj_len,
                            cfg.offline.seed,
                            exploration_noise=cfg.offline.exploration_noise)
    model, history = train_offline(data, cfg.offline)
    if workdir is not None:
        workdir = Path(workdir)
        workdir.mkdir(parents=True, exist_ok=True)
        model.save(workdir / "offline_model.json")
        data.save(workdir / "offline_data.csv", workdir / "offline_data.json")
        with open(workdir / "offline_history.json", "w") as f:
            json.dump(history, f)
    return model


def sample_initial_conditions(cfg):
    """One initial state per run index, shared across controllers."""
    streams = np.random.SeedSequence([cfg.seed, 1]).spawn(cfg.runs)
    return [default_init_sampler(np.random.default_rng(s)) for s in streams]


def _rff_sigma(cfg, model_data=None):
    if cfg.rff_sigma is not None:
        return cfg.rff_sigma
    if model_data is not None:
        Z = np.hstack([model_data.X, model_data.U])
        return median_heuristic_sigma(Z, seed=cfg.seed)
    # fall back to the scale of the initial-condition box plus unit force
    return 1.5


def run_experiment(cfg, outdir, model=None):
    """Full controller comparison; writes config.json, runs/*.csv,
    summary.csv, and timing.json under ``outdir``."""
    outdir = Path(outdir)
    (outdir / "runs").mkdir(parents=True, exist_ok=True)
    with open(outdir / "config.json", "w") as f:
        json.dump(cfg.to_dict(), f, indent=2)

    needs_model = {"koopman", "adaptive_koopman"} & set(cfg.controllers)
    if model is None and needs_model:
        model = obtain_offline_model(cfg, workdir=outdir)
    x0s = sample_initial_conditions(cfg)
    sigma = _rff_sigma(cfg)

    results = {name: [] for name in cfg.controllers}
    for run in range(cfg.runs):
        for name in cfg.controllers:
            controller = make_controller(name, cfg, model=model,
                                         seed=cfg.seed * 1000 + run,
                                         rff_sigma=sigma)
            res = run_episode(cfg, controller, x0s[run], run_index=run)
            results[name].append(res)
            write_run_csv(outdir / "runs" / f"{name}_run{run:02d}.csv", res)

    write_summary_csv(outdir / "summary.csv", cfg, results)
    with open(outdir / "timing.json", "w") as f:
        json.dump(timing_report(results), f, indent=2)
    return results


def write_run_csv(path, res):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["k", "x1", "x2", "x3", "x4", "u", "error", "loss",
                    "a_target_drift", "iterations", "solve_time_us"])
        for k in range(res.errors.shape[0]):
            row = [k, *res.states[k + 1], res.inputs[k, 0], res.errors[k],
                   res.losses[k], res.a_drift[k], res.iterations[k],
                   res.solve_times[k] * 1e6]
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v
                        for v in row])


def write_summary_csv(path, cfg, results):
    """Per-step average error per controller; no wall-clock content, so the
    file is byte-identical across reruns with the same config and seed."""
    names = list(results.keys())
    avgs = {n: average_error(results[n]) for n in names}
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "time_s"] + [f"avg_error_{n}" for n in names])
        for k in range(cfg.episode_steps):
            row = [k, (k + 1) * cfg.dt] + [avgs[n][k] for n in names]
            w.writerow([row[0]] + [f"{v:.17g}" for v in row[1:]])


def load_summary(path):
    with open(path) as f:
        rows = list(csv.reader(f))
    header = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    names = [h.replace("avg_error_", "") for h in header[2:]]
    return names, data[:, 1], {n: data[:, 2 + i] for i, n in enumerate(names)}


def sensitivity_sweep(cfg, outdir, pct_list=(0.10, 0.20, 0.30), model=None):
    """Run the comparison at each mismatch percentage; true plant params are
    nominal * (1 + pct). Returns {pct: results}."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    needs_model = {"koopman", "adaptive_koopman"} & set(cfg.controllers)
    if model is None and needs_model:
        model = obtain_offline_model(cfg, workdir=outdir)
    all_results = {}
    for pct in pct_list:
        sub = ExperimentConfig.from_dict({
            **cfg.to_dict(), "true_params": None, "mismatch_pct": pct})
        all_results[pct] = run_experiment(sub, outdir / f"pct_{pct:.2f}",
                                          model=model)
    with open(outdir / "sweep.json", "w") as f:
        json.dump({"pct_list": list(pct_list)}, f)
    return all_results
