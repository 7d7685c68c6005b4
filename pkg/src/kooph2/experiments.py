"""End-to-end experiment pipeline: collect, fit, cover, synthesize, simulate.

A single ``ExperimentConfig`` drives every stage.  Stages communicate
through files in a workspace directory (datasets as npz, models/gains as
structured text, trajectories as CSV), so each stage can also run on its
own from the command line.  Every stochastic choice is derived from
explicit seeds; identical configs produce identical outputs.
"""

import json
import os
from dataclasses import dataclass, field, asdict, fields as dc_fields

import numpy as np

from . import dynamics, edmd, observables, polytope as poly_mod, synthesis

__all__ = [
    "ConfigError",
    "StageError",
    "ExperimentConfig",
    "duffing_config",
    "kdv_config",
    "build_plant",
    "build_dictionary",
    "collect_datasets",
    "fit_predictors",
    "vertex_prediction_report",
    "l2_metric",
    "run_experiment",
    "save_dataset",
    "load_dataset",
    "save_gain",
    "load_gain",
]

KDV_PROFILE_CENTERS = (np.pi / 2.0, -np.pi / 2.0)


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class StageError(RuntimeError):
    """A pipeline stage failed; partial artifacts stay on disk."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class ExperimentConfig:
    """Everything a reproduction run needs, with explicit seeds."""

    name: str = "experiment"
    plant: str = "duffing"  # "duffing" | "kdv"
    dt: float = 0.1
    # kdv plant parameters
    grid_size: int = 128
    kdv_substeps: int = 4
    bump_exponent_sign: float = -1.0
    probe_indices: list | None = None
    # dataset collection
    num_datasets: int = 4
    samples_per_dataset: int = 150  # duffing one-step pairs per dataset
    num_trajectories: int = 100  # kdv trajectories per dataset
    trajectory_steps: int = 199  # transitions per kdv trajectory
    sample_range: float = 1.0  # uniform bound for sampled states/inputs
    data_seed: int = 11
    noise_variance: float = 1e-4  # measurement noise on recorded outcomes
    # lifting dictionary
    dictionary: str = "monomials_deg2"
    dictionary_params: dict = field(default_factory=dict)
    # polytope construction
    h: int = 2
    varied_blocks: list = field(default_factory=lambda: ["A"])
    b_w: str | list = "ones"
    # synthesis weights
    C_z: list | None = None
    D_zu: list | None = None
    Q: list | None = None
    R: list | None = None
    # closed-loop evaluation
    x0: list | None = None  # None for kdv: per-seed random profile mix
    sim_steps: int = 100
    eval_noise_variance: float = 1e-4
    eval_seeds: list = field(default_factory=lambda: list(range(20)))
    blowup: float = 1e6
    # solver options
    eps: float = 1e-8
    tol: float = 1e-7
    max_iter: int = 200
    shared_p: bool = False

    def validate(self):
        if self.plant not in ("duffing", "kdv"):
            raise ConfigError(f"unknown plant '{self.plant}'")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.num_datasets < 1:
            raise ConfigError("need at least one dataset")
        if self.h < 0:
            raise ConfigError("h must be nonnegative")
        for name in ("C_z", "D_zu", "Q", "R"):
            if getattr(self, name) is None:
                raise ConfigError(f"missing weight matrix '{name}'")
        if self.plant == "duffing" and self.x0 is None:
            raise ConfigError("duffing experiments need an explicit x0")
        if not self.eval_seeds:
            raise ConfigError("need at least one evaluation seed")
        if self.plant == "kdv":
            n = self.grid_size
            if n < 4 or (n & (n - 1)) != 0:
                raise ConfigError("grid_size must be a power of two")
        return self

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=1)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dc_fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        try:
            with open(path) as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config file: {err}") from err
        return cls.from_dict(data)

    def synthesis_options(self):
        return synthesis.SynthesisOptions(
            eps=self.eps, tol=self.tol, max_iter=self.max_iter, shared_p=self.shared_p
        )


def duffing_config(**overrides):
    """The oscillator benchmark configuration used throughout the docs."""
    cfg = ExperimentConfig(
        name="duffing",
        plant="duffing",
        dt=0.1,
        num_datasets=4,
        samples_per_dataset=150,
        dictionary="monomials_deg2",
        h=2,
        C_z=[
            [10.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0],
        ],
        D_zu=[[0.0], [0.0], [1.0]],
        Q=np.diag([100.0, 1.0, 0.0, 0.0, 0.0]).tolist(),
        R=[[1.0]],
        x0=[-0.08, 0.97],
        sim_steps=100,
        noise_variance=1e-4,
        eval_noise_variance=1e-4,
        eval_seeds=list(range(20)),
    )
    return _apply_overrides(cfg, overrides)


def kdv_config(**overrides):
    """The shallow-water wave suppression benchmark configuration."""
    n = int(overrides.get("grid_size", 128))
    probes = np.round(np.arange(7) * n / 7).astype(int).tolist()
    cfg = ExperimentConfig(
        name="kdv",
        plant="kdv",
        dt=0.01,
        grid_size=n,
        probe_indices=probes,
        data_seed=31,
        num_datasets=4,
        num_trajectories=100,
        trajectory_steps=199,
        dictionary="probes",
        h=2,
        C_z=np.vstack([np.eye(7), np.zeros((3, 7))]).tolist(),
        D_zu=np.vstack([np.zeros((7, 3)), np.eye(3)]).tolist(),
        Q=np.eye(7).tolist(),
        R=np.eye(3).tolist(),
        x0=None,
        sim_steps=2000,
        noise_variance=0.0,
        eval_noise_variance=0.0,
        eval_seeds=list(range(10)),
    )
    return _apply_overrides(cfg, overrides)


def _apply_overrides(cfg, overrides):
    for key, value in overrides.items():
        if not hasattr(cfg, key):
            raise ConfigError(f"unknown config field '{key}'")
        setattr(cfg, key, value)
    return cfg


def build_plant(config):
    if config.plant == "duffing":
        return dynamics.DuffingPlant(dt=config.dt)
    return dynamics.KdVPlant(
        n=config.grid_size,
        dt=config.dt,
        nsub=config.kdv_substeps,
        exponent_sign=config.bump_exponent_sign,
    )


def build_dictionary(config):
    name = config.dictionary
    if name == "monomials_deg2":
        return observables.monomials_deg2()
    if name == "monomials":
        try:
            return observables.monomial_dictionary(config.dictionary_params["exponents"])
        except KeyError as err:
            raise ConfigError("monomials dictionary needs dictionary_params.exponents") from err
    if name == "probes":
        if config.probe_indices is None:
            raise ConfigError("probes dictionary needs probe_indices")
        return observables.probe_dictionary(config.probe_indices, config.grid_size)
    if name == "identity":
        try:
            return observables.identity_dictionary(config.dictionary_params["dim"])
        except KeyError as err:
            raise ConfigError("identity dictionary needs dictionary_params.dim") from err
    raise ConfigError(f"unknown dictionary '{name}'")


def disturbance_matrix(config, n_features):
    if isinstance(config.b_w, str):
        if config.b_w != "ones":
            raise ConfigError(f"unknown b_w spec '{config.b_w}'")
        return np.ones((n_features, 1))
    b = np.atleast_2d(np.asarray(config.b_w, dtype=float))
    if b.shape[0] != n_features:
        raise ConfigError("b_w rows must match the feature count")
    return b


def kdv_initial_profiles(x):
    """The three spatial profiles mixed into collection initial conditions."""
    return np.stack(
        [
            np.exp(-((x - np.pi / 2.0) ** 2)),
            -np.sin(x / 2.0) ** 2,
            np.exp(-((x + np.pi / 2.0) ** 2)),
        ]
    )


def random_profile_mix(rng, x):
    w = rng.random(3)
    w = w / w.sum()
    return w @ kdv_initial_profiles(x)


# ---------------------------------------------------------------------------
# Stage: data collection
# ---------------------------------------------------------------------------


def collect_datasets(config) -> list:
    """Collect ``num_datasets`` datasets with independent seeded streams.

    Duffing mode records independent one-step pairs: (x, u) are design
    points sampled uniformly and recorded exactly; the measured outcome
    F(x, u) carries the configured Gaussian measurement noise.  KdV mode
    rolls out multi-step trajectories under uniform random constant-per-
    step inputs and records the field at every sample.
    """
    config.validate()
    out = []
    for l in range(config.num_datasets):
        rng = np.random.default_rng([config.data_seed, l])
        if config.plant == "duffing":
            out.append(_collect_duffing(config, rng, l))
        else:
            out.append(_collect_kdv(config, rng, l))
    return out


def _collect_duffing(config, rng, index):
    m = config.samples_per_dataset
    r = config.sample_range
    x = rng.uniform(-r, r, (m, 2))
    u = rng.uniform(-r, r, (m, 1))
    x_next = dynamics.duffing_rk4(x, u[:, 0], config.dt)
    if config.noise_variance > 0:
        x_next = x_next + rng.normal(0.0, np.sqrt(config.noise_variance), x_next.shape)
    return edmd.SnapshotDataset(
        states=x,
        inputs=u,
        next_states=x_next,
        dt=config.dt,
        sampler=f"duffing-onestep-uniform[{-r},{r}]-base{config.data_seed}",
        seed=index,
    )


def _collect_kdv(config, rng, index):
    plant = build_plant(config)
    n_traj = config.num_trajectories
    steps = config.trajectory_steps
    r = config.sample_range
    weights = rng.random((n_traj, 3))
    weights /= weights.sum(axis=1, keepdims=True)
    fields = weights @ kdv_initial_profiles(plant.x)  # (n_traj, n)
    inputs = rng.uniform(-r, r, (steps, n_traj, 3))
    snaps = np.empty((steps + 1, n_traj, plant.n))
    snaps[0] = fields
    for k in range(steps):
        fields = plant.step(fields, inputs[k])
        snaps[k + 1] = fields
    if config.noise_variance > 0:
        snaps = snaps + rng.normal(0.0, np.sqrt(config.noise_variance), snaps.shape)
    # trajectory-major triples: all transitions of trajectory 0 first
    snaps = snaps.transpose(1, 0, 2)  # (n_traj, steps+1, n)
    states = snaps[:, :-1].reshape(-1, plant.n)
    next_states = snaps[:, 1:].reshape(-1, plant.n)
    us = inputs.transpose(1, 0, 2).reshape(-1, 3)
    return edmd.SnapshotDataset(
        states=states,
        inputs=us,
        next_states=next_states,
        dt=config.dt,
        sampler=f"kdv-trajectories-uniform[{-r},{r}]-base{config.data_seed}",
        seed=index,
    )


def save_dataset(ds: edmd.SnapshotDataset, path):
    np.savez_compressed(
        path,
        states=ds.states,
        inputs=ds.inputs,
        next_states=ds.next_states,
        dt=ds.dt,
        sampler=ds.sampler,
        seed=ds.seed,
    )


def load_dataset(path) -> edmd.SnapshotDataset:
    with np.load(path, allow_pickle=False) as z:
        return edmd.SnapshotDataset(
            states=z["states"],
            inputs=z["inputs"],
            next_states=z["next_states"],
            dt=float(z["dt"]),
            sampler=str(z["sampler"]),
            seed=int(z["seed"]),
        )


# ---------------------------------------------------------------------------
# Stage: fitting and polytope construction
# ---------------------------------------------------------------------------


def fit_predictors(config, datasets, dict_obj=None):
    dict_obj = dict_obj or build_dictionary(config)
    b_w = disturbance_matrix(config, dict_obj.n_features)
    return [edmd.fit_dataset(ds, dict_obj, b_w=b_w) for ds in datasets]


def vertex_prediction_report(polytope, dataset, dict_obj, in_sample=True):
    """Per-vertex one-step prediction RMS error per feature over a dataset."""
    mats = edmd.assemble(dataset, dict_obj)
    table = []
    for A, B, _ in polytope.vertices:
        pred = A @ mats.G + B @ mats.U
        err = pred - mats.Ghat
        table.append(np.sqrt(np.mean(err**2, axis=1)))
    return {
        "rms": np.array(table),
        "labels": list(dict_obj.labels),
        "in_sample": bool(in_sample),
    }


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def l2_metric(trajectory):
    """Cumulative sum of squared state norms, plus the running series."""
    states = trajectory.states if isinstance(trajectory, dynamics.Trajectory) else trajectory
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if not np.all(np.isfinite(states)):
        raise ValueError("non-finite trajectory")
    running = np.cumsum(np.sum(states**2, axis=1))
    total = float(running[-1]) if running.size else 0.0
    return total, running


def half_life_steps(norms):
    """First sample index where the norm drops to half its initial value."""
    norms = np.asarray(norms, dtype=float)
    if norms.size == 0 or norms[0] == 0.0:
        return 0
    below = np.flatnonzero(norms <= 0.5 * norms[0])
    return int(below[0]) if below.size else None


# ---------------------------------------------------------------------------
# Stage: full experiment
# ---------------------------------------------------------------------------


def save_gain(S, path, method="", extra=None):
    record = {"kind": "gain", "method": method, "S": edmd._mat_to_json(np.atleast_2d(S))}
    record.update(extra or {})
    with open(path, "w") as f:
        json.dump(record, f, indent=1)


def load_gain(path):
    with open(path) as f:
        record = json.load(f)
    if record.get("kind") != "gain":
        raise ValueError("not a gain record")
    return edmd._mat_from_json(record["S"]), record


def _controller_metrics(config, traj, probe_idx):
    if config.plant == "duffing":
        visible = traj.states
    else:
        visible = traj.states[:, probe_idx]
    total, running = l2_metric(visible)
    norms = np.linalg.norm(visible, axis=1)
    record = {
        "l2": total,
        "l2_running": running.tolist(),
        "peak_abs_x1": float(np.max(np.abs(visible[:, 0]))),
        "half_life": half_life_steps(norms),
        "final_norm": float(norms[-1]),
        "diverged": bool(traj.diverged),
    }
    return record


def _eval_initial_state(config, seed):
    if config.x0 is not None:
        return np.asarray(config.x0, dtype=float)
    rng = np.random.default_rng([config.data_seed, 997, seed])
    return random_profile_mix(rng, dynamics.kdv_grid(config.grid_size))


def run_experiment(config, out_dir) -> dict:
    """Run every pipeline stage and write a machine-readable report.

    Fits one predictor per dataset, covers them with a polytope, designs
    the robust gain on the polytope and the nominal/LQR gains on the first
    dataset's predictor, then simulates all three closed loops on the true
    plant over the configured seeds.  Raises StageError with the failing
    stage's name; artifacts written before the failure stay in place.
    """
    config.validate()
    os.makedirs(out_dir, exist_ok=True)
    config.to_json(os.path.join(out_dir, "config.json"))

    def stage(name, fn):
        try:
            return fn()
        except Exception as err:
            raise StageError(name, err) from err

    datasets = stage("collect", lambda: _stage_collect(config, out_dir))
    dict_obj = build_dictionary(config)
    predictors = stage("fit", lambda: _stage_fit(config, datasets, dict_obj, out_dir))
    polytope = stage("polytope", lambda: _stage_polytope(config, predictors, out_dir))
    gains = stage("synthesize", lambda: _stage_synthesize(config, polytope, predictors, out_dir))
    trajectories = stage("simulate", lambda: _stage_simulate(config, gains, dict_obj, out_dir))
    report = stage(
        "report",
        lambda: _stage_report(
            config, datasets, predictors, polytope, gains, trajectories, dict_obj, out_dir
        ),
    )
    return report


def _stage_collect(config, out_dir):
    datasets = collect_datasets(config)
    ddir = os.path.join(out_dir, "datasets")
    os.makedirs(ddir, exist_ok=True)
    for i, ds in enumerate(datasets):
        save_dataset(ds, os.path.join(ddir, f"dataset_{i:02d}.npz"))
    return datasets

def _stage_fit(config, datasets, dict_obj, out_dir):
    predictors = fit_predictors(config, datasets, dict_obj)
    pdir = os.path.join(out_dir, "predictors")
    os.makedirs(pdir, exist_ok=True)
    for i, pred in enumerate(predictors):
        edmd.save_predictor(pred, os.path.join(pdir, f"predictor_{i:02d}.json"))
    return predictors


def _stage_polytope(config, predictors, out_dir):
    poly = poly_mod.build_polytope(predictors, config.h, blocks=tuple(config.varied_blocks))
    poly_mod.save_polytope(poly, os.path.join(out_dir, "polytope.json"))
    spreads = poly_mod.spread_table(predictors, blocks=tuple(config.varied_blocks))
    with open(os.path.join(out_dir, "spreads.json"), "w") as f:
        json.dump(
            [{"block": b, "row": i, "col": j, "spread": s} for b, i, j, s in spreads],
            f,
            indent=1,
        )
    return poly


def _stage_synthesize(config, polytope, predictors, out_dir):
    plant_weights = synthesis.GeneralizedPlant(C_z=config.C_z, D_zu=config.D_zu)
    opts = config.synthesis_options()
    nominal_model = predictors[0]

    robust = synthesis.robust_synthesis(polytope, plant_weights, opts)
    synthesis.save_synthesis(robust, os.path.join(out_dir, "synthesis_robust.json"))
    save_gain(robust.S, os.path.join(out_dir, "gain_robust.json"), "robust",
              {"J_syn": robust.J_syn})

    nominal = synthesis.nominal_synthesis(nominal_model, plant_weights, opts)
    synthesis.save_synthesis(nominal, os.path.join(out_dir, "synthesis_nominal.json"))
    save_gain(nominal.S, os.path.join(out_dir, "gain_nominal.json"), "nominal",
              {"J_syn": nominal.J_syn})

    S_lqr = synthesis.lqr_gain(nominal_model.A, nominal_model.B, config.Q, config.R)
    save_gain(S_lqr, os.path.join(out_dir, "gain_lqr.json"), "lqr")

    return {
        "robust": {"S": robust.S, "result": robust},
        "nominal": {"S": nominal.S, "result": nominal},
        "lqr": {"S": S_lqr, "result": None},
    }


def _stage_simulate(config, gains, dict_obj, out_dir):
    plant = build_plant(config)
    tdir = os.path.join(out_dir, "trajectories")
    os.makedirs(tdir, exist_ok=True)
    runs = {}
    for name, g in gains.items():
        runs[name] = []
        for seed in config.eval_seeds:
            x0 = _eval_initial_state(config, seed)
            noise = dynamics.NoiseSpec(
                variance=np.full(plant.state_dim, config.eval_noise_variance),
                seed=int(seed),
            )
            traj = dynamics.simulate_closed_loop(
                plant, dict_obj, g["S"], x0, config.sim_steps,
                noise=noise, dt=config.dt, blowup=config.blowup,
            )
            csv_path = os.path.join(tdir, f"{name}_seed{seed:03d}.csv")
            dynamics.save_trajectory_csv(traj, csv_path)
            runs[name].append((seed, traj, os.path.relpath(csv_path, out_dir)))
    return runs


def _stage_report(config, datasets, predictors, polytope, gains, runs, dict_obj, out_dir):
    probe_idx = np.asarray(config.probe_indices or [], dtype=int)
    plant_weights = synthesis.GeneralizedPlant(C_z=config.C_z, D_zu=config.D_zu)
    opts = config.synthesis_options()

    controllers = {}
    for name, entries in runs.items():
        per_seed = []
        for seed, traj, csv_rel in entries:
            rec = _controller_metrics(config, traj, probe_idx)
            rec["seed"] = seed
            rec["csv"] = csv_rel
            per_seed.append(rec)
        med = {
            "l2": _median([r["l2"] for r in per_seed]),
            "peak_abs_x1": _median([r["peak_abs_x1"] for r in per_seed]),
            "half_life": _median(
                [np.inf if r["half_life"] is None else r["half_life"] for r in per_seed]
            ),
        }
        controllers[name] = {"seeds": per_seed, "median": med}

    # certified bounds: J_syn from the robust program, the nominal optimum,
    # and the robust gain's bound evaluated on the polytope mean model
    robust_res = gains["robust"]["result"]
    nominal_res = gains["nominal"]["result"]
    mean_model = poly_mod.convex_combine(
        np.full(polytope.num_vertices, 1.0 / polytope.num_vertices), polytope
    )
    try:
        j_mean = synthesis.evaluate_h2_bound(
            mean_model, plant_weights, gains["robust"]["S"], opts
        ).J
    except synthesis.SynthesisError:
        j_mean = None

    vp = vertex_prediction_report(polytope, datasets[0], dict_obj)
    report = {
        "kind": "experiment_report",
        "name": config.name,
        "config": asdict(config),
        "bounds": {
            "J_syn": robust_res.J_syn,
            "nominal_J": nominal_res.J_syn,
            "J_mean_model_robust_gain": j_mean,
        },
        "fit_residuals": [p.residual for p in predictors],
        "spread_top": [
            {"block": b, "row": i, "col": j, "spread": s}
            for b, i, j, s in poly_mod.spread_table(
                predictors, blocks=tuple(config.varied_blocks)
            )[: max(config.h * 3, 6)]
        ],
        "vertex_prediction_rms": vp["rms"].tolist(),
        "feature_labels": vp["labels"],
        "controllers": controllers,
    }
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        json.dump(_json_clean(report), f, indent=1)
    _write_summary(report, os.path.join(out_dir, "summary.txt"))
    return report


def _median(values):
    return float(np.median(np.asarray(values, dtype=float)))


def _json_clean(obj):
    if isinstance(obj, dict):
        return {k: _json_clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_clean(v) for v in obj]
    if isinstance(obj, float) and np.isinf(obj):
        return None
    if isinstance(obj, (np.floating, np.integer)):
        return _json_clean(obj.item())
    if isinstance(obj, np.ndarray):
        return _json_clean(obj.tolist())
    return obj


def _write_summary(report, path):
    lines = [f"experiment: {report['name']}", ""]
    b = report["bounds"]
    lines.append(f"certified worst-vertex bound J_syn : {b['J_syn']:.6g}")
    lines.append(f"nominal design bound               : {b['nominal_J']:.6g}")
    if b["J_mean_model_robust_gain"] is not None:
        lines.append(
            f"robust gain bound on mean model    : {b['J_mean_model_robust_gain']:.6g}"
        )
    lines.append("")
    lines.append("fit residuals per dataset: "
                 + ", ".join(f"{r:.4g}" for r in report["fit_residuals"]))
    lines.append("")
    lines.append(f"{'controller':<10} {'median l2':>12} {'median peak|x1|':>16} "
                 f"{'median half-life':>17} {'diverged':>9}")
    for name, rec in report["controllers"].items():
        med = rec["median"]
        n_div = sum(1 for r in rec["seeds"] if r["diverged"])
        hl = med["half_life"]
        hl_txt = "never" if hl is None else f"{hl:.1f}"
        lines.append(
            f"{name:<10} {med['l2']:>12.5g} {med['peak_abs_x1']:>16.5g} "
            f"{hl_txt:>17} {n_div:>9d}"
        )
    lines.append("")
    lines.append("per-vertex one-step prediction RMS (rows: vertices):")
    header = "  " + " ".join(f"{l:>10}" for l in report["feature_labels"])
    lines.append(header)
    for row in report["vertex_prediction_rms"]:
        lines.append("  " + " ".join(f"{v:>10.4g}" for v in row))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
