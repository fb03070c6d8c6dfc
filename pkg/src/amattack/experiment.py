"""Experiment manifests and the attack / evaluate / defend pipelines."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .bilevel import BilevelConfig, blamm_train
from .data import (
    Dataset,
    ScalerParams,
    apply_mask,
    default_scaling_exclusions,
    fit_scaler,
    load_csv,
    load_schema,
    serialize_partial,
    split,
)
from .defense import DEFAULT_K, defense_sweep, write_sweep_csv
from .glm import AttackTarget, GlmFamily, audit_metric, constrained_target, fit_glm, get_family
from .mechanism import (
    MaskDistribution,
    MechanismNet,
    expected_missing_fraction,
    mcar_baseline,
    mechanism_forward,
    sample_masks,
)
from .remediation import AttackData, as_kind, observe_prob_pi
from .synthetic import FIG1_PARAMS, make_fig1, make_regression_surrogate
from .victim import victim_fit_report

log = logging.getLogger(__name__)

BUILTIN_DATASETS = {
    "synthetic-fig1": make_fig1,
    "synthetic-regression": make_regression_surrogate,
}

RESULT_COLUMNS = (
    "attack",
    "victim",
    "mechanism",
    "n_trials",
    "dist_alpha_mean",
    "dist_alpha_sd",
    "dist_true_mean",
    "dist_true_sd",
    "p_value_mean",
    "p_value_sd",
    "success_rate",
    "audit_mean",
    "audit_sd",
    "target_missing_mean",
    "target_missing_sd",
)

TRIAL_COLUMNS = (
    "trial",
    "seed",
    "victim",
    "mechanism",
    "dist_alpha",
    "dist_true",
    "p_value",
    "audit",
    "target_missing",
    "n_rows",
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: data, target, attack, victims and the BLAMM settings.

    ``dataset`` is a CSV path (with ``schema``) or the name of a built-in
    synthetic set. Relative paths resolve against the config file.
    """

    dataset: str = "synthetic-fig1"
    schema: str | None = None
    target: str | None = None
    masked: tuple = ()
    family: str = "gaussian"
    sigma: float = 1.0
    attack: str = "mean"
    victims: tuple = ()
    trials: int = 20
    seed: int = 0
    train_fraction: float = 0.8
    split_seed: int = 0
    target_ridge: float = 0.0
    victim_ridge: float = 0.0
    scale_response: bool = False
    imputer_uses_response: bool = False
    fractions: tuple = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
    k_neighbors: int = DEFAULT_K
    workers: int = 1
    out_dir: str = "out"
    bilevel: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        as_kind(self.attack)
        get_family(self.family, self.sigma)
        if self.dataset not in BUILTIN_DATASETS:
            if self.schema is None:
                raise ConfigError("a CSV dataset needs a schema file")
            for p in (self.dataset, self.schema):
                if not Path(p).exists():
                    raise FileNotFoundError(f"file not found: {p}")
        unknown = set(self.bilevel) - {f.name for f in fields(BilevelConfig)}
        if unknown:
            raise ConfigError(f"unknown bilevel settings: {sorted(unknown)}")

    @property
    def victim_list(self) -> tuple:
        return tuple(self.victims) if self.victims else (self.attack,)

    def bilevel_config(self) -> BilevelConfig:
        return BilevelConfig(**{"kind": self.attack, "seed": self.seed, **self.bilevel})

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["masked"] = list(self.masked)
        doc["victims"] = list(self.victims)
        doc["fractions"] = list(self.fractions)
        return doc


def _resolve(base: Path, value):
    if value is None or value in BUILTIN_DATASETS:
        return value
    p = Path(value)
    return str(p if p.is_absolute() else base / p)


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read a YAML/JSON manifest; ``None``-valued overrides are ignored.

    Override keys that name BilevelConfig fields go into ``bilevel``.
    """
    doc = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        doc = yaml.safe_load(path.read_text()) or {}
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        base = path.parent
    known = {f.name for f in fields(ExperimentConfig)}
    bilevel_keys = {f.name for f in fields(BilevelConfig)}
    bilevel = dict(doc.pop("bilevel", {}) or {})
    for key in list(doc):
        if key in bilevel_keys and key not in known:
            bilevel[key] = doc.pop(key)
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key, value in overrides.items():
        if value is None:
            continue
        if key in bilevel_keys and key not in known:
            bilevel[key] = value
        elif key in known:
            doc[key] = value
        else:
            raise ConfigError(f"unknown override {key!r}")
    for key in ("dataset", "schema"):
        if key in doc:
            doc[key] = _resolve(base, doc[key])
    for key in ("masked", "victims", "fractions"):
        if key in doc and doc[key] is not None:
            value = doc[key]
            doc[key] = tuple(value) if isinstance(value, (list, tuple)) else (value,)
    return ExperimentConfig(**doc, bilevel=bilevel)


@dataclass
class Experiment:
    config: ExperimentConfig
    dataset: Dataset
    train: Dataset
    audit: Dataset
    family: GlmFamily
    target: AttackTarget
    attack_data: AttackData
    scaler: ScalerParams
    target_column: int


def load_dataset(config: ExperimentConfig) -> tuple[Dataset, str | None]:
    if config.dataset in BUILTIN_DATASETS:
        ds = BUILTIN_DATASETS[config.dataset]()
        return ds, None
    schema = load_schema(config.schema)
    return load_csv(config.dataset, schema), schema.target


def prepare(config: ExperimentConfig, scaler: ScalerParams | None = None) -> Experiment:
    """Load, split, choose the target and build the adversary's view of the data."""
    ds, schema_target = load_dataset(config)
    names = ds.column_names
    target_name = config.target or schema_target
    if target_name is None:
        raise ConfigError("no target column given (config 'target' or schema 'target')")
    t = ds.schema.index(target_name)
    if t == ds.response_index or t == ds.schema.intercept_index:
        raise ConfigError(f"target {target_name!r} must be a feature column")
    masked = ds.schema.indices(config.masked or (t,))
    if t not in masked:
        raise ConfigError("the target column must belong to the masked set")
    family = get_family(config.family, config.sigma)
    train, audit = split(ds, config.train_fraction, config.split_seed)
    design = ds.schema.design_columns
    target = constrained_target(
        train.X, train.y, family, design.index(t),
        masked_set=tuple(design.index(j) for j in masked),
        ridge=config.target_ridge,
        column_names=tuple(names[j] for j in design),
    )
    if scaler is None:
        exclude = set(default_scaling_exclusions(train.schema))
        if config.scale_response:
            exclude.discard(train.response_index)
        scaler = fit_scaler(train.values, exclude, names)
    data = AttackData.from_dataset(train, masked, scaler, config.scale_response, config.imputer_uses_response)
    return Experiment(config, ds, train, audit, family, target, data, scaler, t)


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_mechanism(path, exp: Experiment) -> MechanismNet:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"mechanism file not found: {path}")
    net = MechanismNet.load(path)
    d = exp.dataset.schema.n_columns
    if net.input_dim != d:
        raise ConfigError(f"mechanism expects {net.input_dim} columns but the dataset has {d}")
    if tuple(net.masked) != tuple(exp.attack_data.masked):
        raise ConfigError(f"mechanism masks columns {list(net.masked)}, config masks {list(exp.attack_data.masked)}")
    return net


def load_scaler(path) -> ScalerParams | None:
    doc = json.loads(Path(path).read_text())
    return ScalerParams.from_dict(doc["scaler"]) if "scaler" in doc else None


def cmd_attack(config: ExperimentConfig, out_dir=None) -> dict:
    """Train the mechanism; write mechanism.json, trace.csv, poisoned.csv and summary.json."""
    out = Path(out_dir or config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    exp = prepare(config)
    bcfg = config.bilevel_config()
    start = time.perf_counter()
    net, trace = blamm_train(exp.attack_data, exp.target, exp.family, bcfg)
    elapsed = time.perf_counter() - start
    dist = mechanism_forward(net, exp.attack_data.net_input)
    net.save(out / "mechanism.json", extra={
        "config": config.to_dict(),
        "scaler": exp.scaler.to_dict(),
        "target": exp.target.to_dict(),
        "schema": exp.dataset.schema.to_dict(),
    })
    trace.write_csv(out / "trace.csv")

    rng = np.random.default_rng([config.seed, 0, 0])
    mask = sample_masks(dist, exp.train.schema.n_columns, rng=rng)
    poisoned = apply_mask(exp.train, mask)
    serialize_partial(poisoned, out / "poisoned.csv")
    victim = victim_fit_report(poisoned, config.victim_list[0], exp.family, exp.target, exp.audit,
                               ridge=config.victim_ridge)
    complete = fit_glm(exp.train.X, exp.train.y, exp.family, ridge=config.victim_ridge)
    t_pos = exp.target.target_index
    summary = {
        "epochs": len(trace),
        "runtime_seconds": elapsed,
        "final_loss": trace.records[-1].loss if len(trace) else None,
        "final_delta": trace.records[-1].delta if len(trace) else None,
        "expected_missing_fraction": expected_missing_fraction(dist, exp.train.schema.n_columns),
        "expected_target_missing": float(1.0 - observe_prob_pi(dist, exp.target_column)),
        "sampled_target_missing": float(poisoned.missing_rates()[exp.target_column]),
        "victim": config.victim_list[0],
        "victim_target_p_value": victim.target_p_value,
        "victim_dist_alpha": victim.dist_alpha_norm,
        "victim_dist_true": victim.dist_complete_norm,
        "victim_audit": victim.audit,
        "complete_target_p_value": float(complete.p_values[t_pos]),
        "complete_audit": audit_metric(exp.audit.X, exp.audit.y, complete.theta, exp.family),
        "theta_alpha": exp.target.theta_alpha.tolist(),
        "theta_complete": complete.theta.tolist(),
        "theta_victim": victim.fit.theta.tolist(),
    }
    _write_json(out / "summary.json", summary)
    return summary


def _run_trial(args):
    trial, seed, train, audit, family, target, mnar, mcar, victims, target_column, ridge = args
    rows = []
    rng_mnar = np.random.default_rng([seed, trial, 1])
    rng_mcar = np.random.default_rng([seed, trial, 2])
    masks = {
        "mnar": sample_masks(mnar, train.schema.n_columns, rng=rng_mnar),
        "mcar": sample_masks(mcar, train.schema.n_columns, rng=rng_mcar),
    }
    for name in ("mnar", "mcar"):
        poisoned = apply_mask(train, masks[name])
        for victim in victims:
            r = victim_fit_report(poisoned, victim, family, target, audit, ridge=ridge)
            rows.append({
                "trial": trial,
                "seed": seed,
                "victim": str(victim),
                "mechanism": name,
                "dist_alpha": r.dist_alpha_norm,
                "dist_true": r.dist_complete_norm,
                "p_value": r.target_p_value,
                "audit": r.audit,
                "target_missing": float(r.missing_rates[target_column]),
                "n_rows": r.n_rows,
            })
    return rows


def _mean_sd(values):
    a = np.asarray(values, dtype=np.float64)
    return float(a.mean()), float(a.std(ddof=1)) if a.size > 1 else 0.0


def aggregate(trial_rows, attack: str) -> list[dict]:
    """Mean and sample sd per (victim, mechanism), in first-seen order."""
    groups = {}
    for row in trial_rows:
        groups.setdefault((row["victim"], row["mechanism"]), []).append(row)
    out = []
    for (victim, mech), rows in groups.items():
        rec = {"attack": attack, "victim": victim, "mechanism": mech, "n_trials": len(rows)}
        for key, col in (("dist_alpha", "dist_alpha"), ("dist_true", "dist_true"), ("p_value", "p_value"),
                         ("audit", "audit"), ("target_missing", "target_missing")):
            rec[f"{key}_mean"], rec[f"{key}_sd"] = _mean_sd([r[col] for r in rows])
        rec["success_rate"] = float(np.mean([r["p_value"] > 0.05 for r in rows]))
        out.append(rec)
    return out


def _fmt(value):
    return repr(float(value)) if isinstance(value, (float, np.floating)) else str(value)


def write_rows(path, columns, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def cmd_evaluate(config: ExperimentConfig, mechanism_path, out_dir=None) -> list[dict]:
    """Sample ``trials`` MNAR masks and matched MCAR masks; fit every victim.

    The MCAR baseline repeats the mechanism's marginal mask distribution on
    every row. Writes results.csv (aggregated) and trials.csv (per trial).
    """
    out = Path(out_dir or config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    exp = prepare(config, load_scaler(mechanism_path))
    net = load_mechanism(mechanism_path, exp)
    mnar = mechanism_forward(net, exp.attack_data.net_input)
    mcar = MaskDistribution.constant(mcar_baseline(mnar), mnar.n_rows, mnar.masked)
    jobs = [
        (trial, config.seed, exp.train, exp.audit, exp.family, exp.target, mnar, mcar, config.victim_list,
         exp.target_column, config.victim_ridge)
        for trial in range(config.trials)
    ]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            per_trial = list(pool.map(_run_trial, jobs))
    else:
        per_trial = [_run_trial(job) for job in jobs]
    trial_rows = [row for rows in per_trial for row in rows]
    results = aggregate(trial_rows, str(config.attack))
    write_rows(out / "trials.csv", TRIAL_COLUMNS, trial_rows)
    write_rows(out / "results.csv", RESULT_COLUMNS, results)
    return results


def cmd_defend(config: ExperimentConfig, mechanism_path, fractions=None, out_dir=None):
    """Sweep the discard fraction on one poisoned sample; writes sweep.csv."""
    out = Path(out_dir or config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    exp = prepare(config, load_scaler(mechanism_path))
    net = load_mechanism(mechanism_path, exp)
    fractions = tuple(config.fractions if fractions is None else fractions)
    dist = mechanism_forward(net, exp.attack_data.net_input)
    rng = np.random.default_rng([config.seed, 0, 1])
    poisoned = apply_mask(exp.train, sample_masks(dist, exp.train.schema.n_columns, rng=rng))
    reports = defense_sweep(poisoned, config.victim_list[0], exp.family, exp.target, exp.audit, fractions,
                            k=config.k_neighbors, ridge=config.victim_ridge)
    write_sweep_csv(out / "sweep.csv", fractions, reports)
    return reports


FIG1_CONFIG = {
    "dataset": "synthetic-fig1",
    "target": "x",
    "family": "bernoulli",
    "attack": "mean",
    "victims": ("mean",),
    "bilevel": {"learning_rate": 10.0, "epochs": 300, "lambda_upper": 0.01},
}

REGRESSION_CONFIG = {
    "dataset": "synthetic-regression",
    "target": "f0",
    "family": "gaussian",
    "attack": "mean",
    "victims": ("mean",),
    "bilevel": {"learning_rate": 10.0, "epochs": 600, "lambda_upper": 0.05},
}


def fig1_config(**overrides) -> ExperimentConfig:
    doc = dict(FIG1_CONFIG, bilevel=dict(FIG1_CONFIG["bilevel"]))
    bilevel_keys = {f.name for f in fields(BilevelConfig)}
    for key, value in overrides.items():
        if value is None:
            continue
        if key in bilevel_keys and key != "seed":
            doc["bilevel"][key] = value
        else:
            doc[key] = value
    return ExperimentConfig(**doc)


def cmd_demo_fig1(config: ExperimentConfig, out_dir=None) -> dict:
    """Attack the pinned two-class problem and evaluate it; adds the generator to the summary."""
    out = Path(out_dir or config.out_dir)
    summary = cmd_attack(config, out)
    results = cmd_evaluate(config, out / "mechanism.json", out)
    summary["generator"] = dict(FIG1_PARAMS)
    summary["accuracy_drop_points"] = 100.0 * (summary["complete_audit"] - summary["victim_audit"])
    summary["results"] = results
    _write_json(out / "summary.json", summary)
    return summary

