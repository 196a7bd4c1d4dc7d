"""Scenario files, experiment orchestration, metrics and output artifacts.

Scenario JSON schema::

    {
      "name": "paper_example",            # optional, defaults to the file stem
      "n": 2,
      "actions": {"a": [[0, 1], [1, 0]], ...},   # named row-stochastic matrices
      "confusion": [[0.9, 0.1], [0.3, 0.7]],
      "seed": 0,                           # default 0
      "output_dir": "runs/paper_example",  # default "runs/<name>"
      "snapshot_every": 500,               # default 0 (first and last only)
      "estimator": {"type": "repetitive" | "bayes1" | "bayes2" | "partition", ...}
    }

Estimator keys (all optional):

* repetitive / partition: ``actions`` (names, default all), ``steps`` (T per
  action, default 100000), ``burn_in`` (default: mixing estimate), ``exact_q``
  (default false); repetitive also ``starts`` (32), ``tol_loss``; partition also
  ``on_unidentifiable`` ("warn" | "abort").
* bayes1 / bayes2: ``steps`` (5000), ``grid_res`` (101), ``particles`` (ensemble
  size; switches from the grid to an ensemble posterior), ``policy`` (action
  probabilities by name, default uniform).
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .bayes import init_posterior, posterior_summary, run_bayes
from .core import ConfusionMatrix, Mdp, RandomPolicy, check_stochastic, simulate, stationary_distribution
from .errors import MdpConfError, PeriodicChainWarning, ValidationError
from .identifiability import check_subset_condition
from .repetitive import (
    RepetitiveProtocolConfig,
    estimate_by_partitions,
    exact_protocol_data,
    minimize_loss,
    run_protocol,
)

ESTIMATORS = ("repetitive", "bayes1", "bayes2", "partition")

ESTIMATOR_DEFAULTS = {
    "repetitive": {"actions": None, "steps": 100_000, "burn_in": None, "exact_q": False,
                   "starts": 32, "tol_loss": None},
    "partition": {"actions": None, "steps": 1_000_000, "burn_in": None, "exact_q": False,
                  "on_unidentifiable": "warn"},
    "bayes1": {"steps": 5000, "grid_res": 101, "particles": None, "policy": None},
    "bayes2": {"steps": 5000, "grid_res": 101, "particles": None, "policy": None},
}

EXIT_OK, EXIT_VALIDATION, EXIT_ESTIMATOR, EXIT_IDENTIFIABILITY = 0, 2, 3, 4


class ScenarioError(ValidationError):
    pass


@dataclass
class Scenario:
    name: str
    mdp: Mdp
    confusion: ConfusionMatrix
    estimator: dict
    seed: int = 0
    output_dir: str = ""
    snapshot_every: int = 0
    source: str | None = None

    @property
    def method(self) -> str:
        return self.estimator["type"]

    def to_dict(self) -> dict:
        """Fully resolved scenario (defaults filled in), JSON-ready."""
        return {
            "name": self.name,
            "n": self.mdp.n,
            "actions": {nm: self.mdp.transitions[i].tolist() for i, nm in enumerate(self.mdp.action_names)},
            "confusion": self.confusion.entries.tolist(),
            "seed": self.seed,
            "output_dir": self.output_dir,
            "snapshot_every": self.snapshot_every,
            "estimator": self.estimator,
        }

    def content(self) -> dict:
        """:meth:`to_dict` without ``output_dir``: where results go is not part of the experiment."""
        d = self.to_dict()
        del d["output_dir"]
        return d

    def digest(self) -> str:
        blob = json.dumps(self.content(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_overrides(self, **kw) -> "Scenario":
        """Copy with CLI-style overrides; estimator keys go into the estimator block."""
        s = copy.deepcopy(self)
        est = dict(s.estimator)
        if kw.get("method"):
            est = _estimator_block({"type": kw["method"], **{k: v for k, v in est.items()
                                                             if k in ESTIMATOR_DEFAULTS[kw["method"]]}},
                                   s.mdp)
        for key in ("steps", "burn_in", "grid_res", "particles", "exact_q"):
            if kw.get(key) is not None and key in est:
                est[key] = kw[key]
        s.estimator = _estimator_block(est, s.mdp)
        for key in ("seed", "output_dir", "snapshot_every"):
            if kw.get(key) is not None:
                setattr(s, key, kw[key])
        return s


# ---------------------------------------------------------------------------
# loading

def builtin_scenarios() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("mdpconf.scenarios").iterdir()
                  if p.name.endswith(".json"))


def _resolve(path) -> tuple[str, str]:
    p = Path(path)
    if p.exists():
        return p.read_text(), str(p)
    stem = p.name[:-5] if p.name.endswith(".json") else p.name
    if stem in builtin_scenarios():
        res = resources.files("mdpconf.scenarios") / f"{stem}.json"
        return res.read_text(), f"<builtin>/{stem}.json"
    raise ScenarioError(f"{path}: no such file or built-in scenario")


def _matrix(value, label, n) -> np.ndarray:
    try:
        a = np.array(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise ScenarioError(f"{label}: expected a numeric matrix") from None
    if a.shape != (n, n):
        raise ScenarioError(f"{label}: expected shape ({n}, {n}), got {a.shape}")
    try:
        return check_stochastic(a, label)
    except ValidationError as exc:
        raise ScenarioError(str(exc)) from None


def _estimator_block(raw, mdp: Mdp) -> dict:
    if not isinstance(raw, dict) or "type" not in raw:
        raise ScenarioError("estimator: expected an object with a 'type' key")
    kind = raw["type"]
    if kind not in ESTIMATORS:
        raise ScenarioError(f"estimator.type: must be one of {ESTIMATORS}, got {kind!r}")
    defaults = ESTIMATOR_DEFAULTS[kind]
    unknown = set(raw) - set(defaults) - {"type"}
    if unknown:
        raise ScenarioError(f"estimator: unknown keys {sorted(unknown)} for type {kind!r}")
    est = {"type": kind, **defaults, **{k: v for k, v in raw.items() if k != "type"}}
    if "actions" in est:
        if est["actions"] is None:
            est["actions"] = list(mdp.action_names)
        for a in est["actions"]:
            if a not in mdp.action_names:
                raise ScenarioError(f"estimator.actions: unknown action {a!r}")
    if not isinstance(est["steps"], int) or est["steps"] < 1:
        raise ScenarioError("estimator.steps: must be a positive integer")
    if est.get("burn_in") is not None and (not isinstance(est["burn_in"], int) or est["burn_in"] < 0):
        raise ScenarioError("estimator.burn_in: must be a non-negative integer")
    if kind.startswith("bayes"):
        if not isinstance(est["grid_res"], int) or est["grid_res"] < 2:
            raise ScenarioError("estimator.grid_res: must be an integer >= 2")
        if est["particles"] is not None and (not isinstance(est["particles"], int) or est["particles"] < 1):
            raise ScenarioError("estimator.particles: must be a positive integer")
        if est["particles"] is None and mdp.n != 2:
            raise ScenarioError("grid posteriors need n = 2; set estimator.particles for larger n")
        if est["policy"] is not None:
            pol = est["policy"]
            if set(pol) != set(mdp.action_names):
                raise ScenarioError("estimator.policy: give one probability per action name")
            try:
                check_stochastic([pol[a] for a in mdp.action_names], "estimator.policy")
            except ValidationError as exc:
                raise ScenarioError(str(exc)) from None
    if kind == "partition" and est["on_unidentifiable"] not in ("warn", "abort"):
        raise ScenarioError("estimator.on_unidentifiable: must be 'warn' or 'abort'")
    return est


def parse_scenario(raw: dict, name: str = "scenario", source: str | None = None) -> Scenario:
    if not isinstance(raw, dict):
        raise ScenarioError("top level must be a JSON object")
    for key in ("n", "actions", "confusion", "estimator"):
        if key not in raw:
            raise ScenarioError(f"missing required key {key!r}")
    n = raw["n"]
    if not isinstance(n, int) or n < 2:
        raise ScenarioError("n: must be an integer >= 2")
    acts = raw["actions"]
    if not isinstance(acts, dict) or not acts:
        raise ScenarioError("actions: expected a non-empty object of named matrices")
    mats = [_matrix(v, f"actions.{k}", n) for k, v in acts.items()]
    mdp = Mdp(np.stack(mats), tuple(acts))
    C = ConfusionMatrix(_matrix(raw["confusion"], "confusion", n))
    name = raw.get("name", name)
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ScenarioError("seed: must be a non-negative integer")
    snap = raw.get("snapshot_every", 0)
    if not isinstance(snap, int) or snap < 0:
        raise ScenarioError("snapshot_every: must be a non-negative integer")
    known = {"name", "n", "actions", "confusion", "seed", "output_dir", "snapshot_every", "estimator"}
    unknown = set(raw) - known
    if unknown:
        raise ScenarioError(f"unknown top-level keys {sorted(unknown)}")
    est = _estimator_block(raw["estimator"], mdp)
    out = raw.get("output_dir", f"runs/{name}")
    return Scenario(name, mdp, C, est, seed, out, snap, source)


def load_scenario(path) -> Scenario:
    """Load and validate a scenario file (or a built-in scenario by name)."""
    text, source = _resolve(path)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    stem = Path(source).name
    stem = stem[:-5] if stem.endswith(".json") else stem
    try:
        return parse_scenario(raw, stem, source)
    except ScenarioError as exc:
        raise ScenarioError(f"{source}: {exc}") from None


# ---------------------------------------------------------------------------
# metrics and output formatting

def frobenius_error(C_est, C_true) -> float:
    a = C_est.entries if isinstance(C_est, ConfusionMatrix) else np.asarray(C_est, float)
    b = C_true.entries if isinstance(C_true, ConfusionMatrix) else np.asarray(C_true, float)
    if a.shape != b.shape:
        raise ValidationError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


@dataclass
class RunReport:
    scenario: Scenario
    estimator: str
    steps: int
    candidates: list
    selected: int | None
    estimate: np.ndarray | None
    frobenius_error: float | None
    identifiability: dict | None
    non_unique: bool
    paths: list = field(default_factory=list)
    error: str | None = None
    exit_code: int = EXIT_OK
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.name,
            "scenario_digest": self.scenario.digest(),
            "config": self.scenario.content(),
            "estimator": self.estimator,
            "seed": self.scenario.seed,
            "steps": self.steps,
            "candidates": self.candidates,
            "selected": self.selected,
            "estimate": None if self.estimate is None else np.asarray(self.estimate).tolist(),
            "frobenius_error": self.frobenius_error,
            "identifiability": self.identifiability,
            "non_unique": self.non_unique,
            "error": self.error,
            "exit_code": self.exit_code,
            "files": sorted(Path(p).name for p in self.paths),
            **self.extra,
        }


# ---------------------------------------------------------------------------
# running

def _stationaries(mdp: Mdp, names) -> dict:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PeriodicChainWarning)
        return {a: stationary_distribution(mdp.P(mdp.action_index(a))).probs for a in names}


def identifiability_of(s: Scenario, names=None) -> dict:
    names = list(names or s.mdp.action_names)
    pis = _stationaries(s.mdp, names)
    out = {"stationary": {a: p.tolist() for a, p in pis.items()}}
    if len(names) >= 2:
        out.update(check_subset_condition(pis).to_dict())
    else:
        out.update({"satisfied": False, "violating_subsets": "all", "tol": None})
    return out


def _run_repetitive(s: Scenario, est: dict):
    acts = [s.mdp.action_index(a) for a in est["actions"]]
    if est["exact_q"]:
        data = exact_protocol_data(s.mdp, s.confusion, acts)
        steps = 0
    else:
        cfg = RepetitiveProtocolConfig(acts, est["steps"], est["burn_in"], s.seed)
        data = run_protocol(s.mdp, s.confusion, cfg)
        steps = sum(int(d.observed.size - 1) for d in data.values())
    res = minimize_loss(data, starts=est["starts"], tol_loss=est["tol_loss"], seed=s.seed)
    cands = [{"matrix": c.C.tolist(), "residual": c.residual, "feasible": c.feasible} for c in res.candidates]
    return res, cands, steps, {"tol_loss": res.diagnostics["tol_loss"]}


def _run_partition(s: Scenario, est: dict):
    acts = [s.mdp.action_index(a) for a in est["actions"]]
    if est["exact_q"]:
        res = estimate_by_partitions(s.mdp, acts, confusion=s.confusion,
                                     on_unidentifiable=est["on_unidentifiable"])
        steps = 0
    else:
        cfg = RepetitiveProtocolConfig(acts, est["steps"], est["burn_in"], s.seed)
        data = run_protocol(s.mdp, s.confusion, cfg)
        res = estimate_by_partitions(s.mdp, acts, observed={a: d.observed for a, d in data.items()},
                                     on_unidentifiable=est["on_unidentifiable"])
        steps = sum(int(d.observed.size - 1) for d in data.values())
    cands = [{"matrix": c.C.tolist(), "residual": c.residual, "feasible": c.feasible} for c in res.candidates]
    parts = {",".join(map(str, k)) if isinstance(k, tuple) else k: v
             for k, v in res.diagnostics["per_partition"].items()}
    return res, cands, steps, {"partitions": parts}


def _write_posterior_csv(path: Path, snaps, post):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if post.kind == "grid":
            w.writerow(["t", "alpha", "beta", "weight"])
            a = [fmt(v) for v in post.params[:, 0]]
            b = [fmt(v) for v in post.params[:, 1]]
            for sn in snaps:
                for k, wt in enumerate(sn.weights):
                    w.writerow([sn.t, a[k], b[k], fmt(wt)])
        else:
            w.writerow(["t", "point_id", "weight"])
            for sn in snaps:
                for k, wt in enumerate(sn.weights):
                    w.writerow([sn.t, k, fmt(wt)])


def _run_bayes(s: Scenario, est: dict, out: Path, paths: list):
    order = 1 if s.method == "bayes1" else 2
    if est["particles"]:
        post = init_posterior("ensemble", K=est["particles"], n=s.mdp.n, seed=s.seed)
    else:
        post = init_posterior("grid", est["grid_res"])
    policy = None
    if est["policy"] is not None:
        policy = RandomPolicy(np.array([est["policy"][a] for a in s.mdp.action_names], float))
    run = run_bayes(s.mdp, s.confusion, order, est["steps"], post, policy=policy,
                    snapshot_every=s.snapshot_every or None, seed=s.seed)
    summ = posterior_summary(run.posterior, top_k=4)
    p_csv = out / "posterior.csv"
    _write_posterior_csv(p_csv, run.snapshots, run.posterior)
    paths.append(p_csv)
    if post.kind == "ensemble":
        side = out / "support.json"
        write_json(side, {str(k): post.support[k].tolist() for k in range(post.K)})
        paths.append(side)
    cands = []
    for k in summ.local_modes:
        c = {"matrix": post.support[k].tolist(), "weight": float(run.posterior.weights[k])}
        if post.params is not None:
            c["alpha"], c["beta"] = post.params[k].tolist()
        cands.append(c)
    extra = {
        "posterior_entropy": summ.entropy,
        "posterior_mean": summ.mean.tolist(),
        "mode_index": summ.mode_index,
        "final_belief": run.belief.tolist(),
    }
    if post.params is not None:
        extra["mode_alpha_beta"] = post.params[summ.mode_index].tolist()
    return summ.mode, cands, est["steps"], extra


def run_experiment(s: Scenario) -> RunReport:
    """Run one scenario, write its artifacts into ``s.output_dir`` and return the report.

    Estimator failures are captured in the report (``error``/``exit_code``)
    rather than raised; artifacts are byte-identical for identical inputs.
    """
    out = Path(s.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    est = s.estimator
    paths: list = []
    try:
        ident = identifiability_of(s, est.get("actions"))
    except MdpConfError as exc:
        ident = {"error": str(exc)}
    report = RunReport(s, s.method, 0, [], None, None, None, ident, False, paths)
    try:
        if s.method == "repetitive":
            res, cands, steps, extra = _run_repetitive(s, est)
        elif s.method == "partition":
            res, cands, steps, extra = _run_partition(s, est)
        if s.method in ("repetitive", "partition"):
            report.candidates, report.steps, report.extra = cands, steps, extra
            report.selected = res.selected
            report.non_unique = res.non_unique
            report.estimate = res.estimate
            for c in report.candidates:
                c["frobenius_error"] = frobenius_error(c["matrix"], s.confusion)
        else:
            mode, cands, steps, extra = _run_bayes(s, est, out, paths)
            report.candidates, report.steps, report.extra = cands, steps, extra
            report.selected = 0
            report.estimate = mode
        if report.estimate is not None:
            report.frobenius_error = frobenius_error(report.estimate, s.confusion)
    except MdpConfError as exc:
        from .errors import IdentifiabilityError

        report.error = f"{type(exc).__name__}: {exc}"
        report.exit_code = EXIT_IDENTIFIABILITY if isinstance(exc, IdentifiabilityError) else EXIT_ESTIMATOR
    summary = out / "summary.json"
    paths.append(summary)
    write_json(summary, report.to_dict())
    return report


def write_trajectory_csv(path: Path, traj) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "s", "s_tilde", "a"])
        for st in traj.steps:
            w.writerow(st)


def simulate_scenario(s: Scenario, steps: int | None = None) -> Path:
    """Simulate the scenario's MDP under its estimator's policy and write trajectory.csv."""
    est = s.estimator
    T = steps if steps is not None else est["steps"]
    if s.method.startswith("bayes"):
        src = RandomPolicy.uniform(s.mdp.m) if est["policy"] is None else RandomPolicy(
            np.array([est["policy"][a] for a in s.mdp.action_names], float))
    else:
        acts = [s.mdp.action_index(a) for a in est["actions"]]
        per = -(-T // len(acts))
        src = np.repeat(acts, per)[:T]
    traj = simulate(s.mdp, s.confusion, src, T, seed=s.seed)
    out = Path(s.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "trajectory.csv"
    write_trajectory_csv(path, traj)
    return path
