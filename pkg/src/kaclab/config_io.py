"""Configuration, persistence, ensembles, and replay.

Everything a run produces is reproducible from its manifest: configs and
reports are JSON, event logs CSV (one row per proposal, floats printed with
17 significant digits so replay is bit-exact).  No ambient state: every
stream derives from (master seed, run index).
"""

from __future__ import annotations

import concurrent.futures
import json
import math
import os
import time
from dataclasses import dataclass

import numpy as np

try:
    import jsonschema
except ImportError:  # pragma: no cover
    jsonschema = None

from . import __version__
from .engine import (EventLog, InitialCondition, ParticleState, SimConfig,
                     Trajectory, final_state_from_log, make_rng, simulate)
from .girsanov import TiltingScheme
from .kinetics import Kernel

_NUM = {"type": "number"}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["N", "T", "kernel"],
    "properties": {
        "N": {"type": "integer", "minimum": 1},
        "T": {"type": "number", "minimum": 0},
        "kernel": {"enum": ["maxwell", "hard_sphere"]},
        "d": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
        "checkpoints": {"type": "array", "items": _NUM},
        "record_full_states": {"type": "boolean"},
        "truncation_thresholds": {"type": "array", "items": _NUM},
        "measure": {"enum": ["P", "Q"]},
        "store_log": {"type": "boolean"},
        "majorant_inflation": {"type": "number", "minimum": 1.0},
        "runs": {"type": "integer", "minimum": 1},
        "threads": {"type": "integer", "minimum": 1},
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["gaussian", "scale_mixture"]},
                "weights": {"type": "array", "items": _NUM},
                "scales": {"type": "array", "items": _NUM},
            },
        },
        "tilting": {
            "type": ["object", "null"],
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["constant", "pairwise", "freeze"]},
                "kappa": {"type": "number", "exclusiveMinimum": 0},
                "a": {"type": "number", "exclusiveMinimum": 0},
                "b": {"type": "number", "minimum": 0},
                "M": {"type": "number", "minimum": 0},
                "r": {"type": "integer", "minimum": 1},
                "delta": {"type": "number", "minimum": 0},
                "alpha": {"type": "number", "exclusiveMinimum": 0},
                "theta": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["jump_times", "levels"],
                    "properties": {
                        "jump_times": {"type": "array", "items": _NUM},
                        "levels": {"type": "array", "items": _NUM},
                    },
                },
            },
        },
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class ParsedConfig:
    sim: SimConfig
    runs: int
    threads: int
    tilting: dict | None
    echo: dict

    def scheme(self) -> TiltingScheme | None:
        """Realise a state-independent tilting scheme from the descriptor.

        Freeze tilts depend on sampled initial data and are realised per
        run by the experiment driver, not here.
        """
        if self.tilting is None:
            return None
        kind = self.tilting["kind"]
        if kind == "constant":
            return TiltingScheme.constant(self.tilting["kappa"])
        if kind == "pairwise":
            return TiltingScheme.pairwise(self.tilting["a"], self.tilting.get("b", 0.0))
        raise ConfigError("freeze tilting is realised per run; use the tilt-experiment driver")


def _materialise(raw: dict) -> dict:
    echo = {
        "N": raw["N"],
        "T": float(raw["T"]),
        "kernel": raw["kernel"],
        "d": raw.get("d", 3),
        "seed": raw.get("seed", 0),
        "checkpoints": [float(t) for t in raw.get("checkpoints", [0.0, raw["T"]])],
        "record_full_states": raw.get("record_full_states", False),
        "truncation_thresholds": [float(t) for t in raw.get("truncation_thresholds", [])],
        "measure": raw.get("measure", "Q"),
        "store_log": raw.get("store_log", True),
        "majorant_inflation": float(raw.get("majorant_inflation", 1.0)),
        "runs": raw.get("runs", 1),
        "threads": raw.get("threads", 1),
        "initial": {
            "kind": raw.get("initial", {}).get("kind", "gaussian"),
            "weights": [float(x) for x in raw.get("initial", {}).get("weights", [])],
            "scales": [float(x) for x in raw.get("initial", {}).get("scales", [])],
        },
        "tilting": raw.get("tilting", None),
    }
    return echo


def parse_config(path_or_dict) -> ParsedConfig:
    """Validate strictly (unknown keys are errors) and materialise defaults."""
    if isinstance(path_or_dict, dict):
        raw = path_or_dict
    else:
        with open(path_or_dict) as fh:
            raw = json.load(fh)
    if jsonschema is not None:
        validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
        errors = sorted(validator.iter_errors(raw), key=lambda e: e.json_path)
        if errors:
            msgs = "; ".join(f"{e.json_path}: {e.message}" for e in errors)
            raise ConfigError(msgs)
    echo = _materialise(raw)
    sim = SimConfig(
        n=echo["N"],
        t_max=echo["T"],
        kernel=Kernel(echo["kernel"]),
        d=echo["d"],
        seed=echo["seed"],
        checkpoint_times=tuple(echo["checkpoints"]),
        record_full_states=echo["record_full_states"],
        truncation_thresholds=tuple(echo["truncation_thresholds"]),
        initial=InitialCondition(
            kind=echo["initial"]["kind"],
            weights=tuple(echo["initial"]["weights"]),
            scales=tuple(echo["initial"]["scales"]),
        ),
        measure=echo["measure"],
        store_log=echo["store_log"],
        majorant_inflation=echo["majorant_inflation"],
    )
    return ParsedConfig(sim=sim, runs=echo["runs"], threads=echo["threads"],
                        tilting=echo["tilting"], echo=echo)


# ---------------------------------------------------------------------------
# persistence


def _atomic_write(path: str, payload: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def _sigma_columns(d: int):
    return ["sx", "sy", "sz"] if d == 3 else [f"s{k}" for k in range(d)]


def write_event_csv(path: str, log: EventLog, d: int) -> None:
    cols = _sigma_columns(d)
    lines = ["t,i,j," + ",".join(cols) + ",assignment,fictitious"]
    for k in range(len(log)):
        sig = ",".join(f"{x:.17g}" for x in log.sigma[k])
        lines.append(
            f"{log.t[k]:.17g},{log.i[k]},{log.j[k]},{sig},{log.assignment[k]},{int(log.fictitious[k])}"
        )
    _atomic_write(path, "\n".join(lines) + "\n")


def read_event_csv(path: str, n_particles: int, horizon: float) -> EventLog:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        d = len(header) - 5
        rows = [line.strip().split(",") for line in fh if line.strip()]
    t = np.array([float(r[0]) for r in rows])
    i = np.array([int(r[1]) for r in rows], dtype=np.int64)
    j = np.array([int(r[2]) for r in rows], dtype=np.int64)
    sigma = np.array([[float(x) for x in r[3 : 3 + d]] for r in rows]) if rows else np.empty((0, d))
    assignment = np.array([int(r[3 + d]) for r in rows], dtype=np.int8)
    fict = np.array([bool(int(r[4 + d])) for r in rows])
    return EventLog(t, i, j, sigma, assignment, fict, n_particles, horizon)


def write_sidecar(path: str, trajectory: Trajectory) -> None:
    payload = {
        "version": __version__,
        "config": trajectory.config.to_dict(),
        "seed": trajectory.seed,
        "initial_velocities": trajectory.initial_state.velocities.tolist(),
        "ledger": trajectory.rn_ledger.to_dict(),
    }
    _atomic_write(path, json.dumps(payload, indent=1))


def write_checkpoints(path: str, trajectory: Trajectory) -> None:
    payload = {
        "version": __version__,
        "checkpoints": {f"{cp.time:.17g}": cp.to_dict() for cp in trajectory.checkpoints},
    }
    _atomic_write(path, json.dumps(payload, indent=1))


def save_trajectory(out_dir: str, trajectory: Trajectory, stem: str = "run") -> dict:
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "events": os.path.join(out_dir, f"{stem}_events.csv"),
        "sidecar": os.path.join(out_dir, f"{stem}_sidecar.json"),
        "checkpoints": os.path.join(out_dir, f"{stem}_checkpoints.json"),
    }
    if trajectory.log is not None:
        write_event_csv(paths["events"], trajectory.log, trajectory.initial_state.d)
    else:
        paths.pop("events")
    write_sidecar(paths["sidecar"], trajectory)
    write_checkpoints(paths["checkpoints"], trajectory)
    return paths


def load_trajectory_inputs(sidecar_path: str, events_path: str):
    with open(sidecar_path) as fh:
        sidecar = json.load(fh)
    cfg = sidecar["config"]
    log = read_event_csv(events_path, cfg["n"], cfg["T"] if "T" in cfg else cfg["t_max"])
    v0 = np.asarray(sidecar["initial_velocities"], dtype=float)
    return sidecar, ParticleState(v0), log


class VersionMismatchError(RuntimeError):
    pass


def replay(sidecar_path: str, events_path: str, force: bool = False):
    """Re-apply a persisted log to its initial state.

    Refuses manifests stamped by a different tool version unless forced.
    Returns (sidecar, checkpoint summaries recomputed at the persisted
    checkpoint times).
    """
    sidecar, state0, log = load_trajectory_inputs(sidecar_path, events_path)
    if sidecar.get("version") != __version__ and not force:
        raise VersionMismatchError(
            f"log was written by version {sidecar.get('version')}, this is {__version__}; "
            "pass force=True to replay anyway"
        )
    cfg = sidecar["config"]
    cps = sorted(cfg["checkpoint_times"])
    thresholds = cfg.get("truncation_thresholds", [])
    v = state0.velocities.copy()
    out = []
    idx = 0

    def summary(t):
        s = np.sum(v * v, axis=1)
        return {
            "time": t,
            "mass": 1.0,
            "momentum": v.mean(axis=0).tolist(),
            "m2": float(np.mean(s)),
            "m4": float(np.mean(s * s)),
            "truncated_m2": {str(float(thr)): float(np.mean(s * (np.sqrt(s) <= thr)))
                             for thr in thresholds},
        }

    for k in range(len(log)):
        t_k = float(log.t[k])
        while idx < len(cps) and cps[idx] < t_k:
            out.append(summary(cps[idx]))
            idx += 1
        if not log.fictitious[k]:
            i, j = int(log.i[k]), int(log.j[k])
            if i != j:
                sigma = log.sigma[k]
                a = float((v[i] - v[j]) @ sigma)
                step_vec = a * sigma
                v[i] = v[i] - step_vec
                v[j] = v[j] + step_vec
    while idx < len(cps):
        out.append(summary(cps[idx]))
        idx += 1
    return sidecar, out


# ---------------------------------------------------------------------------
# ensembles


@dataclass
class RunSummary:
    """Per-run scalars needed for pooled statistics."""

    run_index: int
    checkpoint_times: np.ndarray
    m2: np.ndarray
    m4: np.ndarray
    momentum: np.ndarray
    truncated_m2: dict
    ledger: dict
    n_events: int
    n_collisions: int


@dataclass
class RunManifest:
    version: str
    master_seed: int
    config: dict
    run_indices: list
    seed_derivation: str
    artifacts: dict
    wallclock_seconds: float

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "master_seed": self.master_seed,
            "config": self.config,
            "run_indices": self.run_indices,
            "seed_derivation": self.seed_derivation,
            "artifacts": self.artifacts,
            "wallclock_seconds": self.wallclock_seconds,
        }


def _one_run(args):
    parsed_echo, run_index = args
    parsed = parse_config(dict(parsed_echo, runs=1, threads=1))
    cfg = parsed.sim
    rng = make_rng(cfg.seed, run_index)
    traj = simulate(cfg, parsed.scheme(), rng=rng)
    return _summarise(traj, run_index)


def _summarise(traj: Trajectory, run_index: int) -> RunSummary:
    cps = traj.checkpoints
    return RunSummary(
        run_index=run_index,
        checkpoint_times=np.array([cp.time for cp in cps]),
        m2=np.array([cp.m2 for cp in cps]),
        m4=np.array([cp.m4 for cp in cps]),
        momentum=np.array([cp.momentum for cp in cps]),
        truncated_m2={thr: np.array([cp.truncated_m2.get(thr, np.nan) for cp in cps])
                      for thr in (cps[0].truncated_m2 if cps else {})},
        ledger=traj.rn_ledger.to_dict(),
        n_events=cps[-1].n_events if cps else 0,
        n_collisions=cps[-1].n_collisions if cps else 0,
    )


def run_ensemble(parsed: ParsedConfig, n_runs: int | None = None, run_offset: int = 0,
                 threads: int | None = None, out_dir: str | None = None):
    """n_runs trajectories with per-run streams (master seed, run index).

    Summaries are reduced in run-index order regardless of scheduling, so
    pooled statistics are bit-stable under any thread count and any batch
    split with the same per-run indices.
    """
    n_runs = parsed.runs if n_runs is None else n_runs
    threads = parsed.threads if threads is None else threads
    t0 = time.time()
    indices = list(range(run_offset, run_offset + n_runs))
    args = [(parsed.echo, idx) for idx in indices]
    if threads > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
            summaries = list(pool.map(_one_run, args))
    else:
        summaries = [_one_run(a) for a in args]
    summaries.sort(key=lambda s: s.run_index)
    manifest = RunManifest(
        version=__version__,
        master_seed=parsed.sim.seed,
        config=parsed.echo,
        run_indices=indices,
        seed_derivation="philox(SeedSequence(entropy=master_seed, spawn_key=(run_index,)))",
        artifacts={},
        wallclock_seconds=time.time() - t0,
    )
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        pooled = pool_summaries(summaries)
        path = os.path.join(out_dir, "ensemble_summary.json")
        _atomic_write(path, json.dumps(pooled, indent=1))
        manifest.artifacts["ensemble_summary"] = path
        mpath = os.path.join(out_dir, "manifest.json")
        _atomic_write(mpath, json.dumps(manifest.to_dict(), indent=1))
        manifest.artifacts["manifest"] = mpath
    return summaries, manifest


def pool_summaries(summaries) -> dict:
    """Ordered reduction of per-run summaries into pooled means and SEs."""
    summaries = sorted(summaries, key=lambda s: s.run_index)
    times = summaries[0].checkpoint_times
    m2 = np.stack([s.m2 for s in summaries])
    m4 = np.stack([s.m4 for s in summaries])
    n = len(summaries)

    def stats(x):
        mean = x.mean(axis=0)
        se = x.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
        return mean.tolist(), se.tolist()

    m2_mean, m2_se = stats(m2)
    m4_mean, m4_se = stats(m4)
    return {
        "n_runs": n,
        "checkpoint_times": times.tolist(),
        "m2_mean": m2_mean, "m2_se": m2_se,
        "m4_mean": m4_mean, "m4_se": m4_se,
        "total_events": int(sum(s.n_events for s in summaries)),
        "total_collisions": int(sum(s.n_collisions for s in summaries)),
    }
