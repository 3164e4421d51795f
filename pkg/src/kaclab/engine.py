"""Exact event-driven simulation of the (possibly tilted) collision process.

Simulation is by majorant thinning.  On each scheme interval the effective
pair rate factorises as

    K(t, v_i, v_j) B(v_i - v_j) = c (1 + gamma u_ij) 1[pair not frozen],
    u_ij = |v_i - v_j|,

which is dominated by the product-form majorant c (1 + gamma |v_i| +
gamma |v_j|).  Candidate ordered pairs (diagonal included) are drawn from
the three-component mixture {uniform x uniform, speed-weighted x uniform,
uniform x speed-weighted} with weights (N^2, gamma N A, gamma N A),
A = sum_i |v_i|, and accepted with probability (true rate)/(majorant).
Speed-weighted sampling is maintained in a Fenwick tree, so each proposal
costs O(log N).

Holding times are exponential at the total majorant rate c (N + 2 gamma A)
and are truncated at segment boundaries (checkpoints and scheme interval
ends); by memorylessness this leaves the law of the process unchanged and
makes runs exactly decomposable across segments.  Event times accumulate in
compensated (Kahan) summation.

Every proposal is logged: accepted proposals become flux atoms of mass 1/N
(diagonal pairs are state no-ops but still carry flux mass, matching the
product-measure form of the generator), rejected proposals are retained as
fictitious events so the thinning chain can be replayed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .fenwick import FenwickSampler
from .girsanov import RNLedger, TiltingScheme, sample_tilted_initial
from .kinetics import Kernel
from .metrics import WeightedMeasure
from .reference import ReferenceMeasure

__all__ = [
    "ParticleState",
    "CollisionEvent",
    "EventLog",
    "CheckpointSummary",
    "Trajectory",
    "InitialCondition",
    "SimConfig",
    "MajorantViolationError",
    "total_rate",
    "step",
    "simulate",
    "empirical_measure",
    "flux_measure",
    "replay_events",
    "make_rng",
]


class MajorantViolationError(RuntimeError):
    """The factorised bound was exceeded: the tilting scheme is invalid."""


_IDENTITY_SCHEME = TiltingScheme.identity()


# ---------------------------------------------------------------------------
# state and records


@dataclass
class ParticleState:
    """N velocities in R^d, each carrying empirical mass 1/N."""

    velocities: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.velocities = np.atleast_2d(np.asarray(self.velocities, dtype=float))
        if not np.all(np.isfinite(self.velocities)):
            raise ValueError("velocities must be finite")

    @property
    def n(self) -> int:
        return self.velocities.shape[0]

    @property
    def d(self) -> int:
        return self.velocities.shape[1]

    def momentum(self) -> np.ndarray:
        return self.velocities.mean(axis=0)

    def energy(self) -> float:
        return float(np.mean(np.sum(self.velocities**2, axis=1)))

    def copy(self) -> "ParticleState":
        return ParticleState(self.velocities.copy(), self.time)


@dataclass(frozen=True)
class CollisionEvent:
    """One proposal of the thinning chain.

    (i, j, sigma) are already expressed in the recorded assignment, drawn
    uniformly among the four symmetric labellings of the collision; the
    state transition itself is assignment-independent.
    """

    time: float
    i: int
    j: int
    sigma: np.ndarray
    assignment: int
    pre_v: np.ndarray
    pre_v_star: np.ndarray
    fictitious: bool


class EventLog:
    """Columnar, time-ordered log of proposals.

    As a measure on [0,T] x R^d x R^d x S^{d-1}, each non-fictitious row
    carries mass 1/N; the pre-collision velocities of a row are recovered
    by replaying the log from the initial state.
    """

    __slots__ = ("t", "i", "j", "sigma", "assignment", "fictitious", "n_particles", "horizon")

    def __init__(self, t, i, j, sigma, assignment, fictitious, n_particles, horizon):
        self.t = np.asarray(t, dtype=float)
        self.i = np.asarray(i, dtype=np.int64)
        self.j = np.asarray(j, dtype=np.int64)
        self.sigma = np.asarray(sigma, dtype=float)
        self.assignment = np.asarray(assignment, dtype=np.int8)
        self.fictitious = np.asarray(fictitious, dtype=bool)
        self.n_particles = int(n_particles)
        self.horizon = float(horizon)
        if not np.all(np.diff(self.t) >= 0.0):
            raise ValueError("event times must be nondecreasing")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def n_collisions(self) -> int:
        return int(np.sum(~self.fictitious))

    def flux_mass(self) -> float:
        return self.n_collisions / self.n_particles


class _EventBuffer:
    def __init__(self, d: int, capacity: int = 1024):
        self.d = d
        self.size = 0
        self.t = np.empty(capacity)
        self.i = np.empty(capacity, dtype=np.int64)
        self.j = np.empty(capacity, dtype=np.int64)
        self.sigma = np.empty((capacity, d))
        self.assignment = np.empty(capacity, dtype=np.int8)
        self.fictitious = np.empty(capacity, dtype=bool)

    def _grow(self):
        cap = len(self.t) * 2
        self.t = np.resize(self.t, cap)
        self.i = np.resize(self.i, cap)
        self.j = np.resize(self.j, cap)
        sig = np.empty((cap, self.d))
        sig[: self.size] = self.sigma[: self.size]
        self.sigma = sig
        self.assignment = np.resize(self.assignment, cap)
        self.fictitious = np.resize(self.fictitious, cap)

    def append(self, t, i, j, sigma, assignment, fictitious):
        if self.size == len(self.t):
            self._grow()
        k = self.size
        self.t[k] = t
        self.i[k] = i
        self.j[k] = j
        self.sigma[k] = sigma
        self.assignment[k] = assignment
        self.fictitious[k] = fictitious
        self.size = k + 1

    def to_log(self, n_particles: int, horizon: float) -> EventLog:
        k = self.size
        return EventLog(
            self.t[:k].copy(), self.i[:k].copy(), self.j[:k].copy(),
            self.sigma[:k].copy(), self.assignment[:k].copy(),
            self.fictitious[:k].copy(), n_particles, horizon,
        )


@dataclass
class CheckpointSummary:
    time: float
    mass: float
    momentum: np.ndarray
    m2: float
    m4: float
    truncated_m2: dict
    n_events: int
    n_collisions: int
    ledger: RNLedger
    state: ParticleState | None = None

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "mass": self.mass,
            "momentum": [float(x) for x in self.momentum],
            "m2": self.m2,
            "m4": self.m4,
            "truncated_m2": {str(k): float(v) for k, v in self.truncated_m2.items()},
            "n_events": self.n_events,
            "n_collisions": self.n_collisions,
            "ledger": self.ledger.to_dict(),
        }


@dataclass
class Trajectory:
    initial_state: ParticleState
    final_state: ParticleState
    checkpoints: list
    log: EventLog | None
    rn_ledger: RNLedger
    seed: int
    config: "SimConfig"


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class InitialCondition:
    """gaussian | scale_mixture (centred isotropic Gaussians of given scales)."""

    kind: str = "gaussian"
    weights: tuple = ()
    scales: tuple = ()

    def sample(self, reference: ReferenceMeasure, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "gaussian":
            return reference.sample(rng, n)
        if self.kind == "scale_mixture":
            w = np.asarray(self.weights, dtype=float)
            s = np.asarray(self.scales, dtype=float)
            if len(w) != len(s) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("mixture weights must match scales and sum to 1")
            comp = rng.choice(len(w), size=n, p=w)
            return reference.sample(rng, n) * s[comp, None]
        raise ValueError(f"unknown initial condition {self.kind!r}")


@dataclass(frozen=True)
class SimConfig:
    n: int
    t_max: float
    kernel: Kernel = Kernel.MAXWELL
    d: int = 3
    seed: int = 0
    checkpoint_times: tuple = None
    record_full_states: bool = False
    truncation_thresholds: tuple = ()
    initial: InitialCondition = field(default_factory=InitialCondition)
    measure: str = "Q"  # "Q": simulate tilted dynamics; "P": base dynamics, ledger still tracked
    store_log: bool = True
    majorant_inflation: float = 1.0  # testing hook: loosen the majorant, law unchanged

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if self.t_max < 0.0:
            raise ValueError(f"t_max must be >= 0, got {self.t_max}")
        cps = self.checkpoint_times
        if cps is None:
            cps = (0.0, self.t_max)
        cps = tuple(sorted(float(t) for t in cps))
        if cps and (cps[0] < 0.0 or cps[-1] > self.t_max):
            raise ValueError("checkpoint times must lie in [0, t_max]")
        object.__setattr__(self, "checkpoint_times", cps)
        if self.measure not in ("P", "Q"):
            raise ValueError("measure must be 'P' or 'Q'")
        if self.majorant_inflation < 1.0:
            raise ValueError("majorant inflation must be >= 1")

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "t_max": self.t_max,
            "kernel": self.kernel.value,
            "d": self.d,
            "seed": self.seed,
            "checkpoint_times": list(self.checkpoint_times),
            "record_full_states": self.record_full_states,
            "truncation_thresholds": list(self.truncation_thresholds),
            "initial": {
                "kind": self.initial.kind,
                "weights": list(self.initial.weights),
                "scales": list(self.initial.scales),
            },
            "measure": self.measure,
            "store_log": self.store_log,
            "majorant_inflation": self.majorant_inflation,
        }


def make_rng(master_seed: int, run_index: int = 0) -> np.random.Generator:
    """Splittable counter-based stream for (master seed, run index)."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(run_index),))
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# buffered draws: one numpy call per few thousand variates, consumed scalar-
# by-scalar so the RNG stream is a deterministic function of the algorithm


class _Draws:
    __slots__ = ("rng", "_u", "_iu", "_e", "_ie", "_n", "_in", "_chunk")

    def __init__(self, rng: np.random.Generator, chunk: int = 8192):
        self.rng = rng
        self._chunk = chunk
        self._u = rng.random(chunk)
        self._iu = 0
        self._e = rng.standard_exponential(chunk)
        self._ie = 0
        self._n = rng.standard_normal(chunk)
        self._in = 0

    @staticmethod
    def sized_for(rng: np.random.Generator, n: int, t_max: float) -> "_Draws":
        # ~8 draws per proposal; proposal rates are a few times N
        expect = 8.0 * (4.0 * n * t_max + 16.0)
        chunk = int(min(8192, max(64, expect)))
        return _Draws(rng, chunk)

    def uniform(self) -> float:
        i = self._iu
        if i == self._chunk:
            self._u = self.rng.random(self._chunk)
            i = 0
        self._iu = i + 1
        return self._u[i]

    def exponential(self) -> float:
        i = self._ie
        if i == self._chunk:
            self._e = self.rng.standard_exponential(self._chunk)
            i = 0
        self._ie = i + 1
        return self._e[i]

    def normals(self, d: int) -> np.ndarray:
        i = self._in
        if i + d > self._chunk:
            self._n = self.rng.standard_normal(self._chunk)
            i = 0
        self._in = i + d
        return self._n[i : i + d]


# ---------------------------------------------------------------------------
# incremental pair-distance sums for the compensator


class _LedgerTracker:
    """Maintains D = sum_{ij} u_ij and its unfrozen-block restriction.

    The compensator rate (1/N) sum_{ij} (K - 1) B is a fixed linear
    combination of N_U^2, D_UU, N^2 and D for the scheme family in scope,
    so O(N) row updates per collision keep it exact between events.
    """

    __slots__ = ("v", "alive", "n", "n_alive", "d_all", "d_uu", "need_all", "need_uu")

    def __init__(self, velocities: np.ndarray, frozen_mask: np.ndarray, need_all: bool, need_uu: bool):
        self.v = velocities  # live view, updated in place by the engine
        self.alive = ~frozen_mask
        self.n = len(velocities)
        self.n_alive = int(self.alive.sum())
        self.need_all = need_all
        self.need_uu = need_uu
        self.d_all = 0.0
        self.d_uu = 0.0
        if need_all or need_uu:
            u = cdist(velocities, velocities)
            total = float(u.sum())
            if need_all:
                self.d_all = total
            if need_uu:
                self.d_uu = total if self.n_alive == self.n else float(
                    u[np.ix_(self.alive, self.alive)].sum()
                )

    def row_sums(self, idx: int):
        diff = self.v - self.v[idx]
        row = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        all_sum = float(row.sum()) if self.need_all else 0.0
        uu_sum = float(row[self.alive].sum()) if (self.need_uu and self.alive[idx]) else 0.0
        return all_sum, uu_sum

    def pre_collision(self, i: int, j: int):
        ai, ui = self.row_sums(i)
        aj, uj = self.row_sums(j)
        uij = float(np.linalg.norm(self.v[i] - self.v[j]))
        return ai, ui, aj, uj, uij

    def post_collision(self, i: int, j: int, pre):
        ai0, ui0, aj0, uj0, uij0 = pre
        ai1, ui1 = self.row_sums(i)
        aj1, uj1 = self.row_sums(j)
        uij1 = float(np.linalg.norm(self.v[i] - self.v[j]))
        if self.need_all:
            self.d_all += 2.0 * (ai1 + aj1 - ai0 - aj0) - 2.0 * (uij1 - uij0)
        if self.need_uu:
            both = self.alive[i] and self.alive[j]
            self.d_uu += 2.0 * (ui1 + uj1 - ui0 - uj0) - (2.0 * (uij1 - uij0) if both else 0.0)


# ---------------------------------------------------------------------------
# the proposal kernel: single code path shared by step() and simulate()


class _Engine:
    def __init__(self, state: ParticleState, kernel: Kernel, dynamics: TiltingScheme,
                 ledger_scheme: TiltingScheme | None, ledger: RNLedger,
                 draws: _Draws, events: _EventBuffer | None, inflation: float = 1.0):
        self.V = state.velocities
        self.n, self.d = self.V.shape
        self.kernel = kernel
        self.beta = kernel.slope
        self.dynamics = dynamics
        self.ledger_scheme = ledger_scheme
        self.ledger = ledger
        self.draws = draws
        self.events = events
        self.inflation = float(inflation)
        self.speeds = np.linalg.norm(self.V, axis=1)
        self.fen = None
        self.t = state.time
        self._t_comp = 0.0  # Kahan compensation for the clock
        self.n_events = 0
        self.n_collisions = 0
        # per-segment dynamic parameters, set by enter_segment
        self.c_dyn = 1.0
        self.gamma = 0.0
        self.frozen_dyn = np.zeros(self.n, dtype=bool)
        self.any_frozen_dyn = False
        self.c_led = 1.0
        self.delta_led = 0.0
        self.frozen_led = None
        self.any_frozen_led = False
        self.tracker = None

    # -- time bookkeeping ------------------------------------------------

    def _advance_clock(self, dt: float):
        y = dt - self._t_comp
        s = self.t + y
        self._t_comp = (s - self.t) - y
        self.t = s

    def set_clock(self, t: float):
        self.t = t
        self._t_comp = 0.0

    # -- segment setup -----------------------------------------------------

    def enter_segment(self, t0: float):
        dyn = self.dynamics
        k = dyn.interval_index(t0)
        self.c_dyn = float(dyn.coeffs[k])
        delta_dyn = float(dyn.deltas[k])
        self.gamma = delta_dyn + self.beta
        if len(dyn.frozen_sets[k]):
            self.frozen_dyn = dyn.frozen_mask(k, self.n)
            self.any_frozen_dyn = True
        else:
            self.any_frozen_dyn = False
        if self.gamma > 0.0 and self.fen is None:
            self.fen = FenwickSampler(self.speeds)
        led = self.ledger_scheme
        if led is not None and not led.is_trivial():
            kl = led.interval_index(t0)
            self.c_led = float(led.coeffs[kl])
            self.delta_led = float(led.deltas[kl])
            frozen_led = led.frozen_mask(kl, self.n)
            need_all = self.beta > 0.0
            need_uu = (self.delta_led + self.beta) > 0.0
            self.frozen_led = frozen_led
            self.any_frozen_led = bool(frozen_led.any())
            self.tracker = _LedgerTracker(self.V, frozen_led, need_all, need_uu)
        else:
            self.frozen_led = None
            self.any_frozen_led = False
            self.tracker = None

    def compensator_rate(self) -> float:
        """(1/N) sum_{ij} (K - 1) B from the maintained sums."""
        led = self.ledger_scheme
        if led is None or self.tracker is None:
            return 0.0
        n = self.n
        tr = self.tracker
        nu = tr.n_alive
        gamma_led = self.delta_led + self.beta
        val = self.c_led * (nu * nu + gamma_led * tr.d_uu) - (n * n + self.beta * tr.d_all)
        return val / n

    # -- one proposal -------------------------------------------------------

    def propose(self, t_end: float) -> bool:
        """Advance by one proposal, truncated at t_end.

        Returns False when the segment boundary was reached (no proposal).
        """
        n = self.n
        draws = self.draws
        gamma = self.gamma
        a_sum = self.fen.total if gamma > 0.0 else 0.0
        rate = self.c_dyn * self.inflation * (n + 2.0 * gamma * a_sum)
        if rate <= 0.0:
            self._settle_compensator(t_end - self.t)
            self.set_clock(t_end)
            return False
        dt = draws.exponential() / rate
        if self.t + dt >= t_end:
            self._settle_compensator(t_end - self.t)
            self.set_clock(t_end)
            return False
        self._settle_compensator(dt)
        self._advance_clock(dt)

        # mixture component, then the ordered pair
        pick = draws.uniform() * (n + 2.0 * gamma * a_sum)
        if pick < n:
            i = int(draws.uniform() * n)
            j = int(draws.uniform() * n)
        elif pick < n + gamma * a_sum:
            i = self.fen.sample(draws.uniform())
            j = int(draws.uniform() * n)
        else:
            j = self.fen.sample(draws.uniform())
            i = int(draws.uniform() * n)

        raw = draws.normals(self.d)
        nrm = math.sqrt(float(raw @ raw))
        while nrm < 1e-300:
            raw = draws.normals(self.d)
            nrm = math.sqrt(float(raw @ raw))
        sigma = raw / nrm
        assignment = int(draws.uniform() * 4.0)
        u_accept = draws.uniform()

        vi = self.V[i]
        vj = self.V[j]
        if i == j:
            u_dist = 0.0
        else:
            dvec = vi - vj
            u_dist = math.sqrt(float(dvec @ dvec))
        frozen_pair = self.any_frozen_dyn and bool(self.frozen_dyn[i] or self.frozen_dyn[j])
        kb = 0.0 if frozen_pair else self.c_dyn * (1.0 + gamma * u_dist)
        majorant = self.c_dyn * self.inflation * (1.0 + gamma * (self.speeds[i] + self.speeds[j]))
        if kb > majorant * (1.0 + 1e-12):
            raise MajorantViolationError(
                f"K*B = {kb} exceeds majorant {majorant} at pair ({i},{j}); "
                "the tilting scheme's multiplier bound is invalid"
            )
        accepted = u_accept * majorant < kb

        # recorded assignment view: 0 (i,j,s) 1 (i,j,-s) 2 (j,i,s) 3 (j,i,-s)
        if assignment >= 2:
            ri, rj = j, i
        else:
            ri, rj = i, j
        rsigma = sigma if assignment % 2 == 0 else -sigma

        if accepted:
            self.n_collisions += 1
            if self.tracker is not None:
                if self.any_frozen_led and (self.frozen_led[i] or self.frozen_led[j]):
                    self.ledger.hit_zero = True
                else:
                    self.ledger.jump_term += math.log(self.c_led * (1.0 + self.delta_led * u_dist))
            if i != j:
                pre = self.tracker.pre_collision(i, j) if self.tracker is not None else None
                # apply the collision in the recorded parametrisation so a
                # replay of the log reproduces the arithmetic bit for bit
                w = self.V[ri]
                w_star = self.V[rj]
                a = float((w - w_star) @ rsigma)
                step_vec = a * rsigma
                self.V[ri] = w - step_vec
                self.V[rj] = w_star + step_vec
                self.speeds[i] = math.sqrt(float(self.V[i] @ self.V[i]))
                self.speeds[j] = math.sqrt(float(self.V[j] @ self.V[j]))
                if self.fen is not None:
                    self.fen.update(i, self.speeds[i])
                    self.fen.update(j, self.speeds[j])
                if self.tracker is not None:
                    self.tracker.post_collision(i, j, pre)
        if self.events is not None:
            self.events.append(self.t, ri, rj, rsigma, assignment, not accepted)
        self.n_events += 1
        return True

    def _settle_compensator(self, dt: float):
        if self.tracker is not None and dt > 0.0:
            self.ledger.compensator_term += dt * self.compensator_rate()

    def run_segment(self, t_end: float):
        self.enter_segment(self.t)
        while self.propose(t_end):
            pass


# ---------------------------------------------------------------------------
# public operations


def total_rate(state: ParticleState, kernel: Kernel, tilt: TiltingScheme | None = None) -> float:
    """Total event rate N int K B dmu dmu dsigma = (1/N) sum_{ij} K_ij B_ij.

    Exact O(N^2) pair sum (sigma-independent K); diagonal pairs included.
    """
    v = state.velocities
    n = state.n
    u = cdist(v, v)
    b = 1.0 + kernel.slope * u
    if tilt is None:
        return float(b.sum()) / n
    k_idx = tilt.interval_index(state.time)
    kmat = tilt.coeffs[k_idx] * (1.0 + tilt.deltas[k_idx] * u)
    alive = ~tilt.frozen_mask(k_idx, n)
    kmat *= np.outer(alive, alive)
    return float((kmat * b).sum()) / n


def step(state: ParticleState, kernel: Kernel, tilt: TiltingScheme | None, rng: np.random.Generator):
    """One proposal of the thinning chain; returns (new state, event).

    The returned event is fictitious on rejections and on nothing-happens
    diagonal draws the state is returned unchanged.
    """
    dynamics = tilt if tilt is not None else _IDENTITY_SCHEME
    dynamics.validate_kernel(kernel)
    new_state = state.copy()
    eng = _Engine(new_state, kernel, dynamics, None, RNLedger(), _Draws(rng), _EventBuffer(state.d))
    eng.enter_segment(state.time)
    if eng.c_dyn <= 0.0:
        raise ValueError("dynamics have zero total rate: there is no next event")
    while not eng.propose(np.inf):
        pass
    log = eng.events.to_log(state.n, eng.t)
    k = len(log) - 1
    ii, jj = int(log.i[k]), int(log.j[k])
    event = CollisionEvent(
        time=float(log.t[k]), i=ii, j=jj, sigma=log.sigma[k].copy(),
        assignment=int(log.assignment[k]),
        pre_v=state.velocities[ii].copy(), pre_v_star=state.velocities[jj].copy(),
        fictitious=bool(log.fictitious[k]),
    )
    new_state.time = eng.t
    return new_state, event


def _checkpoint(eng: _Engine, cfg: SimConfig, t: float) -> CheckpointSummary:
    v = eng.V
    s = np.sum(v * v, axis=1)
    trunc = {}
    for thr in cfg.truncation_thresholds:
        trunc[float(thr)] = float(np.mean(s * (np.sqrt(s) <= thr)))
    return CheckpointSummary(
        time=t,
        mass=1.0,
        momentum=v.mean(axis=0).copy(),
        m2=float(np.mean(s)),
        m4=float(np.mean(s * s)),
        truncated_m2=trunc,
        n_events=eng.n_events,
        n_collisions=eng.n_collisions,
        ledger=eng.ledger.copy(),
        state=ParticleState(v.copy(), t) if cfg.record_full_states else None,
    )


def simulate(config: SimConfig, scheme: TiltingScheme | None = None,
             rng: np.random.Generator | None = None,
             initial_state: ParticleState | None = None) -> Trajectory:
    """Simulate on [0, t_max]; identical (config, scheme, seed) give a
    bit-identical trajectory.

    Under measure "Q" the dynamics run at rates K*B and the initial data are
    drawn from the scheme's tilted reference measure; under "P" the base
    process is simulated while the same scheme's Radon-Nikodym ledger is
    still accumulated along the path.
    """
    if rng is None:
        rng = make_rng(config.seed)
    reference = ReferenceMeasure(config.d)
    if scheme is not None:
        scheme.validate_kernel(config.kernel)
        scheme.validate_normalisation(reference)

    if initial_state is not None:
        v0 = initial_state.velocities.copy()
    elif scheme is not None and config.measure == "Q" and scheme.initial_tilt is not None:
        v0 = sample_tilted_initial(reference, scheme, config.n, rng)
    else:
        v0 = config.initial.sample(reference, config.n, rng)
    state = ParticleState(v0, 0.0)

    ledger = RNLedger()
    if scheme is not None and scheme.initial_tilt is not None:
        ledger.initial_term = float(np.sum(scheme.initial_tilt.phi(state.velocities)))

    dynamics = scheme if (scheme is not None and config.measure == "Q") else _IDENTITY_SCHEME
    events = _EventBuffer(config.d) if config.store_log else None
    eng = _Engine(state, config.kernel, dynamics, scheme, ledger,
                  _Draws.sized_for(rng, config.n, config.t_max), events,
                  inflation=config.majorant_inflation)

    boundaries = {0.0, config.t_max}
    boundaries.update(config.checkpoint_times)
    for sch in (scheme, dynamics):
        if sch is not None:
            boundaries.update(float(b) for b in sch.breakpoints if 0.0 < b < config.t_max)
    boundaries = sorted(boundaries)
    checkpoint_set = set(config.checkpoint_times)

    initial = ParticleState(state.velocities.copy(), 0.0)
    checkpoints = []
    if 0.0 in checkpoint_set:
        eng.enter_segment(0.0)
        checkpoints.append(_checkpoint(eng, config, 0.0))
    for t0, t1 in zip(boundaries[:-1], boundaries[1:]):
        if t1 <= t0:
            continue
        eng.run_segment(t1)
        if t1 in checkpoint_set:
            checkpoints.append(_checkpoint(eng, config, t1))
    final = ParticleState(state.velocities.copy(), config.t_max)
    log = events.to_log(config.n, config.t_max) if events is not None else None
    return Trajectory(
        initial_state=initial, final_state=final, checkpoints=checkpoints,
        log=log, rn_ledger=ledger, seed=config.seed, config=config,
    )


def empirical_measure(state: ParticleState) -> WeightedMeasure:
    """Atoms at each velocity, weight 1/N each; total mass exactly 1."""
    n = state.n
    return WeightedMeasure(state.velocities.copy(), np.full(n, 1.0 / n))


def replay_events(initial_state: ParticleState, log: EventLog):
    """Re-apply a log to an initial state event by event.

    Yields (t, i, j, pre_v, pre_v_star, sigma, fictitious, live_velocities)
    per event, with the collision applied to the live array after the yield.
    The arithmetic matches the engine's exactly, so the terminal state is
    bit-identical to the original simulation.
    """
    v = initial_state.velocities.copy()
    for k in range(len(log)):
        i, j = int(log.i[k]), int(log.j[k])
        sigma = log.sigma[k]
        fict = bool(log.fictitious[k])
        yield float(log.t[k]), i, j, v[i].copy(), v[j].copy(), sigma, fict, v
        if not fict and i != j:
            a = float((v[i] - v[j]) @ sigma)
            step_vec = a * sigma
            v[i] = v[i] - step_vec
            v[j] = v[j] + step_vec


def final_state_from_log(initial_state: ParticleState, log: EventLog) -> ParticleState:
    v = initial_state.velocities.copy()
    for k in range(len(log)):
        if log.fictitious[k]:
            continue
        i, j = int(log.i[k]), int(log.j[k])
        if i == j:
            continue
        sigma = log.sigma[k]
        a = float((v[i] - v[j]) @ sigma)
        step_vec = a * sigma
        v[i] = v[i] - step_vec
        v[j] = v[j] + step_vec
    return ParticleState(v, log.horizon)


def flux_measure(trajectory: Trajectory) -> WeightedMeasure:
    """The empirical flux as an atomic measure on [0,T] x R^d x R^d x S^{d-1}.

    Each non-fictitious event contributes one atom (t, v, v_star, sigma) of
    mass 1/N, in the recorded assignment.
    """
    if trajectory.log is None:
        raise ValueError("trajectory was run without an event log")
    log = trajectory.log
    n_atoms = log.n_collisions
    d = trajectory.initial_state.d
    pts = np.empty((n_atoms, 1 + 3 * d))
    k = 0
    for t, i, j, pre_v, pre_vs, sigma, fict, _ in replay_events(trajectory.initial_state, log):
        if fict:
            continue
        pts[k, 0] = t
        pts[k, 1 : 1 + d] = pre_v
        pts[k, 1 + d : 1 + 2 * d] = pre_vs
        pts[k, 1 + 2 * d :] = sigma
        k += 1
    w = np.full(n_atoms, 1.0 / log.n_particles)
    return WeightedMeasure(pts, w)
