"""Stochastic trajectory evolution: step protocol, jump decisions, ensembles.

One step applies the deterministic no-click propagator, renormalizes, then
fires each monitored bond independently with probability gamma*dt*<L+L>
evaluated on the propagated state. Decisions come from a counter-based
stream keyed by (seed, step, bond), so a trajectory is reproducible
bit-for-bit no matter how work is scheduled across processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed, parallel_config
from threadpoolctl import threadpool_limits

from . import analysis, gaussian
from .errors import ConfigError, NumericError, ProtocolError
from .model import LatticeConfig, build_effective_matrix, build_jump_specs

_MASK64 = (1 << 64) - 1
_PERM_FLAG = 1 << 63

# gamma * dt * <L+L> above this bound voids the first-order jump expansion
PROBABILITY_BOUND = 0.1

# running tally of entropy-bound checks, inspected by the acceptance suite
bound_check_counter = {"checked": 0}


def default_t_max(gamma: float) -> float:
    """Default evolution horizon: at least 300, longer for weak monitoring."""
    return max(300.0, 10.0 / gamma) if gamma > 0 else 300.0


@dataclass(frozen=True)
class StepProtocol:
    """Fixed-step discretization and recording grid.

    Record times are snapped to the nearest step; t=0 is always recorded
    when it lies on the grid requested via record_every.
    """

    dt: float = 0.05
    t_max: float = 300.0
    record_every: float = 1.0
    record_times: "tuple[float, ...] | None" = None

    def __post_init__(self):
        if not (self.dt > 0.0):
            raise ConfigError(f"dt must be positive, got {self.dt!r}")
        if not (self.t_max >= 0.0):
            raise ConfigError(f"t_max must be >= 0, got {self.t_max!r}")
        if self.record_times is None and not (self.record_every > 0.0):
            raise ConfigError("record_every must be positive")
        if self.record_times is not None and len(self.record_times) == 0:
            raise ConfigError("record_times must not be empty")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))

    def record_steps(self) -> np.ndarray:
        """Step indices at which observables are recorded."""
        if self.record_times is not None:
            steps = {int(round(t / self.dt)) for t in self.record_times}
        else:
            stride = max(1, int(round(self.record_every / self.dt)))
            steps = set(range(0, self.n_steps + 1, stride))
            steps.add(self.n_steps)
        steps = sorted(s for s in steps if 0 <= s <= self.n_steps)
        if not steps:
            raise ConfigError("no record times fall inside [0, t_max]")
        return np.asarray(steps, dtype=np.int64)

    def validate_rates(self, gamma: float) -> None:
        if gamma * self.dt > PROBABILITY_BOUND + 1e-12:
            raise ProtocolError(
                f"gamma*dt = {gamma * self.dt:.3g} exceeds the safe bound "
                f"{PROBABILITY_BOUND}; reduce dt"
            )


class JumpDecisionStream:
    """Deterministic uniform variates addressed by (step, bond).

    Backed by counter-based Philox keyed on (seed, step); any single draw
    can be regenerated in isolation, so results do not depend on thread
    scheduling or on how many bonds other code happened to query.
    Draws lie in the open interval (0, 1): a zero-probability bond can
    never fire.
    """

    def __init__(self, seed: int):
        if seed < 0:
            raise ConfigError("stream seed must be non-negative")
        self.seed = int(seed) & _MASK64

    def _rng(self, step: int, flag: int = 0) -> np.random.Generator:
        key = (self.seed << 64) | flag | (int(step) & (_PERM_FLAG - 1))
        return np.random.Generator(np.random.Philox(key=key))

    def row(self, step: int, n: int) -> np.ndarray:
        """Draws for bonds 0..n-1 of one step."""
        r = self._rng(step).random(n)
        r[r == 0.0] = np.nextafter(0.0, 1.0)
        return r

    def draw(self, step: int, bond: int) -> float:
        return float(self.row(step, bond + 1)[bond])

    def permutation(self, step: int, n: int) -> np.ndarray:
        """Jump-ordering permutation for one step (random-order mode)."""
        return self._rng(step, flag=_PERM_FLAG).permutation(n)


@dataclass
class TrajectoryRecord:
    """Observables of a single trajectory on the recording grid."""

    seed: int
    times: np.ndarray
    cuts: tuple[int, ...]
    density: np.ndarray        # (T, L)
    cut_entropy: np.ndarray    # (T, n_cuts)
    scl: np.ndarray            # (T,) classical occupation entropy of this state
    jumps: np.ndarray          # (T, n_bonds) cumulative jump counts
    k: "np.ndarray | None" = None
    nk: "np.ndarray | None" = None          # (T, L)
    current: "np.ndarray | None" = None     # (T,)
    states: "list | None" = None


@dataclass
class EnsembleStats:
    """Trajectory-averaged observables with standard errors."""

    n_traj: int
    times: np.ndarray
    cuts: tuple[int, ...]
    density_mean: np.ndarray
    density_stderr: np.ndarray
    cut_entropy_mean: np.ndarray
    cut_entropy_stderr: np.ndarray
    scl_mean: np.ndarray
    scl_stderr: np.ndarray
    scl_avg: np.ndarray        # classical entropy of the averaged profile
    jumps_mean: np.ndarray
    jumps_stderr: np.ndarray
    k: "np.ndarray | None" = None
    nk_mean: "np.ndarray | None" = None
    nk_stderr: "np.ndarray | None" = None
    current_mean: "np.ndarray | None" = None
    current_stderr: "np.ndarray | None" = None


def _mean_stderr(stack: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m = stack.shape[0]
    mean = stack.mean(axis=0)
    if m < 2:
        return mean, np.full_like(mean, np.nan, dtype=float)
    return mean, stack.std(axis=0, ddof=1) / math.sqrt(m)


def reduce_records(records: "list[TrajectoryRecord]") -> EnsembleStats:
    """Merge per-trajectory records into ensemble means and standard errors.

    Records are reduced in the given (seed) order with plain array sums,
    so the result is independent of which worker produced which record.
    """
    if not records:
        raise ConfigError("cannot reduce an empty record list")
    r0 = records[0]
    dm, ds = _mean_stderr(np.stack([r.density for r in records]))
    cm, cs = _mean_stderr(np.stack([r.cut_entropy for r in records]))
    sm, ss = _mean_stderr(np.stack([r.scl for r in records]))
    jm, js = _mean_stderr(np.stack([r.jumps for r in records]).astype(float))
    stats = EnsembleStats(
        n_traj=len(records),
        times=r0.times.copy(),
        cuts=r0.cuts,
        density_mean=dm,
        density_stderr=ds,
        cut_entropy_mean=cm,
        cut_entropy_stderr=cs,
        scl_mean=sm,
        scl_stderr=ss,
        scl_avg=np.array([analysis.classical_entropy(row) for row in dm]),
        jumps_mean=jm,
        jumps_stderr=js,
    )
    if r0.nk is not None:
        stats.k = r0.k.copy()
        stats.nk_mean, stats.nk_stderr = _mean_stderr(np.stack([r.nk for r in records]))
        stats.current_mean, stats.current_stderr = _mean_stderr(
            np.stack([r.current for r in records])
        )
    return stats


def initial_sites(cfg: LatticeConfig, kind: str = "default") -> list[int]:
    """Occupied sites (0-indexed) of the half-filled initial product state.

    "half_left" fills sites 0..L//2-1, "neel" every second site. The
    default is half_left for open chains and neel on a ring, where a
    domain wall has no boundary to pin to.
    """
    if kind == "default":
        kind = "half_left" if cfg.bc == "open" else "neel"
    if kind == "half_left":
        return list(range(cfg.L // 2))
    if kind == "neel":
        if cfg.L % 2:
            raise ConfigError("neel initial state requires even L")
        return list(range(0, cfg.L, 2))
    raise ConfigError(f"unknown initial state {kind!r}")


@dataclass
class PreparedRun:
    """Precomputed operators and index tables for the stepping loop."""

    cfg: LatticeConfig
    protocol: StepProtocol
    propagator: np.ndarray
    specs: list
    left_sites: np.ndarray
    right_sites: np.ndarray
    gamma_dt: float
    jump_order: str = "ascending"


def prepare(cfg: LatticeConfig, protocol: StepProtocol, jump_order: str = "ascending") -> PreparedRun:
    if jump_order not in ("ascending", "random"):
        raise ConfigError(f"jump_order must be 'ascending' or 'random', got {jump_order!r}")
    protocol.validate_rates(cfg.gamma)
    specs = build_jump_specs(cfg)
    h_eff = build_effective_matrix(cfg)
    return PreparedRun(
        cfg=cfg,
        protocol=protocol,
        propagator=gaussian.build_propagator(h_eff, protocol.dt),
        specs=specs,
        left_sites=np.array([s.bond[0] for s in specs], dtype=np.intp),
        right_sites=np.array([s.bond[1] for s in specs], dtype=np.intp),
        gamma_dt=cfg.gamma * protocol.dt,
        jump_order=jump_order,
    )


def jump_probabilities(B: np.ndarray, prep: PreparedRun) -> np.ndarray:
    """gamma*dt*<L+L> for every bond at once (vectorized over bonds)."""
    # row m is <a_m|B in column space: conj(a) has +i/sqrt(2) on the right site
    O = (B[prep.left_sites, :] + 1j * B[prep.right_sites, :]) * gaussian.SQRT_HALF
    return prep.gamma_dt * np.einsum("mj,mj->m", O.conj(), O).real


def step(
    B: np.ndarray,
    prep: PreparedRun,
    stream: JumpDecisionStream,
    step_index: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Advance one time step; returns the new state and the fired bonds.

    The whole jump set is decided from the propagated state, then applied
    bond by bond (ascending order by default). Probabilities are checked
    against the first-order bound at run time.
    """
    B = gaussian.evolve_nonunitary(B, prep.propagator)
    p = jump_probabilities(B, prep)
    if p.size and float(p.max()) > PROBABILITY_BOUND + 1e-9:
        raise ProtocolError(
            f"jump probability {p.max():.3g} at step {step_index} exceeds "
            f"{PROBABILITY_BOUND}; dt too large for gamma={prep.cfg.gamma}"
        )
    r = stream.row(step_index, p.size)
    fired = np.flatnonzero(r < p)
    if fired.size:
        if prep.jump_order == "random":
            order = stream.permutation(step_index, fired.size)
            fired = fired[order]
        for m in fired:
            B = gaussian.apply_jump(B, prep.specs[m])
    return B, fired


def _check_entropy_bound(cut_entropies: np.ndarray, scl: float, t: float) -> None:
    """Subadditivity of the classical profile entropy: 2 S(cut) <= S_cl."""
    bound_check_counter["checked"] += 1
    worst = 2.0 * np.max(cut_entropies, initial=0.0) - scl
    if worst > 1e-7:
        raise NumericError(
            f"entanglement bound violated at t={t:g}: 2 S(cut) exceeds "
            f"S_cl by {worst:.3e}"
        )


def run_trajectory(
    cfg: LatticeConfig,
    protocol: StepProtocol,
    seed: int,
    *,
    occupied: "list[int] | None" = None,
    initial_state: str = "default",
    cuts: "tuple[int, ...] | None" = None,
    record_momentum: bool = False,
    jump_order: str = "ascending",
    keep_states: bool = False,
    prep: "PreparedRun | None" = None,
) -> TrajectoryRecord:
    """Evolve one Gaussian trajectory and record observables.

    Parameters
    ----------
    cfg, protocol : model and discretization parameters.
    seed : key of the jump-decision stream.
    occupied : explicit 0-indexed initial sites; overrides initial_state.
    cuts : entanglement cut lengths (first `cut` sites); default L//4.
    record_momentum : also record n_k and the current (ring only).
    jump_order : "ascending" or "random" application order inside a step.
    keep_states : retain the quasimode matrix at every recorded time.
    """
    if prep is None:
        prep = prepare(cfg, protocol, jump_order)
    if record_momentum and cfg.bc != "periodic":
        raise ConfigError("momentum recording requires periodic boundaries")
    if cuts is None:
        cuts = (cfg.L // 4,)
    cuts = tuple(int(c) for c in cuts)
    if occupied is None:
        occupied = initial_sites(cfg, initial_state)

    B = gaussian.init_product_state(cfg.L, occupied)
    stream = JumpDecisionStream(seed)
    rec_steps = protocol.record_steps()
    T = rec_steps.size
    n_bonds = cfg.n_bonds

    rec = TrajectoryRecord(
        seed=seed,
        times=rec_steps * protocol.dt,
        cuts=cuts,
        density=np.empty((T, cfg.L)),
        cut_entropy=np.empty((T, len(cuts))),
        scl=np.empty(T),
        jumps=np.zeros((T, n_bonds), dtype=np.int64),
        states=[] if keep_states else None,
    )
    if record_momentum:
        rec.k = gaussian.momentum_grid(cfg.L)[1].copy()
        rec.nk = np.empty((T, cfg.L))
        rec.current = np.empty(T)

    jump_totals = np.zeros(n_bonds, dtype=np.int64)
    rec_pos = 0

    def snapshot(k_step: int) -> None:
        nonlocal rec_pos
        rec.density[rec_pos] = gaussian.density_profile(B)
        rec.cut_entropy[rec_pos] = [
            gaussian.block_entanglement_entropy(B, c) for c in cuts
        ]
        rec.scl[rec_pos] = analysis.classical_entropy(rec.density[rec_pos])
        _check_entropy_bound(
            rec.cut_entropy[rec_pos], rec.scl[rec_pos], k_step * protocol.dt
        )
        rec.jumps[rec_pos] = jump_totals
        if record_momentum:
            C = gaussian.correlation_matrix(B)
            _, nk = gaussian.momentum_occupation(C, cfg.bc)
            rec.nk[rec_pos] = nk
            rec.current[rec_pos] = analysis.current(rec.k, nk)
        if keep_states:
            rec.states.append(B.copy())
        rec_pos += 1

    rec_set = set(int(s) for s in rec_steps)
    if 0 in rec_set:
        snapshot(0)
    for k_step in range(1, protocol.n_steps + 1):
        B, fired = step(B, prep, stream, k_step)
        if fired.size:
            np.add.at(jump_totals, fired, 1)
        if k_step in rec_set:
            snapshot(k_step)
    return rec


def _trajectory_worker(cfg, protocol, seed, kwargs):
    # single-threaded BLAS keeps results identical across any pool layout
    with threadpool_limits(limits=1):
        return run_trajectory(cfg, protocol, seed, **kwargs)


def run_ensemble(
    cfg: LatticeConfig,
    protocol: StepProtocol,
    n_traj: int,
    base_seed: int,
    *,
    n_jobs: int = 1,
    return_records: bool = False,
    **kwargs,
):
    """Run trajectories with seeds base_seed+1 .. base_seed+n_traj.

    Results are reduced in seed order, so the statistics are bit-identical
    for any n_jobs. Returns EnsembleStats, or (stats, records) when
    return_records is set.
    """
    if n_traj < 1:
        raise ConfigError("n_traj must be >= 1")
    seeds = [base_seed + 1 + i for i in range(n_traj)]
    if n_jobs == 1:
        records = [_trajectory_worker(cfg, protocol, s, kwargs) for s in seeds]
    else:
        with parallel_config(backend="loky", inner_max_num_threads=1):
            records = Parallel(n_jobs=n_jobs)(
                delayed(_trajectory_worker)(cfg, protocol, s, kwargs) for s in seeds
            )
    stats = reduce_records(records)
    if return_records:
        return stats, records
    return stats
