"""Dense many-body engine in a fixed particle-number sector.

Serves two roles: an independent oracle that cross-checks the Gaussian
engine state by state on small chains, and the production engine for the
interacting model (g != 0), including Lindblad integration and the
operator-algebra completeness test behind steady-state uniqueness.

Basis states are occupation bitstrings (bit j = site j, 0-indexed),
ordered ascending as integers; a state is built by applying creation
operators in ascending site order, which fixes all fermionic signs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.linalg
import scipy.sparse

from . import analysis, gaussian
from .errors import ConfigError, GuardError, NumericError, ProtocolError
from .model import LatticeConfig, build_hopping_matrix, build_jump_specs
from .trajectory import (
    JumpDecisionStream,
    PROBABILITY_BOUND,
    StepProtocol,
    TrajectoryRecord,
    _check_entropy_bound,
    initial_sites,
)

SECTOR_GUARD = 40_000
LINDBLAD_GUARD = 400
PROPAGATOR_GUARD = 4_096


class SectorBasis:
    """Enumeration of the N-particle occupation basis of an L-site chain."""

    def __init__(self, L: int, N: int):
        if not 0 <= N <= L:
            raise ConfigError(f"need 0 <= N <= L, got N={N}, L={L}")
        dim = math.comb(L, N)
        if dim > SECTOR_GUARD:
            raise GuardError(
                f"sector guard: binomial({L},{N}) = {dim} exceeds {SECTOR_GUARD}"
            )
        self.L = L
        self.N = N
        self.states = _sector_states(L, N)
        self.index = {s: i for i, s in enumerate(self.states)}
        self.dim = dim

    @cached_property
    def occupations(self) -> np.ndarray:
        """(dim, L) matrix of site occupations per basis state."""
        s = np.asarray(self.states, dtype=np.int64)
        return ((s[:, None] >> np.arange(self.L)) & 1).astype(np.float64)

    @cached_property
    def site_lists(self) -> np.ndarray:
        """(dim, N) occupied sites of each state, ascending."""
        out = np.empty((self.dim, self.N), dtype=np.intp)
        for i, s in enumerate(self.states):
            out[i] = [j for j in range(self.L) if (s >> j) & 1]
        return out


def _sector_states(L: int, N: int) -> list[int]:
    if N == 0:
        return [0]
    states = []
    s = (1 << N) - 1
    limit = 1 << L
    while s < limit:
        states.append(s)
        # Gosper's hack: next integer with the same popcount
        c = s & -s
        r = s + c
        s = (((r ^ s) >> 2) // c) | r
    return states


def _parity(state: int, site: int) -> int:
    return -1 if (state & ((1 << site) - 1)).bit_count() & 1 else 1


def bilinear_operator(basis: SectorBasis, h: np.ndarray) -> scipy.sparse.csr_matrix:
    """Sparse sector matrix of sum_ij h[i,j] c_i+ c_j."""
    rows, cols, vals = [], [], []
    nz = [(int(i), int(j)) for i, j in np.argwhere(np.abs(h) > 0.0)]
    for col, s in enumerate(basis.states):
        for i, j in nz:
            if not (s >> j) & 1:
                continue
            s1 = s & ~(1 << j)
            if (s1 >> i) & 1:
                continue
            amp = h[i, j] * _parity(s, j) * _parity(s1, i)
            rows.append(basis.index[s1 | (1 << i)])
            cols.append(col)
            vals.append(amp)
    return scipy.sparse.csr_matrix(
        (vals, (rows, cols)), shape=(basis.dim, basis.dim), dtype=np.complex128
    )


def annihilation_map(basis: SectorBasis, target: SectorBasis, site: int) -> scipy.sparse.csr_matrix:
    """c_site as a map from the N sector onto the N-1 sector."""
    rows, cols, vals = [], [], []
    for col, s in enumerate(basis.states):
        if (s >> site) & 1:
            rows.append(target.index[s & ~(1 << site)])
            cols.append(col)
            vals.append(_parity(s, site))
    return scipy.sparse.csr_matrix(
        (vals, (rows, cols)), shape=(target.dim, basis.dim), dtype=np.complex128
    )


@dataclass
class SectorOperators:
    """Many-body operators of the monitored chain in one number sector."""

    cfg: LatticeConfig
    basis: SectorBasis
    hamiltonian: scipy.sparse.csr_matrix       # hopping + interaction
    effective: scipy.sparse.csr_matrix         # H - (i gamma / 2) sum P_m
    projectors: list                           # bond detection projectors P_m
    jump_ops: list                             # L_m = U_m P_m
    feedback_phases: np.ndarray                # (n_bonds, dim) diagonal of U_m


def build_sector_operators(cfg: LatticeConfig, N: int) -> SectorOperators:
    """Assemble H, P_m, U_m and L_m for an N-particle sector."""
    basis = SectorBasis(cfg.L, N)
    specs = build_jump_specs(cfg)
    H = bilinear_operator(basis, build_hopping_matrix(cfg))
    if cfg.g != 0.0:
        occ = basis.occupations
        nn = np.zeros(basis.dim)
        for m in range(cfg.n_bonds):
            i, j = cfg.bond_sites(m)
            nn += occ[:, i] * occ[:, j]
        H = (H + scipy.sparse.diags(cfg.g * nn)).tocsr()

    projectors, jump_ops, phases = [], [], []
    for spec in specs:
        P = bilinear_operator(basis, np.outer(spec.mode, spec.mode.conj()))
        u = np.exp(1j * spec.theta * basis.occupations[:, spec.phase_site])
        projectors.append(P)
        phases.append(u)
        jump_ops.append(P.multiply(u[:, None]).tocsr())

    effective = H.astype(np.complex128)
    for P in projectors:
        effective = effective - 0.5j * cfg.gamma * P
    return SectorOperators(
        cfg=cfg,
        basis=basis,
        hamiltonian=H,
        effective=effective.tocsr(),
        projectors=projectors,
        jump_ops=jump_ops,
        feedback_phases=np.array(phases),
    )


def slater_amplitudes(basis: SectorBasis, B: np.ndarray) -> np.ndarray:
    """Sector amplitudes <S|B> of a quasimode matrix: det of row blocks."""
    if B.shape != (basis.L, basis.N):
        raise ConfigError(
            f"quasimode matrix {B.shape} does not match sector "
            f"(L={basis.L}, N={basis.N})"
        )
    if basis.N == 0:
        return np.ones(1, dtype=np.complex128)
    return np.linalg.det(B[basis.site_lists, :])


def dense_densities(basis: SectorBasis, psi: np.ndarray) -> np.ndarray:
    return (np.abs(psi) ** 2) @ basis.occupations


def dense_correlation(basis: SectorBasis, psi: np.ndarray, maps: "list | None" = None) -> np.ndarray:
    """C[i, j] = <c_i+ c_j> of an arbitrary sector state."""
    if basis.N == 0:
        return np.zeros((basis.L, basis.L), dtype=np.complex128)
    if maps is None:
        maps = annihilation_maps(basis)
    phi = np.stack([A @ psi for A in maps])
    return phi.conj() @ phi.T


def annihilation_maps(basis: SectorBasis) -> list:
    target = SectorBasis(basis.L, basis.N - 1)
    return [annihilation_map(basis, target, j) for j in range(basis.L)]


def reduced_density_matrix(basis: SectorBasis, psi: np.ndarray, cut: int) -> np.ndarray:
    """Reduced density matrix of the first `cut` sites.

    The ascending-site operator ordering makes the prefix split sign-free,
    so amplitudes regroup directly into a (2^cut, n_tails) matrix M with
    rho_A = M M+.
    """
    if not 0 <= cut <= basis.L:
        raise ConfigError(f"cut {cut} out of range")
    if cut > 16:
        raise GuardError("prefix cut above 16 sites would need 2^cut memory")
    tails = {}
    for s in basis.states:
        tails.setdefault(s >> cut, len(tails))
    M = np.zeros((1 << cut, len(tails)), dtype=np.complex128)
    mask = (1 << cut) - 1
    for idx, s in enumerate(basis.states):
        M[s & mask, tails[s >> cut]] += psi[idx]
    return M @ M.conj().T


def dense_cut_entropy(basis: SectorBasis, psi: np.ndarray, cut: int) -> float:
    rho = reduced_density_matrix(basis, psi, cut)
    w = np.linalg.eigvalsh(rho)
    w = np.clip(w, 1e-12, None)
    return float(-np.sum(w * np.log(w)))


def dense_jump_probabilities(ops: SectorOperators, psi: np.ndarray, gamma_dt: float) -> np.ndarray:
    return gamma_dt * np.array(
        [float(np.vdot(psi, P @ psi).real) for P in ops.projectors]
    )


def run_dense_trajectory(
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
    ops: "SectorOperators | None" = None,
    propagator: "np.ndarray | None" = None,
) -> TrajectoryRecord:
    """Exact trajectory under the same protocol and decision stream.

    Mirrors the Gaussian runner step for step: given equal seeds and
    parameters (and g = 0) the two engines follow the same jump record,
    which is what the lockstep oracle tests exercise.
    """
    protocol.validate_rates(cfg.gamma)
    if record_momentum and cfg.bc != "periodic":
        raise ConfigError("momentum recording requires periodic boundaries")
    if jump_order not in ("ascending", "random"):
        raise ConfigError(f"unknown jump_order {jump_order!r}")
    if occupied is None:
        occupied = initial_sites(cfg, initial_state)
    occupied = sorted(int(s) for s in occupied)
    if cuts is None:
        cuts = (cfg.L // 4,)
    cuts = tuple(int(c) for c in cuts)

    if ops is None:
        ops = build_sector_operators(cfg, len(occupied))
    basis = ops.basis
    if propagator is None:
        if basis.dim > PROPAGATOR_GUARD:
            raise GuardError(
                f"dense propagator guard: sector dim {basis.dim} exceeds "
                f"{PROPAGATOR_GUARD}"
            )
        propagator = scipy.linalg.expm(
            (-1j * protocol.dt) * ops.effective.toarray()
        )
    maps = annihilation_maps(basis) if (record_momentum and basis.N) else []

    psi = np.zeros(basis.dim, dtype=np.complex128)
    psi[basis.index[sum(1 << s for s in occupied)]] = 1.0
    stream = JumpDecisionStream(seed)
    gamma_dt = cfg.gamma * protocol.dt

    rec_steps = protocol.record_steps()
    T = rec_steps.size
    rec = TrajectoryRecord(
        seed=seed,
        times=rec_steps * protocol.dt,
        cuts=cuts,
        density=np.empty((T, cfg.L)),
        cut_entropy=np.empty((T, len(cuts))),
        scl=np.empty(T),
        jumps=np.zeros((T, cfg.n_bonds), dtype=np.int64),
        states=[] if keep_states else None,
    )
    if record_momentum:
        rec.k = gaussian.momentum_grid(cfg.L)[1].copy()
        rec.nk = np.empty((T, cfg.L))
        rec.current = np.empty(T)

    jump_totals = np.zeros(cfg.n_bonds, dtype=np.int64)
    rec_pos = 0

    def snapshot(k_step: int) -> None:
        nonlocal rec_pos
        rec.density[rec_pos] = dense_densities(basis, psi)
        rec.cut_entropy[rec_pos] = [dense_cut_entropy(basis, psi, c) for c in cuts]
        rec.scl[rec_pos] = analysis.classical_entropy(rec.density[rec_pos])
        # the 2 S(cut) <= S_cl bound needs a pure state; holds per trajectory
        _check_entropy_bound(rec.cut_entropy[rec_pos], rec.scl[rec_pos], k_step * protocol.dt)
        rec.jumps[rec_pos] = jump_totals
        if record_momentum:
            C = dense_correlation(basis, psi, maps)
            _, nk = gaussian.momentum_occupation(C, cfg.bc)
            rec.nk[rec_pos] = nk
            rec.current[rec_pos] = analysis.current(rec.k, nk)
        if keep_states:
            rec.states.append(psi.copy())
        rec_pos += 1

    rec_set = set(int(s) for s in rec_steps)
    if 0 in rec_set:
        snapshot(0)
    for k_step in range(1, protocol.n_steps + 1):
        psi = propagator @ psi
        nrm = np.linalg.norm(psi)
        if nrm < 1e-12:
            raise NumericError(f"state norm collapsed at step {k_step}")
        psi /= nrm
        p = dense_jump_probabilities(ops, psi, gamma_dt)
        if p.size and float(p.max()) > PROBABILITY_BOUND + 1e-9:
            raise ProtocolError(
                f"jump probability {p.max():.3g} exceeds {PROBABILITY_BOUND}"
            )
        r = stream.row(k_step, p.size)
        fired = np.flatnonzero(r < p)
        if fired.size:
            if jump_order == "random":
                fired = fired[stream.permutation(k_step, fired.size)]
            for m in fired:
                psi = ops.jump_ops[m] @ psi
                nrm = np.linalg.norm(psi)
                if nrm < 1e-9:
                    raise NumericError(
                        f"jump on bond {m} annihilated the state at step {k_step}"
                    )
                psi /= nrm
                jump_totals[m] += 1
        if k_step in rec_set:
            snapshot(k_step)
    return rec


@lru_cache(maxsize=2)
def _cached_operators(cfg: LatticeConfig, N: int) -> "SectorOperators":
    # loky workers persist across tasks, so each process pays this once
    return build_sector_operators(cfg, N)


def _dense_worker(cfg, N, protocol, seed, kwargs):
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        ops = _cached_operators(cfg, N)
        return run_dense_trajectory(cfg, protocol, seed, ops=ops, **kwargs)


def run_dense_ensemble(
    cfg: LatticeConfig,
    N: int,
    protocol: StepProtocol,
    n_traj: int,
    base_seed: int,
    *,
    n_jobs: int = 1,
    return_records: bool = False,
    **kwargs,
):
    """Sector-exact counterpart of `trajectory.run_ensemble`.

    Same seed layout (base_seed+1 .. base_seed+n_traj) and seed-ordered
    reduction; results do not depend on n_jobs.
    """
    from joblib import Parallel, delayed, parallel_config

    from .trajectory import reduce_records

    if n_traj < 1:
        raise ConfigError("n_traj must be >= 1")
    seeds = [base_seed + 1 + i for i in range(n_traj)]
    if n_jobs == 1:
        ops = build_sector_operators(cfg, N)
        records = [
            run_dense_trajectory(cfg, protocol, s, ops=ops, **kwargs)
            for s in seeds
        ]
    else:
        with parallel_config(backend="loky", inner_max_num_threads=1):
            records = Parallel(n_jobs=n_jobs)(
                delayed(_dense_worker)(cfg, N, protocol, s, kwargs)
                for s in seeds
            )
    stats = reduce_records(records)
    if return_records:
        return stats, records
    return stats


# ---------------------------------------------------------------- Lindblad


@dataclass
class LindbladResult:
    times: np.ndarray
    rhos: list
    densities: np.ndarray
    max_trace_drift_rate: float


def lindblad_rhs(ops: SectorOperators, rho: np.ndarray) -> np.ndarray:
    """dp/dt of the averaged (Lindblad) evolution, dense."""
    H = ops.hamiltonian.toarray()
    K = sum(P.toarray() for P in ops.projectors)
    out = -1j * (H @ rho - rho @ H)
    out -= 0.5 * ops.cfg.gamma * (K @ rho + rho @ K)
    for Lop in ops.jump_ops:
        Ld = Lop.toarray()
        out += ops.cfg.gamma * (Ld @ rho @ Ld.conj().T)
    return out


def integrate_lindblad(
    cfg: LatticeConfig,
    N: int,
    t_max: float,
    *,
    record_times: "list[float] | None" = None,
    dt: "float | None" = None,
    rho0: "np.ndarray | None" = None,
    ops: "SectorOperators | None" = None,
) -> LindbladResult:
    """Fixed-step RK4 integration of the averaged master equation.

    The density matrix is renormalized each step; the pre-normalization
    trace drift must stay below 1e-8 per unit time and the spectrum is
    checked for positivity (floor -1e-9) at every recorded time.
    Restricted to sectors of dimension <= 400.
    """
    dim = math.comb(cfg.L, N)
    if dim > LINDBLAD_GUARD:
        raise GuardError(
            f"lindblad guard: binomial({cfg.L},{N}) = {dim} exceeds {LINDBLAD_GUARD}"
        )
    if ops is None:
        ops = build_sector_operators(cfg, N)
    if dt is None:
        dt = min(0.01, 0.1 / cfg.gamma) if cfg.gamma > 0 else 0.01
    if record_times is None:
        record_times = [t_max]

    H = ops.hamiltonian.toarray()
    K = sum(P.toarray() for P in ops.projectors)
    Ls = [Lop.toarray() for Lop in ops.jump_ops]
    Lds = [Ld.conj().T for Ld in Ls]
    g = cfg.gamma

    def rhs(rho):
        out = -1j * (H @ rho - rho @ H)
        out -= 0.5 * g * (K @ rho + rho @ K)
        for Ld, Ldd in zip(Ls, Lds):
            out += g * (Ld @ rho @ Ldd)
        return out

    if rho0 is None:
        sites = initial_sites(cfg)
        if len(sites) != N:
            sites = list(range(N))
        rho = np.zeros((dim, dim), dtype=np.complex128)
        rho[
            ops.basis.index[sum(1 << s for s in sites)],
            ops.basis.index[sum(1 << s for s in sites)],
        ] = 1.0
    else:
        rho = np.array(rho0, dtype=np.complex128)

    rec_steps = sorted({int(round(t / dt)) for t in record_times})
    n_steps = max(rec_steps) if rec_steps else 0
    times, rhos, densities = [], [], []
    max_drift_rate = 0.0

    def record(k):
        times.append(k * dt)
        rhos.append(rho.copy())
        densities.append(
            np.einsum("ss,sl->l", rho, ops.basis.occupations).real
        )
        w = np.linalg.eigvalsh(rho)
        if w.min() < -1e-9:
            raise ProtocolError(
                f"density matrix lost positivity (min eig {w.min():.2e}); "
                "reduce the integration step"
            )

    if 0 in rec_steps:
        record(0)
    for k in range(1, n_steps + 1):
        k1 = rhs(rho)
        k2 = rhs(rho + 0.5 * dt * k1)
        k3 = rhs(rho + 0.5 * dt * k2)
        k4 = rhs(rho + dt * k3)
        rho = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        tr = float(np.trace(rho).real)
        drift_rate = abs(tr - 1.0) / dt
        max_drift_rate = max(max_drift_rate, drift_rate)
        if drift_rate > 1e-8:
            raise NumericError(
                f"Lindblad trace drift {drift_rate:.2e} per unit time at "
                f"t={k * dt:g} exceeds 1e-8"
            )
        rho = rho / tr
        rho = 0.5 * (rho + rho.conj().T)
        if k in rec_steps:
            record(k)

    return LindbladResult(
        times=np.asarray(times),
        rhos=rhos,
        densities=np.asarray(densities),
        max_trace_drift_rate=max_drift_rate,
    )


# ------------------------------------------------- steady-state uniqueness


def algebra_closure_dimension(
    cfg: LatticeConfig,
    N: int,
    *,
    tol: float = 1e-9,
    max_rounds: int = 50,
) -> tuple[int, bool]:
    """Dimension of the algebra generated by {H, L_m, L_m+} in the sector.

    Grows an orthonormal basis of vectorized operators by repeated right
    multiplication with the generators until no new direction appears
    (directions below `tol` after projection are discarded). A dimension
    of dim(sector)^2 certifies a unique steady state. Returns (dimension,
    converged); convergence failure inside max_rounds reports the partial
    dimension.
    """
    dim = math.comb(cfg.L, N)
    if dim * dim > SECTOR_GUARD:
        raise GuardError(
            f"algebra guard: sector dim {dim}^2 exceeds {SECTOR_GUARD}"
        )
    ops = build_sector_operators(cfg, N)
    gens = [ops.hamiltonian.toarray()]
    for Lop in ops.jump_ops:
        Ld = Lop.toarray()
        gens.append(Ld)
        gens.append(Ld.conj().T)

    basis: list[np.ndarray] = []

    def absorb(mat: np.ndarray) -> bool:
        v = mat.ravel().astype(np.complex128)
        nrm0 = np.linalg.norm(v)
        if nrm0 == 0.0:
            return False
        v = v / nrm0  # scale-free novelty threshold
        for _ in range(2):  # twice-is-enough reorthogonalization
            for q in basis:
                v = v - np.vdot(q, v) * q
        nrm = np.linalg.norm(v)
        if nrm <= tol:
            return False
        basis.append(v / nrm)
        return True

    frontier = [g for g in gens if absorb(g)]
    converged = False
    for _ in range(max_rounds):
        new_frontier = []
        for b in frontier:
            bm = b.reshape(dim, dim)
            for g in gens:
                cand = bm @ g
                if absorb(cand):
                    new_frontier.append(basis[-1])
        if not new_frontier:
            converged = True
            break
        frontier = new_frontier
    return len(basis), converged
