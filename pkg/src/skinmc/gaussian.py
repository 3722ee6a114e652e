"""Number-conserving Gaussian states stored as L x N quasimode matrices.

A state is the Slater determinant of the N columns of B; column j holds the
single-particle wavefunction of quasimode j. Physical observables only see
B up to a right GL(N) transformation, and canonicalize() fixes that gauge
by QR so that B+ B = 1. All entropies are in nats.

Correlation convention: C[i, j] = <c_i+ c_j>, so densities sit on the
diagonal and C = conj(B B+) for a canonical B.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.linalg

from .errors import ConfigError, DegenerateStateError, NumericError, ProtocolError
from .model import JumpSpec, SQRT_HALF

RANK_TOL = 1e-12
EIG_CLAMP = 1e-12


def init_product_state(L: int, occupied: "list[int] | np.ndarray") -> np.ndarray:
    """Product state with the given (0-indexed) sites occupied.

    Returns the L x N quasimode matrix whose columns are unit vectors on
    the occupied sites; already canonical.
    """
    occ = [int(s) for s in occupied]
    if len(set(occ)) != len(occ):
        raise ConfigError(f"occupied sites contain duplicates: {occ}")
    if any(s < 0 or s >= L for s in occ):
        raise ConfigError(f"occupied sites out of range for L={L}: {occ}")
    B = np.zeros((L, len(occ)), dtype=np.complex128)
    for col, site in enumerate(occ):
        B[site, col] = 1.0
    return B


def canonicalize(B: np.ndarray) -> np.ndarray:
    """Restore the orthonormal-column gauge via reduced QR.

    Raises DegenerateStateError when a diagonal of R falls below the rank
    tolerance, meaning two quasimodes have (numerically) collapsed onto
    each other and the Slater state is no longer well defined.
    """
    Q, R = np.linalg.qr(B)
    if B.shape[1] and np.min(np.abs(np.diagonal(R))) < RANK_TOL:
        raise DegenerateStateError(
            "quasimode matrix is rank deficient (min |R_jj| "
            f"= {np.min(np.abs(np.diagonal(R))):.3e})"
        )
    return Q


def correlation_matrix(B: np.ndarray) -> np.ndarray:
    """C[i, j] = <c_i+ c_j> for a canonical quasimode matrix."""
    return B.conj() @ B.T


def density_profile(B: np.ndarray) -> np.ndarray:
    """Site occupations <n_i> for a canonical quasimode matrix."""
    return np.einsum("ij,ij->i", B.conj(), B).real


def build_propagator(h_eff: np.ndarray, dt: float, cond_limit: float = 1e8) -> np.ndarray:
    """Dense propagator exp(-i h_eff dt) for the no-click evolution.

    Diagonalizes the (generically diagonalizable) non-Hermitian matrix and
    exponentiates the spectrum. Strong hopping asymmetry on long open
    chains makes the eigenvector basis exponentially ill conditioned, in
    which case scaling-and-squaring is used instead.
    """
    w, V = np.linalg.eig(h_eff)
    cond = np.linalg.cond(V)
    if not np.isfinite(cond) or cond > cond_limit:
        return scipy.linalg.expm(-1j * dt * np.asarray(h_eff))
    return (V * np.exp(-1j * dt * w)) @ np.linalg.inv(V)


def evolve_nonunitary(B: np.ndarray, propagator: np.ndarray) -> np.ndarray:
    """One deterministic step: apply the propagator, then re-canonicalize."""
    return canonicalize(propagator @ B)


def mode_overlaps(B: np.ndarray, spec: JumpSpec) -> np.ndarray:
    """<a|B_j> for every quasimode column j."""
    return spec.mode.conj() @ B


def jump_probability(B: np.ndarray, spec: JumpSpec, gamma: float, dt: float) -> float:
    """Detection probability gamma*dt*<L+L> of one bond during one step.

    For a canonical B this equals gamma*dt times the occupation of the
    detection mode; a result above 1 means the step size is too large for
    a probabilistic interpretation and raises ProtocolError.
    """
    o = mode_overlaps(B, spec)
    p = gamma * dt * float(np.vdot(o, o).real)
    if p > 1.0:
        raise ProtocolError(
            f"jump probability {p:.3f} exceeds 1; reduce dt (gamma*dt={gamma * dt:.3f})"
        )
    return p


def apply_jump(B: np.ndarray, spec: JumpSpec, pivot: "int | None" = None) -> np.ndarray:
    """Apply one detection event (jump operator) to the state.

    The detected quasimode content is concentrated into a pivot column:
    every other column has its component along the detection mode a
    subtracted, the pivot column is replaced by a itself, and the feedback
    phase is imprinted on the bond's feedback site. Finally the gauge is
    restored by QR.

    Parameters
    ----------
    B : ndarray
        Canonical L x N quasimode matrix with nonzero weight on the mode.
    spec : JumpSpec
        Monitored bond to fire.
    pivot : int, optional
        Column used to absorb the detected mode. Defaults to the column of
        maximum overlap; any column with nonvanishing overlap yields the
        same physical state (checked in the tests).
    """
    o = mode_overlaps(B, spec)
    if o.size == 0 or np.max(np.abs(o)) < 1e-12:
        raise NumericError(
            "jump applied to a state with vanishing overlap on the detection mode"
        )
    if pivot is None:
        pivot = int(np.argmax(np.abs(o)))
    elif np.abs(o[pivot]) < 1e-12:
        raise NumericError(f"requested pivot column {pivot} has vanishing overlap")

    i, j = spec.bond
    out = B - np.outer(B[:, pivot], o / o[pivot])
    out[:, pivot] = 0.0
    out[i, pivot] = SQRT_HALF
    out[j, pivot] = -1j * SQRT_HALF
    # feedback e^{i theta n} acts as a diagonal phase on one row of B
    out[spec.phase_site, :] *= np.exp(1j * spec.theta)
    return canonicalize(out)


def _binary_entropy_sum(vals: np.ndarray) -> float:
    x = np.clip(vals, EIG_CLAMP, 1.0 - EIG_CLAMP)
    return float(-np.sum(x * np.log(x) + (1.0 - x) * np.log(1.0 - x)))


def entanglement_entropy(C: np.ndarray, sites: "list[int] | np.ndarray") -> float:
    """Von Neumann entropy (nats) of the given site subset of a Slater state.

    Uses the spectrum of the correlation matrix restricted to the subset;
    eigenvalues are clamped away from {0, 1} before taking logs.
    """
    idx = np.asarray(sites, dtype=int)
    sub = C[np.ix_(idx, idx)]
    w = np.linalg.eigvalsh(sub)
    return _binary_entropy_sum(w)


def block_entanglement_entropy(B: np.ndarray, cut: int) -> float:
    """Entropy of the first `cut` sites, computed from B without the full C.

    The restricted correlation block conj(B_A B_A+) shares its nonzero
    spectrum with the smaller Gram matrix of the row block, so only a
    min(cut, N) sized eigenproblem is solved.
    """
    if not 0 <= cut <= B.shape[0]:
        raise ConfigError(f"cut {cut} out of range for L={B.shape[0]}")
    if cut == 0 or B.shape[1] == 0:
        return 0.0
    A = B[:cut, :]
    if cut <= A.shape[1]:
        gram = A @ A.conj().T
    else:
        gram = A.conj().T @ A
    w = np.linalg.eigvalsh(gram)
    # missing dimensions of the larger block carry eigenvalue 0, entropy 0
    return _binary_entropy_sum(w)


@lru_cache(maxsize=8)
def momentum_grid(L: int) -> tuple[np.ndarray, np.ndarray]:
    """Signed mode numbers m and momenta k = 2 pi m / L, ascending in (-pi, pi]."""
    m = np.arange(L)
    m = np.where(m <= L // 2, m, m - L)
    m = np.sort(m)
    return m, 2.0 * np.pi * m / L


@lru_cache(maxsize=8)
def _plane_waves(L: int) -> np.ndarray:
    _, k = momentum_grid(L)
    j = np.arange(L)
    return np.exp(-1j * np.outer(k, j)) / np.sqrt(L)


def momentum_occupation(C: np.ndarray, bc: str) -> tuple[np.ndarray, np.ndarray]:
    """Mode occupations n_k on a ring, from the correlation matrix.

    The plane-wave mode at momentum k has wavefunction e^{-i k x}/sqrt(L),
    which makes the detected bond mode (e_i - i e_{i+1})/sqrt(2) a
    right-mover with weight (1 + sin k)/2; with that convention the
    feedback-selected steady states carry negative current. Only defined
    for periodic boundaries. Returns (k, n_k) with k ascending in
    (-pi, pi]; sum(n_k) equals the particle number.
    """
    if bc != "periodic":
        raise ConfigError("momentum occupations require periodic boundaries")
    L = C.shape[0]
    F = _plane_waves(L)
    _, k = momentum_grid(L)
    nk = np.einsum("mi,ij,mj->m", F, C, F.conj()).real
    return k, nk
