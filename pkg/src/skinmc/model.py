"""Lattice geometry, hopping matrices and monitored-bond definitions.

Sites are 0-indexed internally (user-facing output is 1-indexed). Bond m
couples sites (m, m+1); for a periodic chain the wrap-around bond
(L-1, 0) is monitored as well, so there are L bonds instead of L-1.

Each monitored bond carries a normalized detection mode

    a = (e_i - i e_{i+1}) / sqrt(2)

and a feedback unitary that imprints the phase e^{i theta} on site i+1
whenever the detector fires. The non-Hermitian effective matrix combines
the hopping with the no-click back-action of all monitors: asymmetric
hopping 1 +/- gamma/4 plus an imaginary on-site decay -i gamma/4 per
touching bond.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

SQRT_HALF = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True)
class LatticeConfig:
    """Chain geometry and monitoring parameters.

    Parameters
    ----------
    L : int
        Number of sites, at least 2.
    bc : str
        Boundary conditions, "open" or "periodic".
    gamma : float
        Measurement rate, >= 0.
    theta : float
        Feedback phase in radians, in [0, 2*pi).
    g : float
        Nearest-neighbour interaction strength; only the dense engine
        supports g != 0.
    """

    L: int
    bc: str = "open"
    gamma: float = 0.0
    theta: float = math.pi
    g: float = 0.0

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 2:
            raise ConfigError(f"L must be an integer >= 2, got {self.L!r}")
        if self.bc not in ("open", "periodic"):
            raise ConfigError(f"bc must be 'open' or 'periodic', got {self.bc!r}")
        if not (self.gamma >= 0.0):
            raise ConfigError(f"gamma must be >= 0, got {self.gamma!r}")
        if not (0.0 <= self.theta < 2.0 * math.pi):
            raise ConfigError(f"theta must lie in [0, 2*pi), got {self.theta!r}")
        object.__setattr__(self, "L", int(self.L))

    @property
    def n_bonds(self) -> int:
        return self.L if self.bc == "periodic" else self.L - 1

    def bond_sites(self, m: int) -> tuple[int, int]:
        """Site pair (i, i+1 mod L) monitored by bond m."""
        if not 0 <= m < self.n_bonds:
            raise ConfigError(f"bond index {m} out of range for {self.n_bonds} bonds")
        return m, (m + 1) % self.L


@dataclass(frozen=True)
class JumpSpec:
    """One monitored bond: detection mode plus feedback data.

    mode is the length-L single-particle vector of the detected quasimode;
    phase_site is the site that acquires e^{i theta} under feedback.
    """

    bond: tuple[int, int]
    mode: np.ndarray = field(repr=False)
    phase_site: int
    theta: float

    def __post_init__(self):
        self.mode.setflags(write=False)


def build_hopping_matrix(cfg: LatticeConfig) -> np.ndarray:
    """Real symmetric nearest-neighbour hopping matrix with unit amplitude."""
    h = np.zeros((cfg.L, cfg.L))
    for m in range(cfg.n_bonds):
        i, j = cfg.bond_sites(m)
        h[i, j] += 1.0
        h[j, i] += 1.0
    return h


def build_jump_specs(cfg: LatticeConfig) -> list[JumpSpec]:
    """Detection modes and feedback phases for every monitored bond."""
    specs = []
    for m in range(cfg.n_bonds):
        i, j = cfg.bond_sites(m)
        mode = np.zeros(cfg.L, dtype=np.complex128)
        mode[i] = SQRT_HALF
        mode[j] = -1j * SQRT_HALF
        specs.append(JumpSpec(bond=(i, j), mode=mode, phase_site=j, theta=cfg.theta))
    return specs


def build_effective_matrix(cfg: LatticeConfig) -> np.ndarray:
    """Single-particle effective matrix for the deterministic no-click flow.

    Built bond by bond in closed form: hopping 1 + gamma/4 on (i, i+1),
    1 - gamma/4 on (i+1, i), and decay -i gamma/4 on both touched sites.
    Equivalent to hopping minus (i gamma/2) * sum of bond projectors; the
    test suite checks the two constructions against each other.
    """
    h = np.zeros((cfg.L, cfg.L), dtype=np.complex128)
    t_fwd = 1.0 + cfg.gamma / 4.0
    t_bwd = 1.0 - cfg.gamma / 4.0
    decay = -0.25j * cfg.gamma
    for m in range(cfg.n_bonds):
        i, j = cfg.bond_sites(m)
        h[i, j] += t_fwd
        h[j, i] += t_bwd
        h[i, i] += decay
        h[j, j] += decay
    return h


def build_feedback_matrix(spec: JumpSpec) -> np.ndarray:
    """Diagonal unitary applying e^{i theta} to the bond's feedback site."""
    L = spec.mode.shape[0]
    d = np.ones(L, dtype=np.complex128)
    d[spec.phase_site] = np.exp(1j * spec.theta)
    return np.diag(d)


def bond_projector(spec: JumpSpec) -> np.ndarray:
    """Rank-1 single-particle projector |a><a| of the detection mode."""
    return np.outer(spec.mode, spec.mode.conj())
