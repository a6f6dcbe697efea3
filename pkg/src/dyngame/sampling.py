"""Simulation of i.i.d. game observations and first-stage frequency estimation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .game import D_P, N_STATES, GameSpec  # noqa: F401  (GameSpec used by callers)


@dataclass(frozen=True)
class Dataset:
    """n i.i.d. records (x, a1, a2, x_next) drawn from the equilibrium DGP."""

    x: np.ndarray       # states in {1..4}
    a1: np.ndarray      # player-1 actions in {0,1}
    a2: np.ndarray      # player-2 actions in {0,1}
    x_next: np.ndarray  # implied next states
    n: int
    seed: int

    def to_csv(self, path: str | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i", "x", "a1", "a2", "x_next"])
        for i in range(self.n):
            w.writerow([i, self.x[i], self.a1[i], self.a2[i], self.x_next[i]])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path: str, seed: int = 0) -> "Dataset":
        rows = np.loadtxt(path, delimiter=",", skiprows=1, dtype=int, ndmin=2)
        return cls(x=rows[:, 1], a1=rows[:, 2], a2=rows[:, 3],
                   x_next=rows[:, 4], n=rows.shape[0], seed=seed)


def draw_dataset(p_star: np.ndarray, m_star: np.ndarray, n: int, seed: int) -> Dataset:
    """Draw n records: x ~ m_star, actions Bernoulli(P_j(1|x)) independently.

    Uses the counter-based Philox generator keyed by the seed; record i consumes
    uniforms at fixed positions, so the stream is reproducible and independent
    of generation order.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    p_star = np.asarray(p_star, dtype=float)
    m_star = np.asarray(m_star, dtype=float)
    rng = np.random.Generator(np.random.Philox(key=seed))
    u = rng.random((n, 3))
    cum = np.cumsum(m_star)
    cum[-1] = 1.0
    x0 = np.searchsorted(cum, u[:, 0], side="right")  # 0-based state
    a1 = (u[:, 1] < p_star[:N_STATES][x0]).astype(int)
    a2 = (u[:, 2] < p_star[N_STATES:][x0]).astype(int)
    return Dataset(x=x0 + 1, a1=a1, a2=a2, x_next=1 + 2 * a1 + a2, n=n, seed=seed)


def cell_counts(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Counts per state and entry counts per (player, state).

    Returns (state_counts length 4, entry_counts shape (2,4)).
    """
    state_counts = np.bincount(ds.x - 1, minlength=N_STATES).astype(float)
    e1 = np.bincount(ds.x - 1, weights=ds.a1, minlength=N_STATES)
    e2 = np.bincount(ds.x - 1, weights=ds.a2, minlength=N_STATES)
    return state_counts, np.stack([e1, e2])


def frequency_ccp(ds: Dataset) -> np.ndarray:
    """Frequency estimator of the CCP vector, clamped to [0.5/n, 1 - 0.5/n].

    Cells in states never visited are set to one half.
    """
    state_counts, entries = cell_counts(ds)
    eps = 0.5 / ds.n
    p = np.full((2, N_STATES), 0.5)
    visited = state_counts > 0
    p[:, visited] = entries[:, visited] / state_counts[visited]
    return np.clip(p.reshape(-1), eps, 1.0 - eps)


def empirical_state_law(ds: Dataset) -> np.ndarray:
    """Empirical state frequencies, with a 0.5/n floor to keep weights positive."""
    state_counts, _ = cell_counts(ds)
    m = state_counts / ds.n
    m = np.clip(m, 0.5 / ds.n, None)
    return m / m.sum()


def omega_pp(p: np.ndarray, m: np.ndarray) -> np.ndarray:
    """First-stage asymptotic covariance of the frequency CCPs: diagonal with
    entries P(1-P)/m(x) per (player, state) cell."""
    p = np.asarray(p, dtype=float)
    m = np.asarray(m, dtype=float)
    if np.any(m <= 0):
        raise ValueError("state law must be strictly positive")
    mm = np.tile(m, 2)
    return np.diag(p * (1.0 - p) / mm)


def omega_pp_inverse(p: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Closed-form inverse of omega_pp: diagonal with entries m(x)*(1/P + 1/(1-P))."""
    p = np.asarray(p, dtype=float)
    m = np.asarray(m, dtype=float)
    mm = np.tile(m, 2)
    return np.diag(mm * (1.0 / p + 1.0 / (1.0 - p)))


@dataclass(frozen=True)
class CovarianceBundle:
    """Blocks of the joint asymptotic covariance of (P-hat, P0-hat, g-hat)."""

    omega_pp: np.ndarray
    omega_p0: np.ndarray
    omega_00: np.ndarray
    omega_pg: np.ndarray = field(default_factory=lambda: np.zeros((D_P, 0)))
    omega_0g: np.ndarray = field(default_factory=lambda: np.zeros((D_P, 0)))
    omega_gg: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def d_g(self) -> int:
        return self.omega_gg.shape[0]

    def full_matrix(self) -> np.ndarray:
        """Assemble the stacked (2*d_P + d_g) square covariance matrix."""
        top = np.hstack([self.omega_pp, self.omega_p0, self.omega_pg])
        mid = np.hstack([self.omega_p0.T, self.omega_00, self.omega_0g])
        bot = np.hstack([self.omega_pg.T, self.omega_0g.T, self.omega_gg])
        return np.vstack([top, mid, bot])

    def to_json(self) -> str:
        import json
        return json.dumps({
            "omega_pp": self.omega_pp.tolist(),
            "omega_p0": self.omega_p0.tolist(),
            "omega_00": self.omega_00.tolist(),
            "omega_pg": self.omega_pg.tolist(),
            "omega_0g": self.omega_0g.tolist(),
            "omega_gg": self.omega_gg.tolist(),
        })


def covariance_bundle(p: np.ndarray, m: np.ndarray, mode: str = "p0-equals-phat",
                      blocks: dict[str, np.ndarray] | None = None) -> CovarianceBundle:
    """Build the first-stage covariance bundle.

    In "p0-equals-phat" mode the preliminary CCP estimate is the frequency
    estimator itself, so all three P-blocks equal omega_pp and the g-blocks are
    empty.  In "custom" mode the caller supplies all blocks, which are checked
    for symmetry and positive semidefiniteness of the full stack.
    """
    if mode == "p0-equals-phat":
        opp = omega_pp(p, m)
        return CovarianceBundle(omega_pp=opp, omega_p0=opp.copy(), omega_00=opp.copy())
    if mode != "custom":
        raise ValueError(f"unknown covariance mode: {mode!r}")
    if blocks is None:
        raise ValueError("custom mode requires explicit blocks")
    bundle = CovarianceBundle(
        omega_pp=np.asarray(blocks["omega_pp"], dtype=float),
        omega_p0=np.asarray(blocks["omega_p0"], dtype=float),
        omega_00=np.asarray(blocks["omega_00"], dtype=float),
        omega_pg=np.asarray(blocks.get("omega_pg", np.zeros((D_P, 0))), dtype=float),
        omega_0g=np.asarray(blocks.get("omega_0g", np.zeros((D_P, 0))), dtype=float),
        omega_gg=np.asarray(blocks.get("omega_gg", np.zeros((0, 0))), dtype=float),
    )
    full = bundle.full_matrix()
    if not np.allclose(full, full.T, atol=1e-10):
        raise ValueError("custom covariance stack is not symmetric")
    eigs = np.linalg.eigvalsh(0.5 * (full + full.T))
    if eigs.min() < -1e-8 * max(np.trace(full), 1.0):
        raise ValueError("custom covariance stack is not positive semidefinite")
    return bundle
