"""Two-player dynamic entry game: primitives and the best-response CCP mapping.

State space X = {1,2,3,4} encodes the previous period's joint entry decision,
x = 1 + 2*a1_prev + a2_prev.  Each player chooses a binary action (stay out /
enter) with additive extreme-value (unit dispersion) shocks, so best responses
are logistic in the expected payoff difference.

Conditional choice probabilities (CCPs) are stored as flat length-8 vectors
ordered player-major, state-minor:
    [P1(1|1), ..., P1(1|4), P2(1|1), ..., P2(1|4)].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

N_PLAYERS = 2
N_STATES = 4
D_P = N_PLAYERS * N_STATES  # 8
D_ALPHA = 2

#: Euler-Mascheroni constant: mean of a standard extreme-value shock.
EULER_GAMMA = 0.5772156649015329


@dataclass(frozen=True)
class GameSpec:
    """Structural parameters of the entry game.

    The estimable parameters are alpha = (lambda_rn, lambda_ec): the
    competitor-entry effect and the entry cost.  The remaining parameters
    (fixed entry profit, per-firm fixed costs, discount factor) are known.
    """

    lambda_rn: float
    lambda_ec: float
    lambda_rs: float
    lambda_fc: tuple[float, float]
    beta: float
    euler_gamma: float = EULER_GAMMA

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must be in [0,1), got {self.beta}")
        vals = (self.lambda_rn, self.lambda_ec, self.lambda_rs,
                self.lambda_fc[0], self.lambda_fc[1], self.beta)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("all game parameters must be finite")

    @property
    def alpha(self) -> np.ndarray:
        """The estimable parameter vector (lambda_rn, lambda_ec)."""
        return np.array([self.lambda_rn, self.lambda_ec])

    def to_json(self) -> str:
        return json.dumps({
            "lambda_rn": self.lambda_rn,
            "lambda_ec": self.lambda_ec,
            "lambda_rs": self.lambda_rs,
            "lambda_fc1": self.lambda_fc[0],
            "lambda_fc2": self.lambda_fc[1],
            "beta": self.beta,
        })

    @classmethod
    def from_json(cls, text: str) -> "GameSpec":
        obj = json.loads(text)
        return cls.from_dict(obj)

    @classmethod
    def from_dict(cls, obj: dict) -> "GameSpec":
        return cls(
            lambda_rn=float(obj["lambda_rn"]),
            lambda_ec=float(obj["lambda_ec"]),
            lambda_rs=float(obj["lambda_rs"]),
            lambda_fc=(float(obj["lambda_fc1"]), float(obj["lambda_fc2"])),
            beta=float(obj["beta"]),
        )


def validate_ccp(p: np.ndarray) -> np.ndarray:
    """Check that p is a strictly interior length-8 CCP vector."""
    p = np.asarray(p, dtype=float)
    if p.shape != (D_P,):
        raise ValueError(f"CCP vector must have shape ({D_P},), got {p.shape}")
    if not np.all((p > 0.0) & (p < 1.0)):
        raise ValueError("CCP vector must be strictly inside (0,1)")
    return p


def next_state(a1: int, a2: int) -> int:
    """State reached after joint action (a1, a2): 1 + 2*a1 + a2."""
    return 1 + 2 * a1 + a2


def incumbency(j: int, x: int) -> int:
    """Previous-period action of player j implied by state x (inverts next_state)."""
    if j == 1:
        return (x - 1) // 2
    if j == 2:
        return (x - 1) % 2
    raise ValueError(f"player must be 1 or 2, got {j}")


# Transition table: _NEXT[a1, a2] is the 0-based index of next_state(a1, a2).
_NEXT = np.array([[0, 1], [2, 3]])
# Incumbency tables indexed by 0-based state.
_INC1 = np.array([0.0, 0.0, 1.0, 1.0])
_INC2 = np.array([0.0, 1.0, 0.0, 1.0])
_LOG2 = math.log(2.0)


def flow_profit(j: int, a_j: int, a_opp: int, x: int, spec: GameSpec,
                alpha: np.ndarray | None = None) -> float:
    """Deterministic part of player j's period profit; zero when staying out."""
    if a_j == 0:
        return 0.0
    lam_rn, lam_ec = spec.alpha if alpha is None else np.asarray(alpha, dtype=float)
    return (spec.lambda_rs
            - lam_rn * math.log(1 + a_opp)
            - spec.lambda_fc[j - 1]
            - lam_ec * (1 - incumbency(j, x)))


def _joint_probs(p: np.ndarray) -> np.ndarray:
    """Joint action probabilities q[a1, a2, x] = P1(a1|x) * P2(a2|x)."""
    p1 = p[:N_STATES]
    p2 = p[N_STATES:]
    pr1 = np.stack([1.0 - p1, p1])          # (2, 4): P1(a1|x)
    pr2 = np.stack([1.0 - p2, p2])          # (2, 4): P2(a2|x)
    return pr1[:, None, :] * pr2[None, :, :]


def transition_matrix(p: np.ndarray) -> np.ndarray:
    """State transition matrix F[x, x'] induced by CCP vector p."""
    q = _joint_probs(p)  # (a1, a2, x)
    F = np.zeros((N_STATES, N_STATES))
    for a1 in range(2):
        for a2 in range(2):
            F[:, _NEXT[a1, a2]] += q[a1, a2, :]
    return F


def _entry_profits(alpha, spec: GameSpec):
    """Per-player entry profit rows over states: (pi1_enter_out, pi1_enter_in,
    pi2_enter_out, pi2_enter_in), where out/in refers to the opponent's action."""
    lam_rn, lam_ec = float(alpha[0]), float(alpha[1])
    rs, (fc1, fc2) = spec.lambda_rs, spec.lambda_fc
    rn_log2 = lam_rn * _LOG2
    pi1_0 = rs - fc1 - lam_ec * (1.0 - _INC1)
    pi2_0 = rs - fc2 - lam_ec * (1.0 - _INC2)
    return pi1_0, pi1_0 - rn_log2, pi2_0, pi2_0 - rn_log2


def _values(p: np.ndarray, alpha, spec: GameSpec):
    """Shared core: solve both players' ex-ante values at beliefs p.

    Returns (V1, V2, pi1_0, pi1_1, pi2_0, pi2_1) with V_j length 4.
    """
    p1 = p[:N_STATES]
    p2 = p[N_STATES:]
    pi1_0, pi1_1, pi2_0, pi2_1 = _entry_profits(alpha, spec)
    q1 = 1.0 - p1
    q2 = 1.0 - p2
    c0 = q1 * q2
    c1 = q1 * p2
    c2 = p1 * q2
    c3 = p1 * p2
    g = spec.euler_gamma
    ent1 = g - p1 * np.log(p1) - q1 * np.log(q1)
    ent2 = g - p2 * np.log(p2) - q2 * np.log(q2)
    b1 = ent1 + c2 * pi1_0 + c3 * pi1_1
    b2 = ent2 + c1 * pi2_0 + c3 * pi2_1
    beta = spec.beta
    A = np.empty((N_STATES, N_STATES))
    A[:, 0] = -beta * c0
    A[:, 1] = -beta * c1
    A[:, 2] = -beta * c2
    A[:, 3] = -beta * c3
    A[0, 0] += 1.0
    A[1, 1] += 1.0
    A[2, 2] += 1.0
    A[3, 3] += 1.0
    rhs = np.empty((N_STATES, 2))
    rhs[:, 0] = b1
    rhs[:, 1] = b2
    V = np.linalg.solve(A, rhs)
    return V[:, 0], V[:, 1], pi1_0, pi1_1, pi2_0, pi2_1


def ex_ante_values(p: np.ndarray, alpha: np.ndarray, spec: GameSpec) -> np.ndarray:
    """Ex-ante value functions V[j, x] solving the per-player 4x4 linear system.

    V_j(x) = sum_a P_j(a|x) (gamma - ln P_j(a|x))
             + sum_{a1,a2} P1 P2 [pi_j(a, x) + beta V_j(next_state(a))].
    Solved exactly (one dense solve, no value iteration).
    """
    p = np.asarray(p, dtype=float)
    V1, V2, *_ = _values(p, alpha, spec)
    return np.stack([V1, V2])


def best_response(alpha: np.ndarray, p: np.ndarray, spec: GameSpec) -> np.ndarray:
    """Best-response CCP mapping: Psi_j(1|x) = logistic(u_j(1,x) - u_j(0,x)).

    u_j(a, x) averages the opponent's action with beliefs p and adds the
    discounted ex-ante continuation value at the implied next state.
    """
    p = np.asarray(p, dtype=float)
    if not ((p > 0.0).all() and (p < 1.0).all()):
        raise ValueError("best_response requires a strictly interior CCP vector")
    V1, V2, pi1_0, pi1_1, pi2_0, pi2_1 = _values(p, alpha, spec)
    beta = spec.beta
    p1 = p[:N_STATES]
    p2 = p[N_STATES:]
    # Payoff advantage of entering over staying out, averaging the opponent:
    # entering moves the chain to states {3,4} instead of {1,2} (1-based).
    d1 = ((1.0 - p2) * (pi1_0 + beta * (V1[2] - V1[0]))
          + p2 * (pi1_1 + beta * (V1[3] - V1[1])))
    d2 = ((1.0 - p1) * (pi2_0 + beta * (V2[1] - V2[0]))
          + p1 * (pi2_1 + beta * (V2[3] - V2[2])))
    out = np.empty(D_P)
    out[:N_STATES] = 1.0 / (1.0 + np.exp(-d1))
    out[N_STATES:] = 1.0 / (1.0 + np.exp(-d2))
    return out


def swap_players(p: np.ndarray) -> np.ndarray:
    """Relabel players 1<->2 in a CCP vector (states 2 and 3 exchange roles)."""
    p = np.asarray(p, dtype=float)
    perm = np.array([0, 2, 1, 3])
    return np.concatenate([p[N_STATES:][perm], p[:N_STATES][perm]])
