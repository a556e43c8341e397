"""Markov-chain analysis of N-user NOMA with one Chase-combining retransmission.

The joint packet phases of the N users form a Markov chain on 3^N states
(base-3 encoding, user i contributes phase * 3**i).  One slot's transition
is fully determined by the SIC outcome: decoding proceeds in the greedy
SINR order and stops at the first failure, so from any state exactly N+1
successors are reachable (first failure at stage 1..N, or all succeed).
Users behind the first failure are not decoded: fresh packets fall back
to R, retransmissions exhaust to F.  Forbidden single-user moves are
S->F, F->F (a fresh packet always gets its retransmission) and R->R
(a retransmission always resolves).

Per-user reliability metrics come from the stationary distribution:

    e_i  = P(J_i = F) + P(J_i = R and next J_i = F)
    p_s  = P(J_i in {S,F} and next J_i = S)
    eta  = R * (1 - e_i) / (p_s + 2*(1 - p_s))

and the delivery delay for M packets is binomial: each packet needs one
slot with probability p_s, else two.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import List

import numpy as np
from scipy.stats import binom

from .errors import ConsistencyError, NumericalError
from .fbl import CodeParams, per_cc, per_cc_batch
from .sic import Phase, SystemConfig, SystemState, decoding_order

# row-sum drift beyond this signals a transition-enumeration bug
ROW_SUM_TOL = 1e-6
# required residual of the stationary solve, ||Pi^T p - p||_inf
STATIONARY_TOL = 1e-10


@dataclass(frozen=True)
class TransitionMatrix:
    """Dense row-stochastic transition matrix over the 3^n_users states."""

    matrix: np.ndarray
    n_users: int

    def __post_init__(self):
        m = self.matrix
        if m.shape != (3**self.n_users, 3**self.n_users):
            raise ValueError(f"matrix shape {m.shape} does not match {self.n_users} users")
        if m.min() < 0.0 or m.max() > 1.0 + 1e-12:
            raise ValueError("transition probabilities must lie in [0, 1]")
        drift = np.abs(m.sum(axis=1) - 1.0).max()
        if drift > 1e-9:
            raise ValueError(f"rows must sum to 1, max drift {drift:.3e}")

    @property
    def dim(self) -> int:
        return 3**self.n_users


@dataclass(frozen=True)
class StationaryDistribution:
    """Long-run state occupancy probabilities."""

    probs: np.ndarray

    def __post_init__(self):
        p = self.probs
        if p.min() < 0.0 or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("stationary vector must be a probability distribution")


@dataclass(frozen=True)
class UserMetrics:
    """Per-user reliability and throughput summary."""

    user: int
    per: float
    success_prob: float
    throughput: float


# ---------------------------------------------------------------------------
# vectorized all-states engine
# ---------------------------------------------------------------------------

@lru_cache(maxsize=16)
def _state_digits(n_users: int) -> np.ndarray:
    """(3^N, N) table of phase digits; row s is the phase vector of state s."""
    m = 3**n_users
    idx = np.arange(m)
    digits = np.empty((m, n_users), dtype=np.int8)
    for i in range(n_users):
        digits[:, i] = (idx // 3**i) % 3
    digits.setflags(write=False)
    return digits


def _stage_tables(digits: np.ndarray, powers: np.ndarray):
    """Greedy SIC order and per-stage SINR for every state at once.

    Returns (orders, gammas), both (3^N, N): column ell holds the user
    decoded at stage ell and the SINR it is decoded at.
    """
    m, n = digits.shape
    is_r = digits == Phase.R
    is_f = digits == Phase.F
    undecoded = np.ones((m, n), dtype=bool)
    orders = np.empty((m, n), dtype=np.int64)
    gammas = np.empty((m, n), dtype=np.float64)
    rows = np.arange(m)
    for stage in range(n):
        undec_p = undecoded * powers
        denom_new = undec_p.sum(axis=1, keepdims=True) - undec_p + 1.0
        g = powers / denom_new
        # stored first copy of an R user: F users and undecoded R users interfere
        stored = is_f | (is_r & undecoded)
        stored_p = stored * powers
        denom_orig = stored_p.sum(axis=1, keepdims=True) - stored_p + 1.0
        g = g + np.where(is_r, powers / denom_orig, 0.0)
        g = np.where(undecoded, g, -np.inf)
        pick = g.argmax(axis=1)  # ties resolve to the lowest user index
        orders[:, stage] = pick
        gammas[:, stage] = g[rows, pick]
        undecoded[rows, pick] = False
    return orders, gammas


def _matrix_from_stages(digits: np.ndarray, orders: np.ndarray,
                        eps: np.ndarray) -> np.ndarray:
    """Assemble the dense transition matrix from per-stage failure probs.

    Row s gets N+1 entries: first failure at stage position w (stages
    before w succeed, everyone from w onward falls back), plus the
    all-success move to the all-S state (index 0).
    """
    m, n = digits.shape
    pow3 = 3 ** np.arange(n, dtype=np.int64)
    fail_digit = np.where(digits == Phase.R, Phase.F, Phase.R).astype(np.int64)
    rows = np.arange(m)[:, None]
    fd = fail_digit[rows, orders] * pow3[orders]
    # successor when the first failure is at position w: decoded users are S
    # (digit 0), users at positions >= w take their fall-back digit
    succ_fail = np.cumsum(fd[:, ::-1], axis=1)[:, ::-1]
    q_succ = np.cumprod(1.0 - eps, axis=1)
    prefix = np.concatenate([np.ones((m, 1)), q_succ[:, :-1]], axis=1)
    p_fail = prefix * eps
    p_all = q_succ[:, -1]
    pi = np.zeros((m, m))
    pi[np.arange(m), 0] = p_all
    pi[rows, succ_fail] = p_fail
    return pi


def _transition_matrix_raw(powers: np.ndarray, code: CodeParams) -> np.ndarray:
    digits = _state_digits(len(powers))
    orders, gammas = _stage_tables(digits, np.asarray(powers, dtype=float))
    eps = per_cc_batch(gammas, code)
    pi = _matrix_from_stages(digits, orders, eps)
    sums = pi.sum(axis=1)
    drift = np.abs(sums - 1.0).max()
    if drift > ROW_SUM_TOL:
        raise ConsistencyError(
            f"transition rows deviate from stochasticity by {drift:.3e}"
        )
    return pi / sums[:, None]


def _stationary_raw(pi: np.ndarray) -> np.ndarray:
    """Solve Pi^T p = p, sum(p) = 1 by direct elimination with an lstsq
    fallback.  Raises NumericalError when no candidate is a probability
    vector within tolerance, which happens exactly when the chain is
    reducible (multiple recurrent classes, no unique stationary vector).
    """
    m = pi.shape[0]

    def direct():
        a = pi.T - np.eye(m)
        a[-1, :] = 1.0
        b = np.zeros(m)
        b[-1] = 1.0
        try:
            return np.linalg.solve(a, b)
        except np.linalg.LinAlgError:
            return None

    def least_squares():
        full = np.vstack([pi.T - np.eye(m), np.ones((1, m))])
        rhs = np.concatenate([np.zeros(m), [1.0]])
        return np.linalg.lstsq(full, rhs, rcond=None)[0]

    worst_neg = 0.0
    worst_residual = math.inf
    for solver in (direct, least_squares):
        p = solver()
        if p is None:
            continue
        if p.min() < -1e-9:
            worst_neg = min(worst_neg, float(p.min()))
            continue
        p = np.maximum(p, 0.0)
        p = p / p.sum()
        residual = float(np.abs(pi.T @ p - p).max())
        if residual <= STATIONARY_TOL:
            return p
        worst_residual = min(worst_residual, residual)
    raise NumericalError(
        "no unique stationary vector: best residual "
        f"{worst_residual:.3e}, most negative mass {worst_neg:.3e}",
        residual=None if math.isinf(worst_residual) else worst_residual,
    )


def _per_all_users(digits: np.ndarray, pi: np.ndarray, p: np.ndarray) -> np.ndarray:
    n = digits.shape[1]
    out = np.empty(n)
    for i in range(n):
        in_f = digits[:, i] == Phase.F
        in_r = digits[:, i] == Phase.R
        to_f = pi[:, in_f].sum(axis=1)
        out[i] = p[in_f].sum() + float(p[in_r] @ to_f[in_r])
    return out


def _success_all_users(digits: np.ndarray, pi: np.ndarray, p: np.ndarray) -> np.ndarray:
    n = digits.shape[1]
    out = np.empty(n)
    for i in range(n):
        fresh = digits[:, i] != Phase.R
        in_s = digits[:, i] == Phase.S
        to_s = pi[:, in_s].sum(axis=1)
        out[i] = float(p[fresh] @ to_s[fresh])
    return out


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def transition_prob(state: SystemState, next_state: SystemState,
                    cfg: SystemConfig) -> float:
    """One-slot transition probability between two joint states.

    Structural zeros: any user moving {S,F}->F or R->R, or a user decoded
    after the first SIC failure ending in S.  Otherwise the probability is
    the product of per-stage decode outcomes up to and including the first
    failing stage (all N stages when every user succeeds).
    """
    n = cfg.n_users
    if state.n_users != n or next_state.n_users != n:
        raise ValueError("state size does not match the configuration")
    for cur, nxt in zip(state.phases, next_state.phases):
        if cur is not Phase.R and nxt is Phase.F:
            return 0.0
        if cur is Phase.R and nxt is Phase.R:
            return 0.0
    dec = decoding_order(state, cfg)
    outcome = [next_state.phases[u] for u in dec.order]
    fail_positions = [w for w, ph in enumerate(outcome) if ph is not Phase.S]
    if fail_positions:
        first = fail_positions[0]
        if any(outcome[w] is Phase.S for w in range(first + 1, n)):
            return 0.0
        stages = first + 1
    else:
        stages = n
    prob = 1.0
    for w in range(stages):
        eps = per_cc(dec.stage_sinrs[w], cfg.code)
        prob *= (1.0 - eps) if outcome[w] is Phase.S else eps
    return prob


def build_transition_matrix(cfg: SystemConfig, max_users: int = 8) -> TransitionMatrix:
    """Dense 3^N x 3^N transition matrix for the configured cluster.

    Rows are renormalized when the enumeration drift is within 1e-6;
    anything larger raises ConsistencyError.
    """
    if cfg.n_users > max_users:
        raise ValueError(
            f"{cfg.n_users} users exceeds the {max_users}-user dense-matrix cap"
        )
    pi = _transition_matrix_raw(cfg.powers, cfg.code)
    return TransitionMatrix(matrix=pi, n_users=cfg.n_users)


def stationary_distribution(tm: TransitionMatrix) -> StationaryDistribution:
    """Stationary vector of the chain (unit-eigenvalue left eigenvector)."""
    return StationaryDistribution(probs=_stationary_raw(tm.matrix))


def per_user(i: int, p: StationaryDistribution, tm: TransitionMatrix) -> float:
    """Packet error rate of user i: mass already in F plus mass in R that
    moves to F next slot."""
    digits = _state_digits(tm.n_users)
    if not 0 <= i < tm.n_users:
        raise ValueError(f"user index {i} out of range")
    return float(_per_all_users(digits, tm.matrix, p.probs)[i])


def success_prob(i: int, p: StationaryDistribution, tm: TransitionMatrix) -> float:
    """Probability that user i sends a fresh packet and it decodes first try."""
    digits = _state_digits(tm.n_users)
    if not 0 <= i < tm.n_users:
        raise ValueError(f"user index {i} out of range")
    return float(_success_all_users(digits, tm.matrix, p.probs)[i])


def delay_pmf(p_s: float, n_packets: int) -> np.ndarray:
    """Pmf of the slots needed to deliver n_packets information packets.

    Entry d is Prob{D = n_packets + d} for d = 0..n_packets: each packet
    costs one slot with probability p_s and two otherwise, so the excess
    is binomial.  Computed in log space so large packet counts stay exact.
    """
    if not 0.0 <= p_s <= 1.0:
        raise ValueError(f"p_s must be a probability, got {p_s!r}")
    if not (isinstance(n_packets, (int, np.integer)) and n_packets >= 1):
        raise ValueError(f"n_packets must be a positive integer, got {n_packets!r}")
    extra = np.arange(n_packets + 1)  # number of packets that needed 2 slots
    with np.errstate(divide="ignore"):
        logp = binom.logpmf(n_packets - extra, n_packets, p_s)
    return np.exp(logp)


def throughput(per: float, success_prob: float, code: CodeParams) -> float:
    """Throughput in information bits per channel use:
    R * (1 - e) / (p_s + 2*(1 - p_s))."""
    if not 0.0 <= per <= 1.0 or not 0.0 <= success_prob <= 1.0:
        raise ValueError("per and success_prob must be probabilities")
    return code.rate * (1.0 - per) / (success_prob + 2.0 * (1.0 - success_prob))


def analyze(cfg: SystemConfig) -> List[UserMetrics]:
    """Full analysis pipeline: matrix, stationary vector, per-user metrics."""
    tm = build_transition_matrix(cfg)
    p = _stationary_raw(tm.matrix)
    digits = _state_digits(cfg.n_users)
    pers = _per_all_users(digits, tm.matrix, p)
    succ = _success_all_users(digits, tm.matrix, p)
    return [
        UserMetrics(
            user=i,
            per=float(pers[i]),
            success_prob=float(succ[i]),
            throughput=throughput(float(pers[i]), float(succ[i]), cfg.code),
        )
        for i in range(cfg.n_users)
    ]


def max_user_per(alphas, p0: float, code: CodeParams) -> float:
    """Worst per-user packet error rate for a ratio vector; the power
    optimization objective.  Skips the dataclass layers for speed.

    Ratio vectors that silence users (stage failure probability exactly 1)
    make the chain reducible: the dead users cycle R->F deterministically
    and their relative parity is conserved, so the stationary solve cannot
    pick a unique vector.  Every recurrent class pins a dead user's PER at
    1, so the objective value is 1 regardless; return it directly.
    """
    powers = np.asarray(alphas, dtype=float) * p0
    pi = _transition_matrix_raw(powers, code)
    try:
        p = _stationary_raw(pi)
    except NumericalError:
        return 1.0
    return float(_per_all_users(_state_digits(len(powers)), pi, p).max())


def oma_received_power(cfg: SystemConfig, iterations: int = 30) -> float:
    """Per-slot received power of the orthogonal baseline.

    Matched so the average total received power per information packet
    equals the NOMA cluster's: P_oma = P0 * t_noma / t_oma, where t_x is
    the scheme's average number of transmissions per information packet,
    p_s + 2*(1 - p_s).  t_oma depends on P_oma; the fixed point is found
    by iterating upward from P0, which selects the branch that coincides
    with the NOMA chain when there is a single user.
    """
    metrics = analyze(cfg)
    t_noma = float(np.mean([2.0 - m.success_prob for m in metrics]))
    p = cfg.p0
    for _ in range(iterations):
        eps1 = per_cc(p, cfg.code)
        p_s = (1.0 - eps1) / (1.0 + eps1)
        p_new = cfg.p0 * t_noma / (2.0 - p_s)
        if abs(p_new - p) <= 1e-12 * p:
            p = p_new
            break
        p = p_new
    return p


def oma_metrics(cfg: SystemConfig) -> List[UserMetrics]:
    """Analytic orthogonal-access baseline at matched average power.

    Each user runs the single-user chain alone at the matched power; the
    throughput divides by the full schedule length since every user waits
    for the others' slots, retransmissions included.
    """
    p_oma = oma_received_power(cfg)
    solo = SystemConfig(alphas=(1.0,), p0=p_oma, code=cfg.code)
    m = analyze(solo)[0]
    schedule = cfg.n_users * (2.0 - m.success_prob)
    eta = cfg.code.rate * (1.0 - m.per) / schedule
    return [
        UserMetrics(user=i, per=m.per, success_prob=m.success_prob, throughput=eta)
        for i in range(cfg.n_users)
    ]
