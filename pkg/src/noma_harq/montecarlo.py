"""Slot-level stochastic simulator for the NOMA-HARQ dynamics.

Serves two purposes: an independent check of the Markov analysis
(coordinated mode reproduces the chain's stationary statistics), and the
engine for uncoordinated experiments where users pick power ratios from
their cell segment, including mismatched load estimates.

Decode outcomes are independent Bernoulli draws at the analytically
computed stage SINRs: exactly the abstraction the chain assumes, so the
comparison is sharp.  Fading never touches reliability (users power
control their received level); it is drawn only to account transmit
power, with channel inversion capped at power_cap_factor times the mean
and the capped fraction reported.

Seeding: np.random.SeedSequence(seed).spawn(...) derives independent
child streams (dynamics, placement, fading) so every run is reproducible
bit for bit and the streams never alias.  Uncoordinated episodes each
get their own child triple.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.stats import chi2

from .cellplan import UserPosition, build_plan, locate_segment
from .fbl import CodeParams, per_cc
from .markov import _state_digits, oma_received_power, throughput
from .sic import Phase, SystemConfig, SystemState, decoding_order

# decimation stride for the goodness-of-fit visit counts; the chain
# decorrelates within a few slots, so stride-10 samples are near-iid
THIN_STRIDE = 10

_CHUNK = 1 << 16


@dataclass(frozen=True)
class SimConfig:
    """Simulation setup around a SystemConfig.

    slots is the total budget; uncoordinated runs split it evenly over
    episodes (fresh random user placement each episode) and discard
    warmup slots per episode before collecting statistics.  For the
    uncoordinated scenario system.alphas are the n_hat planned ratios
    while n_actual users are actually placed.
    """

    system: SystemConfig
    slots: int = 1_000_000
    seed: int = 1
    scenario: str = "coordinated"
    n_actual: Optional[int] = None
    n_hat: Optional[int] = None
    path_loss_exp: float = 3.5
    r_outer: float = 1500.0
    warmup: int = 1000
    episodes: int = 1
    power_cap_factor: float = 1e3

    def __post_init__(self):
        if self.scenario not in ("coordinated", "uncoordinated"):
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.n_actual is None:
            object.__setattr__(self, "n_actual", self.system.n_users)
        if self.n_hat is None:
            object.__setattr__(self, "n_hat", self.system.n_users)
        if self.episodes < 1 or self.slots < 1 or self.warmup < 0:
            raise ValueError("slots and episodes must be positive, warmup >= 0")
        if self.slots // self.episodes <= self.warmup:
            raise ValueError("each episode needs more slots than the warmup")
        if self.path_loss_exp <= 0 or self.r_outer <= 0:
            raise ValueError("path_loss_exp and r_outer must be positive")
        if self.power_cap_factor < 1.0:
            raise ValueError("power_cap_factor must be >= 1")
        if self.scenario == "coordinated":
            if self.n_actual != self.system.n_users:
                raise ValueError("coordinated runs use exactly the configured users")
            if self.episodes != 1:
                raise ValueError("coordinated runs are a single episode")
        else:
            if self.n_hat != self.system.n_users:
                raise ValueError(
                    "uncoordinated runs read the n_hat planned ratios from "
                    "system.alphas; n_hat must match their count"
                )


@dataclass(frozen=True)
class SimResult:
    """Empirical per-user statistics with binomial standard errors."""

    scenario: str
    n_users: int
    n_hat: int
    seed: int
    slots_counted: int
    per: np.ndarray
    per_stderr: np.ndarray
    success_prob: np.ndarray
    success_prob_stderr: np.ndarray
    throughput: np.ndarray
    throughput_stderr: np.ndarray
    mean_tx_power: np.ndarray
    cap_fraction: np.ndarray
    state_visits: Optional[np.ndarray] = None
    state_visits_thinned: Optional[np.ndarray] = None

    @property
    def avg_per(self) -> float:
        """Average packet error rate across users."""
        return float(self.per.mean())

    @property
    def state_freq(self) -> Optional[np.ndarray]:
        if self.state_visits is None:
            return None
        return self.state_visits / self.state_visits.sum()


PerFn = Callable[[float], float]


def disk_positions(rng: np.random.Generator, n: int, r_outer: float):
    """Uniform placement over the cell disk: radius r_outer*sqrt(U),
    angle uniform.  Returns (distances, angles)."""
    return r_outer * np.sqrt(rng.random(n)), 2.0 * math.pi * rng.random(n)


def _decode_tables(cfg: SystemConfig, per_fn: PerFn):
    """Per-state stage failure probabilities and fall-back successors.

    succ[s][w] is the next state when the first SIC failure hits stage
    position w (decoded users go to S, everyone from w on falls back:
    fresh packets to R, retransmissions to F).  The all-success successor
    is always the all-S state, index 0.
    """
    n = cfg.n_users
    pow3 = [3**i for i in range(n)]
    eps_tab = []
    succ_tab = []
    for s in range(3**n):
        st = SystemState.from_index(s, n)
        dec = decoding_order(st, cfg)
        eps_tab.append(tuple(per_fn(g) for g in dec.stage_sinrs))
        fall = [
            int(Phase.F) if ph is Phase.R else int(Phase.R) for ph in st.phases
        ]
        tails = [0] * n
        acc = 0
        for w in range(n - 1, -1, -1):
            u = dec.order[w]
            acc += fall[u] * pow3[u]
            tails[w] = acc
        succ_tab.append(tuple(tails))
    return eps_tab, succ_tab


def _metrics_from_pairs(pairs: np.ndarray, n_users: int, code: CodeParams):
    """Per-user empirical e_i, p_s, eta from transition pair counts.

    Uses the same per-slot functionals as the analysis: e_i counts slots
    already in F plus R slots about to fail; p_s counts fresh packets
    that decode first try.
    """
    digits = _state_digits(n_users)
    total = int(pairs.sum())
    row_tot = pairs.sum(axis=1)
    per = np.empty(n_users)
    p_s = np.empty(n_users)
    for i in range(n_users):
        in_f = digits[:, i] == int(Phase.F)
        in_r = digits[:, i] == int(Phase.R)
        fresh = ~in_r
        in_s = digits[:, i] == int(Phase.S)
        hits = row_tot[in_f].sum() + pairs[np.ix_(in_r, in_f)].sum()
        per[i] = hits / total
        p_s[i] = pairs[np.ix_(fresh, in_s)].sum() / total
    return per, p_s, total


def _binomial_se(p: np.ndarray, total: int) -> np.ndarray:
    return np.sqrt(np.clip(p * (1.0 - p), 0.0, None) / total)


def _throughput_with_se(per, per_se, p_s, ps_se, code):
    eta = np.array([throughput(e, p, code) for e, p in zip(per, p_s)])
    denom = 2.0 - p_s
    d_de = -code.rate / denom
    d_dp = code.rate * (1.0 - per) / denom**2
    eta_se = np.hypot(d_de * per_se, d_dp * ps_se)
    return eta, eta_se


def _fading_ledger(fade_rng, n_cols: int, slots: int, cap_factor: float,
                   weights_fn=None):
    """Accumulate sum of weight * min(1/h, cap) and the capped-slot count.

    weights_fn(start, take) supplies per-slot multipliers (rotation-varying
    ratios); None means unit weights.
    """
    inv_sum = np.zeros(n_cols)
    cap_cnt = np.zeros(n_cols, dtype=np.int64)
    done = 0
    threshold = 1.0 / cap_factor
    while done < slots:
        take = min(_CHUNK, slots - done)
        h = fade_rng.exponential(1.0, size=(take, n_cols))
        with np.errstate(divide="ignore"):
            inv = np.minimum(1.0 / h, cap_factor)
        if weights_fn is not None:
            inv = inv * weights_fn(done, take)
        inv_sum += inv.sum(axis=0)
        cap_cnt += (h < threshold).sum(axis=0)
        done += take
    return inv_sum, cap_cnt


def _run_chain(dyn_rng, eps_for, succ_for, n_users: int, slots: int,
               warmup: int, pairs: np.ndarray, visits_thin=None,
               start_state: int = 0, rotation_period: int = 0) -> int:
    """Evolve the phase-vector chain; accumulate (state, next) pair counts.

    eps_for/succ_for map (rotation, state) to the per-stage tables;
    rotation_period 0 disables rotation.  Returns the final state.
    """
    state = start_state
    done = 0
    while done < slots:
        take = min(_CHUNK, slots - done)
        uni = dyn_rng.random((take, n_users))
        for r in range(take):
            rot = (done % rotation_period) if rotation_period else 0
            eps = eps_for(rot, state)
            row = uni[r]
            nxt = 0
            for w in range(n_users):
                if row[w] < eps[w]:
                    nxt = succ_for(rot, state)[w]
                    break
            if done >= warmup:
                pairs[state, nxt] += 1
                if visits_thin is not None and (done - warmup) % THIN_STRIDE == 0:
                    visits_thin[state] += 1
            state = nxt
            done += 1
    return state


def simulate_coordinated(cfg: SimConfig, per_fn: Optional[PerFn] = None) -> SimResult:
    """Coordinated cluster: all users hold their optimized ratio throughout.

    per_fn overrides the stage failure-probability model (testing hook);
    the default is the Chase-combining finite-blocklength formula.
    """
    if cfg.scenario != "coordinated":
        raise ValueError("scenario must be 'coordinated'")
    sys_cfg = cfg.system
    n = sys_cfg.n_users
    code = sys_cfg.code
    if per_fn is None:
        per_fn = lambda g: per_cc(g, code)

    dyn_ss, place_ss, fade_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    dyn_rng = np.random.default_rng(dyn_ss)
    place_rng = np.random.default_rng(place_ss)
    fade_rng = np.random.default_rng(fade_ss)

    eps_tab, succ_tab = _decode_tables(sys_cfg, per_fn)
    m = 3**n
    pairs = np.zeros((m, m), dtype=np.int64)
    visits_thin = np.zeros(m, dtype=np.int64)
    _run_chain(
        dyn_rng,
        lambda rot, s: eps_tab[s],
        lambda rot, s: succ_tab[s],
        n,
        cfg.slots,
        cfg.warmup,
        pairs,
        visits_thin=visits_thin,
    )

    per, p_s, total = _metrics_from_pairs(pairs, n, code)
    per_se = _binomial_se(per, total)
    ps_se = _binomial_se(p_s, total)
    eta, eta_se = _throughput_with_se(per, per_se, p_s, ps_se, code)

    distances, _ = disk_positions(place_rng, n, cfg.r_outer)
    inv_sum, cap_cnt = _fading_ledger(fade_rng, n, cfg.slots, cfg.power_cap_factor)
    mean_tx = sys_cfg.powers * distances**cfg.path_loss_exp * inv_sum / cfg.slots

    return SimResult(
        scenario="coordinated",
        n_users=n,
        n_hat=cfg.n_hat,
        seed=cfg.seed,
        slots_counted=total,
        per=per,
        per_stderr=per_se,
        success_prob=p_s,
        success_prob_stderr=ps_se,
        throughput=eta,
        throughput_stderr=eta_se,
        mean_tx_power=mean_tx,
        cap_fraction=cap_cnt / cfg.slots,
        state_visits=pairs.sum(axis=1),
        state_visits_thinned=visits_thin,
    )


def simulate_uncoordinated(cfg: SimConfig, per_fn: Optional[PerFn] = None) -> SimResult:
    """Grant-free operation: users adopt the ratio of their cell segment.

    Each episode places n_actual users uniformly over the disk and maps
    them to segments of the n_hat plan; several users may land on the
    same ratio.  The ratio assignment rotates every slot.  Received
    powers follow the realized ratio multiset (power control), so a
    cluster's total received power may deviate from the planned P0.
    """
    if cfg.scenario != "uncoordinated":
        raise ValueError("scenario must be 'uncoordinated'")
    sys_cfg = cfg.system
    n = cfg.n_actual
    n_hat = cfg.n_hat
    code = sys_cfg.code
    if per_fn is None:
        per_fn = lambda g: per_cc(g, code)

    plan = build_plan(n_hat, cfg.r_outer, sys_cfg.alphas)
    plans = [plan.rotated(r) for r in range(n_hat)]

    ep_slots = cfg.slots // cfg.episodes
    m = 3**n
    pairs = np.zeros((m, m), dtype=np.int64)
    tx_weighted = np.zeros(n)
    cap_total = np.zeros(n, dtype=np.int64)
    fading_slots = 0

    for ep_ss in np.random.SeedSequence(cfg.seed).spawn(cfg.episodes):
        dyn_ss, place_ss, fade_ss = ep_ss.spawn(3)
        dyn_rng = np.random.default_rng(dyn_ss)
        place_rng = np.random.default_rng(place_ss)
        fade_rng = np.random.default_rng(fade_ss)

        distances, angles = disk_positions(place_rng, n, cfg.r_outer)
        rings = np.empty(n, dtype=int)
        sectors = np.empty(n, dtype=int)
        for u in range(n):
            rings[u], sectors[u], _ = locate_segment(
                UserPosition(distance=float(distances[u]), angle=float(angles[u])),
                plan,
            )
        # ratio of each user under each rotation offset
        ratio_matrix = np.array(
            [[plans[rot].ratio(rings[u], sectors[u]) for u in range(n)]
             for rot in range(n_hat)]
        )

        # reuse the coordinated machinery per rotation: identical received
        # powers are obtained from the normalized multiset at scaled P0
        table_cache: dict = {}

        def tables(rot: int):
            if rot not in table_cache:
                w = ratio_matrix[rot]
                scaled = SystemConfig(
                    alphas=tuple(w / w.sum()),
                    p0=float(w.sum()) * sys_cfg.p0,
                    code=code,
                )
                table_cache[rot] = _decode_tables(scaled, per_fn)
            return table_cache[rot]

        _run_chain(
            dyn_rng,
            lambda rot, s: tables(rot)[0][s],
            lambda rot, s: tables(rot)[1][s],
            n,
            ep_slots,
            cfg.warmup,
            pairs,
            rotation_period=n_hat,
        )

        rot_seq = lambda start, take: ratio_matrix[
            (np.arange(start, start + take) % n_hat)
        ]
        inv_sum, cap_cnt = _fading_ledger(
            fade_rng, n, ep_slots, cfg.power_cap_factor, weights_fn=rot_seq
        )
        tx_weighted += sys_cfg.p0 * distances**cfg.path_loss_exp * inv_sum
        cap_total += cap_cnt
        fading_slots += ep_slots

    per, p_s, total = _metrics_from_pairs(pairs, n, code)
    per_se = _binomial_se(per, total)
    ps_se = _binomial_se(p_s, total)
    eta, eta_se = _throughput_with_se(per, per_se, p_s, ps_se, code)

    return SimResult(
        scenario="uncoordinated",
        n_users=n,
        n_hat=n_hat,
        seed=cfg.seed,
        slots_counted=total,
        per=per,
        per_stderr=per_se,
        success_prob=p_s,
        success_prob_stderr=ps_se,
        throughput=eta,
        throughput_stderr=eta_se,
        mean_tx_power=tx_weighted / fading_slots,
        cap_fraction=cap_total / fading_slots,
    )


def simulate_oma_baseline(cfg: SimConfig) -> SimResult:
    """Orthogonal baseline: each user transmits alone in its own slots,
    one retransmission allowed, at the power matched so the average total
    received power per information packet equals the NOMA cluster's.

    Rounds are independent, so no warmup applies.  Throughput divides by
    the full schedule: every user waits out the other users' slots,
    retransmissions included.
    """
    if cfg.scenario != "coordinated":
        raise ValueError("the orthogonal baseline compares coordinated clusters")
    sys_cfg = cfg.system
    n = sys_cfg.n_users
    code = sys_cfg.code
    p_oma = oma_received_power(sys_cfg)
    eps1 = per_cc(p_oma, code)
    eps2 = per_cc(2.0 * p_oma, code)

    dyn_ss, place_ss, fade_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    dyn_rng = np.random.default_rng(dyn_ss)
    place_rng = np.random.default_rng(place_ss)
    fade_rng = np.random.default_rng(fade_ss)

    rounds = max(2, cfg.slots // n)
    per = np.empty(n)
    p_s = np.empty(n)
    per_se = np.empty(n)
    ps_se = np.empty(n)
    own_slots = np.empty(n, dtype=np.int64)
    for i in range(n):
        first_fail = dyn_rng.random(rounds) < eps1
        second_fail = first_fail & (dyn_rng.random(rounds) < eps2)
        slots_i = rounds + int(first_fail.sum())
        pairs_i = slots_i - 1
        # from-state functionals over consecutive own slots: an F needs a
        # following slot to count as a from-state; R->F pairs sit inside
        # their round; fresh successes pair a round boundary with an S
        hits = int(second_fail[:-1].sum()) + int(second_fail.sum())
        fresh = int((~first_fail)[1:].sum())
        per[i] = hits / pairs_i
        p_s[i] = fresh / pairs_i
        per_se[i] = math.sqrt(max(per[i] * (1 - per[i]), 0.0) / pairs_i)
        ps_se[i] = math.sqrt(max(p_s[i] * (1 - p_s[i]), 0.0) / pairs_i)
        own_slots[i] = slots_i

    schedule = float(np.sum(2.0 - p_s))
    eta = code.rate * (1.0 - per) / schedule
    # schedule uncertainty (every user's p_s) dominates at moderate power
    sched_var = float(np.sum(ps_se**2))
    eta_se = np.sqrt(
        (code.rate * per_se / schedule) ** 2
        + (code.rate * (1.0 - per) / schedule**2) ** 2 * sched_var
    )

    distances, _ = disk_positions(place_rng, n, cfg.r_outer)
    mean_tx = np.empty(n)
    cap_frac = np.empty(n)
    for i in range(n):
        inv_sum, cap_cnt = _fading_ledger(
            fade_rng, 1, int(own_slots[i]), cfg.power_cap_factor
        )
        mean_tx[i] = p_oma * distances[i] ** cfg.path_loss_exp * inv_sum[0] / own_slots[i]
        cap_frac[i] = cap_cnt[0] / own_slots[i]

    return SimResult(
        scenario="oma",
        n_users=n,
        n_hat=cfg.n_hat,
        seed=cfg.seed,
        slots_counted=int(own_slots.sum()),
        per=per,
        per_stderr=per_se,
        success_prob=p_s,
        success_prob_stderr=ps_se,
        throughput=eta,
        throughput_stderr=eta_se,
        mean_tx_power=mean_tx,
        cap_fraction=cap_frac,
    )


def chi_square_state_fit(observed: np.ndarray, expected_probs: np.ndarray,
                         min_expected: float = 5.0) -> Tuple[float, int, float]:
    """Pearson goodness-of-fit of visit counts against a distribution.

    Cells with expected count below min_expected are pooled (merging into
    the smallest kept cell if the pool itself stays too small).  Returns
    (statistic, degrees of freedom, p-value).
    """
    obs = np.asarray(observed, dtype=float)
    probs = np.asarray(expected_probs, dtype=float)
    total = obs.sum()
    if total <= 0:
        raise ValueError("no observations")
    exp = probs * total
    keep = exp >= min_expected
    if not keep.any():
        raise ValueError("every cell falls below the pooling threshold")
    obs_cells = list(obs[keep])
    exp_cells = list(exp[keep])
    if (~keep).any():
        pool_o = obs[~keep].sum()
        pool_e = exp[~keep].sum()
        if pool_e >= min_expected:
            obs_cells.append(pool_o)
            exp_cells.append(pool_e)
        else:
            j = int(np.argmin(exp_cells))
            obs_cells[j] += pool_o
            exp_cells[j] += pool_e
    obs_arr = np.array(obs_cells)
    exp_arr = np.array(exp_cells)
    stat = float(((obs_arr - exp_arr) ** 2 / exp_arr).sum())
    dof = len(obs_arr) - 1
    return stat, dof, float(chi2.sf(stat, dof))
