"""Finite blocklength packet-error-rate primitives (normal approximation).

Error rates for short packets are computed with the normal approximation:
the decoder fails with probability

    eps = Q( (n*log2(1+gamma) - k + log2(n)) / sqrt(n*V(gamma)) )

where V is the channel dispersion.  Chase combining adds the per-copy
SINRs (MRC) before applying the formula; incremental redundancy
accumulates mutual information and dispersion across copies instead.
All SINRs are linear-scale; dB conversion belongs to the caller.
"""

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import erfc

# (log2 e)^2, the high-SNR limit of the channel dispersion in bits^2
LOG2E_SQ = math.log2(math.e) ** 2


@dataclass(frozen=True)
class CodeParams:
    """Channel code parameters: k information bits in an n-use codeword."""

    k: int
    n: int

    def __post_init__(self):
        if not (isinstance(self.k, (int, np.integer)) and self.k >= 1):
            raise ValueError(f"k must be a positive integer, got {self.k!r}")
        if not (isinstance(self.n, (int, np.integer)) and self.n >= 1):
            raise ValueError(f"n must be a positive integer, got {self.n!r}")

    @property
    def rate(self) -> float:
        """Code rate R = k/n.  May exceed 1; the PER formulas still evaluate."""
        return self.k / self.n


def q_function(x: float) -> float:
    """Gaussian tail probability Q(x) = 0.5*erfc(x/sqrt(2)).

    The erfc identity is numerically stable deep into the tails; the
    result underflows to exactly 0.0 rather than going negative.
    """
    if not math.isfinite(x):
        raise ValueError(f"q_function requires finite input, got {x!r}")
    return 0.5 * float(erfc(x / math.sqrt(2.0)))


def channel_dispersion(gamma: float) -> float:
    """Channel dispersion V(gamma) = (1 - (1+gamma)^-2) * (log2 e)^2 in bits^2.

    Zero at gamma = 0, increasing, bounded by (log2 e)^2.  gamma = inf is
    accepted as a saturated-SINR sentinel and returns the bound.
    """
    if math.isnan(gamma) or gamma < 0:
        raise ValueError(f"SINR must be >= 0, got {gamma!r}")
    return (1.0 - (1.0 + gamma) ** -2) * LOG2E_SQ


def per_cc(gamma_cc: float, code: CodeParams) -> float:
    """Packet error rate under Chase combining at MRC-combined SINR gamma_cc.

    gamma_cc is the sum of the per-copy SINRs.  Returns 1.0 for
    gamma_cc = 0 (zero mutual information cannot carry k >= 1 bits) and
    clamps the result to [0, 1].
    """
    if math.isnan(gamma_cc) or gamma_cc < 0:
        raise ValueError(f"SINR must be >= 0, got {gamma_cc!r}")
    if gamma_cc == 0.0:
        return 1.0
    if math.isinf(gamma_cc):
        return 0.0
    v = channel_dispersion(gamma_cc)
    num = code.n * math.log2(1.0 + gamma_cc) - code.k + math.log2(code.n)
    if v <= 0.0:
        # dispersion underflow at tiny SINR: outcome decided by the mean term
        return 1.0 if num < 0.0 else 0.0
    eps = q_function(num / math.sqrt(code.n * v))
    return min(1.0, max(0.0, eps))


def per_ir(gammas: Sequence[float], code: CodeParams) -> float:
    """Packet error rate under incremental redundancy across m copies.

    Mutual information and dispersion accumulate over the copies:

        eps = Q( (n*sum(log2(1+g_i)) - k + log2(m*n)) / sqrt(n*sum(V(g_i))) )

    Reduces exactly to per_cc for a single copy.  Kept for completeness;
    the Chase-combining analysis path does not use it.
    """
    gam = [float(g) for g in gammas]
    if len(gam) == 0:
        raise ValueError("per_ir requires at least one SINR")
    for g in gam:
        if math.isnan(g) or g < 0:
            raise ValueError(f"SINR must be >= 0, got {g!r}")
    if any(math.isinf(g) for g in gam):
        return 0.0
    if all(g == 0.0 for g in gam):
        return 1.0
    m = len(gam)
    v_sum = sum(channel_dispersion(g) for g in gam)
    num = code.n * sum(math.log2(1.0 + g) for g in gam) - code.k + math.log2(m * code.n)
    if v_sum <= 0.0:
        return 1.0 if num < 0.0 else 0.0
    eps = q_function(num / math.sqrt(code.n * v_sum))
    return min(1.0, max(0.0, eps))


def per_cc_batch(gammas: np.ndarray, code: CodeParams) -> np.ndarray:
    """Vectorized per_cc over an array of MRC-combined SINRs.

    Entries <= 0 map to 1.0.  Used by the transition-matrix builder where
    inputs are constructed internally and already validated.
    """
    g = np.asarray(gammas, dtype=float)
    out = np.ones_like(g)
    ok = g > 0.0
    gg = g[ok]
    v = (1.0 - (1.0 + gg) ** -2) * LOG2E_SQ
    num = code.n * np.log2(1.0 + gg) - code.k + math.log2(code.n)
    # dispersion can underflow to 0 for tiny positive SINR; the mean term decides
    with np.errstate(divide="ignore", invalid="ignore"):
        arg = np.where(v > 0.0, num / np.sqrt(code.n * v),
                       np.where(num < 0.0, -np.inf, np.inf))
    out[ok] = np.clip(0.5 * erfc(arg / math.sqrt(2.0)), 0.0, 1.0)
    return out
