"""Replica overlap moments and field-energy observables.

Replicas are independent draws from the same Gibbs measure, so every
multi-replica overlap expectation factorizes into sums over the one-replica
marginals m and C. These reductions remove a layer of Monte Carlo error
whenever an exact engine produced the marginals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .disorder import DisorderField
from .gibbs_exact import GibbsSummary


@dataclass(frozen=True)
class OverlapMoments:
    """Per-realization Gibbs moments of the two-replica overlap.

    r12 = <R12>, r12_sq = <R12^2>, r12_r13 = <R12 R13>,
    r23_r14 = <R23 R14> (= r12^2 identically), gibbs_var = <R12^2> - <R12>^2.
    """

    r12: float
    r12_sq: float
    r12_r13: float
    r23_r14: float
    gibbs_var: float


def overlap_moments(summary: GibbsSummary) -> OverlapMoments:
    """Reduce two/three/four-replica overlap moments to m and C sums."""
    if summary.correlation is None:
        raise ValueError("summary lacks the correlation matrix")
    m = summary.magnetization
    C = summary.correlation
    V = m.shape[0]
    r12 = float(m @ m) / V
    r12_sq = float(np.sum(C * C)) / V**2
    r12_r13 = float(m @ C @ m) / V**2
    return OverlapMoments(
        r12=r12,
        r12_sq=r12_sq,
        r12_r13=r12_r13,
        r23_r14=r12**2,
        gibbs_var=r12_sq - r12**2,
    )


def field_energy(summary: GibbsSummary, disorder: DisorderField) -> float:
    """<(1/V) sum_x g_x sigma_x> = (1/V) sum_x g_x m_x."""
    g = disorder.values
    return float(g @ summary.magnetization) / g.shape[0]


def field_energy_variance(summary: GibbsSummary, disorder: DisorderField) -> float:
    """Gibbs variance of the per-site field energy:
    (1/V^2) sum_{x,y} g_x g_y (C_{x,y} - m_x m_y)."""
    if summary.correlation is None:
        raise ValueError("summary lacks the correlation matrix")
    g = disorder.values
    r = summary.r_matrix()
    V = g.shape[0]
    return float(g @ r @ g) / V**2


def gg_covariance_terms(
    summary: GibbsSummary, disorder: DisorderField, k: int, f_choice: str
) -> dict:
    """Per-realization ingredients of the overlap covariance identity.

    For f = the overlap of replicas (1,2) with k=2, or of replicas (2,3)
    with k=3, returns <H(sigma^1) f>, <f>, <f R_{1,i}> for i = 1..k
    (R_{1,1} = 1), and <f R_{1,k+1}>, each reduced to sums over m and C.
    """
    if summary.correlation is None:
        raise ValueError("summary lacks the correlation matrix")
    m = summary.magnetization
    C = summary.correlation
    g = disorder.values
    V = m.shape[0]
    mom = overlap_moments(summary)
    hn = field_energy(summary, disorder)

    if f_choice == "R12":
        if k != 2:
            raise ValueError("f_choice 'R12' requires k = 2")
        hf = float(g @ C @ m) / V**2
        f_r1i = [mom.r12, mom.r12_sq]
        f_next = mom.r12_r13
    elif f_choice == "R23":
        if k != 3:
            raise ValueError("f_choice 'R23' requires k = 3")
        # H depends on replica 1 only, f on replicas 2 and 3
        hf = hn * mom.r12
        f_r1i = [mom.r12, mom.r12_r13, mom.r12_r13]
        f_next = mom.r23_r14
    else:
        raise ValueError(f"unsupported f_choice {f_choice!r}")

    return {
        "hf": hf,
        "f": mom.r12,  # <R12> = <R23> by replica equivalence
        "hn": hn,
        "r12": mom.r12,
        "f_r1i": f_r1i,
        "f_next": f_next,
    }
