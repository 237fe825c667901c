"""Exact Gibbs computations: enumeration, 1d transfer matrix, derivative probes.

The Gibbs weight of a spin configuration sigma is
exp(beta * sum_bonds sigma_x sigma_y + h * sum_x g_x sigma_x); all engines
here evaluate its normalization and low-order marginals without sampling.
Everything runs in log domain with max-shifts so large beta and h stay finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .disorder import DisorderField
from .errors import CapacityError
from .lattice import LatticeSpec

ENUM_CAP = 22  # sites; 2^22 configurations
BATCH_CAP = 16  # sites for the vectorized many-field evaluator
TRANSFER_CAP = 4096  # chain length; pair sums are O(n^2)
FOURTH_CAP = 8  # sites for nested fourth differences

_CHUNK = 1 << 16


@dataclass(frozen=True)
class ModelParams:
    """Inverse temperature and field strength.

    beta = 0 is admitted (product measure, used by closed-form oracles);
    h must be strictly positive because the certified bounds divide by it.
    """

    beta: float
    h: float

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.h <= 0:
            raise ValueError("h must be > 0")


@dataclass(eq=False)
class GibbsSummary:
    """Per-realization Gibbs data from one engine.

    magnetization[x] = <sigma_x>, correlation[x, y] = <sigma_x sigma_y>,
    field_energy = (1/V) sum_x g_x <sigma_x>. For source "mcmc" the
    log-partition is unavailable (None) and std_error carries error bars.
    """

    d: int
    n: int
    beta: float
    h: float
    seed: int
    realization_id: int
    log_partition: float | None
    psi: float | None
    magnetization: np.ndarray
    correlation: np.ndarray
    field_energy: float
    source: str
    std_error: dict = field(default=None, repr=False)

    def r_matrix(self) -> np.ndarray:
        """Truncated pair correlation <sxsy> - <sx><sy>."""
        m = self.magnetization
        return self.correlation - np.outer(m, m)

    def to_json(self) -> dict:
        F = self.log_partition
        psi = self.psi
        return {
            "d": int(self.d),
            "n": int(self.n),
            "beta": float(self.beta),
            "h": float(self.h),
            "seed": int(self.seed),
            "realization_id": int(self.realization_id),
            "F": None if F is None else float(F),
            "psi": None if psi is None else float(psi),
            "m": [float(v) for v in self.magnetization],
            "C": [float(v) for v in self.correlation.reshape(-1)],
            "source": self.source,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GibbsSummary":
        m = np.asarray(obj["m"], dtype=np.float64)
        nsites = m.shape[0]
        C = np.asarray(obj["C"], dtype=np.float64).reshape(nsites, nsites)
        g_dot_m = None  # field_energy is not serialized; callers recompute
        return cls(
            d=int(obj["d"]),
            n=int(obj["n"]),
            beta=float(obj["beta"]),
            h=float(obj["h"]),
            seed=int(obj["seed"]),
            realization_id=int(obj["realization_id"]),
            log_partition=obj["F"],
            psi=obj["psi"],
            magnetization=m,
            correlation=C,
            field_energy=float("nan") if g_dot_m is None else g_dot_m,
            source=str(obj["source"]),
        )


def _spin_matrix(start: int, count: int, n_sites: int) -> np.ndarray:
    """Spins of configurations start..start+count-1; bit x of the index
    gives the spin at site x (bit 1 -> +1)."""
    c = np.arange(start, start + count, dtype=np.uint64)
    S = np.empty((count, n_sites), dtype=np.int8)
    for x in range(n_sites):
        S[:, x] = (((c >> np.uint64(x)) & np.uint64(1)) * np.uint64(2)).astype(np.int8) - 1
    return S


def _iter_log_weights(lattice: LatticeSpec, disorder: DisorderField, params: ModelParams):
    """Yield (log_weight_chunk, spin_chunk) covering all 2^V configurations."""
    n_sites = lattice.n_sites
    bi = lattice.bonds[:, 0]
    bj = lattice.bonds[:, 1]
    hg = params.h * disorder.values
    total = 1 << n_sites
    for start in range(0, total, _CHUNK):
        count = min(_CHUNK, total - start)
        S = _spin_matrix(start, count, n_sites)
        if bi.size:
            bond_sum = np.sum(S[:, bi] * S[:, bj], axis=1, dtype=np.int32)
        else:
            bond_sum = np.zeros(count, dtype=np.int32)
        logw = params.beta * bond_sum.astype(np.float64) + S.astype(np.float64) @ hg
        yield logw, S


def _finalize_summary(lattice, disorder, params, F, m, C, source) -> GibbsSummary:
    C = 0.5 * (C + C.T)
    np.fill_diagonal(C, 1.0)
    m = np.clip(m, -1.0, 1.0)
    np.clip(C, -1.0, 1.0, out=C)
    fe = float(disorder.values @ m) / lattice.n_sites
    return GibbsSummary(
        d=lattice.d,
        n=lattice.n,
        beta=params.beta,
        h=params.h,
        seed=disorder.seed,
        realization_id=disorder.realization_id,
        log_partition=float(F),
        psi=float(F) / lattice.n_sites,
        magnetization=m,
        correlation=C,
        field_energy=fe,
        source=source,
    )


def enumerate_gibbs(
    lattice: LatticeSpec,
    disorder: DisorderField,
    params: ModelParams,
    max_sites: int = ENUM_CAP,
) -> GibbsSummary:
    """Exact summary by summation over all 2^V configurations.

    Configurations stream through in fixed chunks with a running max-shift,
    so the reduction order (hence the rounding) is deterministic.
    """
    n_sites = lattice.n_sites
    if n_sites > max_sites:
        raise CapacityError(f"{n_sites} sites exceed enumeration cap {max_sites}")
    shift = -np.inf
    Z = 0.0
    Sm = np.zeros(n_sites)
    SC = np.zeros((n_sites, n_sites))
    for logw, S in _iter_log_weights(lattice, disorder, params):
        top = float(logw.max())
        if top > shift:
            scale = math.exp(shift - top) if shift > -np.inf else 0.0
            Z *= scale
            Sm *= scale
            SC *= scale
            shift = top
        w = np.exp(logw - shift)
        Sf = S.astype(np.float64)
        Sw = Sf * w[:, None]
        Z += float(w.sum())
        Sm += Sw.sum(axis=0)
        SC += Sw.T @ Sf
    F = shift + math.log(Z)
    return _finalize_summary(lattice, disorder, params, F, Sm / Z, SC / Z, "exact-enumeration")


def gibbs_moment(
    lattice: LatticeSpec,
    disorder: DisorderField,
    params: ModelParams,
    site_multiset,
    max_sites: int = ENUM_CAP,
) -> float:
    """Exact <prod_i sigma_{x_i}> for an arbitrary multiset of sites.

    Sites of even multiplicity drop out (sigma^2 = 1).
    """
    n_sites = lattice.n_sites
    if n_sites > max_sites:
        raise CapacityError(f"{n_sites} sites exceed enumeration cap {max_sites}")
    odd = set()
    for x in site_multiset:
        x = int(x)
        if not 0 <= x < n_sites:
            raise ValueError(f"site index {x} out of range")
        odd.symmetric_difference_update({x})
    if not odd:
        return 1.0
    cols = sorted(odd)
    shift = -np.inf
    Z = 0.0
    acc = 0.0
    for logw, S in _iter_log_weights(lattice, disorder, params):
        top = float(logw.max())
        if top > shift:
            scale = math.exp(shift - top) if shift > -np.inf else 0.0
            Z *= scale
            acc *= scale
            shift = top
        w = np.exp(logw - shift)
        prod = S[:, cols[0]].astype(np.float64)
        for c in cols[1:]:
            prod = prod * S[:, c]
        Z += float(w.sum())
        acc += float(w @ prod)
    return acc / Z


def batch_gibbs(
    lattice: LatticeSpec,
    params: ModelParams,
    field_rows: np.ndarray,
    want_correlation: bool = True,
    max_sites: int = BATCH_CAP,
    max_block: int = 1 << 22,
):
    """Exact (F, m, C) for many disorder rows at once.

    field_rows has one field vector per row. Returns arrays F (rows,),
    m (rows, V) and, when requested, C (rows, V, V). Enumerates the full
    configuration set, so it is limited to small site counts; rows are
    processed in blocks to bound memory.
    """
    n_sites = lattice.n_sites
    if n_sites > max_sites:
        raise CapacityError(f"{n_sites} sites exceed batch cap {max_sites}")
    G = np.atleast_2d(np.asarray(field_rows, dtype=np.float64))
    n_rows = G.shape[0]
    n_cfg = 1 << n_sites
    S = _spin_matrix(0, n_cfg, n_sites).astype(np.float64)
    if lattice.n_bonds:
        bond_sum = np.sum(
            S[:, lattice.bonds[:, 0]] * S[:, lattice.bonds[:, 1]], axis=1
        )
    else:
        bond_sum = np.zeros(n_cfg)
    base = params.beta * bond_sum

    F = np.empty(n_rows)
    m = np.empty((n_rows, n_sites))
    C = np.empty((n_rows, n_sites, n_sites)) if want_correlation else None
    rows_per_block = max(1, max_block // n_cfg)
    for lo in range(0, n_rows, rows_per_block):
        hi = min(lo + rows_per_block, n_rows)
        logw = base[None, :] + (params.h * G[lo:hi]) @ S.T
        top = logw.max(axis=1, keepdims=True)
        w = np.exp(logw - top)
        Z = w.sum(axis=1)
        F[lo:hi] = top[:, 0] + np.log(Z)
        P = w / Z[:, None]
        m[lo:hi] = P @ S
        if want_correlation:
            for i in range(n_sites):
                C[lo:hi, i, :] = (P * S[:, i][None, :]) @ S
    return F, m, C


def _lse2(v: np.ndarray) -> np.ndarray:
    """log(exp(v0) + exp(v1)) along the last axis of a (..., 2) array."""
    top = v.max(axis=-1)
    return top + np.log(np.exp(v[..., 0] - top) + np.exp(v[..., 1] - top))


def transfer_matrix_1d(
    lattice: LatticeSpec,
    disorder: DisorderField,
    params: ModelParams,
    max_n: int = TRANSFER_CAP,
) -> GibbsSummary:
    """Exact chain summary by forward/backward log messages.

    Matches enumerate_gibbs wherever both apply. All-pair correlations come
    from the conditional Markov kernels: for x < y,
    <sx sy> - <sx><sy> = (1 - <sx>^2) * prod_{j=x}^{y-1} b_j where b_j is
    half the difference of conditional means E[s_{j+1} | s_j = +-1].
    """
    if lattice.d != 1:
        raise ValueError("transfer matrix requires a one-dimensional lattice")
    n = lattice.n
    if n > max_n:
        raise CapacityError(f"chain length {n} exceeds transfer cap {max_n}")
    svec = np.array([-1.0, 1.0])
    phi = params.h * disorder.values[:, None] * svec[None, :]  # (n, 2)
    Bmat = params.beta * np.outer(svec, svec)  # (2, 2)

    fwd = np.empty((n, 2))
    fwd[0] = phi[0]
    for i in range(1, n):
        # reduce over the previous spin; Bmat is symmetric
        fwd[i] = _lse2(Bmat + fwd[i - 1][None, :]) + phi[i]
    bwd = np.zeros((n, 2))
    for i in range(n - 2, -1, -1):
        bwd[i] = _lse2(Bmat + (phi[i + 1] + bwd[i + 1])[None, :])
    F = float(_lse2(fwd[n - 1][None, :])[0])

    pi = np.exp(fwd + bwd - F)
    pi /= pi.sum(axis=1, keepdims=True)
    m = pi[:, 1] - pi[:, 0]

    if n > 1:
        # row-stochastic conditional kernels along the chain
        K = np.exp(Bmat[None, :, :] + (phi[1:] + bwd[1:])[:, None, :] - bwd[:-1][:, :, None])
        delta = K[:, :, 1] - K[:, :, 0]  # conditional means E[s_{j+1} | s_j]
        bcoef = np.maximum(0.5 * (delta[:, 1] - delta[:, 0]), 0.0)
        zero = bcoef == 0.0
        logb = np.where(zero, 0.0, np.log(np.where(zero, 1.0, bcoef)))
        cum = np.concatenate([[0.0], np.cumsum(logb)])
        seg = np.concatenate([[0], np.cumsum(zero.astype(np.int64))])
        logq = cum[None, :] - cum[:, None]
        mask = np.triu(seg[:, None] == seg[None, :], 1)
        q = np.zeros((n, n))
        q[mask] = np.exp(logq[mask])
        r = q * (1.0 - m[:, None] ** 2)
        r = r + r.T
    else:
        r = np.zeros((1, 1))
    np.fill_diagonal(r, 1.0 - m**2)
    C = r + np.outer(m, m)
    return _finalize_summary(lattice, disorder, params, F, m, C, "transfer-matrix")


def _free_energy(lattice, disorder, params, values) -> float:
    shifted = DisorderField(
        seed=disorder.seed, realization_id=disorder.realization_id, values=values
    )
    return enumerate_gibbs(lattice, shifted, params).log_partition


def fd_derivative_check(
    lattice: LatticeSpec,
    disorder: DisorderField,
    params: ModelParams,
    x: int,
    y: int,
    delta: float = 1e-4,
) -> dict:
    """Finite-difference probes of the free energy in the field variables.

    Central differences of F in g_x reproduce h*<sx>; mixed second
    differences reproduce h^2 * (<sxsy> - <sx><sy>) (x != y) or
    h^2 * (1 - <sx>^2) (x == y). Returns both residuals.
    """
    summary = enumerate_gibbs(lattice, disorder, params)
    g = disorder.values
    h = params.h

    def F_at(dx: float, dy_site: int | None = None, dy: float = 0.0) -> float:
        vals = g.copy()
        vals[x] += dx
        if dy_site is not None:
            vals[dy_site] += dy
        return _free_energy(lattice, disorder, params, vals)

    first = (F_at(+delta) - F_at(-delta)) / (2 * delta)
    first_target = h * summary.magnetization[x]

    if x == y:
        f0 = summary.log_partition
        second = (F_at(+delta) - 2 * f0 + F_at(-delta)) / delta**2
        second_target = h**2 * (1.0 - summary.magnetization[x] ** 2)
    else:
        second = (
            F_at(+delta, y, +delta)
            - F_at(+delta, y, -delta)
            - F_at(-delta, y, +delta)
            + F_at(-delta, y, -delta)
        ) / (4 * delta**2)
        second_target = h**2 * summary.r_matrix()[x, y]

    return {
        "first": first,
        "first_target": first_target,
        "first_residual": abs(first - first_target),
        "second": second,
        "second_target": second_target,
        "second_residual": abs(second - second_target),
        "delta": delta,
    }


def fourth_derivative(
    lattice: LatticeSpec,
    disorder: DisorderField,
    params: ModelParams,
    x: int,
    y: int,
    delta: float = 5e-2,
    max_sites: int = FOURTH_CAP,
) -> float:
    """Fourth mixed central difference d^4 F / dg_x^2 dg_y^2.

    Truncation error is O(delta^2); the default step trades truncation
    against round-off amplification by 1/delta^4.
    """
    if lattice.n_sites > max_sites:
        raise CapacityError(f"{lattice.n_sites} sites exceed cap {max_sites}")
    g = disorder.values

    def F_shift(dx: float, dy: float) -> float:
        vals = g.copy()
        vals[x] += dx
        vals[y] += dy
        return _free_energy(lattice, disorder, params, vals)

    if x == y:
        return (
            F_shift(-2 * delta, 0.0)
            - 4 * F_shift(-delta, 0.0)
            + 6 * F_shift(0.0, 0.0)
            - 4 * F_shift(+delta, 0.0)
            + F_shift(+2 * delta, 0.0)
        ) / delta**4
    stencil = ((-delta, 1.0), (0.0, -2.0), (delta, 1.0))
    total = 0.0
    for dx, cx in stencil:
        for dy, cy in stencil:
            total += cx * cy * F_shift(dx, dy)
    return total / delta**4
