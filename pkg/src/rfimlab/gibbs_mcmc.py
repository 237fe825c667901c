"""Heat-bath MCMC for lattices beyond exact enumeration.

Two-replica runs estimate overlap statistics; parallel tempering exchanges
configurations across an inverse-temperature ladder when a single chain
mixes too slowly. Every chain owns a counter-based generator stream keyed
by (seed, stream id), so runs replay identically on any host and any
degree of parallelism.
"""

from __future__ import annotations

import json
import math
import weakref
from dataclasses import dataclass, field

import numpy as np

from .disorder import DisorderField
from .gibbs_exact import GibbsSummary, ModelParams
from .lattice import LatticeSpec

_neighbor_cache: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _neighbors(lattice: LatticeSpec):
    cached = _neighbor_cache.get(lattice)
    if cached is None:
        cached = lattice.neighbor_table()
        _neighbor_cache[lattice] = cached
    return cached


def _heat_bath_pass(spins, u, nbr_idx, nbr_off, hg, beta):
    """One typewriter sweep. P(spin=+1) = 1/(1+exp(-2*local_field))."""
    n = spins.shape[0]
    for x in range(n):
        acc = 0.0
        for k in range(nbr_off[x], nbr_off[x + 1]):
            acc += spins[nbr_idx[k]]
        loc = beta * acc + hg[x]
        # numerically stable on both signs of the local field
        if loc >= 0.0:
            p = 1.0 / (1.0 + math.exp(-2.0 * loc))
        else:
            e = math.exp(2.0 * loc)
            p = e / (1.0 + e)
        spins[x] = 1 if u[x] < p else -1


try:  # optional compiled kernel; identical arithmetic either way
    from numba import njit as _njit

    _heat_bath_pass = _njit(cache=False)(_heat_bath_pass)
except Exception:  # pragma: no cover - numba simply absent
    pass


@dataclass(eq=False)
class ChainState:
    """One heat-bath chain with its private generator stream."""

    spins: np.ndarray  # (V,) int8 in {-1, +1}
    sweep_count: int
    seed: int
    stream_id: int
    rng: np.random.Generator = field(repr=False, default=None)


@dataclass(frozen=True)
class McmcEstimate:
    """Mean with autocorrelation-aware error bar.

    tau is the integrated autocorrelation time under the convention
    tau = 1/2 for an i.i.d. series; std_error = sd * sqrt(2 tau / N) and
    ess = N / (2 tau).
    """

    mean: float
    std_error: float
    tau: float
    ess: float
    n_measure: int
    n_burn_in: int = 0


@dataclass(eq=False)
class TwoReplicaSeries:
    """Per-sweep records from two independent chains on one disorder."""

    sweep_index: np.ndarray
    r12: np.ndarray
    hn: np.ndarray  # per-site field energy of replica 1
    energy: np.ndarray  # log Gibbs weight of replica 1
    spins1: np.ndarray  # (T, V) int8 snapshots
    spins2: np.ndarray
    seed: int
    burn_in: int

    def to_records(self, path, fmt: str = "jsonl") -> None:
        """Dump one record per measurement sweep as JSONL or columnar text."""
        if fmt == "jsonl":
            with open(path, "w") as fh:
                for i in range(self.sweep_index.shape[0]):
                    fh.write(
                        json.dumps(
                            {
                                "sweep": int(self.sweep_index[i]),
                                "r12": float(self.r12[i]),
                                "hn": float(self.hn[i]),
                                "energy": float(self.energy[i]),
                            }
                        )
                        + "\n"
                    )
        elif fmt == "text":
            with open(path, "w") as fh:
                fh.write("# sweep r12 hn energy\n")
                for i in range(self.sweep_index.shape[0]):
                    fh.write(
                        f"{int(self.sweep_index[i])} {self.r12[i]:.17g} "
                        f"{self.hn[i]:.17g} {self.energy[i]:.17g}\n"
                    )
        else:
            raise ValueError(f"unknown dump format {fmt!r}")


@dataclass(eq=False)
class RungSeries:
    """Post burn-in records of one tempering rung."""

    params: ModelParams
    sweep_index: np.ndarray
    spins: np.ndarray  # (T, V) int8
    hn: np.ndarray
    energy: np.ndarray
    swap_attempts: int
    swap_accepts: int


def _make_rng(seed: int, stream_id: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream_id,))
    return np.random.Generator(np.random.Philox(ss))


def init_chain(lattice: LatticeSpec, seed: int, stream_id: int) -> ChainState:
    rng = _make_rng(seed, stream_id)
    spins = (rng.integers(0, 2, size=lattice.n_sites, dtype=np.int8) * 2 - 1).astype(np.int8)
    return ChainState(spins=spins, sweep_count=0, seed=seed, stream_id=stream_id, rng=rng)


def heat_bath_sweep(
    state: ChainState, lattice: LatticeSpec, disorder: DisorderField, params: ModelParams
) -> ChainState:
    """Advance the chain by one full sequential pass; mutates and returns state."""
    nbr_idx, nbr_off = _neighbors(lattice)
    u = state.rng.random(lattice.n_sites)
    _heat_bath_pass(state.spins, u, nbr_idx, nbr_off, params.h * disorder.values, params.beta)
    state.sweep_count += 1
    return state


def _bond_sum(lattice: LatticeSpec, spins: np.ndarray) -> float:
    if lattice.n_bonds == 0:
        return 0.0
    return float(np.sum(spins[lattice.bonds[:, 0]] * spins[lattice.bonds[:, 1]], dtype=np.int64))


def run_two_replicas(
    lattice: LatticeSpec,
    disorder: DisorderField,
    params: ModelParams,
    sweeps: int,
    burn_in: int,
    seed: int,
) -> TwoReplicaSeries:
    """Run two independent chains on the same disorder and record overlaps.

    Measurement sweeps are burn_in..sweeps-1. Chains use stream ids 0 and 1
    of the master seed; replica 1 alone feeds the hn and energy series.
    """
    if not (sweeps > burn_in >= 0):
        raise ValueError("need sweeps > burn_in >= 0")
    V = lattice.n_sites
    g = disorder.values
    chain1 = init_chain(lattice, seed, 0)
    chain2 = init_chain(lattice, seed, 1)
    T = sweeps - burn_in
    r12 = np.empty(T)
    hn = np.empty(T)
    energy = np.empty(T)
    spins1 = np.empty((T, V), dtype=np.int8)
    spins2 = np.empty((T, V), dtype=np.int8)
    for t in range(sweeps):
        heat_bath_sweep(chain1, lattice, disorder, params)
        heat_bath_sweep(chain2, lattice, disorder, params)
        if t >= burn_in:
            i = t - burn_in
            s1 = chain1.spins
            s2 = chain2.spins
            r12[i] = float(np.dot(s1.astype(np.float64), s2.astype(np.float64))) / V
            field_sum = float(g @ s1.astype(np.float64))
            hn[i] = field_sum / V
            energy[i] = params.beta * _bond_sum(lattice, s1) + params.h * field_sum
            spins1[i] = s1
            spins2[i] = s2
    return TwoReplicaSeries(
        sweep_index=np.arange(burn_in, sweeps, dtype=np.int64),
        r12=r12,
        hn=hn,
        energy=energy,
        spins1=spins1,
        spins2=spins2,
        seed=seed,
        burn_in=burn_in,
    )


def estimate(series, n_burn_in: int = 0) -> McmcEstimate:
    """Mean and error bar with a Geyer initial-positive-sequence window.

    The autocovariance is summed in adjacent pairs until a pair turns
    non-positive; tau is floored at the i.i.d. value 1/2.
    """
    x = np.asarray(series, dtype=np.float64)
    n = x.shape[0]
    if n < 100:
        raise ValueError(f"series length {n} < 100")
    mean = float(x.mean())
    a = x - mean
    size = 1 << int(np.ceil(np.log2(2 * n)))
    fa = np.fft.rfft(a, size)
    acov = np.fft.irfft(fa * np.conj(fa), size)[:n].real / n
    gamma0 = float(acov[0])
    if gamma0 <= 0.0:
        return McmcEstimate(mean=mean, std_error=0.0, tau=0.5, ess=float(n), n_measure=n, n_burn_in=n_burn_in)
    total = 0.0
    m = 0
    while 2 * m + 1 < n:
        pair = float(acov[2 * m] + acov[2 * m + 1])
        if pair <= 0.0:
            break
        total += pair
        m += 1
    sigma2 = max(-gamma0 + 2.0 * total, gamma0)  # floor tau at 1/2
    tau = sigma2 / (2.0 * gamma0)
    return McmcEstimate(
        mean=mean,
        std_error=math.sqrt(sigma2 / n),
        tau=tau,
        ess=n / (2.0 * tau),
        n_measure=n,
        n_burn_in=n_burn_in,
    )


def parallel_tempering(
    lattice: LatticeSpec,
    disorder: DisorderField,
    params_ladder,
    sweeps: int,
    seed: int,
    burn_in: int = 0,
    stream_base: int = 0,
) -> list:
    """Replica exchange over a beta ladder at common h.

    Adjacent rungs propose swaps each sweep (even pairs on even sweeps, odd
    pairs on odd sweeps) with acceptance min(1, exp(dbeta * dbond)); the
    field term cancels because h and the disorder are shared. A single-rung
    ladder reduces exactly to a plain heat-bath chain on stream 0.
    stream_base offsets every generator stream so that several independent
    tempering runs can share one master seed.
    """
    ladder = list(params_ladder)
    if not ladder:
        raise ValueError("ladder must contain at least one parameter point")
    h0 = ladder[0].h
    if any(p.h != h0 for p in ladder):
        raise ValueError("all ladder entries must share the same h")
    if not (sweeps > burn_in >= 0):
        raise ValueError("need sweeps > burn_in >= 0")
    R = len(ladder)
    V = lattice.n_sites
    g = disorder.values
    chains = [init_chain(lattice, seed, stream_base + r) for r in range(R)]
    swap_rng = _make_rng(seed, stream_base + R) if R >= 2 else None
    T = sweeps - burn_in
    spins = [np.empty((T, V), dtype=np.int8) for _ in range(R)]
    hn = [np.empty(T) for _ in range(R)]
    energy = [np.empty(T) for _ in range(R)]
    attempts = [0] * R
    accepts = [0] * R
    for t in range(sweeps):
        for r in range(R):
            heat_bath_sweep(chains[r], lattice, disorder, ladder[r])
        if R >= 2:
            for r in range(t % 2, R - 1, 2):
                dbond = _bond_sum(lattice, chains[r].spins) - _bond_sum(
                    lattice, chains[r + 1].spins
                )
                dbeta = ladder[r + 1].beta - ladder[r].beta
                accept_p = math.exp(min(0.0, dbeta * dbond))
                attempts[r] += 1
                if swap_rng.random() < accept_p:
                    chains[r].spins, chains[r + 1].spins = (
                        chains[r + 1].spins,
                        chains[r].spins,
                    )
                    accepts[r] += 1
        if t >= burn_in:
            i = t - burn_in
            for r in range(R):
                s = chains[r].spins
                spins[r][i] = s
                fs = float(g @ s.astype(np.float64))
                hn[r][i] = fs / V
                energy[r][i] = ladder[r].beta * _bond_sum(lattice, s) + ladder[r].h * fs
    out = []
    for r in range(R):
        out.append(
            RungSeries(
                params=ladder[r],
                sweep_index=np.arange(burn_in, sweeps, dtype=np.int64),
                spins=spins[r],
                hn=hn[r],
                energy=energy[r],
                swap_attempts=attempts[r],
                swap_accepts=accepts[r],
            )
        )
    return out


def tempered_two_replicas(
    lattice: LatticeSpec,
    disorder: DisorderField,
    params: ModelParams,
    ladder_betas,
    sweeps: int,
    burn_in: int,
    seed: int,
) -> TwoReplicaSeries:
    """Two-replica overlap series with parallel-tempering assistance.

    Two fully independent tempering runs (disjoint stream blocks of the
    same master seed) each carry a rung at the target beta; that rung's
    spins from the two runs form the replica pair. Helper rungs only speed
    up mixing; the recorded series has the same meaning as in
    run_two_replicas.
    """
    if not (sweeps > burn_in >= 0):
        raise ValueError("need sweeps > burn_in >= 0")
    betas = sorted({float(b) for b in ladder_betas} | {params.beta})
    ladder = [ModelParams(b, params.h) for b in betas]
    target = betas.index(params.beta)
    R = len(ladder)
    runs = []
    for block in (0, R + 1):  # streams 0..R and R+1..2R+1
        rungs = parallel_tempering(
            lattice, disorder, ladder, sweeps, seed, burn_in=burn_in, stream_base=block
        )
        runs.append(rungs[target])
    a, b = runs
    V = lattice.n_sites
    r12 = np.sum(a.spins.astype(np.float64) * b.spins.astype(np.float64), axis=1) / V
    return TwoReplicaSeries(
        sweep_index=a.sweep_index,
        r12=r12,
        hn=a.hn,
        energy=a.energy,
        spins1=a.spins,
        spins2=b.spins,
        seed=seed,
        burn_in=burn_in,
    )


def _combine_chain_estimates(series_a, series_b, n_burn_in):
    ea = estimate(series_a, n_burn_in)
    eb = estimate(series_b, n_burn_in)
    mean = 0.5 * (ea.mean + eb.mean)
    se = 0.5 * math.sqrt(ea.std_error**2 + eb.std_error**2)
    return mean, se


def mcmc_summary(
    lattice: LatticeSpec,
    disorder: DisorderField,
    params: ModelParams,
    sweeps: int,
    burn_in: int,
    seed: int,
    ladder=None,
):
    """Estimated GibbsSummary plus overlap-series estimates.

    Single-replica quantities (m, C) pool both chains; overlap moments come
    straight from the two-replica series. std_error on the summary carries
    per-entry error bars; the returned dict holds the series estimates for
    r12, r12^2, and hn. A beta ladder switches on tempering assistance.
    """
    if ladder:
        series = tempered_two_replicas(
            lattice, disorder, params, ladder, sweeps, burn_in, seed
        )
    else:
        series = run_two_replicas(lattice, disorder, params, sweeps, burn_in, seed)
    V = lattice.n_sites
    S1 = series.spins1.astype(np.float64)
    S2 = series.spins2.astype(np.float64)
    m = np.empty(V)
    se_m = np.empty(V)
    for x in range(V):
        m[x], se_m[x] = _combine_chain_estimates(S1[:, x], S2[:, x], burn_in)
    C = np.eye(V)
    se_C = np.zeros((V, V))
    for x in range(V):
        for y in range(x + 1, V):
            val, se = _combine_chain_estimates(S1[:, x] * S1[:, y], S2[:, x] * S2[:, y], burn_in)
            C[x, y] = C[y, x] = val
            se_C[x, y] = se_C[y, x] = se
    estimates = {
        "r12": estimate(series.r12, burn_in),
        "r12_sq": estimate(series.r12**2, burn_in),
        "hn": estimate(series.hn, burn_in),
    }
    summary = GibbsSummary(
        d=lattice.d,
        n=lattice.n,
        beta=params.beta,
        h=params.h,
        seed=seed,
        realization_id=disorder.realization_id,
        log_partition=None,
        psi=None,
        magnetization=m,
        correlation=C,
        field_energy=float(disorder.values @ m) / V,
        source="mcmc",
        std_error={"m": se_m, "C": se_C},
    )
    return summary, estimates
