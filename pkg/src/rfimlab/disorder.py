"""Quenched Gaussian disorder: reproducible sampling and exact quadrature.

Field values are produced by a counter-based construction so that a site's
value depends only on (seed, realization_id, site index). Realizations can
therefore be generated in any order, on any number of workers, and come out
bit-identical. For systems of at most a few sites, tensor-product
Gauss-Hermite grids give deterministic disorder expectations that serve as
oracles for the identity checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import CapacityError
from .lattice import LatticeSpec

MAX_QUAD_NODES = 10**6

_GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1


def _mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, vectorized over uint64 arrays."""
    z = x.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= np.uint64(0xBF58476D1CE4E5B9)
    z ^= z >> np.uint64(27)
    z *= np.uint64(0x94D049BB133111EB)
    z ^= z >> np.uint64(31)
    return z


@dataclass(frozen=True, eq=False)
class DisorderField:
    """One quenched realization of the site fields."""

    seed: int
    realization_id: int
    values: np.ndarray  # (N,) float64, one value per site index

    def to_record(self) -> dict:
        return {
            "seed": int(self.seed),
            "realization_id": int(self.realization_id),
            "values": [float(v) for v in self.values],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "DisorderField":
        vals = np.asarray(rec["values"], dtype=np.float64)
        vals.setflags(write=False)
        return cls(
            seed=int(rec["seed"]),
            realization_id=int(rec["realization_id"]),
            values=vals,
        )


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """Tensor-product Gauss-Hermite nodes for standard-normal expectations."""

    order: int
    nodes: np.ndarray  # (n_nodes, n_sites) field values
    weights: np.ndarray  # (n_nodes,) positive, sums to 1


def sample_disorder(lattice: LatticeSpec, seed: int, realization_id: int) -> DisorderField:
    """Draw the standard Gaussian field for one realization.

    Deterministic in (seed, realization_id, site index): each output is
    the inverse normal CDF of a 53-bit uniform taken from a splitmix64
    counter stream, independent of generation order.
    """
    if realization_id < 0:
        raise ValueError("realization_id must be >= 0")
    n_sites = lattice.n_sites
    state0 = _mix64(np.array([seed & _MASK], dtype=np.uint64))[0]
    state_r = _mix64(
        np.array([(int(state0) + (realization_id + 1) * _GOLDEN) & _MASK], dtype=np.uint64)
    )[0]
    counters = (
        np.uint64(state_r)
        + np.arange(1, n_sites + 1, dtype=np.uint64) * np.uint64(_GOLDEN & _MASK)
    )
    bits = _mix64(counters)
    # 53-bit uniform strictly inside (0, 1), then inverse CDF
    u = ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    g = ndtri(u)
    g.setflags(write=False)
    return DisorderField(seed=seed, realization_id=realization_id, values=g)


def gauss_hermite_grid(
    lattice: LatticeSpec, order: int, max_nodes: int = MAX_QUAD_NODES
) -> QuadratureGrid:
    """Tensor-product probabilists' Gauss-Hermite grid over all sites.

    Exact for polynomials up to degree 2*order-1 in each coordinate.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    n_sites = lattice.n_sites
    n_nodes = order**n_sites
    if n_nodes > max_nodes:
        raise CapacityError(
            f"{order}^{n_sites} = {n_nodes} quadrature nodes exceed cap {max_nodes}"
        )
    x, w = np.polynomial.hermite_e.hermegauss(order)
    w = w / w.sum()  # normalize: hermegauss weights sum to sqrt(2*pi)

    grids = np.meshgrid(*([x] * n_sites), indexing="ij")
    nodes = np.stack([g.reshape(-1) for g in grids], axis=1)
    weights = np.ones(n_nodes, dtype=np.float64)
    for axis in range(n_sites):
        wg = np.meshgrid(*([w] * n_sites), indexing="ij")[axis]
        weights *= wg.reshape(-1)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureGrid(order=order, nodes=nodes, weights=weights)


def disorder_average(
    lattice: LatticeSpec,
    order: int,
    functional,
    max_nodes: int = MAX_QUAD_NODES,
) -> float:
    """Deterministic E[functional(field)] by Gauss-Hermite quadrature.

    `functional` maps a DisorderField to a real number. Intended for
    lattices of at most ~3 sites; larger grids hit the node cap.
    """
    grid = gauss_hermite_grid(lattice, order, max_nodes=max_nodes)
    total = 0.0
    for k in range(grid.nodes.shape[0]):
        field = DisorderField(seed=0, realization_id=k, values=grid.nodes[k])
        total += grid.weights[k] * float(functional(field))
    return total
