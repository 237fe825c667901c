"""Finite boxes of Z^d with free boundary conditions.

A box of side n in dimension d has n^d sites with coordinates in
{1, ..., n}^d, indexed in row-major order (last coordinate fastest), and
d * n^(d-1) * (n-1) nearest-neighbour bonds. Block partitions split the
box of side m*n into m^d translates of the side-n box and classify each
bond as internal to a block or cut between blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError

MAX_SITES = 2**22


@dataclass(frozen=True, eq=False)
class LatticeSpec:
    """Sites and nearest-neighbour bonds of a free-boundary box."""

    d: int
    n: int
    sites: np.ndarray  # (N, d) int64 coordinates in 1..n, row-major order
    bonds: np.ndarray  # (B, 2) int64 site-index pairs with i < j

    @property
    def n_sites(self) -> int:
        return self.sites.shape[0]

    @property
    def n_bonds(self) -> int:
        return self.bonds.shape[0]

    def site_index(self, coord) -> int:
        """Row-major index of a coordinate tuple (1-based per axis)."""
        idx = 0
        for c in coord:
            if not 1 <= c <= self.n:
                raise ValueError(f"coordinate {coord} outside box of side {self.n}")
        for c in coord:
            idx = idx * self.n + (c - 1)
        return idx

    def neighbor_table(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR adjacency (indices, offsets): neighbours of site x are
        indices[offsets[x]:offsets[x+1]]."""
        counts = np.zeros(self.n_sites, dtype=np.int64)
        for i, j in self.bonds:
            counts[i] += 1
            counts[j] += 1
        offsets = np.zeros(self.n_sites + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        indices = np.empty(max(offsets[-1], 1), dtype=np.int64)
        cursor = offsets[:-1].copy()
        for i, j in self.bonds:
            indices[cursor[i]] = j
            cursor[i] += 1
            indices[cursor[j]] = i
            cursor[j] += 1
        return indices[: offsets[-1]], offsets


@dataclass(frozen=True, eq=False)
class BlockPartition:
    """m^d translated blocks of side n_block covering a side m*n_block box."""

    m: int
    n_block: int
    blocks: list  # list of (n_block^d,) int64 site-index arrays
    cut_bonds: np.ndarray  # bonds joining different blocks
    internal_bonds: np.ndarray  # bonds inside a single block


def build_lattice(d: int, n: int, max_sites: int = MAX_SITES) -> LatticeSpec:
    """Construct the side-n box in dimension d with free boundaries.

    Site ordering is row-major so that disorder values bound to indices are
    byte-reproducible across runs. Bonds join sites at Euclidean distance 1;
    there is no wraparound.
    """
    if d < 1:
        raise ValueError("dimension d must be >= 1")
    if n < 1:
        raise ValueError("side n must be >= 1")
    n_sites = n**d
    if n_sites > max_sites:
        raise CapacityError(f"{n}^{d} = {n_sites} sites exceeds cap {max_sites}")

    axes = [np.arange(1, n + 1, dtype=np.int64)] * d
    mesh = np.meshgrid(*axes, indexing="ij")
    sites = np.stack([ax.reshape(-1) for ax in mesh], axis=1)

    # stride of axis k in the row-major index
    strides = np.array([n ** (d - 1 - k) for k in range(d)], dtype=np.int64)
    bond_list = []
    for i in range(n_sites):
        coord = sites[i]
        for k in range(d):
            if coord[k] < n:
                bond_list.append((i, i + strides[k]))
    bonds = (
        np.array(bond_list, dtype=np.int64)
        if bond_list
        else np.empty((0, 2), dtype=np.int64)
    )

    sites.setflags(write=False)
    bonds.setflags(write=False)
    return LatticeSpec(d=d, n=n, sites=sites, bonds=bonds)


def block_partition(lattice: LatticeSpec, n_block: int, m: int) -> BlockPartition:
    """Partition a side m*n_block lattice into m^d blocks of side n_block.

    Bonds whose endpoints lie in different blocks are the cut bonds;
    cut and internal bonds together are exactly the lattice bonds.
    """
    if n_block < 1 or m < 1:
        raise ValueError("block side and block count must be >= 1")
    if lattice.n != n_block * m:
        raise ValueError(
            f"lattice side {lattice.n} is not block side {n_block} times m={m}"
        )

    # block id of each site, row-major over the m^d block grid
    block_coord = (lattice.sites - 1) // n_block  # (N, d) in 0..m-1
    block_id = np.zeros(lattice.n_sites, dtype=np.int64)
    for k in range(lattice.d):
        block_id = block_id * m + block_coord[:, k]

    n_blocks = m**lattice.d
    blocks = [np.flatnonzero(block_id == b) for b in range(n_blocks)]

    if lattice.n_bonds:
        cut_mask = block_id[lattice.bonds[:, 0]] != block_id[lattice.bonds[:, 1]]
        cut = lattice.bonds[cut_mask]
        internal = lattice.bonds[~cut_mask]
    else:
        cut = np.empty((0, 2), dtype=np.int64)
        internal = np.empty((0, 2), dtype=np.int64)

    cut.setflags(write=False)
    internal.setflags(write=False)
    return BlockPartition(
        m=m, n_block=n_block, blocks=blocks, cut_bonds=cut, internal_bonds=internal
    )
