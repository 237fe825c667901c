import itertools

import numpy as np
import pytest

from rfimlab import build_lattice, sample_disorder


def naive_summary(lattice, disorder, params):
    """Direct-summation oracle: no log shifts, no bit tricks, no chunking.

    Deliberately written with itertools and plain exp so it shares nothing
    with the production enumeration path.
    """
    V = lattice.n_sites
    S = np.array(list(itertools.product([-1.0, 1.0], repeat=V)))
    energy = params.h * (S @ disorder.values)
    for i, j in lattice.bonds:
        energy += params.beta * S[:, i] * S[:, j]
    w = np.exp(energy)
    Z = w.sum()
    m = (w @ S) / Z
    C = (S.T * w) @ S / Z
    return np.log(Z), m, C


@pytest.fixture(scope="session")
def naive_oracle():
    return naive_summary


@pytest.fixture()
def chain6():
    lattice = build_lattice(1, 6)
    disorder = sample_disorder(lattice, seed=101, realization_id=0)
    return lattice, disorder


@pytest.fixture()
def square3():
    lattice = build_lattice(2, 3)
    disorder = sample_disorder(lattice, seed=202, realization_id=0)
    return lattice, disorder
