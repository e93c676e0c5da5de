import itertools
import warnings

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("default")

warnings.filterwarnings("ignore", message=".*TBB.*")


def box_sites(d, side, lo=0):
    return list(itertools.product(range(lo, lo + side), repeat=d))


def bilaplacian_oracle(sites):
    """Dense L^T L from an explicit loop over Laplacian rows.

    Rows run over every site within distance one of the domain, so the
    zero boundary condition outside the domain is built in.
    """
    sites = sorted(tuple(s) for s in sites)
    pos = {s: k for k, s in enumerate(sites)}
    d = len(sites[0])
    rows = set()
    for s in sites:
        rows.add(s)
        for i in range(d):
            for sgn in (1, -1):
                t = list(s)
                t[i] += sgn
                rows.add(tuple(t))
    lap = np.zeros((len(rows), len(sites)))
    for r, y in enumerate(sorted(rows)):
        if y in pos:
            lap[r, pos[y]] = -2.0 * d
        for i in range(d):
            for sgn in (1, -1):
                t = list(y)
                t[i] += sgn
                t = tuple(t)
                if t in pos:
                    lap[r, pos[t]] += 1.0
    return sites, lap.T @ lap


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
