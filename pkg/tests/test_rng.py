import numpy as np

from arwlab.rng import (derive_seed, sleep_threshold, trailing_zeros, u64)


def test_keyed_stream_is_deterministic():
    assert u64(1, 2, 3, 4) == u64(1, 2, 3, 4)
    assert u64(1, 2, 3, 4) != u64(1, 2, 3, 5)
    assert u64(1, 2, 3, 4) != u64(1, 3, 3, 4)
    assert u64(1, 2, 3, 4) != u64(2, 2, 3, 4)


def test_derive_seed_varies_with_cell():
    seeds = {derive_seed(7, 6, i) for i in range(100)}
    assert len(seeds) == 100


def test_uniformity_of_low_bits():
    # frequencies of the low byte over consecutive heights
    counts = np.zeros(256)
    for h in range(65536):
        counts[u64(99, 1, 5, h) & 0xFF] += 1
    expect = 65536 / 256
    chi2 = float(((counts - expect) ** 2 / expect).sum())
    # 255 dof: mean 255, sd ~ 22.6; 400 is beyond six sigma
    assert chi2 < 400


def test_trailing_zeros_geometric_law():
    counts = np.zeros(12)
    n = 200000
    for i in range(n):
        j = trailing_zeros(u64(5, 4, 0, i))
        counts[min(j, 11)] += 1
    for j in range(8):
        expect = n * 2.0 ** -(j + 1)
        assert abs(counts[j] - expect) < 5 * np.sqrt(expect) + 5


def test_sleep_threshold_fraction():
    lam = 1.5
    thr = sleep_threshold(lam)
    n = 100000
    hits = sum(np.uint64(u64(3, 3, 7, h)) < thr for h in range(n))
    frac = hits / n
    target = lam / (1 + lam)
    assert abs(frac - target) < 4 * np.sqrt(target * (1 - target) / n)
