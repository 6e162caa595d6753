import hashlib
import math

import numpy as np

from tlt import util


def test_derive_seed_matches_documented_mixing():
    digest = hashlib.sha256(b"7|train|init").digest()
    expected = int.from_bytes(digest[:8], "little") & ((1 << 63) - 1)
    assert util.derive_seed(7, "train", "init") == expected


def test_derive_seed_paths_are_independent():
    seeds = {util.derive_seed(7, "refute", "placebo", trial) for trial in range(20)}
    assert len(seeds) == 20
    assert util.derive_seed(7, "a") != util.derive_seed(8, "a")
    assert all(0 <= s < 2 ** 63 for s in seeds)


def test_numpy_rng_is_reproducible():
    a = util.numpy_rng(3, "x").random(5)
    b = util.numpy_rng(3, "x").random(5)
    assert np.array_equal(a, b)


def test_fmt6():
    assert util.fmt6(0.123456789) == 0.123457
    assert util.fmt6(1234567.0) == 1234570.0
    assert math.isnan(util.fmt6(float("nan")))
    assert util.fmt6(float("inf")) == float("inf")


def test_rounded_nested():
    result = util.rounded(
        {"a": 0.1234567, "b": {"c": np.float64(2.0000001)}, "d": np.int64(3), "e": "s"}
    )
    assert result == {"a": 0.123457, "b": {"c": 2.0}, "d": 3, "e": "s"}
    assert type(result["d"]) is int


def test_digest_ignores_key_order():
    assert util.digest({"a": 1, "b": [1, 2]}) == util.digest({"b": [1, 2], "a": 1})
    assert util.digest({"a": 1}) != util.digest({"a": 2})


def test_plain():
    plain = util.plain({"a": (1, np.int64(2)), "b": [np.float64(0.5)]})
    assert plain == {"a": [1, 2], "b": [0.5]}


def test_exact_mean_of_identical_values_is_exact():
    value = 0.1 + 0.2
    assert util.exact_mean([value] * 7) == value
    assert util.exact_mean([1, 2]) == 1.5
