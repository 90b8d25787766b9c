import numpy as np
import pytest

from bayesfl.rng import Stream, substream


def test_same_keys_same_stream():
    a = substream(3, Stream.NOISE, 1, 2).standard_normal(5)
    b = substream(3, Stream.NOISE, 1, 2).standard_normal(5)
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize(
    "keys_a, keys_b",
    [((), (0,)), ((0,), (0, 0)), ((1, 2), (2, 1)), ((1,), (1, 0))],
)
def test_distinct_keys_distinct_streams(keys_a, keys_b):
    a = substream(0, Stream.DATA, *keys_a).integers(0, 2**62)
    b = substream(0, Stream.DATA, *keys_b).integers(0, 2**62)
    assert a != b


def test_purposes_are_independent():
    draws = {substream(0, p, 0).integers(0, 2**62) for p in Stream}
    assert len(draws) == len(Stream)


def test_negative_key_rejected():
    with pytest.raises(ValueError):
        substream(0, Stream.DATA, -1)
