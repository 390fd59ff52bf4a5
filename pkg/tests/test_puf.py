import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from daup.puf import (ConfigurationError, ContractViolation, PufInstance, new_puf,
                      parity_features)

from conftest import bias_only, random_challenges


def phi_bruteforce(c):
    n = len(c)
    out = []
    for k in range(n):
        prod = 1
        for m in range(k, n):
            prod *= 1 - 2 * int(c[m])
        out.append(prod)
    return out + [1]


def test_parity_features_match_product_definition_exhaustively():
    for bits in itertools.product([0, 1], repeat=4):
        assert parity_features(np.array(bits)).tolist() == phi_bruteforce(bits)


@given(st.lists(st.integers(0, 1), min_size=1, max_size=64))
def test_parity_features_are_signs(bits):
    phi = parity_features(np.array(bits))
    assert set(np.unique(phi)) <= {-1.0, 1.0}
    assert phi[-1] == 1.0
    assert phi.tolist() == phi_bruteforce(bits)


def test_weights_length_contract():
    assert new_puf(32, 0.0, 7).weights.shape == (33,)
    with pytest.raises(ConfigurationError):
        PufInstance(8, np.zeros(8))


@pytest.mark.parametrize("n", [0, 3, 48, 63])
def test_non_power_of_two_rejected(n):
    with pytest.raises(ConfigurationError):
        new_puf(n, 0.0, 1)


def test_seeded_construction_is_deterministic():
    a, b = new_puf(64, 0.0, 5), new_puf(64, 0.0, 5)
    assert np.array_equal(a.weights, b.weights)


def test_noiseless_eval_is_constant(puf, rng):
    c = random_challenges(rng, 1)[0]
    first = puf.eval(c)
    assert all(puf.eval(c) == first for _ in range(100))


def test_bias_only_puf_always_answers_one(rng):
    p = bias_only(+1.0)
    assert np.all(p.eval(random_challenges(rng, 200)) == 1)


def test_length_mismatch_is_a_contract_violation(puf):
    with pytest.raises(ContractViolation):
        puf.eval(np.zeros(63, dtype=np.uint8))


def test_independent_pufs_are_unique(rng):
    a, b = new_puf(64, 0.0, 42), new_puf(64, 0.0, 43)
    c = random_challenges(rng, 10_000)
    agree = np.mean(a.eval(c) == b.eval(c))
    assert abs(agree - 0.5) <= 0.05


def test_negated_weights_flip_every_response(puf, rng):
    neg = PufInstance(64, -puf.weights)
    c = random_challenges(rng, 2000)
    d = puf.delay(c)
    c = c[d != 0]
    assert np.all(puf.eval(c) != neg.eval(c))


def test_flipping_first_bit_only_changes_first_feature(rng):
    c = random_challenges(rng, 50)
    flipped = c.copy()
    flipped[:, 0] ^= 1
    diff = parity_features(c) != parity_features(flipped)
    assert diff[:, 0].all()
    assert not diff[:, 1:].any()


def test_tie_resolves_to_zero():
    assert PufInstance(4, np.zeros(5)).eval(np.zeros(4, dtype=np.uint8)) == 0


def test_majority_vote_contracts(puf, rng):
    c = random_challenges(rng, 30)
    assert np.array_equal(puf.eval_majority(c, 3), puf.eval(c))
    noisy = puf.with_noise(0.5)
    assert np.array_equal(noisy.eval_majority(c, 1, np.random.default_rng(1)),
                          noisy.eval(c, np.random.default_rng(1)))
    with pytest.raises(ContractViolation):
        puf.eval_majority(c, 4)


def test_majority_vote_reduces_disagreement(rng):
    noisy = new_puf(64, 1.0, 3)
    c = random_challenges(rng, 1000)
    r = np.random.default_rng(9)
    single = np.mean(noisy.eval(c, r) != noisy.eval(c, r))
    voted = np.mean(noisy.eval_majority(c, 11, r) != noisy.eval_majority(c, 11, r))
    assert single > 0
    assert voted < single


def test_roundtrip_through_file(tmp_path):
    p = new_puf(16, 0.25, 99)
    p.save(tmp_path / "puf.json")
    q = PufInstance.load(tmp_path / "puf.json")
    assert np.array_equal(p.weights, q.weights)
    assert (q.n_stages, q.noise_sigma, q.rng_seed) == (16, 0.25, 99)


def test_instance_is_immutable(puf):
    with pytest.raises((AttributeError, TypeError)):
        puf.noise_sigma = 1.0
    with pytest.raises(ValueError):
        puf.weights[0] = 3.0
