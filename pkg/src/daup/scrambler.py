"""Verifier- and challenge-specific challenge scrambling.

A prover answering verifier ``j`` with challenge ``C`` first queries its own
PUF with K = log2(N) mutated challenges built from ``C`` and ``ID_j``. The K
response bits seed a K-bit LFSR, whose next N-1 states give the index map
``[0, H_1, ..., H_{N-1}]``. The PUF then answers ``SC[h] = C[H_h]``.

Every function accepts one challenge of shape (N,) or a batch (M, N).
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .lfsr import PRIMITIVE_TAPS, Lfsr
from .puf import ConfigurationError, ContractViolation, PufInstance, as_bits, is_power_of_two

DEFAULT_ID_BITS = 32
NOISY_SEED_VOTES = 11


def log2_width(n: int) -> int:
    if not is_power_of_two(n) or n < 4:
        raise ConfigurationError(f"challenge length must be a power of two >= 4, got {n}")
    return n.bit_length() - 1


def id_to_bits(node_id: int, width: int = DEFAULT_ID_BITS) -> np.ndarray:
    """MSB-first bit vector of a node id."""
    if not 0 <= node_id < (1 << width):
        raise ContractViolation(f"node id {node_id} does not fit in {width} bits")
    return np.array([(node_id >> (width - 1 - i)) & 1 for i in range(width)], dtype=np.uint8)


def bits_to_int(bits) -> int:
    out = 0
    for b in np.asarray(bits).tolist():
        out = (out << 1) | int(b)
    return out


def initial_mutated_challenge(c, id_bits, f_bits: int | None = None) -> np.ndarray:
    """MC_1: leading challenge bits followed by the verifier id.

    When the id is at least as wide as the challenge, only its ``f_bits``
    least-significant bits are used (default N/2).
    """
    c = as_bits(c)
    id_bits = as_bits(id_bits)
    n = c.shape[-1]
    if id_bits.ndim != 1:
        raise ContractViolation("id must be a single bit vector")
    tail = id_bits
    if id_bits.shape[0] >= n:
        f = n // 2 if f_bits is None else f_bits
        if not 0 < f < n:
            raise ConfigurationError(f"f_bits must be in 1..{n - 1}, got {f}")
        tail = id_bits[-f:]
    head = c[..., : n - tail.shape[0]]
    tail = np.broadcast_to(tail, c.shape[:-1] + tail.shape)
    return np.concatenate([head, tail], axis=-1)


def _query(puf: PufInstance, c, votes: int, rng):
    if votes == 1:
        return puf.eval(c, rng)
    return puf.eval_majority(c, votes, rng)


def derive_seed(puf: PufInstance, c, node_id: int, *, id_width: int = DEFAULT_ID_BITS,
                f_bits: int | None = None, votes: int | None = None,
                rng: np.random.Generator | None = None):
    """Build the K-bit LFSR seed from K PUF queries on circularly shifted MCs.

    The first response ends up in the most significant seed bit. "Right shift"
    moves bit i to position i+1 and wraps bit N-1 around to position 0.
    """
    c = as_bits(c, puf.n_stages)
    k = log2_width(puf.n_stages)
    if votes is None:
        votes = 1 if puf.noiseless else NOISY_SEED_VOTES
    mc = initial_mutated_challenge(c, id_to_bits(node_id, id_width), f_bits)
    reg = np.zeros(c.shape[:-1], dtype=np.int64)
    mask = (1 << k) - 1
    for _ in range(k):
        r = np.asarray(_query(puf, mc, votes, rng), dtype=np.int64)
        reg = ((reg << 1) | r) & mask
        mc = np.roll(mc, 1, axis=-1)
    return int(reg) if reg.ndim == 0 else reg


@lru_cache(maxsize=None)
def _pattern(seed: int, n: int, taps: tuple[int, ...]) -> tuple[int, ...]:
    lfsr = Lfsr(log2_width(n), taps).seed(seed)
    return (0,) + tuple(lfsr.run(n - 1))


def make_pattern(seed: int, n: int, taps=None) -> np.ndarray:
    """Index map ``[0, H_1, ..., H_{n-1}]`` from an LFSR seeded with ``seed``."""
    k = log2_width(n)
    taps = tuple(PRIMITIVE_TAPS[k] if taps is None else taps)
    if not 0 <= seed < n:
        raise ContractViolation(f"seed {seed} does not fit in {k} bits")
    return np.array(_pattern(int(seed), n, taps), dtype=np.intp)


@lru_cache(maxsize=None)
def _pattern_table(n: int, taps: tuple[int, ...]) -> np.ndarray:
    table = np.stack([make_pattern(s, n, taps) for s in range(n)])
    table.setflags(write=False)
    return table


def pattern_table(n: int, taps=None) -> np.ndarray:
    """All n patterns stacked, row ``s`` being the map for seed ``s``."""
    k = log2_width(n)
    return _pattern_table(n, tuple(PRIMITIVE_TAPS[k] if taps is None else taps))


def apply_pattern(c, pattern) -> np.ndarray:
    """``SC[h] = C[pattern[h]]``; a batch of patterns pairs row-wise with ``c``."""
    c = as_bits(c)
    pattern = np.asarray(pattern, dtype=np.intp)
    if pattern.shape[-1] != c.shape[-1]:
        raise ContractViolation(f"pattern length {pattern.shape[-1]} != challenge length {c.shape[-1]}")
    if pattern.ndim == 1:
        return c[..., pattern]
    return np.take_along_axis(c, pattern, axis=-1)


def scramble(puf: PufInstance, c, node_id: int, *, taps=None, id_width: int = DEFAULT_ID_BITS,
             f_bits: int | None = None, seed_votes: int | None = None,
             rng: np.random.Generator | None = None) -> np.ndarray:
    """Phase 0 plus the reordering: returns SC for one challenge or a batch."""
    c = as_bits(c, puf.n_stages)
    seeds = derive_seed(puf, c, node_id, id_width=id_width, f_bits=f_bits,
                        votes=seed_votes, rng=rng)
    table = pattern_table(puf.n_stages, taps)
    return apply_pattern(c, table[seeds])


def respond(puf: PufInstance, c, node_id: int, *, votes: int = 1, **kw):
    """Full prover pipeline for a one-bit response to verifier ``node_id``."""
    rng = kw.get("rng")
    sc = scramble(puf, c, node_id, **kw)
    return _query(puf, sc, votes, rng)


def respond_bits(puf: PufInstance, c, node_id: int, r_bits: int, *, votes: int = 1, **kw) -> np.ndarray:
    """Multi-bit response: bit r answers SC circularly shifted left by r.

    Returns shape (..., r_bits).
    """
    if r_bits < 1:
        raise ContractViolation("r_bits must be positive")
    rng = kw.get("rng")
    sc = scramble(puf, c, node_id, **kw)
    cols = [np.asarray(_query(puf, np.roll(sc, -r, axis=-1), votes, rng), dtype=np.uint8)
            for r in range(r_bits)]
    return np.stack(cols, axis=-1)


def disagreement_rate(puf: PufInstance, challenges, node_id: int, *, rng: np.random.Generator,
                      votes: int = 1, seed_votes: int | None = None, repeats: int = 1) -> float:
    """Fraction of pipeline responses that differ between two noisy runs."""
    diffs = 0
    for _ in range(repeats):
        a = respond(puf, challenges, node_id, votes=votes, seed_votes=seed_votes, rng=rng)
        b = respond(puf, challenges, node_id, votes=votes, seed_votes=seed_votes, rng=rng)
        diffs += int(np.count_nonzero(a != b))
    return diffs / (repeats * len(challenges))


def calibrate_noise_sigma(puf: PufInstance, target: float = 0.01, *, node_id: int = 1,
                          n_challenges: int = 10_000, repeats: int = 2, seed: int = 0,
                          iters: int = 30) -> float:
    """Bisect the noise level giving ``target`` pipeline disagreement.

    Each probe reuses the same challenges and noise stream so the measured rate
    is monotone in sigma. Only challenges near the decision boundary ever flip,
    so small samples (a thousand challenges hold about ten of them at 1%) give
    a poor estimate.
    """
    chal = np.random.default_rng(seed).integers(0, 2, (n_challenges, puf.n_stages), dtype=np.uint8)

    def rate(sigma: float) -> float:
        return disagreement_rate(puf.with_noise(sigma), chal, node_id,
                                 rng=np.random.default_rng(seed + 1), repeats=repeats)

    lo, hi = 0.0, 1.0
    while rate(hi) < target:
        hi *= 2
        if hi > 1e6:
            raise ConfigurationError("could not bracket the target noise rate")
    for _ in range(iters):
        mid = (lo + hi) / 2
        if rate(mid) < target:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2
