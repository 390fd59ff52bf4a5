"""Arbiter-PUF simulation on the linear additive-delay model.

Bit ``c[0]`` is the stage furthest from the arbiter; ``c[N-1]`` is the last
stage before it. A response is 1 when the delay difference at the arbiter is
positive.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ConfigurationError(ValueError):
    """Invalid construction parameters (PUF size, LFSR width, ...)."""


class ContractViolation(ValueError):
    """An argument broke a length or range precondition."""


def is_power_of_two(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def as_bits(c, n: int | None = None) -> np.ndarray:
    """Coerce ``c`` to a uint8 bit array, checking the trailing width."""
    arr = np.asarray(c, dtype=np.uint8)
    if arr.ndim not in (1, 2):
        raise ContractViolation(f"expected 1-D or 2-D bit array, got shape {arr.shape}")
    if n is not None and arr.shape[-1] != n:
        raise ContractViolation(f"challenge length {arr.shape[-1]} != {n}")
    if arr.size and arr.max() > 1:
        raise ContractViolation("bit arrays may only hold 0 and 1")
    return arr


def parity_features(c) -> np.ndarray:
    """Parity transform: phi_k = prod_{m>=k} (1 - 2 c_m), with a trailing 1.

    Works on a single challenge (N,) or a batch (M, N); returns N+1 columns
    of +-1 values as float64.
    """
    arr = np.asarray(c, dtype=np.int8)
    signs = 1 - 2 * arr
    suffix = np.cumprod(signs[..., ::-1], axis=-1)[..., ::-1]
    ones = np.ones(arr.shape[:-1] + (1,), dtype=suffix.dtype)
    return np.concatenate([suffix, ones], axis=-1).astype(np.float64)


@dataclass(frozen=True)
class PufInstance:
    n_stages: int
    weights: np.ndarray = field(repr=False)
    noise_sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (self.n_stages + 1,):
            raise ConfigurationError(
                f"weights must have {self.n_stages + 1} entries, got {w.shape}")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be non-negative")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def noiseless(self) -> bool:
        return self.noise_sigma == 0

    def delay(self, c) -> np.ndarray | float:
        """Noiseless delay difference for one challenge or a batch."""
        c = as_bits(c, self.n_stages)
        return parity_features(c) @ self.weights

    def eval(self, c, rng: np.random.Generator | None = None):
        """Single-shot response bit(s); ties resolve to 0."""
        delta = self.delay(c)
        if self.noise_sigma > 0:
            rng = rng if rng is not None else np.random.default_rng()
            delta = delta + rng.normal(0.0, self.noise_sigma, np.shape(delta))
        out = (np.asarray(delta) > 0).astype(np.uint8)
        return int(out) if out.ndim == 0 else out

    def eval_majority(self, c, votes: int, rng: np.random.Generator | None = None):
        """Majority over ``votes`` independent evaluations (votes must be odd)."""
        if votes < 1 or votes % 2 == 0:
            raise ContractViolation(f"votes must be a positive odd integer, got {votes}")
        if votes == 1 or self.noise_sigma == 0:
            return self.eval(c, rng)
        delta = np.asarray(self.delay(c))
        rng = rng if rng is not None else np.random.default_rng()
        noise = rng.normal(0.0, self.noise_sigma, (votes,) + delta.shape)
        ones = ((delta + noise) > 0).sum(axis=0)
        out = (ones > votes // 2).astype(np.uint8)
        return int(out) if out.ndim == 0 else out

    def with_noise(self, noise_sigma: float) -> "PufInstance":
        return PufInstance(self.n_stages, self.weights, noise_sigma, self.rng_seed)

    def to_dict(self) -> dict:
        return {
            "n_stages": self.n_stages,
            "noise_sigma": self.noise_sigma,
            "seed": self.rng_seed,
            "weights": [float(x) for x in self.weights],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PufInstance":
        return cls(int(d["n_stages"]), np.array(d["weights"], dtype=np.float64),
                   float(d["noise_sigma"]), int(d["seed"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "PufInstance":
        return cls.from_dict(json.loads(Path(path).read_text()))


def new_puf(n_stages: int = 64, noise_sigma: float = 0.0, seed: int = 0) -> PufInstance:
    """Fabricate a PUF: stage weights drawn i.i.d. from N(0, 1) under ``seed``."""
    if not is_power_of_two(n_stages):
        raise ConfigurationError(f"n_stages must be a power of two, got {n_stages}")
    if noise_sigma < 0:
        raise ConfigurationError("noise_sigma must be non-negative")
    weights = np.random.default_rng(seed).standard_normal(n_stages + 1)
    return PufInstance(n_stages, weights, float(noise_sigma), int(seed))


def random_challenges(count: int, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, size=(count, n), dtype=np.uint8)
