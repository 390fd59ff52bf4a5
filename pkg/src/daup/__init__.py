"""Distributed PUF authentication with verifier- and challenge-specific scrambling."""
from .attack import AttackDataset, MlpConfig, evaluate, train_lr, train_mlp
from .lfsr import Lfsr
from .protocol import (CaptureLog, CrpRecord, Decision, Device, Network, NetworkTap, Server,
                       authenticate, enroll, memory_size, mutual_authenticate)
from .puf import PufInstance, new_puf, parity_features
from .scrambler import apply_pattern, derive_seed, make_pattern, respond, respond_bits

__version__ = "0.1.0"
