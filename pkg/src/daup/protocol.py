"""Enrollment, prover/verifier nodes and an in-process message network.

The network is a single-threaded FIFO event loop. Every delivered message is
appended to ``Network.log``; taps attached to a link observe authentication
exchanges and record (challenge, response, verifier id) tuples. Enrollment
traffic travels on the secure channel and is never tapped.
"""
from __future__ import annotations

import enum
import itertools
import json
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import scrambler
from .lfsr import DEFAULT_TAPS
from .puf import ContractViolation, PufInstance, as_bits, new_puf

SERVER_ID = 0


class ProtocolError(RuntimeError):
    pass


class NoCrpsError(ProtocolError):
    """The verifier holds no CRPs for the requested prover."""


class CrpExhaustedError(ProtocolError):
    """Every stored CRP was used; the verifier must re-enroll."""


# -- records and messages ---------------------------------------------------

def bits_to_hex(bits) -> str:
    bits = np.asarray(bits, dtype=np.uint8)
    pad = (-len(bits)) % 4
    return "".join(f"{v:x}" for v in _nibbles(np.concatenate([np.zeros(pad, np.uint8), bits])))


def _nibbles(bits):
    for i in range(0, len(bits), 4):
        b = bits[i:i + 4]
        yield (int(b[0]) << 3) | (int(b[1]) << 2) | (int(b[2]) << 1) | int(b[3])


def hex_to_bits(text: str, n: int) -> np.ndarray:
    value = int(text, 16)
    if value >> n:
        raise ContractViolation(f"hex value {text} does not fit in {n} bits")
    return np.array([(value >> (n - 1 - i)) & 1 for i in range(n)], dtype=np.uint8)


@dataclass(frozen=True)
class CrpRecord:
    prover_id: int
    verifier_id: int
    challenge: np.ndarray
    expected_response: np.ndarray

    def to_json(self) -> str:
        return json.dumps({
            "challenge": bits_to_hex(self.challenge),
            "response": bits_to_hex(self.expected_response),
            "verifier_id": self.verifier_id,
            "prover_id": self.prover_id,
            "n": len(self.challenge),
            "r_bits": len(self.expected_response),
        })

    @classmethod
    def from_json(cls, line: str) -> "CrpRecord":
        d = json.loads(line)
        return cls(int(d["prover_id"]), int(d["verifier_id"]),
                   hex_to_bits(d["challenge"], int(d["n"])),
                   hex_to_bits(d["response"], int(d["r_bits"])))


def dump_records(records, path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def load_records(path) -> list[CrpRecord]:
    with open(path) as fh:
        return [CrpRecord.from_json(line) for line in fh if line.strip()]


@dataclass(frozen=True)
class AuthRequest:
    verifier_id: int
    challenge: np.ndarray
    nonce: int


@dataclass(frozen=True)
class AuthResponse:
    nonce: int
    response: np.ndarray


@dataclass(frozen=True)
class EnrollQuery:
    verifier_id: int
    challenges: np.ndarray


@dataclass(frozen=True)
class EnrollReply:
    verifier_id: int
    challenges: np.ndarray
    responses: np.ndarray


@dataclass(frozen=True)
class CrpDelivery:
    prover_id: int
    records: tuple


@dataclass(frozen=True)
class Message:
    seq: int
    src: int
    dst: int
    payload: object
    secure: bool = False

    @property
    def kind(self) -> str:
        return type(self.payload).__name__


# -- capture logs and taps --------------------------------------------------

@dataclass(frozen=True)
class CaptureEntry:
    challenge: np.ndarray
    response: np.ndarray
    verifier_id: int
    prover_id: int


@dataclass
class CaptureLog:
    entries: list = field(default_factory=list)
    source: str = "eavesdrop"
    scenario: str = ""

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def append(self, entry: CaptureEntry) -> None:
        self.entries.append(entry)

    def records(self) -> list[CrpRecord]:
        return [CrpRecord(e.prover_id, e.verifier_id, e.challenge, e.response) for e in self.entries]

    def dump(self, path) -> None:
        dump_records(self.records(), path)

    @classmethod
    def load(cls, path, source: str = "eavesdrop", scenario: str = "") -> "CaptureLog":
        entries = [CaptureEntry(r.challenge, r.expected_response, r.verifier_id, r.prover_id)
                   for r in load_records(path)]
        return cls(entries, source, scenario)


class NetworkTap:
    """Eavesdropper on one link (an unordered node pair) or, with ``link=None``, on all.

    Each exchange is captured with probability ``capture_fraction``; the draw is
    made once per request so a captured challenge always keeps its response.
    """

    def __init__(self, link: tuple[int, int] | None = None, capture_fraction: float = 1.0,
                 seed: int = 0):
        if not 0.0 <= capture_fraction <= 1.0:
            raise ValueError("capture_fraction must lie in [0, 1]")
        self.link = None if link is None else frozenset(link)
        self.capture_fraction = capture_fraction
        self.log = CaptureLog()
        self._rng = np.random.default_rng(seed)
        self._pending: dict[int, tuple] = {}

    def covers(self, msg: Message) -> bool:
        return self.link is None or frozenset((msg.src, msg.dst)) == self.link

    def observe(self, msg: Message) -> None:
        if msg.secure or not self.covers(msg):
            return
        p = msg.payload
        if isinstance(p, AuthRequest):
            if self.capture_fraction >= 1.0 or self._rng.random() < self.capture_fraction:
                self._pending[p.nonce] = (p.challenge.copy(), p.verifier_id, msg.dst)
        elif isinstance(p, AuthResponse):
            hit = self._pending.pop(p.nonce, None)
            if hit is not None:
                chal, vid, pid = hit
                self.log.append(CaptureEntry(chal, p.response.copy(), vid, pid))


class Network:
    def __init__(self, drop_prob: float = 0.0, seed: int = 0):
        self.drop_prob = drop_prob
        self.queue: deque[Message] = deque()
        self.log: list[Message] = []
        self.dropped: list[Message] = []
        self.taps: list[NetworkTap] = []
        self.nodes: dict[int, object] = {}
        self._seq = itertools.count()
        self._rng = np.random.default_rng(seed)

    def attach(self, *nodes) -> None:
        """Bind each node to its id; a later node with the same id takes over the address."""
        for node in nodes:
            self.nodes[node.node_id] = node

    def add_tap(self, tap: NetworkTap) -> NetworkTap:
        self.taps.append(tap)
        return tap

    def send(self, src: int, dst: int, payload, secure: bool = False) -> None:
        if dst not in self.nodes:
            raise ProtocolError(f"no node attached at {dst:#010x}")
        self.queue.append(Message(next(self._seq), src, dst, payload, secure))

    def run(self) -> None:
        while self.queue:
            msg = self.queue.popleft()
            if not msg.secure and self.drop_prob > 0 and self._rng.random() < self.drop_prob:
                self.dropped.append(msg)
                continue
            self.log.append(msg)
            for tap in self.taps:
                tap.observe(msg)
            self.nodes[msg.dst].handle(msg, self)

    def messages_since(self, seq: int) -> list[Message]:
        return [m for m in self.log if m.seq >= seq]

    @property
    def next_seq(self) -> int:
        return self.log[-1].seq + 1 if self.log else 0


# -- nodes --------------------------------------------------------------------

class Decision(enum.Enum):
    ACCEPT = "accept"
    REJECT = "reject"


@dataclass(frozen=True)
class AuthResult:
    decision: Decision
    cause: str = ""
    mismatches: int = 0
    record: CrpRecord | None = None

    @property
    def accepted(self) -> bool:
        return self.decision is Decision.ACCEPT


@dataclass
class PipelineSettings:
    r_bits: int = 1
    taps: tuple[int, ...] = DEFAULT_TAPS
    id_width: int = scrambler.DEFAULT_ID_BITS
    f_bits: int | None = None
    scrambling: bool = True


class Device:
    """An IoT node: answers as a prover, checks responses as a verifier."""

    def __init__(self, node_id: int, puf: PufInstance, settings: PipelineSettings | None = None,
                 seed: int = 0, tolerated_bit_errors: int | None = None):
        self.node_id = node_id
        self.puf = puf
        self.settings = settings or PipelineSettings()
        self.crps: dict[int, list[CrpRecord]] = {}
        self.cursor: dict[int, int] = {}
        self.pending: dict[int, AuthResponse] = {}
        self._rng = np.random.default_rng(seed)
        if tolerated_bit_errors is None:
            tolerated_bit_errors = 0 if puf.noiseless else int(0.1 * self.settings.r_bits)
        self.tolerated_bit_errors = tolerated_bit_errors

    def __repr__(self):
        return f"Device({self.node_id:#010x})"

    # prover side
    def respond(self, challenges, verifier_id: int, votes: int = 1) -> np.ndarray:
        """Response bits (..., r_bits) for a challenge or batch sent by ``verifier_id``."""
        s = self.settings
        c = as_bits(challenges, self.puf.n_stages)
        if not s.scrambling:
            sc = c
            cols = [np.asarray(self._eval(np.roll(sc, -r, axis=-1), votes), np.uint8)
                    for r in range(s.r_bits)]
            return np.stack(cols, axis=-1)
        return scrambler.respond_bits(self.puf, c, verifier_id, s.r_bits, votes=votes,
                                      taps=s.taps, id_width=s.id_width, f_bits=s.f_bits,
                                      rng=self._rng)

    def _eval(self, c, votes):
        if votes == 1:
            return self.puf.eval(c, self._rng)
        return self.puf.eval_majority(c, votes, self._rng)

    @property
    def enrollment_votes(self) -> int:
        return 1 if self.puf.noiseless else scrambler.NOISY_SEED_VOTES

    # verifier side
    def store(self, prover_id: int, records) -> None:
        self.crps[prover_id] = list(records)
        self.cursor[prover_id] = 0

    def next_record(self, prover_id: int) -> CrpRecord:
        records = self.crps.get(prover_id)
        if not records:
            raise NoCrpsError(f"{self!r} holds no CRPs for prover {prover_id:#010x}")
        i = self.cursor[prover_id]
        if i >= len(records):
            raise CrpExhaustedError(
                f"{self!r} used all {len(records)} CRPs for {prover_id:#010x}; re-enroll")
        self.cursor[prover_id] = i + 1
        return records[i]

    def remaining(self, prover_id: int) -> int:
        return len(self.crps.get(prover_id, ())) - self.cursor.get(prover_id, 0)

    def handle(self, msg: Message, net: Network) -> None:
        p = msg.payload
        if isinstance(p, AuthRequest):
            resp = self.respond(p.challenge, p.verifier_id)
            net.send(self.node_id, msg.src, AuthResponse(p.nonce, resp))
        elif isinstance(p, AuthResponse):
            self.pending[p.nonce] = p
        elif isinstance(p, EnrollQuery):
            resp = self.respond(p.challenges, p.verifier_id, votes=self.enrollment_votes)
            net.send(self.node_id, msg.src, EnrollReply(p.verifier_id, p.challenges, resp),
                     secure=True)
        elif isinstance(p, CrpDelivery):
            self.store(p.prover_id, p.records)
        else:
            raise ProtocolError(f"{self!r} cannot handle {msg.kind}")


class ReplayDevice(Device):
    """Attacker answering every request with one fixed, previously seen response."""

    def __init__(self, node_id: int, replayed: np.ndarray, n_stages: int = 64):
        super().__init__(node_id, new_puf(n_stages, 0.0, 0))
        self.replayed = np.asarray(replayed, dtype=np.uint8)

    def respond(self, challenges, verifier_id, votes=1):
        return self.replayed.copy()


class Server:
    """Enrollment authority; only active while devices are being enrolled."""

    node_id = SERVER_ID

    def __init__(self, seed: int = 0):
        self._rng = np.random.default_rng(seed)
        self.tabulated: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}

    def handle(self, msg: Message, net: Network) -> None:
        p = msg.payload
        if isinstance(p, EnrollReply):
            self.tabulated[(msg.src, p.verifier_id)] = (p.challenges, p.responses)
        else:
            raise ProtocolError(f"server cannot handle {msg.kind}")

    def generate_challenges(self, count: int, n: int) -> np.ndarray:
        return self._rng.integers(0, 2, (count, n), dtype=np.uint8)


def enroll(server: Server, prover: Device, verifiers, n_challenges: int, crp_per_verifier: int,
           net: Network) -> dict[int, list[CrpRecord]]:
    """Tabulate the prover's scrambled responses per verifier and hand out CRP subsets."""
    if crp_per_verifier > n_challenges:
        raise ValueError(f"crp_per_verifier ({crp_per_verifier}) exceeds n_challenges ({n_challenges})")
    if crp_per_verifier < 0 or n_challenges < 0:
        raise ValueError("counts must be non-negative")
    net.attach(server, prover, *verifiers)
    gamma = server.generate_challenges(n_challenges, prover.puf.n_stages)
    out = {}
    for v in verifiers:
        net.send(server.node_id, prover.node_id, EnrollQuery(v.node_id, gamma), secure=True)
        net.run()
        chal, resp = server.tabulated.pop((prover.node_id, v.node_id))
        pick = np.sort(server._rng.choice(n_challenges, size=crp_per_verifier, replace=False))
        recs = tuple(CrpRecord(prover.node_id, v.node_id, chal[i].copy(), resp[i].copy())
                     for i in pick)
        net.send(server.node_id, v.node_id, CrpDelivery(prover.node_id, recs), secure=True)
        net.run()
        out[v.node_id] = list(recs)
    return out


def authenticate(verifier: Device, prover, net: Network) -> AuthResult:
    """One challenge-response round; the prover may be any node answering for the target id."""
    prover_id = prover.node_id
    record = verifier.next_record(prover_id)
    net.attach(verifier, prover)
    nonce = int(verifier._rng.integers(0, 2**63))
    net.send(verifier.node_id, prover_id, AuthRequest(verifier.node_id, record.challenge, nonce))
    net.run()
    reply = verifier.pending.pop(nonce, None)
    if reply is None:
        return AuthResult(Decision.REJECT, "timeout", record=record)
    got = np.asarray(reply.response, dtype=np.uint8).reshape(-1)
    if got.shape != record.expected_response.shape:
        return AuthResult(Decision.REJECT, "malformed", record=record)
    mismatches = int(np.count_nonzero(got != record.expected_response))
    if mismatches <= verifier.tolerated_bit_errors:
        return AuthResult(Decision.ACCEPT, "", mismatches, record)
    return AuthResult(Decision.REJECT, "mismatch", mismatches, record)


def mutual_authenticate(a: Device, b: Device, net: Network, *,
                        a_responder=None, b_responder=None) -> tuple[AuthResult, AuthResult]:
    """a verifies b, then b verifies a; both must accept for the pair to succeed.

    ``a_responder``/``b_responder`` stand in for the node that actually answers
    challenges addressed to a or b (an impersonator, say).
    """
    ra = authenticate(a, b_responder or b, net)
    rb = authenticate(b, a_responder or a, net)
    return ra, rb


def memory_size(ti: float, ar: float, nd: int, n: int, r: int) -> float:
    """Bits of CRP storage per node: TI * AR * (ND - 1) * (N + R)."""
    for name, v in (("ti", ti), ("ar", ar), ("nd", nd), ("n", n), ("r", r)):
        if v <= 0:
            raise ValueError(f"{name} must be positive")
    return ti * ar * (nd - 1) * (n + r)


# -- deployments ----------------------------------------------------------------

@dataclass
class ScenarioConfig:
    node_count: int = 6
    n: int = 64
    s: int = 32
    taps: tuple[int, ...] = DEFAULT_TAPS
    n_challenges: int = 5000
    crp_per_verifier: int = 1000
    r_bits: int = 1
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.taps = tuple(self.taps)
        if self.node_count < 2:
            raise ValueError("need a prover and at least one verifier")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["taps"] = list(self.taps)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown scenario keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


@dataclass
class Deployment:
    config: ScenarioConfig
    network: Network
    server: Server
    prover: Device
    verifiers: list[Device]
    crps: dict[int, list[CrpRecord]]
    taps: dict[int, NetworkTap]

    @property
    def verifier_ids(self) -> list[int]:
        return [v.node_id for v in self.verifiers]

    def run_traffic(self, rounds: int | None = None) -> int:
        """Each verifier authenticates the prover ``rounds`` times (default: every stored CRP)."""
        done = 0
        for v in self.verifiers:
            k = v.remaining(self.prover.node_id) if rounds is None else rounds
            for _ in range(k):
                authenticate(v, self.prover, self.network)
                done += 1
        return done


def node_ids(count: int, width: int, rng: np.random.Generator) -> list[int]:
    """Distinct non-zero ids of ``width`` bits (0 is reserved for the server)."""
    hi = 1 << width
    ids: list[int] = []
    seen = {SERVER_ID}
    while len(ids) < count:
        x = int(rng.integers(1, hi))
        if x not in seen:
            seen.add(x)
            ids.append(x)
    return ids


def build_deployment(cfg: ScenarioConfig, scrambling: bool = True, tap_links: bool = True) -> Deployment:
    """Prover N_t plus ``node_count - 1`` verifiers, enrolled and tapped (one tap per link)."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    rng_ids, rng_puf, rng_node, rng_srv = (np.random.default_rng(s) for s in seeds)
    ids = node_ids(cfg.node_count, cfg.s, rng_ids)
    settings = PipelineSettings(r_bits=cfg.r_bits, taps=cfg.taps, id_width=cfg.s,
                                scrambling=scrambling)
    puf_seeds = rng_puf.integers(0, 2**63, cfg.node_count)
    node_seeds = rng_node.integers(0, 2**63, cfg.node_count)
    devices = [Device(i, new_puf(cfg.n, cfg.noise_sigma, int(ps)), settings, int(ns))
               for i, ps, ns in zip(ids, puf_seeds, node_seeds)]
    prover, verifiers = devices[0], devices[1:]
    net = Network(seed=int(rng_srv.integers(0, 2**63)))
    server = Server(int(rng_srv.integers(0, 2**63)))
    crps = enroll(server, prover, verifiers, cfg.n_challenges, cfg.crp_per_verifier, net)
    taps = {}
    if tap_links:
        for v in verifiers:
            taps[v.node_id] = net.add_tap(NetworkTap((v.node_id, prover.node_id)))
    return Deployment(cfg, net, server, prover, verifiers, crps, taps)
