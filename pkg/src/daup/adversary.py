"""Attacker corpora for the collusion scenarios.

The adversary only ever sees what crosses a link or sits in a verifier's
memory: raw challenges, response bits and the verifier id. Scrambled
challenges, patterns, seeds and PUF weights never appear in a log.
"""
from __future__ import annotations

from collections.abc import Mapping

import numpy as np

from .protocol import CaptureEntry, CaptureLog, Deployment, Device, ScenarioConfig, build_deployment


def capture_traffic(cfg: ScenarioConfig, scrambling: bool = True) -> tuple[Deployment, dict[int, CaptureLog]]:
    """Enroll, tap every verifier-prover link, authenticate every stored CRP once."""
    dep = build_deployment(cfg, scrambling=scrambling)
    dep.run_traffic()
    logs = {}
    for vid, tap in dep.taps.items():
        log = tap.log
        log.scenario = "traffic" if scrambling else "baseline"
        logs[vid] = log
    return dep, logs


def baseline_capture(cfg: ScenarioConfig) -> dict[int, CaptureLog]:
    """Same deployment and challenges, but the prover answers with its raw PUF."""
    return capture_traffic(cfg, scrambling=False)[1]


def hacked_node_capture(verifier: Device, prover_id: int) -> CaptureLog:
    """Memory dump of a compromised verifier: its stored CRPs for the prover."""
    entries = [CaptureEntry(r.challenge.copy(), r.expected_response.copy(), r.verifier_id, r.prover_id)
               for r in verifier.crps.get(prover_id, [])]
    return CaptureLog(entries, source="hacked_node")


def _copy(log: CaptureLog, limit: int | None) -> list[CaptureEntry]:
    entries = log.entries if limit is None else log.entries[:limit]
    if limit is not None and limit > len(log.entries):
        raise ValueError(f"asked for {limit} entries but the link carried {len(log.entries)}")
    return list(entries)


def scenario_I(logs: Mapping[int, CaptureLog], i: int, limit: int | None = None) -> CaptureLog:
    """Traffic of the single tapped link between the prover and verifier ``i``."""
    src = logs[i]
    return CaptureLog(_copy(src, limit), src.source, "I")


def scenario_II(logs: Mapping[int, CaptureLog], i: int, k: int, limit: int | None = None) -> CaptureLog:
    """Union of two links' traffic; ``limit`` caps each link."""
    if i == k:
        raise ValueError("scenario II needs two distinct links")
    entries = _copy(logs[i], limit) + _copy(logs[k], limit)
    return CaptureLog(entries, logs[i].source, "II")


def scenario_III(logs: Mapping[int, CaptureLog], l_percent: float, seed: int) -> CaptureLog:
    """A uniform ``l_percent`` sample of every link, drawn per link without replacement."""
    if not 0 <= l_percent <= 100:
        raise ValueError("l_percent must lie in [0, 100]")
    rng = np.random.default_rng(seed)
    entries: list[CaptureEntry] = []
    source = "eavesdrop"
    for log in logs.values():
        source = log.source
        take = int(round(len(log) * l_percent / 100))
        pick = np.sort(rng.choice(len(log), size=take, replace=False))
        entries.extend(log.entries[p] for p in pick)
    return CaptureLog(entries, source, f"III-L{l_percent:g}")
