"""Experiment drivers producing the accuracy curves and tables as CSV.

Every random draw derives from ``ExperimentSpec.seed``, so two runs with the
same spec write byte-identical files.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import adversary, scrambler
from .attack import AttackDataset, MlpConfig, evaluate, train_lr, train_mlp_many
from .lfsr import DEFAULT_TAPS
from .protocol import ScenarioConfig, memory_size
from .puf import new_puf

FIG3_SIZES = (100, 500, 1000, 3000, 5000, 10000, 20000)
TABLE_CRPS = (100, 1000)
TABLE3_L = (10, 20, 30, 40, 50)


class InsufficientTrafficError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    node_count: int = 6
    n: int = 64
    s: int = 32
    taps: tuple[int, ...] = DEFAULT_TAPS
    noise_sigma: float = 0.0
    r_bits: int = 1
    training_sizes: tuple[int, ...] = FIG3_SIZES
    holdout: int = 2000
    table_crps: tuple[int, ...] = TABLE_CRPS
    l_values: tuple[int, ...] = TABLE3_L
    scrambling: tuple[bool, ...] = (True, False)
    fig3_crps: int | None = None   # CRPs per verifier; None sizes the pool to fit
    learner: str = "mlp"
    repetitions: int = 5
    seed: int = 0
    mlp: MlpConfig = field(default_factory=MlpConfig)

    def __post_init__(self):
        self.taps = tuple(self.taps)
        self.training_sizes = tuple(int(x) for x in self.training_sizes)
        self.table_crps = tuple(int(x) for x in self.table_crps)
        self.l_values = tuple(int(x) for x in self.l_values)
        self.scrambling = tuple(bool(x) for x in self.scrambling)
        if isinstance(self.mlp, dict):
            self.mlp = MlpConfig(**self.mlp)
        if self.learner not in ("mlp", "lr"):
            raise ValueError(f"learner must be 'mlp' or 'lr', got {self.learner!r}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be positive")
        if self.node_count < 2:
            raise ValueError("node_count must be at least 2")

    @property
    def n_verifiers(self) -> int:
        return self.node_count - 1

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("taps", "training_sizes", "table_crps", "l_values", "scrambling"):
            d[k] = list(d[k])
        d["mlp"]["hidden"] = list(d["mlp"]["hidden"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ValueError(f"unknown experiment keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def scenario(self, n_challenges: int, crp_per_verifier: int, seed: int) -> ScenarioConfig:
        return ScenarioConfig(self.node_count, self.n, self.s, self.taps, n_challenges,
                              crp_per_verifier, self.r_bits, self.noise_sigma, seed)


def derive_seed(master: int, *path) -> int:
    return int(np.random.SeedSequence([master, *path]).generate_state(1, np.uint64)[0] >> 1)


def _fit_all(spec: ExperimentSpec, jobs: list[tuple[AttackDataset, int]]) -> list:
    """Train one model per (dataset, seed) pair with the spec's learner."""
    if spec.learner == "lr":
        return [train_lr(ds) for ds, _ in jobs]
    return train_mlp_many([ds for ds, _ in jobs], spec.mlp, [s for _, s in jobs])


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x: float) -> str:
    return f"{x:.4f}"


@dataclass
class CellStat:
    accuracies: list[float]
    n_train: list[int]
    n_test: list[int]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))


def _collect(results) -> dict:
    cells: dict = {}
    for key, acc, ntr, nte in results:
        c = cells.setdefault(key, CellStat([], [], []))
        c.accuracies.append(acc)
        c.n_train.append(ntr)
        c.n_test.append(nte)
    return cells


# -- accuracy vs training size ---------------------------------------------------

@dataclass
class Fig3Result:
    spec: ExperimentSpec
    cells: dict  # (size, scrambled, verifier index) -> CellStat

    def csv(self) -> str:
        header = ["training_size", "scrambled", "verifier", "accuracy", "std",
                  "n_seeds", "n_train", "n_test", "accuracies"]
        rows = []
        for (size, scr, v), c in sorted(self.cells.items()):
            rows.append([size, int(scr), v, _fmt(c.mean), _fmt(c.std), len(c.accuracies),
                         c.n_train[0], c.n_test[0], " ".join(_fmt(a) for a in c.accuracies)])
        return _csv_text(header, rows)

    def mean(self, size: int, scrambled: bool) -> float:
        return float(np.mean([c.mean for (s, scr, _), c in self.cells.items()
                              if s == size and scr == scrambled]))


def run_fig3(spec: ExperimentSpec) -> Fig3Result:
    """Attack accuracy vs training size, with and without scrambling, per verifier."""
    if not spec.training_sizes or min(spec.training_sizes) <= 0:
        raise ValueError("training sizes must be positive")
    need = max(spec.training_sizes) + spec.holdout
    if spec.fig3_crps is not None:
        if spec.fig3_crps < need:
            raise InsufficientTrafficError(
                f"training size {max(spec.training_sizes)} plus holdout {spec.holdout} needs "
                f"{need} CRPs per verifier; fig3_crps is {spec.fig3_crps}")
        need = spec.fig3_crps
    results = []
    jobs, keys = [], []
    for rep in range(spec.repetitions):
        cfg = spec.scenario(need, need, derive_seed(spec.seed, 3, rep))
        for scr in spec.scrambling:
            _, logs = adversary.capture_traffic(cfg, scrambling=scr)
            for v, (vid, log) in enumerate(logs.items(), start=1):
                full = AttackDataset.from_log(log)
                test = full.take(slice(len(full) - spec.holdout, None))
                for size in spec.training_sizes:
                    train = full.take(slice(0, size))
                    jobs.append((train, derive_seed(spec.seed, 30, rep, int(scr), v, size)))
                    keys.append(((size, scr, v), train, test.without(train)))
    models = _fit_all(spec, jobs)
    for model, (key, train, test) in zip(models, keys):
        ev = evaluate(model, test)
        results.append((key, ev.accuracy, len(train), ev.total))
    return Fig3Result(spec, _collect(results))


# -- Tables 1-3 --------------------------------------------------------------------

@dataclass
class TableResult:
    which: int
    spec: ExperimentSpec
    rows: list            # row labels in display order
    cells: dict           # (row label, j, crps) -> CellStat

    def matrix_csv(self) -> str:
        """Matrix layout: one row per i (i,k or L), columns j; blank marks excluded cells."""
        row_name = {1: "i", 2: "i,k", 3: "L%"}[self.which]
        js = range(1, self.spec.n_verifiers + 1)
        out = []
        for r in self.rows:
            line = [r]
            for j in js:
                vals = [self.cells.get((r, j, c)) for c in self.spec.table_crps]
                if any(v is None for v in vals):
                    line.append("")
                    continue
                first, *rest = (f"{100 * v.mean:.0f}" for v in vals)
                line.append(first + "".join(f"({x})" for x in rest))
            out.append(line)
        return _csv_text([row_name, *[f"j={j}" for j in js]], out)

    def cells_csv(self) -> str:
        header = ["table", "row", "j", "crps", "accuracy", "std", "n_seeds",
                  "n_train", "n_test", "accuracies"]
        rows = []
        for r in self.rows:
            for j in range(1, self.spec.n_verifiers + 1):
                for crps in self.spec.table_crps:
                    c = self.cells.get((r, j, crps))
                    if c is None:
                        continue
                    rows.append([self.which, r, j, crps, _fmt(c.mean), _fmt(c.std),
                                 len(c.accuracies), min(c.n_train), min(c.n_test),
                                 " ".join(_fmt(a) for a in c.accuracies)])
        return _csv_text(header, rows)


def _table_jobs(which: int, spec: ExperimentSpec, logs: dict, ids: list[int], seed: int):
    """Yield (row label, training log, [(j, holdout log)...])."""
    k = len(ids)
    idx = range(1, k + 1)
    if which == 1:
        for i in idx:
            train = adversary.scenario_I(logs, ids[i - 1])
            yield str(i), train, [(j, logs[ids[j - 1]]) for j in idx if j != i]
    elif which == 2:
        for i, kk in itertools.combinations(idx, 2):
            train = adversary.scenario_II(logs, ids[i - 1], ids[kk - 1])
            yield f"{i},{kk}", train, [(j, logs[ids[j - 1]]) for j in idx if j not in (i, kk)]
    elif which == 3:
        for L in spec.l_values:
            train = adversary.scenario_III(logs, L, derive_seed(seed, 300, L))
            yield str(L), train, [(j, logs[ids[j - 1]]) for j in idx]
    else:
        raise ValueError(f"table must be 1, 2 or 3, got {which}")


def run_table(spec: ExperimentSpec, which: int) -> TableResult:
    """Scenario I/II/III accuracy matrix, each cell the mean over repetitions."""
    if which not in (1, 2, 3):
        raise ValueError(f"table must be 1, 2 or 3, got {which}")
    if which == 2 and spec.n_verifiers < 3:
        raise ValueError("table 2 needs at least three verifiers")
    jobs, keys = [], []
    rows: list[str] = []
    for rep in range(spec.repetitions):
        for crps in spec.table_crps:
            cfg_seed = derive_seed(spec.seed, 1, rep, crps)
            cfg = spec.scenario(spec.n_verifiers * crps, crps, cfg_seed)
            dep, logs = adversary.capture_traffic(cfg)
            ids = dep.verifier_ids
            for row, train_log, tests in _table_jobs(which, spec, logs, ids, cfg_seed):
                if row not in rows:
                    rows.append(row)
                train = AttackDataset.from_log(train_log)
                holdouts = [(j, AttackDataset.from_log(t).without(train)) for j, t in tests]
                jobs.append((train, derive_seed(spec.seed, 10 + which, rep, crps, len(jobs))))
                keys.append((row, crps, train, holdouts))
    models = _fit_all(spec, jobs)
    results = []
    for model, (row, crps, train, holdouts) in zip(models, keys):
        for j, ho in holdouts:
            ev = evaluate(model, ho)
            results.append(((row, j, crps), ev.accuracy, len(train), ev.total))
    return TableResult(which, spec, rows, _collect(results))


# -- overhead ------------------------------------------------------------------------

class _CountingPuf:
    """Proxy counting PUF queries (one per challenge, whatever the vote count)."""

    def __init__(self, puf):
        self._puf = puf
        self.queries = 0

    def __getattr__(self, name):
        return getattr(self._puf, name)

    def _count(self, c):
        c = np.asarray(c)
        self.queries += 1 if c.ndim == 1 else len(c)

    def eval(self, c, rng=None):
        self._count(c)
        return self._puf.eval(c, rng)

    def eval_majority(self, c, votes, rng=None):
        self._count(c)
        return self._puf.eval_majority(c, votes, rng)


def pipeline_counts(n: int = 64, r_bits: int = 1, taps=None, seed: int = 0) -> dict:
    """PUF queries and LFSR clocks spent answering one authentication request."""
    puf = _CountingPuf(new_puf(n, 0.0, seed))
    rng = np.random.default_rng(seed)
    c = rng.integers(0, 2, n, dtype=np.uint8)
    scrambler.respond_bits(puf, c, 1, r_bits, taps=taps)
    k = scrambler.log2_width(n)
    pattern = scrambler.make_pattern(1, n, taps)
    return {"n": n, "k": k, "r_bits": r_bits, "seed_queries": k,
            "puf_queries": puf.queries, "lfsr_clocks": len(pattern) - 1}


def run_overhead_report(spec: ExperimentSpec, ti_ar: int = 100, nd: int = 100,
                        r: int = 32) -> tuple[str, str]:
    """Storage per node and per-authentication operation counts; returns (csv, text)."""
    header = ["ti_x_ar", "nd", "n", "r", "memory_bits", "memory_bytes"]
    configs = [(ti_ar, nd, 64, r), (ti_ar, spec.node_count, spec.n, spec.r_bits)]
    rows = []
    for tiar, nd_, n, rb in configs:
        bits = int(memory_size(tiar, 1, nd_, n, rb))
        rows.append([tiar, nd_, n, rb, bits, bits // 8])
    counts = [pipeline_counts(spec.n, rb, spec.taps) for rb in sorted({1, spec.r_bits, r})]
    text = [f"CRP storage per node (bits = TI*AR*(ND-1)*(N+R)):"]
    for tiar, nd_, n, rb, bits, by in rows:
        text.append(f"  TI*AR={tiar} ND={nd_} N={n} R={rb}: {bits} bits = {by} bytes (~{by / 1000:.0f}K)")
    text.append("Operations per authentication:")
    for c in counts:
        text.append(f"  N={c['n']} R_bits={c['r_bits']}: {c['puf_queries']} PUF queries "
                    f"({c['seed_queries']} seed + {c['puf_queries'] - c['seed_queries']} response), "
                    f"{c['lfsr_clocks']} LFSR clocks")
    csv_text = _csv_text(header, rows) + "\n" + _csv_text(
        ["n", "k", "r_bits", "seed_queries", "puf_queries", "lfsr_clocks"],
        [[c[k] for k in ("n", "k", "r_bits", "seed_queries", "puf_queries", "lfsr_clocks")]
         for c in counts])
    return csv_text, "\n".join(text) + "\n"


def summary_text(spec: ExperimentSpec, title: str, body: str = "") -> str:
    lines = [title, "",
             f"master seed: {spec.seed}",
             f"repetitions: {spec.repetitions} (cells report the mean; std in the cells CSV)",
             f"learner: {spec.learner}",
             f"nodes: {spec.node_count} (1 prover, {spec.n_verifiers} verifiers), N={spec.n}, S={spec.s}, "
             f"taps={list(spec.taps)}, noise_sigma={spec.noise_sigma}"]
    if spec.learner == "mlp":
        m = spec.mlp
        lines.append(f"mlp: hidden={list(m.hidden)} lr={m.learning_rate} momentum={m.momentum} "
                     f"epochs={m.epochs} batch={m.batch_size} init=U(+-1/sqrt(fan_in)) "
                     f"inputs=parity features")
    if body:
        lines += ["", body.rstrip()]
    return "\n".join(lines) + "\n"
