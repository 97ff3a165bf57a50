"""Investigation driver: filter, fetch, analyze, report.

An investigation runs one detector level over one contract's vulnerability
description:

  evm    fetch traces for every candidate transaction, rebuild call frames,
         and run the instruction-level rules. Slow, exact, catches exploits
         that never perturb the block edge.

  block  never fetches a trace and never steps the interpreter. For each
         block holding candidates it compares the pre and post state through
         point queries and applies the block-edge rules. Fast, and blind to
         anything that cancels out within the block.

Three access modes, identical results, different costs: "local" reads the
backend directly, "cached" puts a persistent read-through cache in front,
"customTracer" (evm level only) asks the backend for pc-filtered traces
instead of complete ones.

Per-transaction and per-block failures degrade to skip records in the
report; only configuration problems and an unreachable archive abort a run.
The report carries wall-clock per phase and the number of interpreter steps
executed, so "block level does no replay" is a measurable claim rather than
a promise.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

from . import interpreter
from .chain import tx_from_document
from .errors import ArchiveGapError, ProtocolError, SleuthError, UsageError
from .explorer import CachedExplorer, ExplorerView, LocalExplorer
from .filters import FilterQuery, TxRef, tx_list
from .model import address_hex
from .rules_block import evaluate_block
from .rules_evm import TxContext, VulnSpec, evaluate_trace
from .traces import reconstruct_document

LEVELS = ("evm", "block")
MODES = ("local", "cached", "customTracer")


@dataclass
class InvestigationConfig:
    tag: str
    spec: VulnSpec
    explorer: object
    level: str = "evm"
    mode: str = "local"
    shared_params: dict = field(default_factory=dict)
    feed: list[TxRef] | None = None
    query: FilterQuery | None = None

    def __post_init__(self):
        if self.level not in LEVELS:
            raise UsageError(f"unknown detector level {self.level!r} (use evm or block)")
        if self.mode not in MODES:
            raise UsageError(f"unknown mode {self.mode!r} (use local, cached, or customTracer)")
        if self.mode == "customTracer" and self.level != "evm":
            raise UsageError("customTracer mode only applies to the evm level")
        if self.mode == "cached" and not isinstance(self.explorer, CachedExplorer):
            raise UsageError("cached mode needs a cache directory (-c)")


@dataclass
class Report:
    tag: str
    level: str
    mode: str
    scenario: str
    contract: int
    filter_echo: dict
    shared_params: dict
    candidates: int = 0
    distinct_txs: int = 0
    blocks_evaluated: int = 0
    detections: list[dict] = field(default_factory=list)
    skips: list[str] = field(default_factory=list)
    steps_interpreted: int = 0
    timings: dict[str, float] = field(default_factory=dict)
    explorer_stats: dict | None = None

    def to_document(self) -> dict:
        doc = {
            "config": {
                "tag": self.tag,
                "level": self.level,
                "mode": self.mode,
                "scenario": self.scenario,
                "contract": address_hex(self.contract),
                "filter": self.filter_echo,
                "sharedParams": self.shared_params,
            },
            "detections": self.detections,
            "skips": self.skips,
            "totals": {
                "candidates": self.candidates,
                "distinctTxs": self.distinct_txs,
                "blocksEvaluated": self.blocks_evaluated,
                "detections": len(self.detections),
                "skips": len(self.skips),
            },
            "stepsInterpreted": self.steps_interpreted,
            "timings": {k: round(v, 6) for k, v in self.timings.items()},
        }
        if self.explorer_stats is not None:
            doc["explorerStats"] = self.explorer_stats
        return doc


def default_query(spec: VulnSpec) -> FilterQuery:
    return FilterQuery(
        contract=spec.contract,
        selectors=spec.selectors,
        include_internal=spec.include_internal,
        block_range=tuple(spec.block_range),
    )


def _tracer_spec(config: InvestigationConfig) -> dict | None:
    if config.mode != "customTracer":
        return None
    pcs = sorted({pc for loc in config.spec.locations for pc in loc.pc_offsets})
    return {"pcSet": pcs, "includeCallBoundaries": True}


def run_investigation(config: InvestigationConfig) -> Report:
    spec = config.spec
    query = config.query or default_query(spec)
    timings = {"filter": 0.0, "fetch": 0.0, "analyze": 0.0}
    steps_before = interpreter.STEP_COUNTER.value
    t_start = time.perf_counter()

    t0 = time.perf_counter()
    if config.feed is not None:
        rows = list(config.feed)
    else:
        rows = tx_list(config.explorer, query)
    timings["filter"] = time.perf_counter() - t0

    report = Report(
        tag=config.tag,
        level=config.level,
        mode=config.mode,
        scenario=spec.scenario,
        contract=spec.contract,
        filter_echo={
            "selectors": list(query.selectors),
            "includeInternal": query.include_internal,
            "blockRange": list(query.block_range),
        },
        shared_params=dict(config.shared_params),
        candidates=len(rows),
    )

    if config.level == "evm":
        _run_evm_level(config, rows, report, timings)
    else:
        _run_block_level(config, rows, report, timings)

    timings["total"] = time.perf_counter() - t_start
    report.timings = timings
    report.steps_interpreted = interpreter.STEP_COUNTER.value - steps_before
    if isinstance(config.explorer, CachedExplorer):
        ex = config.explorer
        report.explorer_stats = {
            "distinctQueries": len(ex.fetches),
            "innerCalls": sum(ex.fetches.values()),
            "hits": ex.hits,
            "dropped": ex.dropped,
        }
    return report


def _run_evm_level(config, rows, report, timings):
    spec = config.spec
    explorer = config.explorer
    tracer = _tracer_spec(config)
    envelopes: dict[int, dict] = {}
    order: dict[bytes, int] = {}
    for row in rows:
        order.setdefault(row.tx_hash, row.block_number)
    report.distinct_txs = len(order)
    report.blocks_evaluated = len(set(order.values()))

    for tx_hash, number in order.items():
        label = f"tx 0x{tx_hash.hex()}"
        t0 = time.perf_counter()
        try:
            if number not in envelopes:
                envelopes[number] = explorer.collect_block_details(number)
            tx_doc = next(
                (t for t in envelopes[number]["block"]["transactions"]
                 if t["hash"] == "0x" + tx_hash.hex()),
                None,
            )
            if tx_doc is None:
                report.skips.append(f"{label}: not in block {number}, skipped")
                continue
            trace = explorer.tx_trace(tx_hash, tracer)
        except (ArchiveGapError, ProtocolError) as err:
            report.skips.append(f"{label}: fetch failed, skipped ({err})")
            continue
        finally:
            timings["fetch"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        try:
            rec = reconstruct_document(
                trace, int(tx_doc["to"], 16), relaxed=tracer is not None
            )
            ctx = TxContext(tx_hash, number, rec.failed)
            found, notes = evaluate_trace(rec, spec, ctx)
        except SleuthError as err:
            report.skips.append(f"{label}: analysis failed, skipped ({err})")
            continue
        finally:
            timings["analyze"] += time.perf_counter() - t0
        report.detections.extend(d.to_document() for d in found)
        report.skips.extend(notes)


def _run_block_level(config, rows, report, timings):
    spec = config.spec
    explorer = config.explorer
    selectors = default_query(spec).selector_bytes()

    by_block: dict[int, list[TxRef]] = {}
    for row in rows:
        if row.internal or row.to != spec.contract or row.selector not in selectors:
            continue
        by_block.setdefault(row.block_number, []).append(row)
    report.distinct_txs = sum(len(v) for v in by_block.values())
    report.blocks_evaluated = len(by_block)

    for number in sorted(by_block):
        t0 = time.perf_counter()
        try:
            details = explorer.collect_block_details(number)
        except (ArchiveGapError, ProtocolError) as err:
            timings["fetch"] += time.perf_counter() - t0
            report.skips.append(f"block {number}: fetch failed, skipped ({err})")
            continue
        wanted = {row.tx_hash for row in by_block[number]}
        candidates = tuple(
            tx_from_document(t)
            for t in details["block"]["transactions"]
            if bytes.fromhex(t["hash"][2:]) in wanted
        )
        timings["fetch"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        try:
            pre = ExplorerView(explorer, number - 1)
            post = ExplorerView(explorer, number)
            detection, notes = evaluate_block(pre, post, number, candidates, spec)
        except (ArchiveGapError, ProtocolError) as err:
            report.skips.append(f"block {number}: state lookup failed, skipped ({err})")
            continue
        finally:
            timings["analyze"] += time.perf_counter() - t0
        if detection is not None:
            report.detections.append(detection.to_document())
        report.skips.extend(notes)


# -- performance harness ---------------------------------------------------------


def bench_investigation(config: InvestigationConfig, repeats: int = 3) -> dict:
    """Best-of-N wall clock for one investigation. Repeats exist because
    block-level runs finish fast enough for scheduler noise to matter."""
    if repeats < 1:
        raise UsageError("repeats must be at least 1")
    best_report = None
    for _ in range(repeats):
        report = run_investigation(config)
        if best_report is None or report.timings["analyze"] < best_report.timings["analyze"]:
            best_report = report
    return {
        "tag": config.tag,
        "level": config.level,
        "mode": config.mode,
        "repeats": repeats,
        "analyze": round(best_report.timings["analyze"], 6),
        "fetch": round(best_report.timings["fetch"], 6),
        "total": round(best_report.timings["total"], 6),
        "detections": len(best_report.detections),
        "stepsInterpreted": best_report.steps_interpreted,
    }


def scaled_fixture_dir(root: str | Path, axis: str, magnitude: int) -> Path:
    return Path(root) / f"{axis}-{magnitude}"


def bench(
    root: str | Path,
    axis: str,
    magnitudes: list[int],
    mode: str = "local",
    level: str = "evm",
    repeats: int = 3,
) -> list[dict]:
    """Measure analyze time per magnitude over pre-built scaled fixtures.

    Fixture generation is not part of the measurement; with mode "cached"
    one untimed warm-up run populates the cache first, so the numbers show
    steady-state cost rather than first-touch I/O.
    """
    from .fixtures import read_vuln_doc

    table = []
    for magnitude in magnitudes:
        directory = scaled_fixture_dir(root, axis, magnitude)
        if not directory.is_dir():
            raise UsageError(
                f"no scaled fixture at {directory}; run fixtures scale first"
            )
        spec = VulnSpec.from_document(read_vuln_doc(directory))
        explorer = LocalExplorer(directory)
        if mode == "cached":
            explorer = CachedExplorer(explorer, directory / f".cache-{level}")
        config = InvestigationConfig(
            tag=f"{axis}-{magnitude}",
            spec=spec,
            explorer=explorer,
            level=level,
            mode=mode,
        )
        if mode == "cached":
            run_investigation(config)  # warm-up, untimed
        row = bench_investigation(config, repeats=repeats)
        row["axis"] = axis
        row["magnitude"] = magnitude
        table.append(row)
    return table
