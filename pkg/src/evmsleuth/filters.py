"""Candidate transaction selection and the CSV feed format.

A filter turns "everything that happened in blocks lo..hi" into the short
list of transactions worth analyzing: calls into the watched contract whose
selector matches one of the watched functions. With internal discovery on,
traces of the remaining transactions are scanned for call records that hit
the contract indirectly (relays, wrappers), and each such hit is emitted as
an internal row attributed to its enclosing transaction.

Feeds round-trip through CSV so a candidate list can be exported, edited,
or produced by some other tool and re-ingested. Column order is fixed:

  block_number,tx_hash,from,to,value,input_selector,internal,parent_tx_hash

block_number and value are decimal; hashes, addresses, and the selector are
0x-prefixed hex; internal is true/false; parent_tx_hash is required on
internal rows and must be empty on top-level rows.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from .errors import FeedError, UsageError
from .hashing import function_selector
from .model import address_hex, hash_hex
from .traces import reconstruct_document

FEED_COLUMNS = (
    "block_number",
    "tx_hash",
    "from",
    "to",
    "value",
    "input_selector",
    "internal",
    "parent_tx_hash",
)


@dataclass(frozen=True)
class FilterQuery:
    contract: int
    selectors: tuple[str, ...]  # human-readable signatures
    include_internal: bool
    block_range: tuple[int, int]

    def __post_init__(self):
        lo, hi = self.block_range
        if lo < 0 or hi < lo:
            raise UsageError(f"bad block range {lo}..{hi}")
        if not self.selectors:
            raise UsageError("filter needs at least one function signature")

    def selector_bytes(self) -> frozenset[bytes]:
        return frozenset(function_selector(sig) for sig in self.selectors)


@dataclass(frozen=True)
class TxRef:
    """One candidate row. Internal rows carry the enclosing transaction's
    hash (that is the object a tracer can be pointed at) plus an explicit
    parent attribution."""

    block_number: int
    tx_hash: bytes
    sender: int
    to: int
    value: int
    selector: bytes | None
    internal: bool
    parent: bytes | None


def tx_list(explorer, query: FilterQuery) -> list[TxRef]:
    """Scan the block range and return candidates in chain order.

    Top-level rows come straight from block bodies. Internal rows require
    tracing every transaction in range and scanning recorded call sites,
    which is exactly as expensive as it sounds; callers who care should put
    a cache in front of the explorer.
    """
    selectors = query.selector_bytes()
    contract_hex = address_hex(query.contract)
    lo, hi = query.block_range
    rows: list[TxRef] = []
    seen: set[TxRef] = set()

    def emit(row: TxRef):
        if row not in seen:
            seen.add(row)
            rows.append(row)

    for number in range(lo, hi + 1):
        details = explorer.collect_block_details(number)
        for tx_doc in details["block"]["transactions"]:
            tx_hash = bytes.fromhex(tx_doc["hash"][2:])
            data = bytes.fromhex(tx_doc["input"][2:])
            selector = data[:4] if len(data) >= 4 else None
            if tx_doc["to"] == contract_hex and selector in selectors:
                emit(
                    TxRef(
                        block_number=number,
                        tx_hash=tx_hash,
                        sender=int(tx_doc["from"], 16),
                        to=query.contract,
                        value=int(tx_doc["value"], 16),
                        selector=selector,
                        internal=False,
                        parent=None,
                    )
                )
            if not query.include_internal:
                continue
            trace = explorer.tx_trace(tx_hash)
            rec = reconstruct_document(trace, int(tx_doc["to"], 16))
            for step in rec.steps:
                site = step.call
                if site is None or site.input is None:
                    continue
                if site.to != query.contract or site.input[:4] not in selectors:
                    continue
                emit(
                    TxRef(
                        block_number=number,
                        tx_hash=tx_hash,
                        sender=step.code_address,
                        to=query.contract,
                        value=site.value or 0,
                        selector=site.input[:4],
                        internal=True,
                        parent=tx_hash,
                    )
                )
    return rows


# -- CSV feed ------------------------------------------------------------------


def write_csv_feed(rows: list[TxRef]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(FEED_COLUMNS)
    for row in rows:
        writer.writerow(
            [
                row.block_number,
                hash_hex(row.tx_hash),
                address_hex(row.sender),
                address_hex(row.to),
                row.value,
                "" if row.selector is None else "0x" + row.selector.hex(),
                "true" if row.internal else "false",
                "" if row.parent is None else hash_hex(row.parent),
            ]
        )
    return out.getvalue()


def _feed_hash(text: str, what: str, line: int) -> bytes:
    if not (text.startswith("0x") and len(text) == 66):
        raise FeedError(f"{what} must be 0x + 64 hex chars, got {text!r}", line)
    try:
        return bytes.fromhex(text[2:])
    except ValueError:
        raise FeedError(f"{what} is not hex: {text!r}", line) from None


def _feed_address(text: str, what: str, line: int) -> int:
    if not (text.startswith("0x") and len(text) == 42):
        raise FeedError(f"{what} must be 0x + 40 hex chars, got {text!r}", line)
    try:
        return int(text[2:], 16)
    except ValueError:
        raise FeedError(f"{what} is not hex: {text!r}", line) from None


def _feed_int(text: str, what: str, line: int) -> int:
    if not text.isdigit():
        raise FeedError(f"{what} must be a decimal integer, got {text!r}", line)
    return int(text)


def parse_csv_feed(text: str) -> list[TxRef]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise FeedError("feed is empty", 1) from None
    if tuple(header) != FEED_COLUMNS:
        raise FeedError(
            f"bad header: expected {','.join(FEED_COLUMNS)}, got {','.join(header)}", 1
        )
    rows = []
    for line, record in enumerate(reader, start=2):
        if not record:
            continue
        if len(record) != len(FEED_COLUMNS):
            raise FeedError(
                f"expected {len(FEED_COLUMNS)} fields, got {len(record)}", line
            )
        number, txh, sender, to, value, selector, internal, parent = record
        if internal not in ("true", "false"):
            raise FeedError(f"internal must be true or false, got {internal!r}", line)
        is_internal = internal == "true"
        if is_internal and not parent:
            raise FeedError("internal row without parent_tx_hash", line)
        if not is_internal and parent:
            raise FeedError("top-level row with parent_tx_hash set", line)
        if selector and not (selector.startswith("0x") and len(selector) == 10):
            raise FeedError(
                f"input_selector must be 0x + 8 hex chars, got {selector!r}", line
            )
        rows.append(
            TxRef(
                block_number=_feed_int(number, "block_number", line),
                tx_hash=_feed_hash(txh, "tx_hash", line),
                sender=_feed_address(sender, "from", line),
                to=_feed_address(to, "to", line),
                value=_feed_int(value, "value", line),
                selector=bytes.fromhex(selector[2:]) if selector else None,
                internal=is_internal,
                parent=_feed_hash(parent, "parent_tx_hash", line) if parent else None,
            )
        )
    return rows
