"""Data access: local archive directories, JSON-RPC nodes, and a cache.

All backends answer the same five questions:

  collect_block_details(n)   block envelope + parent envelope, no receipts
  tx_trace(hash, tracer)     full or pc-filtered trace document
  get_storage(addr, key, n)  storage word as of block n's post-state
  get_balance(addr, n)       balance as of block n's post-state
  height()                   newest block number

Post-state semantics throughout: the pre-state of block n is a query
against n - 1.

LocalExplorer reads a fixture/archive directory. chain.json is parsed once
at construction (it is the index); state snapshots are re-read from disk on
every storage/balance query. That second choice is deliberate: it models an
archive node that charges per point query, it is what the cache exists to
absorb, and it is what makes analysis cost grow with state size when no
cache is in front.

CachedExplorer is a read-through wrapper over any backend. Entries are
persisted one file per query with a content digest; corrupted entries are
discarded and refetched. Per-key fetch counters make cache behavior
checkable rather than assumed.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import ArchiveGapError, ProtocolError, UsageError
from .hashing import digest
from .model import address_hex, hash_hex, storage_hex, word_hex

_CALL_OPS = ("CALL", "DELEGATECALL", "STATICCALL")


def canonical_tracer(tracer_spec: dict | None) -> dict | None:
    """Normalized tracer config: sorted pcSet, explicit boundary flag."""
    if tracer_spec is None:
        return None
    if not isinstance(tracer_spec, dict):
        raise UsageError("tracer spec must be an object")
    pc_set = tracer_spec.get("pcSet", [])
    if not isinstance(pc_set, (list, tuple, set, frozenset)) or not all(
        isinstance(pc, int) and pc >= 0 for pc in pc_set
    ):
        raise UsageError("tracer pcSet must be a list of non-negative ints")
    return {
        "pcSet": sorted(set(pc_set)),
        "includeCallBoundaries": bool(tracer_spec.get("includeCallBoundaries", True)),
    }


def apply_tracer(doc: dict, tracer_spec: dict) -> dict:
    """Filter a full trace the way the declarative tracer would have."""
    spec = canonical_tracer(tracer_spec)
    keep_pcs = set(spec["pcSet"])
    boundaries = spec["includeCallBoundaries"]
    logs = [
        step
        for step in doc["structLogs"]
        if step["pc"] in keep_pcs or (boundaries and step["op"] in _CALL_OPS)
    ]
    out = dict(doc)
    out["structLogs"] = logs
    return out


class ExplorerView:
    """balance_of/storage_at adapter: one explorer pinned to one block."""

    def __init__(self, explorer, number: int):
        self.explorer = explorer
        self.number = number

    def balance_of(self, addr: int) -> int:
        return self.explorer.get_balance(addr, self.number)

    def storage_at(self, addr: int, key: int) -> int:
        return self.explorer.get_storage(addr, key, self.number)


class LocalExplorer:
    def __init__(self, directory: str | Path):
        self.base = Path(directory)
        chain_path = self.base / "chain.json"
        if not chain_path.exists():
            raise ArchiveGapError(f"no chain.json under {self.base}")
        try:
            blocks = json.loads(chain_path.read_text())["blocks"]
        except (json.JSONDecodeError, KeyError, TypeError) as err:
            raise ProtocolError(f"chain.json unreadable: {err!r}") from None
        self._by_number: dict[int, dict] = {}
        for doc in blocks:
            self._by_number[doc["number"]] = doc
        if not self._by_number:
            raise ArchiveGapError("chain.json lists no blocks")
        self._tip = max(self._by_number)

    def height(self) -> int:
        return self._tip

    def _block_doc(self, number: int) -> dict:
        doc = self._by_number.get(number)
        if doc is None:
            raise ArchiveGapError(f"no block {number} in archive (tip {self._tip})")
        return doc

    @staticmethod
    def _envelope(doc: dict) -> dict:
        return {
            "number": doc["number"],
            "hash": doc["hash"],
            "parentHash": doc["parentHash"],
            "stateRoot": doc["stateRoot"],
            "transactions": doc["transactions"],
        }

    def collect_block_details(self, number: int) -> dict:
        doc = self._block_doc(number)
        parent = self._by_number.get(number - 1)
        return {
            "block": self._envelope(doc),
            "parent": None if parent is None else self._envelope(parent),
        }

    def tx_trace(self, tx_hash: bytes, tracer_spec: dict | None = None) -> dict:
        path = self.base / "traces" / f"{tx_hash.hex()}.json"
        if not path.exists():
            raise ArchiveGapError(f"no trace for {hash_hex(tx_hash)}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise ProtocolError(f"trace {hash_hex(tx_hash)} unreadable: {err}") from None
        if tracer_spec is not None:
            doc = apply_tracer(doc, tracer_spec)
        return doc

    def _state_doc(self, number: int) -> dict:
        root = self._block_doc(number)["stateRoot"]
        path = self.base / "states" / f"{root[2:]}.json"
        if not path.exists():
            raise ArchiveGapError(f"no state snapshot for block {number} (root {root})")
        try:
            return json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise ProtocolError(f"state {root} unreadable: {err}") from None

    def get_storage(self, addr: int, key: int, number: int) -> int:
        accounts = self._state_doc(number)["accounts"]
        fields = accounts.get(address_hex(addr))
        if fields is None:
            return 0
        raw = fields["storage"].get(storage_hex(key))
        return 0 if raw is None else int(raw, 16)

    def get_balance(self, addr: int, number: int) -> int:
        accounts = self._state_doc(number)["accounts"]
        fields = accounts.get(address_hex(addr))
        return 0 if fields is None else int(fields["balance"], 16)


# -- JSON-RPC backend ----------------------------------------------------------


def _as_int(value, what: str) -> int:
    if isinstance(value, int) and not isinstance(value, bool):
        return value
    if isinstance(value, str):
        try:
            return int(value, 16)
        except ValueError:
            pass
    raise ProtocolError(f"{what} is not a quantity: {value!r}")


class RpcExplorer:
    """Archive access over JSON-RPC 2.0.

    Method surface: eth_blockNumber, eth_getBlockByNumber,
    debug_traceTransaction, eth_getStorageAt, eth_getBalance. Transient
    transport failures retry a bounded number of times; an unreachable
    endpoint is an archive gap (the data exists, we cannot reach it), a
    malformed reply is a protocol error.
    """

    def __init__(self, url: str, retries: int = 3, timeout: float = 10.0):
        import requests

        self.url = url
        self.retries = max(1, retries)
        self.timeout = timeout
        self._session = requests.Session()
        self._id = 0

    def _rpc(self, method: str, params: list):
        import requests

        self._id += 1
        payload = {"jsonrpc": "2.0", "id": self._id, "method": method, "params": params}
        last = None
        for _ in range(self.retries):
            try:
                reply = self._session.post(self.url, json=payload, timeout=self.timeout)
                reply.raise_for_status()
                body = reply.json()
                break
            except (requests.ConnectionError, requests.Timeout) as err:
                last = err
                continue
            except (requests.HTTPError, ValueError) as err:
                raise ProtocolError(f"{method}: bad rpc reply: {err}") from None
        else:
            raise ArchiveGapError(f"{method}: endpoint unreachable after {self.retries} tries: {last}")
        if not isinstance(body, dict) or ("result" not in body and "error" not in body):
            raise ProtocolError(f"{method}: reply is not a jsonrpc response")
        if body.get("error"):
            raise ProtocolError(f"{method}: rpc error {body['error']!r}")
        return body["result"]

    def height(self) -> int:
        return _as_int(self._rpc("eth_blockNumber", []), "blockNumber")

    def _block(self, number: int) -> dict | None:
        result = self._rpc("eth_getBlockByNumber", [hex(number), True])
        if result is None:
            return None
        if not isinstance(result, dict):
            raise ProtocolError("block reply is not an object")
        return {
            "number": _as_int(result.get("number"), "block number"),
            "hash": result["hash"],
            "parentHash": result["parentHash"],
            "stateRoot": result["stateRoot"],
            "transactions": result.get("transactions", []),
        }

    def collect_block_details(self, number: int) -> dict:
        block = self._block(number)
        if block is None:
            raise ArchiveGapError(f"no block {number} at {self.url}")
        parent = self._block(number - 1) if number > 0 else None
        return {"block": block, "parent": parent}

    def tx_trace(self, tx_hash: bytes, tracer_spec: dict | None = None) -> dict:
        params: list = [hash_hex(tx_hash)]
        spec = canonical_tracer(tracer_spec)
        if spec is not None:
            params.append({"tracer": "pcFilter", "tracerConfig": spec})
        result = self._rpc("debug_traceTransaction", params)
        if result is None:
            raise ArchiveGapError(f"no trace for {hash_hex(tx_hash)} at {self.url}")
        if not isinstance(result, dict):
            raise ProtocolError("trace reply is not an object")
        return result

    def get_storage(self, addr: int, key: int, number: int) -> int:
        result = self._rpc(
            "eth_getStorageAt", [address_hex(addr), word_hex(key), hex(number)]
        )
        return _as_int(result, "storage value")

    def get_balance(self, addr: int, number: int) -> int:
        result = self._rpc("eth_getBalance", [address_hex(addr), hex(number)])
        return _as_int(result, "balance")


# -- read-through cache --------------------------------------------------------


class CachedExplorer:
    """Persistent read-through cache over any explorer.

    One JSON file per distinct query, digest-stamped. Replayed answers skip
    the inner backend entirely (and any re-validation the backend would do);
    a digest mismatch means the file is damaged, so it is dropped and the
    query goes inner again. height() is never cached: it is the one answer
    that legitimately changes between runs.

    fetches maps each cache key to the number of inner calls made for it;
    hits counts replies served from disk.
    """

    def __init__(self, inner, directory: str | Path):
        self.inner = inner
        self.base = Path(directory)
        self.base.mkdir(parents=True, exist_ok=True)
        self.fetches: dict[str, int] = {}
        self.hits = 0
        self.dropped = 0

    def height(self) -> int:
        return self.inner.height()

    def _lookup(self, kind: str, key_parts: list, fetch):
        key = json.dumps([kind, *key_parts], separators=(",", ":"), sort_keys=True)
        path = self.base / f"{digest(key.encode()).hex()}.json"
        if path.exists():
            try:
                entry = json.loads(path.read_text())
                payload = entry["payload"]
                canonical = json.dumps(payload, separators=(",", ":"), sort_keys=True)
                if (
                    entry["key"] == key
                    and entry["sha256"] == digest(canonical.encode()).hex()
                ):
                    self.hits += 1
                    return payload
                self.dropped += 1
            except (json.JSONDecodeError, KeyError, TypeError):
                self.dropped += 1
            path.unlink(missing_ok=True)
        payload = fetch()
        self.fetches[key] = self.fetches.get(key, 0) + 1
        canonical = json.dumps(payload, separators=(",", ":"), sort_keys=True)
        entry = {"key": key, "sha256": digest(canonical.encode()).hex(), "payload": payload}
        path.write_text(json.dumps(entry, separators=(",", ":"), sort_keys=True))
        return payload

    def collect_block_details(self, number: int) -> dict:
        return self._lookup(
            "block", [number], lambda: self.inner.collect_block_details(number)
        )

    def tx_trace(self, tx_hash: bytes, tracer_spec: dict | None = None) -> dict:
        spec = canonical_tracer(tracer_spec)
        return self._lookup(
            "trace",
            [hash_hex(tx_hash), spec],
            lambda: self.inner.tx_trace(tx_hash, tracer_spec),
        )

    def get_storage(self, addr: int, key: int, number: int) -> int:
        return self._lookup(
            "storage",
            [address_hex(addr), word_hex(key), number],
            lambda: self.inner.get_storage(addr, key, number),
        )

    def get_balance(self, addr: int, number: int) -> int:
        return self._lookup(
            "balance",
            [address_hex(addr), number],
            lambda: self.inner.get_balance(addr, number),
        )
