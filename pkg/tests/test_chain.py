"""Chain assembly, archives, and their on-disk round trip."""

import json

import pytest

from evmsleuth.chain import (
    Archive,
    LabelStore,
    make_genesis,
    make_transaction,
    mine_and_record,
    mine_block,
    read_archive,
    replay_block,
    state_from_document,
    state_to_document,
    tx_from_document,
    tx_to_document,
    write_archive,
)
from evmsleuth.errors import ArchiveGapError, UsageError
from evmsleuth.interpreter import MNEMONICS
from evmsleuth.model import GlobalState, state_root

SENDER = 0xAA01
OTHER = 0xAA02
CONTRACT = 0xCC01

# PUSH1 v PUSH1 k SSTORE STOP: one storage write per call
STORE_CODE = bytes(
    [MNEMONICS["PUSH1"], 7, MNEMONICS["PUSH1"], 1, MNEMONICS["SSTORE"], MNEMONICS["STOP"]]
)


def seeded_state() -> GlobalState:
    state = GlobalState()
    state.ensure_account(SENDER).balance = 10_000
    state.ensure_account(OTHER).balance = 500
    state.install_code(CONTRACT, STORE_CODE)
    return state


def fresh_archive() -> Archive:
    chain, world = make_genesis(seeded_state())
    return Archive(chain, world, {}, LabelStore())


# -- transactions --


def test_make_transaction_hash_is_content_derived():
    a = make_transaction(SENDER, OTHER, 5, nonce=0)
    b = make_transaction(SENDER, OTHER, 5, nonce=0)
    c = make_transaction(SENDER, OTHER, 5, nonce=1)
    assert a.hash == b.hash
    assert a.hash != c.hash


def test_make_transaction_rejects_short_calldata():
    with pytest.raises(UsageError):
        make_transaction(SENDER, OTHER, 0, data=b"\x01\x02")


def test_selector_property():
    tx = make_transaction(SENDER, CONTRACT, 0, data=b"\x11\x22\x33\x44" + b"\x00" * 28)
    assert tx.selector == b"\x11\x22\x33\x44"
    assert make_transaction(SENDER, OTHER, 1).selector is None


# -- mining --


def test_mine_block_advances_tip_and_stores_snapshot():
    arch = fresh_archive()
    tx = make_transaction(SENDER, OTHER, 100, nonce=0)
    mined = mine_and_record(arch, [tx])
    assert arch.chain.height == 1
    assert arch.chain.tip.hash == mined.block.hash
    post = arch.world.get(mined.block.state_root)
    assert post.balance_of(OTHER) == 600
    assert tx.hash in arch.traces


def test_mine_block_failed_tx_leaves_state_unchanged():
    arch = fresh_archive()
    pre_root = arch.chain.tip.state_root
    overdraft = make_transaction(SENDER, OTHER, 10_000_000, nonce=0)
    mined = mine_block(arch.chain, arch.world, [overdraft])
    assert mined.outcomes[0].status == "exception"
    # block exists and carries the tx, but its post-state equals the pre-state
    assert mined.block.state_root == pre_root
    assert mined.block.txs == (overdraft,)


def test_mine_block_selection_subset_and_order():
    arch = fresh_archive()
    t1 = make_transaction(SENDER, OTHER, 1, nonce=0)
    t2 = make_transaction(SENDER, OTHER, 2, nonce=1)
    mined = mine_block(arch.chain, arch.world, [t1, t2], selection=[t2.hash])
    assert mined.block.txs == (t2,)
    with pytest.raises(UsageError):
        mine_block(arch.chain, arch.world, [t1], selection=[t2.hash])


def test_block_lookup_gap():
    arch = fresh_archive()
    with pytest.raises(ArchiveGapError):
        arch.chain.block(3)


# -- replay --


def test_replay_block_reproduces_stored_roots():
    arch = fresh_archive()
    mine_and_record(arch, [make_transaction(SENDER, OTHER, 100, nonce=0)])
    mine_and_record(arch, [make_transaction(SENDER, CONTRACT, 0, b"\xde\xad\xbe\xef", nonce=1)])
    mine_and_record(arch, [make_transaction(OTHER, SENDER, 50, nonce=0)])
    for n in range(arch.chain.height + 1):
        root, _ = replay_block(arch.chain, arch.world, n)
        assert root == arch.chain.block(n).state_root


def test_replay_genesis_is_identity():
    arch = fresh_archive()
    root, outcomes = replay_block(arch.chain, arch.world, 0)
    assert root == arch.chain.block(0).state_root
    assert outcomes == []


# -- labels --


def test_label_store_roundtrip_and_validation():
    store = LabelStore()
    txh = bytes(range(32))
    store.add(txh, "overflow", mechanism="wrapped-debit")
    assert store.is_exploit(txh)
    assert store.exploit_hashes() == [txh]
    assert store.exploit_hashes("overflow") == [txh]
    assert store.exploit_hashes("dos") == []
    assert store.get(bytes(32)) is None
    with pytest.raises(UsageError):
        store.add(bytes(32), "not-a-rule")


# -- document round trips --


def test_tx_document_roundtrip():
    tx = make_transaction(SENDER, CONTRACT, 9, b"\x01\x02\x03\x04" + bytes(28), nonce=4)
    assert tx_from_document(tx_to_document(tx)) == tx


def test_state_document_roundtrip():
    state = seeded_state()
    doc = state_to_document(state)
    back = state_from_document(doc, dict(state.code_store))
    assert state_root(back) == state_root(state)


def test_state_document_rejects_wrong_root():
    state = seeded_state()
    doc = state_to_document(state)
    doc["stateRoot"] = "0x" + "ab" * 32
    with pytest.raises(ArchiveGapError):
        state_from_document(doc, dict(state.code_store))


def test_state_document_rejects_missing_code():
    state = seeded_state()
    doc = state_to_document(state)
    with pytest.raises(ArchiveGapError):
        state_from_document(doc, {})


# -- archive directories --


def build_small_archive() -> Archive:
    arch = fresh_archive()
    mine_and_record(arch, [make_transaction(SENDER, OTHER, 100, nonce=0)])
    mined = mine_and_record(
        arch, [make_transaction(SENDER, CONTRACT, 0, b"\xde\xad\xbe\xef", nonce=1)]
    )
    arch.labels.add(mined.block.txs[0].hash, "overflow", mechanism="test")
    return arch


def test_archive_roundtrip(tmp_path):
    arch = build_small_archive()
    write_archive(arch, tmp_path)
    back = read_archive(tmp_path)
    assert back.chain.height == arch.chain.height
    for n in range(arch.chain.height + 1):
        assert back.chain.block(n).hash == arch.chain.block(n).hash
        assert back.chain.block(n).state_root == arch.chain.block(n).state_root
    assert back.traces.keys() == arch.traces.keys()
    assert back.labels.exploit_hashes() == arch.labels.exploit_hashes()
    # replay still reproduces every root after the round trip
    for n in range(back.chain.height + 1):
        root, _ = replay_block(back.chain, back.world, n)
        assert root == back.chain.block(n).state_root


def test_archive_write_is_deterministic(tmp_path):
    arch = build_small_archive()
    write_archive(arch, tmp_path / "a")
    write_archive(arch, tmp_path / "b")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_traces_written_compact(tmp_path):
    arch = build_small_archive()
    write_archive(arch, tmp_path)
    trace_files = list((tmp_path / "traces").iterdir())
    assert trace_files
    for path in trace_files:
        text = path.read_text()
        assert ": " not in text and ", " not in text
        json.loads(text)
