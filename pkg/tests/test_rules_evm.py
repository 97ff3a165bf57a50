"""Instruction-level rule evaluation over reconstructed traces."""

import pytest

from evmsleuth.errors import ConfigError
from evmsleuth.fixtures import build_fixture_chain
from evmsleuth.model import address_hex, word_hex
from evmsleuth.rules_evm import (
    Detection,
    TxContext,
    VulnSpec,
    detect_dos_revert,
    detect_overflow,
    detect_reentrancy,
    evaluate_trace,
)
from evmsleuth.traces import reconstruct_document

SEED = 11

CONTRACT = 0xC0DE
ATTACKER = 0xBAD0
TX = bytes(range(32))
CTX = TxContext(tx_hash=TX, block_number=4, failed=False)

UINT256_MAX = str(2**256 - 1)

_PARAMS = {
    "overflow": {"typeMin": "0", "typeMax": UINT256_MAX, "balanceOfSlot": 0},
    "dos": {"highestBidSlot": 1},
    "reentrancy": {"userBalancesSlot": 2},
}


def vuln_doc(rule="overflow", pcs=(4,), code=CONTRACT, params=None):
    return {
        "scenario": "Synthetic",
        "contractAddress": "0x%040x" % CONTRACT,
        "rule": rule,
        "vulnLocs": [{"codeAddress": "0x%040x" % code, "pcOffsets": list(pcs)}],
        "params": dict(_PARAMS[rule]) if params is None else params,
        "filter": {
            "selectors": ["poke()"],
            "includeInternal": False,
            "blockRange": [1, 5],
        },
    }


def spec_for(rule="overflow", pcs=(4,), code=CONTRACT, params=None):
    return VulnSpec.from_document(vuln_doc(rule, pcs, code, params))


def step(pc, op, depth, stack=(), **extra):
    entry = {
        "pc": pc,
        "op": op,
        "gas": 50_000,
        "gasCost": 3,
        "depth": depth,
        "stack": ["0x%x" % w for w in stack],
    }
    entry.update(extra)
    return entry


def doc(steps, failed=False):
    return {"gas": 1234, "failed": failed, "returnValue": "0x", "structLogs": steps}


def arith_trace(op, stack):
    """One arithmetic step at pc 35 inside the contract's own code."""
    src = doc(
        [
            step(0, "PUSH32", 1),
            step(33, "PUSH1", 1),
            step(35, op, 1, stack),
            step(36, "STOP", 1),
        ]
    )
    return reconstruct_document(src, CONTRACT)


# -- vuln descriptor parsing --


def test_from_document_round_trip():
    spec = spec_for("dos", pcs=(7, 3))
    assert spec.scenario == "Synthetic"
    assert spec.contract == CONTRACT
    assert spec.rule == "dos"
    assert spec.locations[0].code_address == CONTRACT
    assert spec.locations[0].pc_offsets == frozenset({3, 7})
    assert spec.selectors == ("poke()",)
    assert spec.include_internal is False
    assert spec.block_range == (1, 5)


@pytest.mark.parametrize(
    "mutate, fragment",
    [
        (lambda d: d.pop("scenario"), "malformed vuln descriptor"),
        (lambda d: d.pop("params"), "malformed vuln descriptor"),
        (lambda d: d.__setitem__("contractAddress", "pond"), "malformed vuln"),
        (lambda d: d.__setitem__("rule", "phish"), "unknown rule class"),
        (lambda d: d.__setitem__("vulnLocs", []), "vulnLocs is empty"),
        (lambda d: d.__setitem__("vulnLocs", [{"codeAddress": "0x1"}]), "vulnLocs entry"),
        (lambda d: d["filter"].__setitem__("blockRange", [0, 5]), "bad blockRange"),
        (lambda d: d["filter"].__setitem__("blockRange", [3, 2]), "bad blockRange"),
        (lambda d: d["filter"].__setitem__("blockRange", ["1", 2]), "bad blockRange"),
        (lambda d: d["filter"].__setitem__("blockRange", [1, 2, 3]), "malformed vuln"),
    ],
)
def test_from_document_rejects_malformed(mutate, fragment):
    src = vuln_doc()
    mutate(src)
    with pytest.raises(ConfigError, match=fragment):
        VulnSpec.from_document(src)


@pytest.mark.parametrize(
    "rule, missing",
    [
        ("overflow", "typeMax"),
        ("dos", "highestBidSlot"),
        ("reentrancy", "userBalancesSlot"),
    ],
)
def test_each_rule_requires_its_params(rule, missing):
    params = dict(_PARAMS[rule])
    del params[missing]
    with pytest.raises(ConfigError, match=f"needs param {missing!r}"):
        spec_for(rule, params=params)


def test_bounds_and_slot_accessors():
    spec = spec_for("overflow")
    bounds = spec.bounds()
    assert (bounds.min, bounds.max) == (0, 2**256 - 1)
    assert spec.slot("balanceOfSlot") == 0
    with pytest.raises(ConfigError, match="non-negative slot"):
        spec.slot("nonexistent")
    bad = spec_for("overflow", params={"typeMin": "x", "typeMax": "1", "balanceOfSlot": 0})
    with pytest.raises(ConfigError, match="bad type bounds"):
        bad.bounds()
    negative = spec_for("dos", params={"highestBidSlot": -1})
    with pytest.raises(ConfigError, match="non-negative slot"):
        negative.slot("highestBidSlot")


def test_to_arg_index_accessor():
    assert spec_for("overflow").to_arg_index() is None
    params = dict(_PARAMS["overflow"], toArgIndex=2)
    assert spec_for("overflow", params=params).to_arg_index() == 2
    params["toArgIndex"] = -1
    with pytest.raises(ConfigError, match="toArgIndex"):
        spec_for("overflow", params=params).to_arg_index()


# -- overflow rule --


def test_overflow_flags_wrapping_multiply():
    spec = spec_for("overflow", pcs=(35,))
    rec = arith_trace("MUL", (2**255, 2))
    hits, notes = detect_overflow(rec, spec, CTX)
    assert notes == []
    assert len(hits) == 1
    hit = hits[0]
    assert hit.pc == 35 and hit.rule == "overflow"
    assert hit.detail["op"] == "MUL"
    assert hit.detail["operands"] == [word_hex(2), word_hex(2**255)]
    assert hit.detail["result"] == word_hex(0)
    assert hit.detail["zResult"] == str(2**256)
    assert hit.detail["zClamped"] is False
    assert hit.detail["typeMax"] == UINT256_MAX


def test_overflow_ignores_in_range_arithmetic():
    spec = spec_for("overflow", pcs=(35,))
    hits, notes = detect_overflow(arith_trace("MUL", (5, 3)), spec, CTX)
    assert hits == [] and notes == []


def test_underflow_depends_on_signedness():
    unsigned = spec_for("overflow", pcs=(35,))
    rec = arith_trace("SUB", (1, 0))  # top of stack is the minuend
    hits, _ = detect_overflow(rec, unsigned, CTX)
    assert len(hits) == 1
    assert hits[0].detail["zResult"] == "-1"
    assert hits[0].detail["result"] == word_hex(2**256 - 1)

    signed_params = {
        "typeMin": str(-(2**255)),
        "typeMax": str(2**255 - 1),
        "balanceOfSlot": 0,
    }
    signed = spec_for("overflow", pcs=(35,), params=signed_params)
    hits, _ = detect_overflow(rec, signed, CTX)
    assert hits == []


@pytest.mark.parametrize("op", ["ADDMOD", "MULMOD"])
def test_modular_ops_never_flag(op):
    spec = spec_for("overflow", pcs=(35,))
    rec = arith_trace(op, (5, 2**256 - 1, 2**256 - 1))
    hits, notes = detect_overflow(rec, spec, CTX)
    assert hits == [] and notes == []


def test_clamped_exponentiation_flags_without_exact_value():
    spec = spec_for("overflow", pcs=(35,))
    rec = arith_trace("EXP", (2**20, 3))  # base on top, huge exponent below
    hits, _ = detect_overflow(rec, spec, CTX)
    assert len(hits) == 1
    assert hits[0].detail["zResult"] is None
    assert hits[0].detail["zClamped"] is True


def test_overflow_skips_short_stacks_with_a_note():
    spec = spec_for("overflow", pcs=(35,))
    rec = arith_trace("MUL", (2,))
    hits, notes = detect_overflow(rec, spec, CTX)
    assert hits == []
    assert len(notes) == 1 and "skipped" in notes[0]


def test_overflow_requires_location_match():
    off_pc = spec_for("overflow", pcs=(99,))
    rec = arith_trace("MUL", (2**255, 2))
    assert detect_overflow(rec, off_pc, CTX) == ([], [])
    off_code = spec_for("overflow", pcs=(35,), code=ATTACKER)
    assert detect_overflow(rec, off_code, CTX) == ([], [])


# -- dos rule --


def failed_call_trace(op="CALL", status=0, extension=None):
    stack = (0, 0, 0, 0, 5, ATTACKER, 60_000)
    if op != "CALL":
        stack = (0, 0, 0, 0, ATTACKER, 60_000)
    call_step = step(2, op, 1, stack)
    if extension is not None:
        call_step["call"] = extension
    return doc(
        [
            step(0, "PUSH1", 1),
            call_step,
            step(3, "POP", 1, (status,)),
            step(4, "STOP", 1),
        ]
    )


def test_dos_flags_refused_transfer():
    spec = spec_for("dos", pcs=(2,))
    rec = reconstruct_document(failed_call_trace(), CONTRACT)
    hits, notes = detect_dos_revert(rec, spec, CTX)
    assert notes == []
    assert len(hits) == 1
    hit = hits[0]
    assert hit.pc == 2 and hit.rule == "dos"
    assert hit.detail == {
        "to": address_hex(ATTACKER),
        "value": word_hex(5),
        "status": 0,
    }


def test_dos_ignores_successful_calls():
    spec = spec_for("dos", pcs=(2,))
    rec = reconstruct_document(failed_call_trace(status=1), CONTRACT)
    assert detect_dos_revert(rec, spec, CTX) == ([], [])


def test_dos_ignores_staticcall():
    # a read-only probe cannot carry value, so a refused one is not a lockup
    extension = {"to": "0x%x" % ATTACKER, "value": "0x0", "status": 0}
    spec = spec_for("dos", pcs=(2,))
    rec = reconstruct_document(
        failed_call_trace(op="STATICCALL", extension=extension), CONTRACT
    )
    assert detect_dos_revert(rec, spec, CTX) == ([], [])


def test_dos_notes_unavailable_status():
    spec = spec_for("dos", pcs=(2,))
    rec = reconstruct_document(failed_call_trace(), CONTRACT, relaxed=True)
    hits, notes = detect_dos_revert(rec, spec, CTX)
    assert hits == []
    assert len(notes) == 1 and "status unavailable" in notes[0]


def test_dos_on_failed_transaction_keeps_status():
    spec = spec_for("dos", pcs=(2,))
    rec = reconstruct_document(failed_call_trace(), CONTRACT)
    ctx = TxContext(tx_hash=TX, block_number=9, failed=True)
    hits, _ = detect_dos_revert(rec, spec, ctx)
    assert hits[0].tx_status == "failed"
    assert hits[0].to_document()["txStatus"] == "failed"


# -- reentrancy rule --


def reentrant_trace(second_op="CALL", sstore_stack=(9, 3), relaxed=False):
    """CONTRACT calls ATTACKER, which re-enters CONTRACT (or borrows its
    code via DELEGATECALL); the innermost frame stores at pc 2."""
    inner_target = CONTRACT
    second_stack = (0, 0, 0, 0, 5, inner_target, 60_000)
    if second_op != "CALL":
        second_stack = (0, 0, 0, 0, inner_target, 60_000)
    src = doc(
        [
            step(0, "PUSH1", 1),
            step(2, "CALL", 1, (0, 0, 0, 0, 5, ATTACKER, 60_000)),
            step(0, "PUSH1", 2),
            step(2, second_op, 2, second_stack),
            step(0, "PUSH1", 3),
            step(2, "SSTORE", 3, sstore_stack),
            step(3, "STOP", 3),
            step(3, "POP", 2, (1,)),
            step(4, "STOP", 2),
            step(3, "POP", 1, (1,)),
            step(4, "STOP", 1),
        ]
    )
    return reconstruct_document(src, CONTRACT, relaxed=relaxed)


def test_reentrancy_flags_nested_activation():
    spec = spec_for("reentrancy", pcs=(2,))
    hits, notes = detect_reentrancy(reentrant_trace(), spec, CTX)
    assert notes == []
    assert len(hits) == 1
    hit = hits[0]
    assert hit.pc == 2 and hit.depth == 3
    assert hit.frame_id == CONTRACT and hit.code_address == CONTRACT
    assert hit.detail["slot"] == word_hex(3)
    assert hit.detail["value"] == word_hex(9)
    assert hit.detail["framesBelow"] == [address_hex(CONTRACT), address_hex(ATTACKER)]


def test_reentrancy_ignores_top_level_store():
    spec = spec_for("reentrancy", pcs=(2,))
    src = doc(
        [
            step(0, "PUSH1", 1),
            step(2, "SSTORE", 1, (9, 3)),
            step(3, "STOP", 1),
        ]
    )
    rec = reconstruct_document(src, CONTRACT)
    assert detect_reentrancy(rec, spec, CTX) == ([], [])


def test_reentrancy_covers_delegatecall_without_a_code_gate():
    # ATTACKER borrows the contract's code: the store lands on the
    # attacker's own storage, yet a deeper activation of that identity
    # exists, and the vulnerable instruction is genuinely executing
    spec = spec_for("reentrancy", pcs=(2,))
    hits, _ = detect_reentrancy(reentrant_trace(second_op="DELEGATECALL"), spec, CTX)
    assert len(hits) == 1
    hit = hits[0]
    assert hit.frame_id == ATTACKER
    assert hit.code_address == CONTRACT
    assert hit.to_document()["frame"] == address_hex(ATTACKER)
    assert hit.to_document()["code"] == address_hex(CONTRACT)


def test_reentrancy_reports_unknown_write_as_null():
    spec = spec_for("reentrancy", pcs=(2,))
    rec = reentrant_trace(sstore_stack=(), relaxed=True)
    hits, _ = detect_reentrancy(rec, spec, CTX)
    assert len(hits) == 1
    assert hits[0].detail["slot"] is None
    assert hits[0].detail["value"] is None


# -- detection documents --


def test_detection_document_shape():
    hit = Detection(
        rule="dos",
        tx_hash=TX,
        block_number=4,
        raw_index=17,
        pc=2,
        depth=1,
        frame_id=CONTRACT,
        code_address=CONTRACT,
        tx_status="success",
        detail={"status": 0},
    )
    out = hit.to_document()
    assert sorted(out) == [
        "blockNumber",
        "code",
        "depth",
        "detail",
        "frame",
        "pc",
        "rule",
        "txHash",
        "txStatus",
    ]
    assert out["txHash"] == "0x" + TX.hex()
    assert "step" not in out and "rawIndex" not in out


def test_evaluate_trace_dispatches_on_rule():
    spec = spec_for("overflow", pcs=(35,))
    rec = arith_trace("MUL", (2**255, 2))
    assert evaluate_trace(rec, spec, CTX) == detect_overflow(rec, spec, CTX)


# -- real traces --


def test_bank_exploits_all_flag_reentrancy():
    fixture = build_fixture_chain("Bank", seed=SEED)
    spec = VulnSpec.from_document(fixture.vuln)
    assert spec.rule == "reentrancy"
    flagged = set()
    failed_seen = False
    for txh, raw in fixture.archive.traces.items():
        rec = reconstruct_document(raw, spec.contract)
        ctx = TxContext(txh, 0, raw["failed"])
        hits, _ = evaluate_trace(rec, spec, ctx)
        if hits:
            flagged.add(txh)
            failed_seen = failed_seen or raw["failed"]
    assert flagged == set(fixture.archive.labels.exploit_hashes())
    assert failed_seen  # the reverting probe is an exploit and must flag
