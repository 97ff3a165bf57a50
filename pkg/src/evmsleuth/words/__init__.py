"""Word kernel with backend selection.

Imports the compiled kernel when available, otherwise the pure-Python twin.
Set EVMSLEUTH_WORDS=pure or EVMSLEUTH_WORDS=native before import to force a
backend (forcing native raises if the extension was not built). BACKEND
names the selected implementation.
"""

import os

_requested = os.environ.get("EVMSLEUTH_WORDS", "").strip().lower()

if _requested == "pure":
    from . import _pure as _impl

    BACKEND = "pure"
elif _requested == "native":
    from . import _native as _impl  # type: ignore[no-redef]

    BACKEND = "native"
elif _requested == "":
    try:
        from . import _native as _impl  # type: ignore[no-redef]

        BACKEND = "native"
    except ImportError:
        from . import _pure as _impl  # type: ignore[no-redef]

        BACKEND = "pure"
else:
    raise ImportError(f"EVMSLEUTH_WORDS must be 'pure' or 'native', not {_requested!r}")

WORD_BITS = _impl.WORD_BITS
WORD_MODULUS = _impl.WORD_MODULUS
WORD_MASK = _impl.WORD_MASK
SIGN_BIT = _impl.SIGN_BIT

OP_ADD = _impl.OP_ADD
OP_MUL = _impl.OP_MUL
OP_SUB = _impl.OP_SUB
OP_SDIV = _impl.OP_SDIV
OP_ADDMOD = _impl.OP_ADDMOD
OP_MULMOD = _impl.OP_MULMOD
OP_EXP = _impl.OP_EXP
TERNARY_OPS = tuple(_impl.TERNARY_OPS)

mask256 = _impl.mask256
to_signed = _impl.to_signed
from_signed = _impl.from_signed
word_result = _impl.word_result
exact_value = _impl.exact_value
check_bounds = _impl.check_bounds
decode_steps = _impl.decode_steps

# Mnemonic <-> kernel op code for the arithmetic subset under bounds checks.
ARITH_CODES = {
    "ADD": OP_ADD,
    "MUL": OP_MUL,
    "SUB": OP_SUB,
    "SDIV": OP_SDIV,
    "ADDMOD": OP_ADDMOD,
    "MULMOD": OP_MULMOD,
    "EXP": OP_EXP,
}

__all__ = [
    "BACKEND",
    "WORD_BITS",
    "WORD_MODULUS",
    "WORD_MASK",
    "SIGN_BIT",
    "ARITH_CODES",
    "TERNARY_OPS",
    "OP_ADD",
    "OP_MUL",
    "OP_SUB",
    "OP_SDIV",
    "OP_ADDMOD",
    "OP_MULMOD",
    "OP_EXP",
    "mask256",
    "to_signed",
    "from_signed",
    "word_result",
    "exact_value",
    "check_bounds",
    "decode_steps",
]
