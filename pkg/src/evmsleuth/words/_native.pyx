# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled word kernel: behavioral twin of evmsleuth.words._pure.

Word values stay arbitrary-precision Python ints (they do not fit C types);
the win comes from compiled dispatch and loop bodies. Any semantic change
here must land in _pure.py as well - tests parametrize over both backends.
"""

WORD_BITS = 256
WORD_MODULUS = 1 << WORD_BITS
WORD_MASK = WORD_MODULUS - 1
SIGN_BIT = 1 << (WORD_BITS - 1)

OP_ADD = 1
OP_MUL = 2
OP_SUB = 3
OP_SDIV = 4
OP_ADDMOD = 5
OP_MULMOD = 6
OP_EXP = 7

TERNARY_OPS = (OP_ADDMOD, OP_MULMOD)

cdef long _EXP_CLAMP = 520

cdef object _MASK = WORD_MASK
cdef object _MODULUS = WORD_MODULUS
cdef object _SIGN = SIGN_BIT


def mask256(value):
    return value & _MASK


def to_signed(word):
    """Two's-complement read of a raw word."""
    if word & _SIGN:
        return word - _MODULUS
    return word


def from_signed(value):
    """Encode an integer into the word domain (modular)."""
    return value & _MASK


cdef object _sdiv_machine(object a, object b):
    if b == 0:
        return 0
    sa = to_signed(a)
    sb = to_signed(b)
    q = abs(sa) // abs(sb)
    if (sa < 0) != (sb < 0):
        q = -q
    return q & _MASK


def word_result(long op, a, b, c=0):
    """EVM machine result on raw words (always exact, always defined)."""
    if op == OP_ADD:
        return (a + b) & _MASK
    if op == OP_MUL:
        return (a * b) & _MASK
    if op == OP_SUB:
        return (a - b) & _MASK
    if op == OP_SDIV:
        return _sdiv_machine(a, b)
    if op == OP_ADDMOD:
        return (a + b) % c if c else 0
    if op == OP_MULMOD:
        return (a * b) % c if c else 0
    if op == OP_EXP:
        return pow(a, b, _MODULUS)
    raise ValueError(f"unknown arithmetic op code {op}")


def exact_value(long op, a, b, c=0, bint signed=False):
    """Exact integer value under the given signedness: (value, clamped)."""
    za = to_signed(a) if signed else a
    zb = to_signed(b) if signed else b
    if op == OP_ADD or op == OP_ADDMOD:
        return za + zb, False
    if op == OP_MUL or op == OP_MULMOD:
        return za * zb, False
    if op == OP_SUB:
        return za - zb, False
    if op == OP_SDIV:
        if b == 0:
            return 0, False
        q = abs(za) // abs(zb)
        if (za < 0) != (zb < 0):
            q = -q
        return q, False
    if op == OP_EXP:
        exp = b  # raw, unsigned by definition
        if za == 0:
            return (1 if exp == 0 else 0), False
        if za == 1:
            return 1, False
        if za == -1:
            return (1 if exp % 2 == 0 else -1), False
        if exp > _EXP_CLAMP:
            return None, True
        return za**exp, False
    raise ValueError(f"unknown arithmetic op code {op}")


def check_bounds(long op, a, b, c, tmin, tmax, bint signed):
    """Full wrap-and-check: (result, exact, out_of_bounds, clamped)."""
    result = word_result(op, a, b, c)
    z, clamped = exact_value(op, a, b, c, signed)
    if op == OP_ADDMOD or op == OP_MULMOD:
        return result, z, False, False
    if clamped:
        return result, None, True, True
    return result, z, (z < tmin or z > tmax), False


def decode_steps(list struct_logs):
    """Decode raw structLog entries into flat tuples.

    Same contract as the pure twin: raises ValueError(message, raw_index) on
    the first malformed entry.
    """
    cdef Py_ssize_t i, n
    cdef list out = []
    n = len(struct_logs)
    for i in range(n):
        entry = struct_logs[i]
        if not isinstance(entry, dict):
            raise ValueError("entry is not an object", i)
        try:
            pc = entry["pc"]
            op = entry["op"]
            gas = entry["gas"]
            gas_cost = entry["gasCost"]
            depth = entry["depth"]
        except KeyError as missing:
            raise ValueError(f"missing field {missing.args[0]!r}", i)
        if not isinstance(pc, int) or isinstance(pc, bool) or pc < 0:
            raise ValueError(f"bad pc {pc!r}", i)
        if not isinstance(op, str) or not op:
            raise ValueError(f"bad op {op!r}", i)
        if not isinstance(gas, int) or gas < 0:
            raise ValueError(f"bad gas {gas!r}", i)
        if not isinstance(gas_cost, int) or gas_cost < 0:
            raise ValueError(f"bad gasCost {gas_cost!r}", i)
        if not isinstance(depth, int) or depth < 1:
            raise ValueError(f"bad depth {depth!r}", i)
        raw_stack = entry.get("stack", [])
        if not isinstance(raw_stack, list):
            raise ValueError("stack is not a list", i)
        stack = []
        for item in raw_stack:
            stack.append(_parse_hex_word(item, i))
        storage = entry.get("storage")
        pairs = None
        if storage is not None:
            if not isinstance(storage, dict):
                raise ValueError("storage is not an object", i)
            pairs = tuple(
                sorted(
                    (_parse_hex_word(k, i), _parse_hex_word(v, i))
                    for k, v in storage.items()
                )
            )
        call = entry.get("call")
        call_tuple = None
        if call is not None:
            if not isinstance(call, dict):
                raise ValueError("call is not an object", i)
            try:
                to = _parse_hex_word(call["to"], i)
                value = _parse_hex_word(call["value"], i)
            except KeyError as missing:
                raise ValueError(f"call missing {missing.args[0]!r}", i)
            data_hex = call.get("input", "0x")
            if not isinstance(data_hex, str):
                raise ValueError("call input is not a string", i)
            body = data_hex[2:] if data_hex.startswith("0x") else data_hex
            try:
                data = bytes.fromhex(body)
            except ValueError:
                raise ValueError(f"bad call input hex {data_hex!r}", i)
            status = call.get("status")
            if status is not None and status not in (0, 1):
                raise ValueError(f"bad call status {status!r}", i)
            call_tuple = (to, value, data, status)
        out.append((pc, op, gas, gas_cost, depth, tuple(stack), pairs, call_tuple))
    return out


cdef object _parse_hex_word(object text, Py_ssize_t raw_index):
    if not isinstance(text, str) or not text:
        raise ValueError(f"bad hex word {text!r}", raw_index)
    body = text[2:] if text.startswith(("0x", "0X")) else text
    if not body:
        raise ValueError(f"bad hex word {text!r}", raw_index)
    try:
        value = int(body, 16)
    except ValueError:
        raise ValueError(f"bad hex word {text!r}", raw_index)
    if value > _MASK:
        raise ValueError(f"hex word out of range {text!r}", raw_index)
    return value
