"""Compare the compiled word kernel against its pure-Python twin.

Each backend runs in its own subprocess with EVMSLEUTH_WORDS pinned, because
the backend is chosen once at import. The two hot paths are measured on
identical seeded workloads: structLog decoding (the bulk of trace ingest) and
bounds-checked arithmetic (the overflow rule's inner loop). Checksums confirm
both backends computed the same answers before any timing is reported.

Usage: python3 benchmarks/compare_backends.py [--steps N] [--cases N] [--repeats N]
"""

import argparse
import json
import os
import random
import subprocess
import sys
import time

SEED = 11
WORD_MASK = (1 << 256) - 1
OPS = ("ADD", "MUL", "SUB", "SDIV", "ADDMOD", "MULMOD", "EXP")


def random_word(rng: random.Random) -> int:
    r = rng.random()
    if r < 0.3:
        return rng.randrange(0, 1 << 16)
    if r < 0.5:
        return ((1 << rng.randrange(1, 256)) + rng.randrange(-2, 3)) % (WORD_MASK + 1)
    return rng.randrange(0, WORD_MASK + 1)


def decode_workload(steps: int) -> list[dict]:
    rng = random.Random(f"decode/{SEED}")
    out = []
    for i in range(steps):
        entry = {
            "pc": i % 4096,
            "op": "SSTORE" if i % 8 == 0 else "ADD",
            "gas": 1_000_000 - i,
            "gasCost": 3,
            "depth": 1 + (i % 3),
            "stack": [hex(random_word(rng)) for _ in range(rng.randrange(0, 8))],
        }
        if i % 8 == 0:
            entry["storage"] = {hex(rng.randrange(64)): hex(random_word(rng))}
        if i % 16 == 5:
            entry["call"] = {
                "to": hex(rng.randrange(1 << 160)),
                "value": hex(rng.randrange(1 << 64)),
                "input": "0x" + bytes(rng.randrange(256) for _ in range(36)).hex(),
                "status": rng.randrange(2),
            }
        out.append(entry)
    return out


def bounds_workload(cases: int) -> list[tuple]:
    rng = random.Random(f"bounds/{SEED}")
    out = []
    for i in range(cases):
        op = OPS[i % len(OPS)]
        bits = rng.choice((8, 32, 64, 256))
        signed = rng.random() < 0.5
        if signed:
            tmin, tmax = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
        else:
            tmin, tmax = 0, (1 << bits) - 1
        exponent_friendly = rng.randrange(0, 64) if op == "EXP" and i % 2 else None
        b = exponent_friendly if exponent_friendly is not None else random_word(rng)
        out.append((op, random_word(rng), b, random_word(rng), tmin, tmax, signed))
    return out


def best_of(repeats: int, run) -> float:
    return min(measure_once(run) for _ in range(repeats))


def measure_once(run) -> float:
    started = time.perf_counter()
    run()
    return time.perf_counter() - started


def run_worker(steps: int, cases: int, repeats: int):
    import evmsleuth.words as words

    decoded = words.decode_steps(decode_workload(steps))
    decode_checksum = 0
    for pc, _op, _gas, _cost, depth, stack, _storage, _call in decoded:
        decode_checksum = (decode_checksum * 31 + pc + depth + len(stack)) % (1 << 61)
        if stack:
            decode_checksum = (decode_checksum + stack[-1]) % (1 << 61)

    arith = bounds_workload(cases)
    codes = {name: words.ARITH_CODES[name] for name in OPS}
    bounds_checksum = 0
    for op, a, b, c, tmin, tmax, signed in arith:
        result, _z, out_of_bounds, clamped = words.check_bounds(
            codes[op], a, b, c, tmin, tmax, signed
        )
        bounds_checksum = (
            bounds_checksum * 31 + result + 2 * out_of_bounds + clamped
        ) % (1 << 61)

    payload = decode_workload(steps)
    decode_s = best_of(repeats, lambda: words.decode_steps(payload))

    def bounds_pass():
        check = words.check_bounds
        for op, a, b, c, tmin, tmax, signed in arith:
            check(codes[op], a, b, c, tmin, tmax, signed)

    bounds_s = best_of(repeats, bounds_pass)

    print(
        json.dumps(
            {
                "backend": words.BACKEND,
                "decode_s": round(decode_s, 6),
                "bounds_s": round(bounds_s, 6),
                "decode_checksum": decode_checksum,
                "bounds_checksum": bounds_checksum,
            }
        )
    )


def spawn(backend: str, args) -> dict | None:
    env = dict(os.environ, EVMSLEUTH_WORDS=backend)
    proc = subprocess.run(
        [
            sys.executable,
            os.path.abspath(__file__),
            "--worker",
            "--steps",
            str(args.steps),
            "--cases",
            str(args.cases),
            "--repeats",
            str(args.repeats),
        ],
        env=env,
        capture_output=True,
        text=True,
    )
    if proc.returncode != 0:
        sys.stderr.write(f"{backend}: worker failed\n{proc.stderr}")
        return None
    return json.loads(proc.stdout)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--steps", type=int, default=200_000, help="structLog entries to decode")
    parser.add_argument("--cases", type=int, default=200_000, help="bounds-check cases")
    parser.add_argument("--repeats", type=int, default=3, help="take the best of N passes")
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args.worker:
        run_worker(args.steps, args.cases, args.repeats)
        return 0

    rows = {}
    for backend in ("pure", "native"):
        row = spawn(backend, args)
        if row is None:
            if backend == "native":
                print("native kernel not built; timings cover the pure backend only")
                continue
            return 1
        if row["backend"] != backend:
            sys.stderr.write(f"asked for {backend}, worker imported {row['backend']}\n")
            return 1
        rows[backend] = row

    if len(rows) == 2:
        for key in ("decode_checksum", "bounds_checksum"):
            if rows["pure"][key] != rows["native"][key]:
                sys.stderr.write(f"backend disagreement on {key}; timings are meaningless\n")
                return 1

    print(f"workload: {args.steps} structLog entries, {args.cases} bounds cases, "
          f"best of {args.repeats}")
    print(f"{'backend':<8} {'decode_s':>10} {'bounds_s':>10}")
    for backend, row in rows.items():
        print(f"{backend:<8} {row['decode_s']:>10.4f} {row['bounds_s']:>10.4f}")
    if len(rows) == 2:
        decode_gain = rows["pure"]["decode_s"] / rows["native"]["decode_s"]
        bounds_gain = rows["pure"]["bounds_s"] / rows["native"]["bounds_s"]
        print(f"native speedup: decode {decode_gain:.2f}x, bounds {bounds_gain:.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
