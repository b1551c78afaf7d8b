"""Benchmark the range-coder kernels: numba JIT vs pure numpy fallback.

The backend is frozen per process at import (CWIC_KERNELS), so each side
runs in a subprocess and reports its own timings; the parent checks the
streams agree byte for byte and prints the comparison.

Usage: python bench/bench_kernels.py [--symbols N] [--repeats R]
"""

import argparse
import json
import os
import subprocess
import sys

_WORKER = r"""
import hashlib, json, time
import numpy as np
from cwic.entropy import build_gaussian_tables
from cwic.rangecoder import rc_encode, rc_decode, BACKEND

job = json.loads(input())
n, repeats = job["symbols"], job["repeats"]
rng = np.random.default_rng(1234)
mu = rng.uniform(-8, 8, n)
sigma = np.exp(rng.uniform(np.log(0.11), np.log(6.0), n))
table = build_gaussian_tables(mu, sigma)
values = np.rint(rng.normal(mu, sigma)).astype(np.int64)

data = rc_encode(values, table)  # warm-up (first call pays any JIT cost)
rc_decode(data, table, n)

enc = []
dec = []
for _ in range(repeats):
    t0 = time.perf_counter(); data = rc_encode(values, table)
    enc.append(time.perf_counter() - t0)
    t0 = time.perf_counter(); out = rc_decode(data, table, n)
    dec.append(time.perf_counter() - t0)
assert np.array_equal(out, values)
print(json.dumps({
    "backend": BACKEND,
    "bytes": len(data),
    "sha": hashlib.sha256(data).hexdigest(),
    "encode_s": min(enc),
    "decode_s": min(dec),
}))
"""


def run_side(backend: str, symbols: int, repeats: int) -> dict:
    env = dict(os.environ, CWIC_KERNELS=backend)
    proc = subprocess.run([sys.executable, "-c", _WORKER], env=env,
                          input=json.dumps({"symbols": symbols,
                                            "repeats": repeats}),
                          capture_output=True, text=True, check=True)
    return json.loads(proc.stdout)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--symbols", type=int, default=1_000_000)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    results = {}
    for backend in ("numpy", "numba"):
        try:
            results[backend] = run_side(backend, args.symbols, args.repeats)
        except subprocess.CalledProcessError as e:
            print(f"{backend}: worker failed\n{e.stderr}", file=sys.stderr)
            return 1

    a, b = results["numpy"], results["numba"]
    if a["sha"] != b["sha"]:
        print("FATAL: backends produced different streams", file=sys.stderr)
        return 1
    if b["backend"] != "numba":
        print("note: numba unavailable; both sides ran the numpy fallback")

    n = args.symbols
    print(f"{n:,} symbols, {a['bytes']:,} coded bytes, best of "
          f"{args.repeats} (identical streams)\n")
    print(f"{'':10s}{'encode':>12s}{'decode':>12s}"
          f"{'enc Msym/s':>12s}{'dec Msym/s':>12s}")
    for name in ("numpy", "numba"):
        r = results[name]
        print(f"{r['backend']:10s}{r['encode_s']:>11.3f}s{r['decode_s']:>11.3f}s"
              f"{n / r['encode_s'] / 1e6:>12.2f}{n / r['decode_s'] / 1e6:>12.2f}")
    if b["backend"] == "numba":
        print(f"\nspeedup: encode {a['encode_s'] / b['encode_s']:.1f}x, "
              f"decode {a['decode_s'] / b['decode_s']:.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
