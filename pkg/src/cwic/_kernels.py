"""Range coder cores, compiled with numba when available.

The encode/decode loops are strictly sequential (every byte depends on the
full coder state), so the fallback is the same source executed by CPython
over the numpy buffers. All arithmetic stays below 2^40 and is written in
plain ints, which keeps the two backends bit-identical by construction.

Backend selection: CWIC_KERNELS=numba|numpy (default: numba if importable).
"""

from __future__ import annotations

import os

from .errors import ConfigError

PREC = 16
TOP = 1 << 24
MASK32 = 0xFFFFFFFF
CDFTOTAL_MINUS1 = (1 << PREC) - 1
SENTINEL = 0x5A3C
RAW_BITS = 32
RAW_BIAS = 1 << 31

STATUS_OK = 0
STATUS_TRUNCATED = 1
STATUS_SENTINEL = 2


def _rc_encode_core(values, row_of, row_starts, cdf, sym_lo, escape, out):
    """Encode values into out; returns bytes written or -1 on overflow."""
    low = 0
    rng = MASK32
    cache = 0
    cache_size = 1
    pos = 0
    cap = out.shape[0]
    n = values.shape[0]
    i = 0
    while i <= n:
        if i < n:
            r = int(row_of[i])
            s0 = int(row_starts[r])
            s1 = int(row_starts[r + 1])
            nb = s1 - s0 - 1
            v = int(values[i])
            k = v - int(sym_lo[r])
            is_escape = False
            if escape:
                if k < 0 or k >= nb - 1:
                    k = nb - 1
                    is_escape = True
            cl = int(cdf[s0 + k])
            ch = int(cdf[s0 + k + 1])
            nbits = 0
            raw = 0
        else:
            # trailing sentinel, coded as direct bits
            cl = 0
            ch = 0
            is_escape = False
            nbits = 16
            raw = SENTINEL
        if i < n:
            rr = rng >> PREC
            low += rr * cl
            rng = rr * (ch - cl)
            while rng < TOP:
                if low < 0xFF000000 or low > MASK32:
                    carry = low >> 32
                    if pos >= cap:
                        return -1
                    out[pos] = (cache + carry) & 0xFF
                    pos += 1
                    cache_size -= 1
                    while cache_size != 0:
                        if pos >= cap:
                            return -1
                        out[pos] = (0xFF + carry) & 0xFF
                        pos += 1
                        cache_size -= 1
                    cache = (low >> 24) & 0xFF
                cache_size += 1
                low = (low & 0x00FFFFFF) << 8
                rng = (rng << 8) & MASK32
            if is_escape:
                nbits = RAW_BITS
                raw = (v + RAW_BIAS) & MASK32
        # direct (bypass) bits, most significant first
        b = nbits - 1
        while b >= 0:
            rng >>= 1
            bit = (raw >> b) & 1
            if bit != 0:
                low += rng
            while rng < TOP:
                if low < 0xFF000000 or low > MASK32:
                    carry = low >> 32
                    if pos >= cap:
                        return -1
                    out[pos] = (cache + carry) & 0xFF
                    pos += 1
                    cache_size -= 1
                    while cache_size != 0:
                        if pos >= cap:
                            return -1
                        out[pos] = (0xFF + carry) & 0xFF
                        pos += 1
                        cache_size -= 1
                    cache = (low >> 24) & 0xFF
                cache_size += 1
                low = (low & 0x00FFFFFF) << 8
                rng = (rng << 8) & MASK32
            b -= 1
        i += 1
    # flush
    for _ in range(5):
        if low < 0xFF000000 or low > MASK32:
            carry = low >> 32
            if pos >= cap:
                return -1
            out[pos] = (cache + carry) & 0xFF
            pos += 1
            cache_size -= 1
            while cache_size != 0:
                if pos >= cap:
                    return -1
                out[pos] = (0xFF + carry) & 0xFF
                pos += 1
                cache_size -= 1
            cache = (low >> 24) & 0xFF
        cache_size += 1
        low = (low & 0x00FFFFFF) << 8
    return pos


def _rc_decode_core(buf, n, row_of, row_starts, cdf, sym_lo, escape, values):
    """Decode n values from buf; returns a STATUS_* code."""
    blen = buf.shape[0]
    code = 0
    rng = MASK32
    pos = 0
    for _ in range(5):
        if pos >= blen:
            return STATUS_TRUNCATED
        code = ((code << 8) | int(buf[pos])) & 0xFFFFFFFFFF
        pos += 1
    code &= MASK32
    i = 0
    while i <= n:
        if i < n:
            r = int(row_of[i])
            s0 = int(row_starts[r])
            s1 = int(row_starts[r + 1])
            nb = s1 - s0 - 1
            rr = rng >> PREC
            val = code // rr
            if val > CDFTOTAL_MINUS1:
                val = CDFTOTAL_MINUS1
            # binary search: largest k with cdf[s0+k] <= val
            a = 0
            b2 = nb
            while b2 - a > 1:
                mid = (a + b2) >> 1
                if int(cdf[s0 + mid]) <= val:
                    a = mid
                else:
                    b2 = mid
            k = a
            cl = int(cdf[s0 + k])
            ch = int(cdf[s0 + k + 1])
            code -= rr * cl
            rng = rr * (ch - cl)
            while rng < TOP:
                if pos >= blen:
                    return STATUS_TRUNCATED
                code = ((code << 8) | int(buf[pos])) & MASK32
                pos += 1
                rng = (rng << 8) & MASK32
            if escape and k == nb - 1:
                raw = 0
                b = 0
                while b < RAW_BITS:
                    rng >>= 1
                    bit = 0
                    if code >= rng:
                        bit = 1
                        code -= rng
                    raw = (raw << 1) | bit
                    while rng < TOP:
                        if pos >= blen:
                            return STATUS_TRUNCATED
                        code = ((code << 8) | int(buf[pos])) & MASK32
                        pos += 1
                        rng = (rng << 8) & MASK32
                    b += 1
                values[i] = raw - RAW_BIAS
            else:
                values[i] = int(sym_lo[r]) + k
        else:
            raw = 0
            b = 0
            while b < 16:
                rng >>= 1
                bit = 0
                if code >= rng:
                    bit = 1
                    code -= rng
                raw = (raw << 1) | bit
                while rng < TOP:
                    if pos >= blen:
                        return STATUS_TRUNCATED
                    code = ((code << 8) | int(buf[pos])) & MASK32
                    pos += 1
                    rng = (rng << 8) & MASK32
                b += 1
            if raw != SENTINEL:
                return STATUS_SENTINEL
        i += 1
    return STATUS_OK


def _select_backend():
    choice = os.environ.get("CWIC_KERNELS", "").strip().lower()
    if choice not in ("", "numba", "numpy"):
        raise ConfigError(f"CWIC_KERNELS must be 'numba' or 'numpy', got {choice!r}")
    if choice == "numpy":
        return "numpy", _rc_encode_core, _rc_decode_core
    try:
        from numba import njit
    except ImportError:
        if choice == "numba":
            raise ConfigError("CWIC_KERNELS=numba but numba is not importable")
        return "numpy", _rc_encode_core, _rc_decode_core
    enc = njit(cache=True)(_rc_encode_core)
    dec = njit(cache=True)(_rc_decode_core)
    return "numba", enc, dec


BACKEND, rc_encode_core, rc_decode_core = _select_backend()
