"""Secret-shared gradient aggregation.

Pipeline: real update vectors are mapped to a prime field with fixed-point
scaling, Shamir-split into N_s bundles, sealed with AES-CTR for transit,
summed share-index-wise at the server, reconstructed by Lagrange
interpolation at zero, and decoded back to reals. Field sums are exact, so
the only error is the fixed-point quantisation of each client's input.

The default field is GF(2^61 - 1), where vectors live in uint64 arrays and
multiplication reduces with shifts (2^61 = 1 mod p). Other primes -- e.g.
the wide fields used to share ciphertext coefficients -- fall back to
Python-integer object arrays.
"""

from __future__ import annotations

import hashlib
import hmac as hmac_mod
import struct
from dataclasses import dataclass

import numpy as np
import sympy
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import (
    AuthenticityError,
    ConfigurationError,
    InsufficientSharesError,
    ProtocolError,
    RangeError,
)

MERSENNE61 = (1 << 61) - 1

_MASK31 = np.uint64((1 << 31) - 1)
_MASK30 = np.uint64((1 << 30) - 1)


@dataclass
class SmcConfig:
    num_shares: int = 7
    threshold: int = 4   # ceil((N_s + 1) / 2) for the default N_s
    prime: int = MERSENNE61
    frac_bits: int = 20
    value_bits: int = 20
    aes_key_bits: int = 128

    def __post_init__(self):
        if self.num_shares < 1:
            raise ConfigurationError("smc.num_shares must be >= 1", key="smc.num_shares")
        if not 1 <= self.threshold <= self.num_shares:
            raise ConfigurationError(
                f"smc.threshold must satisfy 1 <= t <= num_shares={self.num_shares}",
                key="smc.threshold",
            )
        if self.num_shares >= self.prime:
            raise ConfigurationError("num_shares must be below the field size",
                                     key="smc.num_shares")
        if not sympy.isprime(self.prime):
            raise ConfigurationError("smc.prime must be prime", key="smc.prime")
        if self.frac_bits < 1 or self.value_bits < 1:
            raise ConfigurationError("frac/value bits must be >= 1", key="smc.frac_bits")
        if 2 ** (self.frac_bits + self.value_bits) >= self.prime // 2:
            raise ConfigurationError(
                "fixed-point range must fit in half the field", key="smc.frac_bits"
            )
        if self.aes_key_bits not in (128, 192, 256):
            raise ConfigurationError("aes_key_bits must be 128, 192 or 256",
                                     key="smc.aes_key_bits")


@dataclass
class FixedPointVector:
    raw: np.ndarray  # field elements (uint64 or object, see field_array)
    frac_bits: int


@dataclass
class ShareBundle:
    share_index: int       # nonzero evaluation point x_j
    values: np.ndarray     # field elements, one per secret coordinate


# --- field arithmetic -------------------------------------------------------
# GF(2^61 - 1) vectors are uint64; wider fields use object arrays of ints.
# Sums never overflow uint64 because operands stay below 2^61.

def field_array(values, p: int) -> np.ndarray:
    vals = [int(v) % p for v in np.asarray(values, dtype=object).ravel()]
    if p == MERSENNE61:
        return np.asarray(vals, dtype=np.uint64)
    return np.asarray(vals, dtype=object)


def field_zeros(count: int, p: int) -> np.ndarray:
    if p == MERSENNE61:
        return np.zeros(count, dtype=np.uint64)
    return np.array([0] * count, dtype=object)


def add_mod(a: np.ndarray, b: np.ndarray, p: int) -> np.ndarray:
    return (a + b) % (np.uint64(p) if a.dtype == np.uint64 else p)


def mul_mod_scalar(a: np.ndarray, s: int, p: int) -> np.ndarray:
    if a.dtype == np.uint64:
        return _mul_mersenne61(a, np.uint64(s % p))
    return (a * (s % p)) % p


def _mul_mersenne61(a: np.ndarray, b) -> np.ndarray:
    # Split operands into 31/30-bit halves. With p = 2^61 - 1 every partial
    # product folds back via 2^61 = 1 (mod p) before anything overflows.
    p = np.uint64(MERSENNE61)
    a0 = a & _MASK31
    a1 = a >> np.uint64(31)
    b0 = b & _MASK31
    b1 = b >> np.uint64(31)
    # a*b = a1b1*2^62 + (a1b0 + a0b1)*2^31 + a0b0 ; 2^62 = 2 (mod p)
    acc = (a1 * b1 % p) * np.uint64(2) % p
    acc = (acc + a0 * b0 % p) % p
    mid = a1 * b0 + a0 * b1                      # < 2^62
    mid_lo = mid & _MASK30
    mid_hi = mid >> np.uint64(30)                # mid = hi*2^30 + lo
    # mid * 2^31 = hi*2^61 + lo*2^31 = hi + lo*2^31 (mod p)
    acc = (acc + (mid_lo << np.uint64(31))) % p
    acc = (acc + mid_hi) % p
    return acc


def random_field_elements(rng: np.random.Generator, count: int, p: int) -> np.ndarray:
    if p == MERSENNE61:
        return rng.integers(0, p, size=count, dtype=np.uint64)
    bits = p.bit_length()
    words = (bits + 62) // 63
    out = []
    while len(out) < count:
        rows = rng.integers(0, 1 << 63, size=(count - len(out) + 8, words), dtype=np.int64)
        for row in rows:
            val = 0
            for w in row:
                val = (val << 63) | int(w)
            val &= (1 << bits) - 1
            if val < p:                      # rejection keeps the draw uniform
                out.append(val)
                if len(out) == count:
                    break
    return np.asarray(out, dtype=object)


# --- fixed-point encoding ---------------------------------------------------

def fixed_encode(values: np.ndarray, cfg: SmcConfig) -> FixedPointVector:
    """Map reals to field elements with frac_bits of fractional precision."""
    v = np.asarray(values, dtype=np.float64).ravel()
    bound = float(2 ** cfg.value_bits)
    too_big = np.flatnonzero(~(np.abs(v) < bound))
    if too_big.size:
        c = int(too_big[0])
        raise RangeError(
            f"coordinate {c} = {v[c]} exceeds fixed-point range (+/-{bound})",
            coordinate=c,
        )
    scaled = [int(s) for s in np.rint(v * (1 << cfg.frac_bits)).astype(np.int64)]
    return FixedPointVector(field_array(scaled, cfg.prime), cfg.frac_bits)


def fixed_decode(fp: FixedPointVector, cfg: SmcConfig) -> np.ndarray:
    p = cfg.prime
    half = p // 2
    raw = fp.raw
    if raw.dtype == np.uint64:
        wrap = raw > np.uint64(half)
        centered = np.where(wrap,
                            -((np.uint64(p) - raw).astype(np.int64)),
                            raw.astype(np.int64))
        return centered.astype(np.float64) / (1 << fp.frac_bits)
    out = np.empty(len(raw), dtype=np.float64)
    for i, r in enumerate(raw):
        r = int(r)
        signed = r - p if r > half else r
        out[i] = signed / (1 << fp.frac_bits)
    return out


# --- Shamir splitting and reconstruction ------------------------------------

def shamir_split(secret: np.ndarray, cfg: SmcConfig,
                 rng: np.random.Generator) -> list[ShareBundle]:
    """Share each coordinate with a random degree-(t-1) polynomial.

    Bundle j carries the evaluations at x_j = j (1-based) of every
    coordinate's polynomial; the constant terms are the secret.
    """
    p = cfg.prime
    sec = secret if isinstance(secret, np.ndarray) and secret.dtype in (np.uint64, object) \
        else field_array(secret, p)
    d = len(sec)
    coeffs = [random_field_elements(rng, d, p) for _ in range(cfg.threshold - 1)]
    bundles = []
    for j in range(1, cfg.num_shares + 1):
        acc = sec.copy()
        x_pow = 1
        for c in coeffs:
            x_pow = (x_pow * j) % p
            acc = add_mod(acc, mul_mod_scalar(c, x_pow, p), p)
        bundles.append(ShareBundle(share_index=j, values=acc))
    return bundles


def shamir_reconstruct(bundles: list[ShareBundle], cfg: SmcConfig) -> np.ndarray:
    """Lagrange-interpolate the constant term from >= t distinct bundles."""
    if len(bundles) < cfg.threshold:
        raise InsufficientSharesError(
            f"got {len(bundles)} bundles, threshold is {cfg.threshold}"
        )
    p = cfg.prime
    use = bundles[: cfg.threshold]
    xs = [int(b.share_index) % p for b in use]
    if len(set(xs)) != len(xs) or 0 in xs:
        raise ProtocolError("share indices must be distinct and nonzero")
    d = len(use[0].values)
    if any(len(b.values) != d for b in use):
        raise ProtocolError("bundles disagree on coordinate count")

    acc = field_zeros(d, p)
    for i, bi in enumerate(use):
        num, den = 1, 1
        for j, xj in enumerate(xs):
            if j == i:
                continue
            num = (num * (-xj)) % p
            den = (den * (xs[i] - xj)) % p
        lam = (num * pow(den, p - 2, p)) % p
        acc = add_mod(acc, mul_mod_scalar(bi.values, lam, p), p)
    return acc


# --- AES transit sealing ----------------------------------------------------

_TAG_BYTES = 8


def aes_seal(message: bytes, key: bytes, nonce: bytes) -> bytes:
    """AES-CTR encrypt plus an 8-byte keyed integrity tag.

    Length-preserving up to the fixed tag; the tag is HMAC-SHA256(key,
    nonce || ciphertext) truncated, so opening with the wrong key fails
    loudly instead of yielding garbage.
    """
    if len(nonce) != 16:
        raise ConfigurationError("CTR nonce must be 16 bytes")
    enc = Cipher(algorithms.AES(key), modes.CTR(nonce)).encryptor()
    body = enc.update(message) + enc.finalize()
    tag = hmac_mod.new(key, nonce + body, hashlib.sha256).digest()[:_TAG_BYTES]
    return body + tag


def aes_open(sealed: bytes, key: bytes, nonce: bytes) -> bytes:
    if len(sealed) < _TAG_BYTES:
        raise AuthenticityError("sealed payload shorter than its tag")
    body, tag = sealed[:-_TAG_BYTES], sealed[-_TAG_BYTES:]
    want = hmac_mod.new(key, nonce + body, hashlib.sha256).digest()[:_TAG_BYTES]
    if not hmac_mod.compare_digest(tag, want):
        raise AuthenticityError("integrity tag mismatch (wrong key or tampered payload)")
    dec = Cipher(algorithms.AES(key), modes.CTR(nonce)).decryptor()
    return dec.update(body) + dec.finalize()


def bundle_to_bytes(bundle: ShareBundle, cfg: SmcConfig) -> bytes:
    width = (cfg.prime.bit_length() + 7) // 8
    head = struct.pack(">QIH", bundle.share_index, len(bundle.values), width)
    body = b"".join(int(v).to_bytes(width, "big") for v in bundle.values)
    return head + body


def bundle_from_bytes(data: bytes, cfg: SmcConfig) -> ShareBundle:
    index, count, width = struct.unpack(">QIH", data[:14])
    vals = [
        int.from_bytes(data[14 + width * i : 14 + width * (i + 1)], "big")
        for i in range(count)
    ]
    return ShareBundle(share_index=index, values=field_array(vals, cfg.prime))


# --- server-side aggregation -------------------------------------------------

def smc_aggregate(client_bundles: list[list[ShareBundle]], cfg: SmcConfig) -> np.ndarray:
    """Sum aligned bundles share-index-wise, reconstruct, and decode to reals.

    Exactness of field arithmetic means the result equals the plain float sum
    up to one fixed-point rounding (2^(-frac_bits-1)) per client per coordinate.
    """
    if not client_bundles:
        raise ProtocolError("no client share sets to aggregate")
    first = client_bundles[0]
    indices = [b.share_index for b in first]
    d = len(first[0].values)
    p = cfg.prime
    summed = [field_zeros(d, p) for _ in indices]
    for shares in client_bundles:
        if [b.share_index for b in shares] != indices:
            raise ProtocolError("clients disagree on share indices")
        for slot, bundle in enumerate(shares):
            if len(bundle.values) != d:
                raise ProtocolError("clients disagree on coordinate count")
            summed[slot] = add_mod(summed[slot], bundle.values, p)
    agg = [ShareBundle(share_index=ix, values=v) for ix, v in zip(indices, summed)]
    field_sum = shamir_reconstruct(agg, cfg)
    return fixed_decode(FixedPointVector(field_sum, cfg.frac_bits), cfg)


def smc_protect(vector: np.ndarray, cfg: SmcConfig,
                rng: np.random.Generator) -> list[ShareBundle]:
    """Client-side: fixed-encode then split. Convenience for the round loop."""
    return shamir_split(fixed_encode(vector, cfg).raw, cfg, rng)
