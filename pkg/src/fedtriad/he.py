"""Desk-scale CKKS over Z[X]/(X^n + 1).

Vectors of up to n/2 reals (or complex values) are encoded through the
canonical embedding at odd powers of the primitive 2n-th root of unity,
scaled and rounded to an integer polynomial, then encrypted under an RLWE
key pair. Supported homomorphic operations: addition at equal level/scale,
and one multiplication per remaining chain level with rescaling.

The coefficient modulus is a product of primes near the configured bit
sizes. Following common practice the trailing chain prime is reserved for
key material and fresh ciphertexts start at the product of the others;
rescaling drops data primes from the end of the active chain. Key switching
after multiplication uses base-2^w digit decomposition, which keeps the
relinearisation noise a few bits above the RLWE noise floor.

Polynomial products are exact: operands are reduced modulo a stack of
NTT-friendly word-size primes, multiplied by negacyclic NTT, and CRT
recombined before reduction modulo the ciphertext modulus. A schoolbook
path doubles as the correctness oracle at small degree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import sympy

from .errors import AlignmentError, CapacityError, ConfigurationError, DepthError

_RELIN_DIGIT_BITS = 20


@dataclass
class CkksParams:
    poly_degree: int = 4096
    coeff_modulus_bits: tuple = (60, 40, 40, 60)
    scale_bits: int = 40
    error_std: float = 3.2

    def __post_init__(self):
        n = self.poly_degree
        if n < 8 or n & (n - 1):
            raise ConfigurationError("poly_degree must be a power of two >= 8",
                                     key="he.poly_degree")
        if len(self.coeff_modulus_bits) < 1:
            raise ConfigurationError("need at least one chain prime", key="he.chain_bits")
        if self.error_std < 0:
            raise ConfigurationError("error_std must be >= 0", key="he.error_std")
        self.coeff_modulus_bits = tuple(int(b) for b in self.coeff_modulus_bits)
        self._primes = _chain_primes(self.coeff_modulus_bits)
        if len(self._primes) >= 2:
            self.data_primes = self._primes[:-1]
            self.key_prime = self._primes[-1]
        else:
            self.data_primes = self._primes
            self.key_prime = None
        if self.scale < 2 or self.scale >= math.prod(self.data_primes):
            raise ConfigurationError("scale must be below the data modulus",
                                     key="he.scale_bits")

    @property
    def scale(self) -> float:
        return float(2 ** self.scale_bits)

    @property
    def slots(self) -> int:
        return self.poly_degree // 2

    @property
    def fresh_level(self) -> int:
        return len(self.data_primes) - 1

    def modulus_at(self, level: int) -> int:
        if level < 0 or level > self.fresh_level:
            raise DepthError(f"no modulus at level {level}")
        return math.prod(self.data_primes[: level + 1])


@dataclass
class Plaintext:
    coeffs: np.ndarray   # object array of ints, length n
    scale: float


@dataclass
class Ciphertext:
    c0: np.ndarray
    c1: np.ndarray
    level: int
    scale: float


@dataclass
class KeyPair:
    secret: np.ndarray                 # ternary, int64
    public: tuple                      # (b, a) object arrays mod fresh modulus
    relin: list = field(default_factory=list)  # [(rb_i, ra_i)] for digits T^i
    relin_digit_bits: int = _RELIN_DIGIT_BITS


# --- prime machinery ---------------------------------------------------------

_CHAIN_CACHE: dict[tuple, list[int]] = {}
_NTT_PRIME_CACHE: dict[int, list[int]] = {}
_NTT_TABLE_CACHE: dict[tuple[int, int], dict] = {}


def _chain_primes(bits: tuple) -> list[int]:
    key = tuple(bits)
    if key not in _CHAIN_CACHE:
        primes, seen = [], set()
        for b in bits:
            p = sympy.prevprime(2 ** b)
            while p in seen:
                p = sympy.prevprime(p)
            seen.add(p)
            primes.append(int(p))
        _CHAIN_CACHE[key] = primes
    return list(_CHAIN_CACHE[key])


def _ntt_primes(n: int, total_bits: int) -> list[int]:
    """Word-size primes p = 1 (mod 2n) whose product exceeds 2^total_bits."""
    primes = _NTT_PRIME_CACHE.setdefault(n, [])
    have = sum(p.bit_length() - 1 for p in primes)
    candidate = primes[-1] - 2 * n if primes else (1 << 31) - ((1 << 31) - 1) % (2 * n)
    while have < total_bits:
        while not sympy.isprime(candidate):
            candidate -= 2 * n
            if candidate < 2 * n:
                raise CapacityError(f"ran out of NTT primes for degree {n}")
        primes.append(candidate)
        have += candidate.bit_length() - 1
        candidate -= 2 * n
    out, got = [], 0
    for p in primes:
        out.append(p)
        got += p.bit_length() - 1
        if got >= total_bits:
            return out
    return out


def _primitive_root_2n(p: int, n: int) -> int:
    g = sympy.primitive_root(p)
    psi = pow(g, (p - 1) // (2 * n), p)
    assert pow(psi, n, p) == p - 1
    return psi


def _ntt_tables(p: int, n: int) -> dict:
    key = (p, n)
    if key in _NTT_TABLE_CACHE:
        return _NTT_TABLE_CACHE[key]
    psi = _primitive_root_2n(p, n)
    omega = pow(psi, 2, p)
    psi_pows = np.array([pow(psi, i, p) for i in range(n)], dtype=np.int64)
    ipsi = pow(psi, p - 2, p)
    ipsi_pows = np.array([pow(ipsi, i, p) for i in range(n)], dtype=np.int64)
    # Per-stage twiddles for the iterative radix-2 transform.
    stage_w, stage_iw = {}, {}
    length = 2
    iomega = pow(omega, p - 2, p)
    while length <= n:
        step = n // length
        stage_w[length] = np.array(
            [pow(omega, step * k, p) for k in range(length // 2)], dtype=np.int64
        )
        stage_iw[length] = np.array(
            [pow(iomega, step * k, p) for k in range(length // 2)], dtype=np.int64
        )
        length <<= 1
    rev = np.zeros(n, dtype=np.int64)
    bits = n.bit_length() - 1
    for i in range(n):
        rev[i] = int(format(i, f"0{bits}b")[::-1], 2)
    tables = {
        "psi": psi_pows, "ipsi": ipsi_pows,
        "w": stage_w, "iw": stage_iw,
        "rev": rev, "n_inv": pow(n, p - 2, p),
    }
    _NTT_TABLE_CACHE[key] = tables
    return tables


def _ntt(a: np.ndarray, p: int, stage_w: dict, rev: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    a = a[rev].copy()
    length = 2
    while length <= n:
        half = length >> 1
        w = stage_w[length]
        b = a.reshape(-1, length)
        lo = b[:, :half]
        hi = b[:, half:]
        t = hi * w % p
        new_hi = (lo - t) % p
        lo[:] = (lo + t) % p
        hi[:] = new_hi
        length <<= 1
    return a


def negacyclic_mul(a: np.ndarray, b: np.ndarray, q: int,
                   bound_a: int | None = None, bound_b: int | None = None) -> np.ndarray:
    """Exact product of two polynomials mod (X^n + 1, q)."""
    n = len(a)
    if n <= 64:
        return _negacyclic_schoolbook(a, b, q)
    ba = bound_a if bound_a is not None else q
    bb = bound_b if bound_b is not None else q
    need_bits = (n * ba * bb).bit_length() + 1
    primes = _ntt_primes(n, need_bits)

    residues = []
    for p in primes:
        tab = _ntt_tables(p, n)
        ra = _to_int64_mod(a, p)
        rb = _to_int64_mod(b, p)
        ra = ra * tab["psi"] % p
        rb = rb * tab["psi"] % p
        fa = _ntt(ra, p, tab["w"], tab["rev"])
        fb = _ntt(rb, p, tab["w"], tab["rev"])
        fc = fa * fb % p
        rc = _ntt(fc, p, tab["iw"], tab["rev"])
        rc = rc * tab["n_inv"] % p
        rc = rc * tab["ipsi"] % p
        residues.append(rc)

    return _crt_combine(residues, primes, q)


def _to_int64_mod(a: np.ndarray, p: int) -> np.ndarray:
    if a.dtype == object:
        return np.array([int(x) % p for x in a], dtype=np.int64)
    return np.asarray(a, dtype=np.int64) % p


def _crt_combine(residues: list[np.ndarray], primes: list[int], q: int) -> np.ndarray:
    m_total = math.prod(primes)
    acc = np.zeros(len(residues[0]), dtype=object)
    for r, p in zip(residues, primes):
        m_i = m_total // p
        c_i = (m_i * pow(m_i, p - 2, p)) % m_total
        acc = acc + r.astype(object) * c_i
    acc = acc % m_total
    # Convolution coefficients of canonical-form inputs are non-negative,
    # but the negacyclic wrap subtracts the upper half, so recentre.
    half = m_total >> 1
    return np.array([ (int(x) if x <= half else int(x) - m_total) % q for x in acc],
                    dtype=object)


def _negacyclic_schoolbook(a: np.ndarray, b: np.ndarray, q: int) -> np.ndarray:
    n = len(a)
    out = [0] * n
    av = [int(x) for x in a]
    bv = [int(x) for x in b]
    for i, ai in enumerate(av):
        if ai == 0:
            continue
        for j, bj in enumerate(bv):
            k = i + j
            if k < n:
                out[k] += ai * bj
            else:
                out[k - n] -= ai * bj
    return np.array([v % q for v in out], dtype=object)


# --- small helpers -----------------------------------------------------------

def _obj(a) -> np.ndarray:
    return np.array([int(x) for x in a], dtype=object)


def _mod_q(a: np.ndarray, q: int) -> np.ndarray:
    return np.array([int(x) % q for x in a], dtype=object)


def _obj_mod(a, q: int) -> np.ndarray:
    """int64/object array reduced into [0, q) as Python ints (q may exceed 64 bits)."""
    return np.array([int(x) % q for x in a], dtype=object)


def _add_q(a: np.ndarray, b: np.ndarray, q: int) -> np.ndarray:
    return np.array([(int(x) + int(y)) % q for x, y in zip(a, b)], dtype=object)


def _center(a: np.ndarray, q: int) -> np.ndarray:
    half = q >> 1
    return np.array([int(x) - q if int(x) > half else int(x) for x in a], dtype=object)


def _uniform_mod(rng: np.random.Generator, count: int, q: int) -> np.ndarray:
    bits = q.bit_length()
    words = (bits + 62) // 63
    out = []
    while len(out) < count:
        rows = rng.integers(0, 1 << 63, size=(count - len(out) + 8, words), dtype=np.int64)
        for row in rows:
            val = 0
            for w in row:
                val = (val << 63) | int(w)
            val &= (1 << bits) - 1
            if val < q:
                out.append(val)
                if len(out) == count:
                    break
    return np.array(out, dtype=object)


def _gaussian_poly(rng: np.random.Generator, n: int, std: float) -> np.ndarray:
    if std == 0:
        return np.zeros(n, dtype=np.int64)
    return np.rint(rng.normal(0.0, std, size=n)).astype(np.int64)


def _ternary_poly(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(-1, 2, size=n, dtype=np.int64)


# --- encoding ----------------------------------------------------------------

def encode(z, params: CkksParams, scale: float | None = None) -> Plaintext:
    """Embed up to n/2 values into an integer polynomial at the given scale."""
    n = params.poly_degree
    z = np.asarray(z, dtype=np.complex128).ravel()
    if len(z) > params.slots:
        raise CapacityError(f"{len(z)} values exceed {params.slots} slots")
    scale = params.scale if scale is None else scale
    full = np.zeros(params.slots, dtype=np.complex128)
    full[: len(z)] = z
    # Extend to the conjugate-symmetric evaluation vector, invert the
    # embedding with an FFT twist, scale, and round.
    u = np.empty(n, dtype=np.complex128)
    u[: params.slots] = full
    u[params.slots :] = np.conj(full[::-1])
    zeta_inv = np.exp(-1j * np.pi * np.arange(n) / n)
    coeffs_f = zeta_inv * np.fft.fft(u) / n
    coeffs = np.rint(np.real(coeffs_f) * scale)
    return Plaintext(np.array([int(v) for v in coeffs], dtype=object), scale)


def decode(pt: Plaintext, params: CkksParams) -> np.ndarray:
    n = params.poly_degree
    c = np.array([float(int(x)) for x in pt.coeffs])
    zeta = np.exp(1j * np.pi * np.arange(n) / n)
    u = n * np.fft.ifft(c * zeta)
    return u[: params.slots] / pt.scale


# --- keys and encryption -----------------------------------------------------

def keygen(params: CkksParams, rng: np.random.Generator) -> KeyPair:
    n = params.poly_degree
    q = params.modulus_at(params.fresh_level)
    s = _ternary_poly(rng, n)
    a = _uniform_mod(rng, n, q)
    e = _gaussian_poly(rng, n, params.error_std)
    b = _mod_q(-negacyclic_mul(a, s, q, bound_b=2) + e, q)

    s_sq = negacyclic_mul(s, s, q, bound_a=2, bound_b=2)
    digits = max(1, -(-q.bit_length() // _RELIN_DIGIT_BITS))
    relin = []
    t_pow = 1
    for _ in range(digits):
        ra = _uniform_mod(rng, n, q)
        re = _gaussian_poly(rng, n, params.error_std)
        rb = _mod_q(-negacyclic_mul(ra, s, q, bound_b=2) + re
                    + (s_sq * t_pow) % q, q)
        relin.append((rb, ra))
        t_pow = (t_pow << _RELIN_DIGIT_BITS)
    return KeyPair(secret=s, public=(b, a), relin=relin)


def encrypt(pt: Plaintext, public, params: CkksParams,
            rng: np.random.Generator) -> Ciphertext:
    n = params.poly_degree
    level = params.fresh_level
    q = params.modulus_at(level)
    b, a = public
    v = _ternary_poly(rng, n)
    e0 = _gaussian_poly(rng, n, params.error_std)
    e1 = _gaussian_poly(rng, n, params.error_std)
    c0 = _mod_q(negacyclic_mul(b, v, q, bound_b=2) + e0 + _mod_q(pt.coeffs, q), q)
    c1 = _mod_q(negacyclic_mul(a, v, q, bound_b=2) + e1, q)
    return Ciphertext(c0=c0, c1=c1, level=level, scale=pt.scale)


def decrypt(ct: Ciphertext, secret: np.ndarray, params: CkksParams) -> Plaintext:
    q = params.modulus_at(ct.level)
    m = _add_q(ct.c0, negacyclic_mul(ct.c1, secret, q, bound_b=2), q)
    return Plaintext(_center(m, q), ct.scale)


# --- homomorphic operations --------------------------------------------------

def _check_aligned(ct1: Ciphertext, ct2: Ciphertext):
    if ct1.level != ct2.level:
        raise AlignmentError(f"levels differ: {ct1.level} vs {ct2.level}")
    if abs(ct1.scale - ct2.scale) > 1e-6 * max(ct1.scale, ct2.scale):
        raise AlignmentError(f"scales differ: {ct1.scale} vs {ct2.scale}")


def he_add(ct1: Ciphertext, ct2: Ciphertext, params: CkksParams) -> Ciphertext:
    _check_aligned(ct1, ct2)
    q = params.modulus_at(ct1.level)
    return Ciphertext(
        c0=_add_q(ct1.c0, ct2.c0, q),
        c1=_add_q(ct1.c1, ct2.c1, q),
        level=ct1.level,
        scale=ct1.scale,
    )


def he_sum(cts: list[Ciphertext], params: CkksParams) -> Ciphertext:
    acc = cts[0]
    for ct in cts[1:]:
        acc = he_add(acc, ct, params)
    return acc


def _rescale(c: np.ndarray, q_from: int, q_drop: int, q_to: int) -> np.ndarray:
    centered = _center(c, q_from)
    half = q_drop >> 1
    out = [(int(x) + half) // q_drop for x in centered]   # round-half-up on centred values
    return np.array([v % q_to for v in out], dtype=object)


def he_mul_rescale(ct1: Ciphertext, ct2: Ciphertext, relin_key: KeyPair | list,
                   params: CkksParams) -> Ciphertext:
    """Slotwise product with relinearisation, then one rescale level drop."""
    _check_aligned(ct1, ct2)
    if ct1.level < 1:
        raise DepthError("modulus chain exhausted: no level left to rescale into")
    level = ct1.level
    q = params.modulus_at(level)
    relin = relin_key.relin if isinstance(relin_key, KeyPair) else relin_key

    d0 = negacyclic_mul(ct1.c0, ct2.c0, q)
    d1 = _add_q(negacyclic_mul(ct1.c0, ct2.c1, q), negacyclic_mul(ct1.c1, ct2.c0, q), q)
    d2 = negacyclic_mul(ct1.c1, ct2.c1, q)

    # base-2^w digit decomposition of d2 against the relin key
    t_mask = (1 << _RELIN_DIGIT_BITS) - 1
    rem = [int(x) for x in d2]
    c0, c1 = d0, d1
    for rb, ra in relin:
        digit = np.array([r & t_mask for r in rem], dtype=object)
        if np.any(digit != 0):
            # keys live at the fresh modulus; reduce into the current one
            rb_q = _mod_q(rb, q)
            ra_q = _mod_q(ra, q)
            c0 = _add_q(c0, negacyclic_mul(rb_q, digit, q, bound_b=1 << _RELIN_DIGIT_BITS), q)
            c1 = _add_q(c1, negacyclic_mul(ra_q, digit, q, bound_b=1 << _RELIN_DIGIT_BITS), q)
        rem = [r >> _RELIN_DIGIT_BITS for r in rem]
        if not any(rem):
            break

    q_drop = params.data_primes[level]
    q_to = params.modulus_at(level - 1)
    return Ciphertext(
        c0=_rescale(c0, q, q_drop, q_to),
        c1=_rescale(c1, q, q_drop, q_to),
        level=level - 1,
        scale=ct1.scale * ct2.scale / q_drop,
    )


# --- gradient packing --------------------------------------------------------

def pack_vector(vector: np.ndarray, params: CkksParams) -> list[np.ndarray]:
    """Chunk a flat real vector into slot-size pieces (last piece zero-padded)."""
    v = np.asarray(vector, dtype=np.float64).ravel()
    return [v[i : i + params.slots] for i in range(0, max(len(v), 1), params.slots)]


def unpack_vector(chunks: list[np.ndarray], dim: int) -> np.ndarray:
    flat = np.concatenate([np.real(np.asarray(c)) for c in chunks])
    return flat[:dim]


def encrypt_vector(vector: np.ndarray, public, params: CkksParams,
                   rng: np.random.Generator) -> list[Ciphertext]:
    return [encrypt(encode(chunk, params), public, params, rng)
            for chunk in pack_vector(vector, params)]


def decrypt_vector(cts: list[Ciphertext], secret, params: CkksParams, dim: int) -> np.ndarray:
    return unpack_vector([decode(decrypt(ct, secret, params), params) for ct in cts], dim)
