"""Additively homomorphic public-key encryption over fixed-point
encoded real matrices.

Paillier with the g = n + 1 simplification: ciphertext of m is
(1 + m*n) * r^n mod n^2, so adding plaintexts is multiplying
ciphertexts.  Reals are encoded as round(x * S) with a power-of-two
scale S; signed values wrap modulo n and are recovered from the upper
half of the residue range.

Key sizes are configurable; the 2048-bit default is for deployments,
test suites use much smaller keys (the homomorphic identities do not
depend on the modulus size).
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from curie.errors import CurieError


class ParamError(CurieError):
    pass


class Overflow(CurieError):
    pass


class DimMismatch(CurieError):
    pass


class KeyMismatch(CurieError):
    pass


DEFAULT_KEY_BITS = 2048
DEFAULT_SCALE_BITS = 20


@dataclass(frozen=True)
class HEParams:
    """Key size, fixed-point scale, and session magnitude bounds.

    ``validate`` proves the no-overflow condition before any session
    starts: the signed plaintext headroom (n/3) must exceed
    n_max * (S * v_max)^2 * m_max, a deliberately loose bound on any
    value the session's additions can accumulate.
    """

    key_bits: int = DEFAULT_KEY_BITS
    scale_bits: int = DEFAULT_SCALE_BITS
    n_max: int = 10_000          # total pooled rows
    m_max: int = 64              # design-matrix width
    v_max: float = 256.0         # absolute bound on any matrix entry

    @property
    def scale(self) -> int:
        return 1 << self.scale_bits

    @property
    def plaintext_bound(self) -> int:
        # conservative session bound; see class docstring
        return int(self.n_max * (self.scale * self.v_max) ** 2 * self.m_max)

    def validate(self) -> None:
        if self.key_bits < 16:
            raise ParamError("key size too small to form a modulus")
        if self.scale_bits < 1:
            raise ParamError("fixed-point scale must be at least 2^1")
        if min(self.n_max, self.m_max) < 1 or self.v_max <= 0:
            raise ParamError("session bounds must be positive")
        headroom = (1 << (self.key_bits - 1)) // 3
        if headroom <= self.plaintext_bound:
            raise ParamError(
                f"{self.key_bits}-bit modulus cannot hold the session bound "
                f"{self.plaintext_bound} (headroom {headroom})")


# --------------------------------------------------------------------------
# fixed-point encoding

def encode_fixed(x: float, scale: int, bound: int | None = None) -> int:
    """round(x * scale); raises :class:`Overflow` past *bound*."""
    if not math.isfinite(x):
        raise Overflow(f"cannot encode non-finite value {x!r}")
    k = round(x * scale)
    if bound is not None and abs(k) > bound:
        raise Overflow(f"encoded magnitude {abs(k)} exceeds bound {bound}")
    return int(k)


def decode_fixed(k: int, scale: int) -> float:
    return k / scale


# --------------------------------------------------------------------------
# keys

_SMALL_PRIMES = [3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53]


def _is_probable_prime(n: int, rng: random.Random, rounds: int = 40) -> bool:
    if n < 2:
        return False
    for p in _SMALL_PRIMES:
        if n % p == 0:
            return n == p
    d = n - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = (x * x) % n
            if x == n - 1:
                break
        else:
            return False
    return True


def _random_prime(bits: int, rng: random.Random) -> int:
    while True:
        candidate = rng.getrandbits(bits) | (1 << (bits - 1)) | 1
        if _is_probable_prime(candidate, rng):
            return candidate


@dataclass(frozen=True)
class PublicKey:
    n: int
    nsquare: int = field(init=False, repr=False)
    max_int: int = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "nsquare", self.n * self.n)
        object.__setattr__(self, "max_int", self.n // 3)

    def encrypt_raw(self, m: int, rng: random.Random) -> int:
        """Encrypt a residue m in [0, n); fresh obfuscation every call."""
        if not 0 <= m < self.n:
            raise Overflow(f"plaintext residue {m} outside [0, n)")
        nude = (1 + m * self.n) % self.nsquare
        r = rng.randrange(1, self.n)
        return (nude * pow(r, self.n, self.nsquare)) % self.nsquare

    def add_raw(self, c1: int, c2: int) -> int:
        return (c1 * c2) % self.nsquare

    def to_signed(self, residue: int) -> int:
        return residue - self.n if residue > self.n // 2 else residue

    def from_signed(self, k: int) -> int:
        if abs(k) > self.max_int:
            raise Overflow(f"signed plaintext {k} exceeds key capacity")
        return k % self.n


@dataclass(frozen=True)
class SecretKey:
    public: PublicKey
    lam: int = field(repr=False)
    mu: int = field(repr=False)

    def decrypt_raw(self, c: int) -> int:
        n, n2 = self.public.n, self.public.nsquare
        u = pow(c, self.lam, n2)
        return (((u - 1) // n) * self.mu) % n


@dataclass(frozen=True)
class KeyPair:
    public: PublicKey
    secret: SecretKey


def keygen(params: HEParams, rng: random.Random) -> KeyPair:
    """Generate a keypair satisfying decrypt(encrypt(x)) == x for every
    encodable x.  Deterministic given the rng state."""
    params.validate()
    half = params.key_bits // 2
    while True:
        p = _random_prime(half, rng)
        q = _random_prime(params.key_bits - half, rng)
        if p == q:
            continue
        n = p * q
        if n.bit_length() == params.key_bits:
            break
    phi = (p - 1) * (q - 1)
    public = PublicKey(n)
    mu = pow(phi, -1, n)
    return KeyPair(public, SecretKey(public, phi, mu))


# --------------------------------------------------------------------------
# matrices

@dataclass(frozen=True)
class CipherMatrix:
    public: PublicKey
    scale: int
    shape: tuple[int, int]
    cells: tuple[int, ...]  # row-major ciphertexts

    def __post_init__(self):
        if self.shape[0] * self.shape[1] != len(self.cells):
            raise DimMismatch("cell count does not match shape")


def _as_matrix(M) -> np.ndarray:
    A = np.asarray(M, dtype=float)
    if A.ndim == 1:
        A = A.reshape(-1, 1)
    if A.ndim != 2:
        raise DimMismatch(f"expected a matrix, got ndim={A.ndim}")
    return A


def encode_matrix(M, scale: int, bound: int | None = None) -> list[list[int]]:
    A = _as_matrix(M)
    return [[encode_fixed(float(v), scale, bound) for v in row] for row in A]


def encrypt_matrix(pk: PublicKey, M, scale: int,
                   rng: random.Random) -> CipherMatrix:
    """Element-wise encode + encrypt.  All entries are validated before
    the first ciphertext is produced, so overflow aborts cleanly."""
    encoded = encode_matrix(M, scale, bound=pk.max_int)
    return encrypt_encoded_matrix(pk, encoded, scale, rng)


def encrypt_encoded_matrix(pk: PublicKey, K: Sequence[Sequence[int]],
                           scale: int, rng: random.Random) -> CipherMatrix:
    rows = len(K)
    cols = len(K[0]) if rows else 0
    for row in K:
        if len(row) != cols:
            raise DimMismatch("ragged encoded matrix")
        for k in row:
            if abs(k) > pk.max_int:
                raise Overflow(f"encoded value {k} exceeds key capacity")
    cells = tuple(pk.encrypt_raw(pk.from_signed(int(k)), rng)
                  for row in K for k in row)
    return CipherMatrix(pk, scale, (rows, cols), cells)


def encrypt_residue_matrix(pk: PublicKey, R: Sequence[Sequence[int]],
                           scale: int, rng: random.Random) -> CipherMatrix:
    """Encrypt raw residues in [0, n) without sign mapping (masks)."""
    rows = len(R)
    cols = len(R[0]) if rows else 0
    cells = tuple(pk.encrypt_raw(int(v), rng) for row in R for v in row)
    return CipherMatrix(pk, scale, (rows, cols), cells)


def add_cipher(c1: CipherMatrix, c2: CipherMatrix) -> CipherMatrix:
    """Homomorphic entry-wise addition."""
    if c1.public.n != c2.public.n:
        raise KeyMismatch("ciphertexts under different public keys")
    if c1.scale != c2.scale:
        raise KeyMismatch(f"scale mismatch: {c1.scale} vs {c2.scale}")
    if c1.shape != c2.shape:
        raise DimMismatch(f"shape mismatch: {c1.shape} vs {c2.shape}")
    pk = c1.public
    cells = tuple(pk.add_raw(a, b) for a, b in zip(c1.cells, c2.cells))
    return CipherMatrix(pk, c1.scale, c1.shape, cells)


def decrypt_residue_matrix(sk: SecretKey, C: CipherMatrix) -> list[list[int]]:
    rows, cols = C.shape
    flat = [sk.decrypt_raw(c) for c in C.cells]
    return [flat[r * cols:(r + 1) * cols] for r in range(rows)]


def decrypt_matrix(sk: SecretKey, C: CipherMatrix) -> np.ndarray:
    residues = decrypt_residue_matrix(sk, C)
    pk = sk.public
    return np.array([[decode_fixed(pk.to_signed(v), C.scale) for v in row]
                     for row in residues])


# --------------------------------------------------------------------------
# wire format

def _pack_bigint(v: int) -> bytes:
    raw = v.to_bytes((v.bit_length() + 7) // 8 or 1, "big")
    return len(raw).to_bytes(4, "big") + raw


def _unpack_bigint(buf: bytes, offset: int) -> tuple[int, int]:
    size = int.from_bytes(buf[offset:offset + 4], "big")
    start = offset + 4
    return int.from_bytes(buf[start:start + size], "big"), start + size


def serialize_cipher_matrix(C: CipherMatrix) -> bytes:
    head = (C.shape[0].to_bytes(2, "big") + C.shape[1].to_bytes(2, "big")
            + C.scale.to_bytes(8, "big"))
    return head + b"".join(_pack_bigint(c) for c in C.cells)


def parse_cipher_matrix(buf: bytes, pk: PublicKey, offset: int = 0
                        ) -> tuple[CipherMatrix, int]:
    rows = int.from_bytes(buf[offset:offset + 2], "big")
    cols = int.from_bytes(buf[offset + 2:offset + 4], "big")
    scale = int.from_bytes(buf[offset + 4:offset + 12], "big")
    offset += 12
    cells = []
    for _ in range(rows * cols):
        v, offset = _unpack_bigint(buf, offset)
        cells.append(v)
    return CipherMatrix(pk, scale, (rows, cols), tuple(cells)), offset


def serialize_public_key(pk: PublicKey) -> bytes:
    return _pack_bigint(pk.n)


def parse_public_key(buf: bytes, offset: int = 0) -> tuple[PublicKey, int]:
    n, offset = _unpack_bigint(buf, offset)
    return PublicKey(n), offset
