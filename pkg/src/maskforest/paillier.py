"""Paillier cryptosystem, g = n + 1 variant.

Used only on a handful of small non-negative integers per protocol round
(seed shares, local sample sizes, starting offsets).

Randomness for key generation and encryption defaults to the OS entropy
pool (``random.SystemRandom``). A seeded ``random.Random`` may be passed
instead to make a simulated round reproducible; that mode is for testing
and benchmarking only and gives no secrecy.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

import gmpy2

SUPPORTED_KEYSIZES = (512, 1024, 2048, 3072)
DEFAULT_KEYSIZE = 2048

_system_random = random.SystemRandom()


class InvalidCiphertext(ValueError):
    pass


@dataclass(frozen=True)
class PublicKey:
    n: int
    n_squared: int = field(init=False, repr=False, compare=False)
    g: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "n_squared", self.n * self.n)
        object.__setattr__(self, "g", self.n + 1)

    @property
    def keysize(self) -> int:
        return self.n.bit_length()

    def to_hex(self) -> str:
        return format(self.n, "x")

    @classmethod
    def from_hex(cls, text: str) -> "PublicKey":
        return cls(int(text, 16))


@dataclass(frozen=True, repr=False)
class SecretKey:
    lam: int
    mu: int

    def __repr__(self):
        return "SecretKey(<hidden>)"


@dataclass(frozen=True)
class Ciphertext:
    value: int

    def to_hex(self) -> str:
        return format(self.value, "x")

    @classmethod
    def from_hex(cls, text: str) -> "Ciphertext":
        return cls(int(text, 16))


def _random_prime(bits: int, rng: random.Random) -> int:
    while True:
        # top two bits set so that p*q has exactly 2*bits bits
        candidate = rng.getrandbits(bits) | (0b11 << (bits - 2)) | 1
        if gmpy2.is_prime(candidate, 50):
            return candidate


def gen(keysize: int = DEFAULT_KEYSIZE, rng: random.Random | None = None):
    """Generate ``(PublicKey, SecretKey)`` with ``n`` of exactly ``keysize`` bits."""
    if keysize not in SUPPORTED_KEYSIZES:
        raise ValueError(f"unsupported keysize {keysize}; expected one of {SUPPORTED_KEYSIZES}")
    rng = rng or _system_random
    half = keysize // 2
    while True:
        p = _random_prime(half, rng)
        q = _random_prime(half, rng)
        if p == q:
            continue
        n = p * q
        if n.bit_length() != keysize or math.gcd(n, (p - 1) * (q - 1)) != 1:
            continue
        break
    pk = PublicKey(n)
    lam = math.lcm(p - 1, q - 1)
    # with g = n + 1, L(g^lam mod n^2) = lam mod n
    mu = pow(_L(pow(pk.g, lam, pk.n_squared), n), -1, n)
    return pk, SecretKey(lam, mu)


def _L(u: int, n: int) -> int:
    return (u - 1) // n


def enc(x: int, pk: PublicKey, rng: random.Random | None = None) -> Ciphertext:
    if not 0 <= x < pk.n:
        raise ValueError("plaintext out of range [0, n)")
    rng = rng or _system_random
    while True:
        r = rng.randrange(1, pk.n)
        if math.gcd(r, pk.n) == 1:
            break
    # g^x = (1 + n)^x = 1 + x*n  (mod n^2)
    gx = (1 + x * pk.n) % pk.n_squared
    return Ciphertext(gx * pow(r, pk.n, pk.n_squared) % pk.n_squared)


def dec(c: Ciphertext, sk: SecretKey, pk: PublicKey) -> int:
    if not 0 < c.value < pk.n_squared or math.gcd(c.value, pk.n_squared) != 1:
        raise InvalidCiphertext("ciphertext is not a unit modulo n^2")
    return _L(pow(c.value, sk.lam, pk.n_squared), pk.n) * sk.mu % pk.n


def hom_add(a: Ciphertext, b: Ciphertext, pk: PublicKey) -> Ciphertext:
    return Ciphertext(a.value * b.value % pk.n_squared)


def hom_sum(items, pk: PublicKey) -> Ciphertext:
    """Fold ``hom_add`` over a non-empty iterable of ciphertexts."""
    items = iter(items)
    try:
        acc = next(items)
    except StopIteration:
        raise ValueError("hom_sum needs at least one ciphertext") from None
    for c in items:
        acc = hom_add(acc, c, pk)
    return acc


def scalar_mul(k: int, c: Ciphertext, pk: PublicKey) -> Ciphertext:
    if k < 0:
        raise ValueError("scalar must be non-negative")
    return Ciphertext(pow(c.value, k, pk.n_squared))
