"""Foundational types: amounts, addresses, committees, and signatures.

Everything here is an immutable value, safe to share freely. Amounts are
64-bit unsigned integers with checked arithmetic (overflow is a hard error,
never wraparound); authority-side balances are signed and may be temporarily
negative, bounded to a signed 64-bit range for the wire.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

ADDRESS_LEN = 32
PUBLIC_KEY_LEN = 32
SIGNATURE_LEN = 64
SECRET_KEY_LEN = 32

AMOUNT_MAX = 2**64 - 1
BALANCE_MIN = -(2**63)
BALANCE_MAX = 2**63 - 1
SEQUENCE_MAX = 2**64 - 1

MAX_USER_DATA_LEN = 32
MAX_AUTHORITY_NAME_LEN = 32


class ErrorCode(enum.IntEnum):
    """Machine-readable protocol failure codes, shared across the wire."""

    # Structural / message-level
    INVALID_ORDER = 1
    AMOUNT_OVERFLOW = 2
    # Certificate validation
    UNKNOWN_AUTHORITY = 10
    BAD_SIGNATURE = 11
    INSUFFICIENT_QUORUM = 12
    INSUFFICIENT_VOTES = 13
    INVALID_VOTE = 14
    # Authority handlers
    WRONG_SHARD = 20
    INVALID_SIGNATURE = 21
    UNKNOWN_SENDER = 22
    PREVIOUS_TRANSFER_PENDING = 23
    UNEXPECTED_SEQUENCE = 24
    INSUFFICIENT_BALANCE = 25
    MISSING_EARLIER_CERTIFICATES = 26
    PRIMARY_RECIPIENT = 27
    UNEXPECTED_CHANNEL_SEQUENCE = 28
    UNKNOWN_ACCOUNT = 29
    CERTIFICATE_NOT_FOUND = 30
    SKIPPED_FUNDING_INDEX = 31
    # Primary ledger
    INVALID_CERTIFICATE = 40
    ALREADY_REDEEMED = 41
    NOT_PRIMARY_RECIPIENT = 42
    INSUFFICIENT_PRIMARY_FUNDS = 43
    # Client side
    QUORUM_UNREACHABLE = 50
    AUTHORITY_REJECTION = 51
    PENDING_ORDER_EXISTS = 52
    INSUFFICIENT_FUNDS = 53


class ProtocolError(Exception):
    """A typed protocol failure.

    `next_sequence` is populated for sequence-related rejections so a client
    can drive catch-up (it reports the authority's expected sequence number).
    """

    def __init__(
        self,
        code: ErrorCode,
        message: str = "",
        *,
        next_sequence: int | None = None,
    ):
        super().__init__(message or code.name)
        self.code = code
        self.message = message or code.name
        self.next_sequence = next_sequence

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        return f"ProtocolError({self.code.name}, {self.message!r})"


CERTIFICATE_ERROR_CODES = frozenset(
    {
        ErrorCode.UNKNOWN_AUTHORITY,
        ErrorCode.BAD_SIGNATURE,
        ErrorCode.INSUFFICIENT_QUORUM,
        ErrorCode.INVALID_CERTIFICATE,
        ErrorCode.INVALID_ORDER,
    }
)


# --------------------------------------------------------------------------
# Amount / balance arithmetic
# --------------------------------------------------------------------------

def check_amount(value: int) -> int:
    """Validate a transferable amount: unsigned 64-bit."""
    if not isinstance(value, int) or isinstance(value, bool):
        raise ProtocolError(ErrorCode.INVALID_ORDER, "amount must be an integer")
    if value < 0 or value > AMOUNT_MAX:
        raise ProtocolError(ErrorCode.AMOUNT_OVERFLOW, f"amount out of range: {value}")
    return value


def check_balance(value: int) -> int:
    """Validate a signed balance (authority accounts may go negative)."""
    if value < BALANCE_MIN or value > BALANCE_MAX:
        raise ProtocolError(ErrorCode.AMOUNT_OVERFLOW, f"balance out of range: {value}")
    return value


def amount_add(a: int, b: int) -> int:
    return check_amount(a + b)


def amount_sub(a: int, b: int) -> int:
    if b > a:
        raise ProtocolError(ErrorCode.AMOUNT_OVERFLOW, f"amount underflow: {a} - {b}")
    return a - b


def balance_add(balance: int, amount: int) -> int:
    return check_balance(balance + amount)


def balance_sub(balance: int, amount: int) -> int:
    return check_balance(balance - amount)


# --------------------------------------------------------------------------
# Addresses and shard assignment
# --------------------------------------------------------------------------

def address_of(public_key: bytes) -> bytes:
    """Derive an account address: SHA-256 of the public verification key."""
    if len(public_key) != PUBLIC_KEY_LEN:
        raise ValueError(f"bad public key length: {len(public_key)}")
    return hashlib.sha256(public_key).digest()


def shard_of(address: bytes, number_of_shards: int) -> int:
    """Map an address to a shard: big-endian u64 of the first 8 digest bytes,
    modulo the shard count. Identical on every authority with the same count.
    """
    if number_of_shards < 1:
        raise ValueError("number_of_shards must be >= 1")
    return int.from_bytes(address[:8], "big") % number_of_shards


# --------------------------------------------------------------------------
# Committee
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Committee:
    """The fixed roster of authorities and the derived quorum arithmetic.

    A valid committee has 3f+1 members for some f >= 0; any 2f+1 of them form
    a quorum, and any two quorums intersect in at least f+1 members.
    """

    authorities: tuple[tuple[str, bytes], ...]

    def __post_init__(self) -> None:
        n = len(self.authorities)
        if n < 1 or (n - 1) % 3 != 0:
            raise ValueError(f"committee size must be 3f+1, got {n}")
        names = [name for name, _ in self.authorities]
        if len(set(names)) != n:
            raise ValueError("duplicate authority names")
        for name, key in self.authorities:
            if not name or len(name.encode()) > MAX_AUTHORITY_NAME_LEN:
                raise ValueError(f"bad authority name: {name!r}")
            if len(key) != PUBLIC_KEY_LEN:
                raise ValueError(f"bad verification key for {name}")
        object.__setattr__(self, "_keys", dict(self.authorities))

    @property
    def faults_tolerated(self) -> int:
        return (len(self.authorities) - 1) // 3

    @property
    def quorum_threshold(self) -> int:
        return 2 * self.faults_tolerated + 1

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.authorities]

    def key_of(self, name: str) -> bytes:
        key = self._keys.get(name)  # type: ignore[attr-defined]
        if key is None:
            raise ProtocolError(ErrorCode.UNKNOWN_AUTHORITY, f"unknown authority: {name}")
        return key

    def __contains__(self, name: str) -> bool:
        return name in self._keys  # type: ignore[attr-defined]


def committee_quorum_threshold(committee: Committee) -> int:
    return committee.quorum_threshold


# --------------------------------------------------------------------------
# Signatures (ed25519)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class KeyPair:
    """An ed25519 keypair. The signer object is cached since loading a secret
    key costs ~35us, which dominates small-message signing otherwise."""

    secret: bytes
    public: bytes = field(compare=False, default=b"")

    def __post_init__(self) -> None:
        if len(self.secret) != SECRET_KEY_LEN:
            raise ValueError("secret key must be 32 bytes")
        signer = Ed25519PrivateKey.from_private_bytes(self.secret)
        object.__setattr__(self, "public", signer.public_key().public_bytes_raw())
        object.__setattr__(self, "_signer", signer)

    @classmethod
    def generate(cls, seed: bytes | None = None) -> "KeyPair":
        if seed is None:
            return cls(Ed25519PrivateKey.generate().private_bytes_raw())
        if len(seed) != SECRET_KEY_LEN:
            seed = hashlib.sha256(seed).digest()
        return cls(seed)

    @property
    def address(self) -> bytes:
        return address_of(self.public)

    def sign(self, payload: bytes) -> bytes:
        return self._signer.sign(payload)  # type: ignore[attr-defined]


_verifier_cache: dict[bytes, Ed25519PublicKey] = {}


def verify_signature(public_key: bytes, payload: bytes, signature: bytes) -> bool:
    """True iff `signature` is a valid ed25519 signature on `payload`."""
    if len(signature) != SIGNATURE_LEN or len(public_key) != PUBLIC_KEY_LEN:
        return False
    verifier = _verifier_cache.get(public_key)
    if verifier is None:
        try:
            verifier = Ed25519PublicKey.from_public_bytes(public_key)
        except ValueError:
            return False
        if len(_verifier_cache) < 65536:
            _verifier_cache[public_key] = verifier
    try:
        verifier.verify(signature, payload)
        return True
    except InvalidSignature:
        return False
