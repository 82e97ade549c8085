"""Protocol messages and their canonical byte encoding.

The canonical encoding is the wire format and the signing input: fixed field
order, little-endian fixed-width integers, one-byte enum tags, one-byte
presence tags for optional fields. It is deterministic and injective over
field values; see docs/wire_format.md for the byte-exact layout.

Signing payloads are domain-separated with a leading tag byte so a signature
produced for one purpose can never be replayed for another:

  0x01  account owner signing a transfer order
  0x02  authority counter-signing (voting on) a transfer order
  0x03  authority authenticating a cross-shard update

Orders carry the sender's public key next to the signature: authorities must
be able to validate a signature before they know the account (the account may
not exist yet on their side), and the address binds the key by hash.
"""

from __future__ import annotations

import enum
import functools
import hashlib
import struct
from dataclasses import dataclass

from .core import (
    ADDRESS_LEN,
    AMOUNT_MAX,
    BALANCE_MAX,
    BALANCE_MIN,
    MAX_AUTHORITY_NAME_LEN,
    MAX_USER_DATA_LEN,
    PUBLIC_KEY_LEN,
    SEQUENCE_MAX,
    SIGNATURE_LEN,
    Committee,
    ErrorCode,
    KeyPair,
    ProtocolError,
    address_of,
    verify_signature,
)

WIRE_VERSION = 1
MAX_ERROR_DETAIL_LEN = 120

DOMAIN_ORDER = b"\x01"
DOMAIN_VOTE = b"\x02"
DOMAIN_XSHARD = b"\x03"


class DecodeError(ValueError):
    """Raised when bytes do not parse as a well-formed message."""


class RecipientKind(enum.IntEnum):
    INTERNAL = 0  # an account on this settlement network
    PRIMARY = 1   # an account on the backing primary ledger


@dataclass(frozen=True)
class Recipient:
    kind: RecipientKind
    address: bytes

    def __post_init__(self) -> None:
        if len(self.address) != ADDRESS_LEN:
            raise DecodeError("bad recipient address length")

    @property
    def is_primary(self) -> bool:
        return self.kind is RecipientKind.PRIMARY


def internal_recipient(address: bytes) -> Recipient:
    return Recipient(RecipientKind.INTERNAL, address)


def primary_recipient(address: bytes) -> Recipient:
    return Recipient(RecipientKind.PRIMARY, address)


@dataclass(frozen=True)
class TransferOrder:
    """A sender-signed payment request; one per account sequence number."""

    sender: bytes
    recipient: Recipient
    amount: int
    sequence: int
    user_data: bytes | None
    sender_key: bytes
    signature: bytes


@dataclass(frozen=True)
class SignedTransferOrder:
    """A single authority's counter-signature (vote) on a transfer order."""

    order: TransferOrder
    authority: str
    signature: bytes


@dataclass(frozen=True)
class CertifiedTransferOrder:
    """A transfer order plus a quorum of authority signatures.

    Signatures are stored sorted by authority name so certificate bytes are
    canonical.
    """

    order: TransferOrder
    signatures: tuple[tuple[str, bytes], ...]

    @property
    def sender(self) -> bytes:
        return self.order.sender

    @property
    def recipient(self) -> Recipient:
        return self.order.recipient

    @property
    def amount(self) -> int:
        return self.order.amount

    @property
    def sequence(self) -> int:
        return self.order.sequence

    def value(self) -> TransferOrder:
        return self.order


@dataclass(frozen=True)
class ConfirmationOrder:
    certificate: CertifiedTransferOrder


@dataclass(frozen=True)
class RedeemTransaction:
    certificate: CertifiedTransferOrder


@dataclass(frozen=True)
class PrimarySynchronizationOrder:
    """Credit event from the primary ledger, tagged with its position in the
    per-shard funding stream (indices start at 1 and never skip)."""

    recipient: bytes
    amount: int
    transaction_index: int


@dataclass(frozen=True)
class CrossShardUpdate:
    """Recipient-credit message between two shards of the same authority."""

    shard_id: int
    channel_sequence: int
    certificate: CertifiedTransferOrder
    authority_signature: bytes


@dataclass(frozen=True)
class CrossShardAck:
    shard_id: int
    next_channel_sequence: int


@dataclass(frozen=True)
class AccountInfoRequest:
    account: bytes
    query_sequence: int | None = None
    query_received_start: int | None = None
    query_synchronized_start: int | None = None


@dataclass(frozen=True)
class AccountInfoResponse:
    account: bytes
    balance: int
    next_sequence: int
    pending: SignedTransferOrder | None = None
    requested_certificate: CertifiedTransferOrder | None = None
    requested_received: tuple[CertifiedTransferOrder, ...] | None = None
    requested_synchronized: tuple[PrimarySynchronizationOrder, ...] | None = None


@dataclass(frozen=True)
class ErrorResponse:
    code: ErrorCode
    next_sequence: int | None = None
    detail: str = ""


Message = (
    TransferOrder
    | SignedTransferOrder
    | CertifiedTransferOrder
    | ConfirmationOrder
    | PrimarySynchronizationOrder
    | CrossShardUpdate
    | AccountInfoRequest
    | AccountInfoResponse
    | CrossShardAck
    | ErrorResponse
    | RedeemTransaction
)


# --------------------------------------------------------------------------
# Low-level readers/writers
# --------------------------------------------------------------------------

class _Reader:
    __slots__ = ("data", "pos")

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise DecodeError("truncated message")
        chunk = self.data[self.pos : end]
        self.pos = end
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def i64(self) -> int:
        return struct.unpack("<q", self.take(8))[0]

    def done(self) -> None:
        if self.pos != len(self.data):
            raise DecodeError("trailing bytes")


def _u32(value: int) -> bytes:
    if not 0 <= value < 2**32:
        raise DecodeError(f"u32 out of range: {value}")
    return struct.pack("<I", value)


def _u64(value: int) -> bytes:
    if not 0 <= value <= AMOUNT_MAX:
        raise DecodeError(f"u64 out of range: {value}")
    return struct.pack("<Q", value)


def _i64(value: int) -> bytes:
    if not BALANCE_MIN <= value <= BALANCE_MAX:
        raise DecodeError(f"i64 out of range: {value}")
    return struct.pack("<q", value)


def _name(name: str) -> bytes:
    raw = name.encode()
    if not 1 <= len(raw) <= MAX_AUTHORITY_NAME_LEN:
        raise DecodeError(f"bad authority name: {name!r}")
    return bytes([len(raw)]) + raw


def _read_name(r: _Reader) -> str:
    n = r.u8()
    if not 1 <= n <= MAX_AUTHORITY_NAME_LEN:
        raise DecodeError("bad name length")
    try:
        return r.take(n).decode()
    except UnicodeDecodeError as exc:
        raise DecodeError("name not utf-8") from exc


# --------------------------------------------------------------------------
# Per-message encoding
# --------------------------------------------------------------------------

def _order_unsigned_bytes(order: TransferOrder) -> bytes:
    if len(order.sender) != ADDRESS_LEN or len(order.sender_key) != PUBLIC_KEY_LEN:
        raise DecodeError("bad address or key length")
    if not 0 < order.amount <= AMOUNT_MAX:
        raise DecodeError("transfer amount must be positive")
    if not 0 <= order.sequence <= SEQUENCE_MAX:
        raise DecodeError("sequence out of range")
    parts = [
        order.sender,
        bytes([order.recipient.kind]),
        order.recipient.address,
        _u64(order.amount),
        _u64(order.sequence),
    ]
    if order.user_data is None:
        parts.append(b"\x00")
    else:
        if not 1 <= len(order.user_data) <= MAX_USER_DATA_LEN:
            raise DecodeError("user_data must be 1..32 bytes")
        parts.append(b"\x01" + bytes([len(order.user_data)]) + order.user_data)
    parts.append(order.sender_key)
    return b"".join(parts)


def order_signing_payload(order: TransferOrder) -> bytes:
    return DOMAIN_ORDER + _order_unsigned_bytes(order)


def vote_signing_payload(order: TransferOrder) -> bytes:
    return DOMAIN_VOTE + _order_unsigned_bytes(order)


def order_digest(order: TransferOrder) -> bytes:
    """Content digest used to compare orders for conflicts; ignores the
    sender signature bytes (two signatures over identical content are the
    same payment)."""
    return hashlib.sha256(order_signing_payload(order)).digest()


def _encode_transfer_order(order: TransferOrder) -> bytes:
    if len(order.signature) != SIGNATURE_LEN:
        raise DecodeError("bad signature length")
    return _order_unsigned_bytes(order) + order.signature


def _decode_transfer_order(r: _Reader) -> TransferOrder:
    sender = r.take(ADDRESS_LEN)
    kind_raw = r.u8()
    try:
        kind = RecipientKind(kind_raw)
    except ValueError as exc:
        raise DecodeError(f"bad recipient kind {kind_raw}") from exc
    recipient = Recipient(kind, r.take(ADDRESS_LEN))
    amount = r.u64()
    if amount == 0:
        raise DecodeError("transfer amount must be positive")
    sequence = r.u64()
    user_data = None
    tag = r.u8()
    if tag == 1:
        n = r.u8()
        if not 1 <= n <= MAX_USER_DATA_LEN:
            raise DecodeError("bad user_data length")
        user_data = r.take(n)
    elif tag != 0:
        raise DecodeError("bad option tag")
    sender_key = r.take(PUBLIC_KEY_LEN)
    signature = r.take(SIGNATURE_LEN)
    return TransferOrder(sender, recipient, amount, sequence, user_data, sender_key, signature)


def _encode_vote(vote: SignedTransferOrder) -> bytes:
    if len(vote.signature) != SIGNATURE_LEN:
        raise DecodeError("bad signature length")
    return _encode_transfer_order(vote.order) + _name(vote.authority) + vote.signature


def _decode_vote(r: _Reader) -> SignedTransferOrder:
    order = _decode_transfer_order(r)
    name = _read_name(r)
    return SignedTransferOrder(order, name, r.take(SIGNATURE_LEN))


def _encode_certificate(cert: CertifiedTransferOrder) -> bytes:
    parts = [_encode_transfer_order(cert.order), struct.pack("<H", len(cert.signatures))]
    for name, sig in cert.signatures:
        if len(sig) != SIGNATURE_LEN:
            raise DecodeError("bad signature length")
        parts.append(_name(name))
        parts.append(sig)
    return b"".join(parts)


def _decode_certificate(r: _Reader) -> CertifiedTransferOrder:
    order = _decode_transfer_order(r)
    count = r.u16()
    entries = []
    previous = None
    for _ in range(count):
        name = _read_name(r)
        # Strictly ascending names keep certificate bytes canonical and make
        # duplicate signers unrepresentable.
        if previous is not None and name <= previous:
            raise DecodeError("certificate signers not in canonical order")
        previous = name
        entries.append((name, r.take(SIGNATURE_LEN)))
    return CertifiedTransferOrder(order, tuple(entries))


def _encode_sync_order(sync: PrimarySynchronizationOrder) -> bytes:
    if len(sync.recipient) != ADDRESS_LEN:
        raise DecodeError("bad recipient length")
    if sync.amount <= 0:
        raise DecodeError("funding amount must be positive")
    if sync.transaction_index < 1:
        raise DecodeError("transaction index starts at 1")
    return sync.recipient + _u64(sync.amount) + _u64(sync.transaction_index)


def _decode_sync_order(r: _Reader) -> PrimarySynchronizationOrder:
    recipient = r.take(ADDRESS_LEN)
    amount = r.u64()
    index = r.u64()
    if amount == 0:
        raise DecodeError("funding amount must be positive")
    if index < 1:
        raise DecodeError("transaction index starts at 1")
    return PrimarySynchronizationOrder(recipient, amount, index)


def xshard_signing_payload(shard_id: int, channel_sequence: int, certificate: CertifiedTransferOrder) -> bytes:
    digest = hashlib.sha256(_encode_certificate(certificate)).digest()
    return DOMAIN_XSHARD + _u32(shard_id) + _u64(channel_sequence) + digest


def _encode_xshard_update(upd: CrossShardUpdate) -> bytes:
    if len(upd.authority_signature) != SIGNATURE_LEN:
        raise DecodeError("bad signature length")
    return (
        _u32(upd.shard_id)
        + _u64(upd.channel_sequence)
        + _encode_certificate(upd.certificate)
        + upd.authority_signature
    )


def _decode_xshard_update(r: _Reader) -> CrossShardUpdate:
    shard_id = r.u32()
    channel_sequence = r.u64()
    cert = _decode_certificate(r)
    return CrossShardUpdate(shard_id, channel_sequence, cert, r.take(SIGNATURE_LEN))


def _encode_xshard_ack(ack: CrossShardAck) -> bytes:
    return _u32(ack.shard_id) + _u64(ack.next_channel_sequence)


def _decode_xshard_ack(r: _Reader) -> CrossShardAck:
    return CrossShardAck(r.u32(), r.u64())


def _opt_u64(value: int | None) -> bytes:
    return b"\x00" if value is None else b"\x01" + _u64(value)


def _read_opt_u64(r: _Reader) -> int | None:
    tag = r.u8()
    if tag == 0:
        return None
    if tag != 1:
        raise DecodeError("bad option tag")
    return r.u64()


def _encode_info_request(req: AccountInfoRequest) -> bytes:
    if len(req.account) != ADDRESS_LEN:
        raise DecodeError("bad account length")
    return (
        req.account
        + _opt_u64(req.query_sequence)
        + _opt_u64(req.query_received_start)
        + _opt_u64(req.query_synchronized_start)
    )


def _decode_info_request(r: _Reader) -> AccountInfoRequest:
    return AccountInfoRequest(
        r.take(ADDRESS_LEN), _read_opt_u64(r), _read_opt_u64(r), _read_opt_u64(r)
    )


def _encode_info_response(resp: AccountInfoResponse) -> bytes:
    if len(resp.account) != ADDRESS_LEN:
        raise DecodeError("bad account length")
    parts = [resp.account, _i64(resp.balance), _u64(resp.next_sequence)]
    if resp.pending is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01" + _encode_vote(resp.pending))
    if resp.requested_certificate is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01" + _encode_certificate(resp.requested_certificate))
    if resp.requested_received is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01" + struct.pack("<H", len(resp.requested_received)))
        parts.extend(_encode_certificate(c) for c in resp.requested_received)
    if resp.requested_synchronized is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01" + struct.pack("<H", len(resp.requested_synchronized)))
        parts.extend(_encode_sync_order(s) for s in resp.requested_synchronized)
    return b"".join(parts)


def _decode_info_response(r: _Reader) -> AccountInfoResponse:
    account = r.take(ADDRESS_LEN)
    balance = r.i64()
    next_sequence = r.u64()

    def opt(decode):
        tag = r.u8()
        if tag == 0:
            return None
        if tag != 1:
            raise DecodeError("bad option tag")
        return decode()

    pending = opt(lambda: _decode_vote(r))
    requested_certificate = opt(lambda: _decode_certificate(r))
    requested_received = opt(
        lambda: tuple(_decode_certificate(r) for _ in range(r.u16()))
    )
    requested_synchronized = opt(
        lambda: tuple(_decode_sync_order(r) for _ in range(r.u16()))
    )
    return AccountInfoResponse(
        account,
        balance,
        next_sequence,
        pending,
        requested_certificate,
        requested_received,
        requested_synchronized,
    )


def _encode_error(err: ErrorResponse) -> bytes:
    raw = err.detail.encode()[:MAX_ERROR_DETAIL_LEN]
    return _u32(int(err.code)) + _opt_u64(err.next_sequence) + bytes([len(raw)]) + raw


def _decode_error(r: _Reader) -> ErrorResponse:
    code_raw = r.u32()
    try:
        code = ErrorCode(code_raw)
    except ValueError as exc:
        raise DecodeError(f"unknown error code {code_raw}") from exc
    next_sequence = _read_opt_u64(r)
    n = r.u8()
    if n > MAX_ERROR_DETAIL_LEN:
        raise DecodeError("error detail too long")
    try:
        detail = r.take(n).decode()
    except UnicodeDecodeError as exc:
        raise DecodeError("detail not utf-8") from exc
    return ErrorResponse(code, next_sequence, detail)


# --------------------------------------------------------------------------
# Envelopes: kind tag registry and top-level encode/decode
# --------------------------------------------------------------------------

_KIND_TAGS: dict[type, int] = {
    TransferOrder: 1,
    SignedTransferOrder: 2,
    CertifiedTransferOrder: 3,
    ConfirmationOrder: 4,
    PrimarySynchronizationOrder: 5,
    CrossShardUpdate: 6,
    AccountInfoRequest: 7,
    AccountInfoResponse: 8,
    CrossShardAck: 9,
    ErrorResponse: 10,
    RedeemTransaction: 11,
}

_ENCODERS = {
    TransferOrder: _encode_transfer_order,
    SignedTransferOrder: _encode_vote,
    CertifiedTransferOrder: _encode_certificate,
    ConfirmationOrder: lambda m: _encode_certificate(m.certificate),
    PrimarySynchronizationOrder: _encode_sync_order,
    CrossShardUpdate: _encode_xshard_update,
    AccountInfoRequest: _encode_info_request,
    AccountInfoResponse: _encode_info_response,
    CrossShardAck: _encode_xshard_ack,
    ErrorResponse: _encode_error,
    RedeemTransaction: lambda m: _encode_certificate(m.certificate),
}

_DECODERS = {
    1: _decode_transfer_order,
    2: _decode_vote,
    3: _decode_certificate,
    4: lambda r: ConfirmationOrder(_decode_certificate(r)),
    5: _decode_sync_order,
    6: _decode_xshard_update,
    7: _decode_info_request,
    8: _decode_info_response,
    9: _decode_xshard_ack,
    10: _decode_error,
    11: lambda r: RedeemTransaction(_decode_certificate(r)),
}


def canonical_encode(message: Message) -> bytes:
    """Canonical payload bytes of a message (no envelope header)."""
    encoder = _ENCODERS.get(type(message))
    if encoder is None:
        raise TypeError(f"not a protocol message: {type(message).__name__}")
    return encoder(message)


def encode_envelope(message: Message) -> bytes:
    return bytes([WIRE_VERSION, _KIND_TAGS[type(message)]]) + canonical_encode(message)


def decode_envelope(data: bytes) -> Message:
    if len(data) < 2:
        raise DecodeError("short envelope")
    if data[0] != WIRE_VERSION:
        raise DecodeError(f"unsupported wire version {data[0]}")
    decoder = _DECODERS.get(data[1])
    if decoder is None:
        raise DecodeError(f"unknown message kind {data[1]}")
    r = _Reader(data[2:])
    message = decoder(r)
    r.done()
    return message


# --------------------------------------------------------------------------
# Order construction and validation
# --------------------------------------------------------------------------

def make_transfer_order(
    keypair: KeyPair,
    recipient: Recipient,
    amount: int,
    sequence: int,
    user_data: bytes | None = None,
) -> TransferOrder:
    """Sign a new transfer order. Zero-value transfers are rejected here."""
    if amount <= 0 or amount > AMOUNT_MAX:
        raise ProtocolError(ErrorCode.INVALID_ORDER, "transfer amount must be positive")
    if user_data is not None and not 1 <= len(user_data) <= MAX_USER_DATA_LEN:
        raise ProtocolError(ErrorCode.INVALID_ORDER, "user_data must be 1..32 bytes")
    unsigned = TransferOrder(
        sender=keypair.address,
        recipient=recipient,
        amount=amount,
        sequence=sequence,
        user_data=user_data,
        sender_key=keypair.public,
        signature=b"\x00" * SIGNATURE_LEN,
    )
    signature = keypair.sign(order_signing_payload(unsigned))
    return TransferOrder(
        unsigned.sender,
        recipient,
        amount,
        sequence,
        user_data,
        keypair.public,
        signature,
    )


def verify_order_signature(order: TransferOrder) -> None:
    """Check the sender's own signature; the key must hash to the address."""
    if address_of(order.sender_key) != order.sender:
        raise ProtocolError(ErrorCode.INVALID_SIGNATURE, "sender key does not match address")
    if not verify_signature(order.sender_key, order_signing_payload(order), order.signature):
        raise ProtocolError(ErrorCode.INVALID_SIGNATURE, "bad sender signature")


def make_vote(order: TransferOrder, authority: str, keypair: KeyPair) -> SignedTransferOrder:
    return SignedTransferOrder(order, authority, keypair.sign(vote_signing_payload(order)))


def verify_vote(vote: SignedTransferOrder, committee: Committee) -> None:
    key = committee.key_of(vote.authority)
    if not verify_signature(key, vote_signing_payload(vote.order), vote.signature):
        raise ProtocolError(ErrorCode.BAD_SIGNATURE, f"bad vote from {vote.authority}")


def make_certificate(
    order: TransferOrder,
    votes: list[SignedTransferOrder],
    committee: Committee,
) -> CertifiedTransferOrder:
    """Aggregate the first quorum of distinct valid votes into a certificate.

    Any vote that is not a valid committee signature over exactly this order
    is an error; duplicate authorities beyond the first are ignored.
    """
    payload = vote_signing_payload(order)
    selected: dict[str, bytes] = {}
    for vote in votes:
        if vote.order != order:
            raise ProtocolError(ErrorCode.INVALID_VOTE, f"vote from {vote.authority} is for a different order")
        if vote.authority not in committee:
            raise ProtocolError(ErrorCode.INVALID_VOTE, f"vote from unknown authority {vote.authority}")
        if not verify_signature(committee.key_of(vote.authority), payload, vote.signature):
            raise ProtocolError(ErrorCode.INVALID_VOTE, f"bad signature from {vote.authority}")
        if vote.authority not in selected:
            selected[vote.authority] = vote.signature
            if len(selected) == committee.quorum_threshold:
                break
    if len(selected) < committee.quorum_threshold:
        raise ProtocolError(
            ErrorCode.INSUFFICIENT_VOTES,
            f"{len(selected)} distinct votes, need {committee.quorum_threshold}",
        )
    return CertifiedTransferOrder(order, tuple(sorted(selected.items())))


@functools.lru_cache(maxsize=8192)
def _check_certificate_cached(cert: CertifiedTransferOrder, committee: Committee) -> ProtocolError | None:
    try:
        verify_order_signature(cert.order)
        seen: set[str] = set()
        payload = vote_signing_payload(cert.order)
        for name, sig in cert.signatures:
            if name in seen:
                continue
            key = committee.key_of(name)  # raises UNKNOWN_AUTHORITY
            if not verify_signature(key, payload, sig):
                raise ProtocolError(ErrorCode.BAD_SIGNATURE, f"bad signature from {name}")
            seen.add(name)
        if len(seen) < committee.quorum_threshold:
            raise ProtocolError(
                ErrorCode.INSUFFICIENT_QUORUM,
                f"{len(seen)} signatures, need {committee.quorum_threshold}",
            )
    except ProtocolError as exc:
        return exc
    return None


def check_certificate(cert: CertifiedTransferOrder, committee: Committee) -> None:
    """Validate a certificate: a quorum of distinct committee signatures over
    the order, plus the sender's own signature. Pure in (cert, committee), so
    results are memoized.
    """
    error = _check_certificate_cached(cert, committee)
    if error is not None:
        raise error


def is_valid_certificate(cert: CertifiedTransferOrder, committee: Committee) -> bool:
    return _check_certificate_cached(cert, committee) is None
