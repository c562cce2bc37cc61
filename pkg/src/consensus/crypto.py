"""
Simulation-grade cryptography for the consensus simulator.

Provides:
- Canonical, length-prefixed encoding of protocol values (bit-exact across runs)
- 32-byte digests (SHA3-256 over the canonical encoding)
- Deterministic key generation from integer seeds
- Signatures that embed the signer address, so recovery is a read plus a
  keyed-digest verification

Signatures are `address (20 bytes) || HMAC-SHA3-256(secret, digest)`. Keys are
recorded in a process-wide registry when generated so any node can verify a
signature made by any other key generated in the same process.
"""

import hashlib
import hmac
import logging
import struct
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

from .errors import ConfigurationError, DecodeError


logger = logging.getLogger(__name__)

DIGEST_SIZE = 32
ADDRESS_SIZE = 20
SIGNATURE_SIZE = ADDRESS_SIZE + DIGEST_SIZE

Digest = bytes
Address = bytes
Signature = bytes

ZERO_DIGEST: Digest = bytes(DIGEST_SIZE)
ZERO_ADDRESS: Address = bytes(ADDRESS_SIZE)

_SECRET_DOMAIN = b"ibft-sim|secret|"
_ADDRESS_DOMAIN = b"ibft-sim|address|"


# =============================================================================
# Canonical encoding
# =============================================================================

def encode(value: Any) -> bytes:
    """
    Encode a value tree into canonical bytes.

    Supported leaves are None, bool, non-negative int (8 bytes, big endian),
    bytes and str; lists and tuples encode as length-prefixed sequences.
    """
    if value is None:
        return b"N"
    if isinstance(value, bool):
        return b"T" if value else b"F"
    if isinstance(value, int):
        if value < 0:
            raise ValueError(f"Cannot encode negative integer {value}")
        return b"I" + struct.pack(">Q", value)
    if isinstance(value, (bytes, bytearray)):
        return b"B" + struct.pack(">I", len(value)) + bytes(value)
    if isinstance(value, str):
        data = value.encode("utf-8")
        return b"S" + struct.pack(">I", len(data)) + data
    if isinstance(value, (list, tuple)):
        return b"L" + struct.pack(">I", len(value)) + b"".join(encode(v) for v in value)
    raise TypeError(f"Cannot encode value of type {type(value).__name__}")


def decode(data: bytes) -> Any:
    """Decode canonical bytes back into a value tree (sequences become tuples)."""
    value, offset = _decode_at(data, 0)
    if offset != len(data):
        raise DecodeError(f"{len(data) - offset} trailing bytes after canonical value")
    return value


def _decode_at(data: bytes, offset: int) -> Tuple[Any, int]:
    if offset >= len(data):
        raise DecodeError("Unexpected end of canonical bytes")
    tag = data[offset:offset + 1]
    offset += 1
    if tag == b"N":
        return None, offset
    if tag == b"T":
        return True, offset
    if tag == b"F":
        return False, offset
    if tag == b"I":
        _require(data, offset, 8)
        return struct.unpack_from(">Q", data, offset)[0], offset + 8
    if tag in (b"B", b"S", b"L"):
        _require(data, offset, 4)
        length = struct.unpack_from(">I", data, offset)[0]
        offset += 4
        if tag == b"L":
            items = []
            for _ in range(length):
                item, offset = _decode_at(data, offset)
                items.append(item)
            return tuple(items), offset
        _require(data, offset, length)
        raw = data[offset:offset + length]
        if tag == b"S":
            try:
                return raw.decode("utf-8"), offset + length
            except UnicodeDecodeError as e:
                raise DecodeError(f"Invalid utf-8 string: {e}") from e
        return raw, offset + length
    raise DecodeError(f"Unknown canonical tag {tag!r}")


def _require(data: bytes, offset: int, size: int):
    if offset + size > len(data):
        raise DecodeError("Truncated canonical bytes")


# =============================================================================
# Hashing
# =============================================================================

def hash_digest(payload: bytes) -> Digest:
    """Fixed-width digest of a canonical payload."""
    return hashlib.sha3_256(payload).digest()


class DigestRegistry:
    """
    Records every (payload, digest) pair seen and fails loudly on a collision.
    """

    def __init__(self):
        self._payloads: Dict[Digest, bytes] = {}

    def record(self, payload: bytes, digest: Optional[Digest] = None) -> Digest:
        digest = digest if digest is not None else hash_digest(payload)
        seen = self._payloads.setdefault(digest, payload)
        if seen != payload:
            raise AssertionError(f"Digest collision on {digest.hex()}")
        return digest

    def __len__(self) -> int:
        return len(self._payloads)


# =============================================================================
# Keys and signatures
# =============================================================================

@dataclass(frozen=True)
class SecretKey:
    seed: int
    secret: bytes
    address: Address

    def __repr__(self) -> str:
        return f"SecretKey(seed={self.seed}, address={self.address.hex()[:8]})"


_KEY_REGISTRY: Dict[Address, bytes] = {}


def key_gen(seed: int) -> Tuple[SecretKey, Address]:
    """
    Deterministically derive a key pair from an integer seed.

    Raises:
        ConfigurationError: if a different seed already produced the same address
    """
    secret = hashlib.sha3_256(_SECRET_DOMAIN + encode(seed)).digest()
    address = hashlib.sha3_256(_ADDRESS_DOMAIN + secret).digest()[:ADDRESS_SIZE]

    known = _KEY_REGISTRY.setdefault(address, secret)
    if known != secret:
        raise ConfigurationError(
            f"Seed {seed} produced address {address.hex()} already owned by another key"
        )
    return SecretKey(seed=seed, secret=secret, address=address), address


def address_of(sk: SecretKey) -> Address:
    return sk.address


def sign(digest: Digest, sk: SecretKey) -> Signature:
    tag = hmac.new(sk.secret, digest, hashlib.sha3_256).digest()
    return sk.address + tag


def recover_address(digest: Digest, sig: Signature) -> Optional[Address]:
    """
    Recover the signer of `digest`.

    Returns None when the signature is malformed, made by an unknown key,
    or made over a different digest.
    """
    if not isinstance(sig, (bytes, bytearray)) or len(sig) != SIGNATURE_SIZE:
        return None
    address = bytes(sig[:ADDRESS_SIZE])
    secret = _KEY_REGISTRY.get(address)
    if secret is None:
        return None
    expected = hmac.new(secret, digest, hashlib.sha3_256).digest()
    if not hmac.compare_digest(expected, bytes(sig[ADDRESS_SIZE:])):
        return None
    return address


def short_hex(value: Optional[bytes], length: int = 8) -> Optional[str]:
    """Short hex rendering used in traces and logs."""
    if value is None:
        return None
    return value.hex()[:length]
