"""Identity, key generation, and session tokens.

Each participant gets an Ed25519 keypair derived from a seed, and a signed
session token that gates every contract call. Tokens expire at a simulated
timestamp; an expired or tampered token is rejected before any state is
touched.

Tokens sign their canonical binary encoding. A JWT-compatible three-part
wire form (base64url header.claims.signature) is provided for transport,
carrying the same Ed25519 signature over the canonical encoding, so the
wire form and the binary form accept and reject identically.
"""

from __future__ import annotations

import base64
import enum
import json
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .codec import CodecError, Reader, Writer, sha256
from .seeds import derive_seed


class AuthError(Exception):
    pass


class TokenDecodeError(AuthError):
    pass


class ZeroTTL(AuthError):
    pass


class TokenStatus(enum.Enum):
    VALID = "valid"
    EXPIRED = "expired"
    BAD_SIGNATURE = "bad_signature"


class Role(enum.Enum):
    CLIENT = "client"
    AGENT = "agent"


@dataclass(frozen=True)
class KeyPair:
    private_bytes: bytes
    public_bytes: bytes

    def private_key(self) -> Ed25519PrivateKey:
        return Ed25519PrivateKey.from_private_bytes(self.private_bytes)

    def public_key(self) -> Ed25519PublicKey:
        return Ed25519PublicKey.from_public_bytes(self.public_bytes)


def key_generate(seed: int, participant_id: str = "") -> KeyPair:
    """Deterministic keypair: the 32-byte Ed25519 seed is derived from
    (seed, participant_id), so distinct participants never collide."""
    material = derive_seed(seed, participant_id, "ed25519").to_bytes(8, "little")
    # Stretch the 8-byte derived seed to the 32 bytes Ed25519 requires.
    private = sha256(material + participant_id.encode("utf-8"))
    key = Ed25519PrivateKey.from_private_bytes(private)
    public = key.public_key().public_bytes_raw()
    return KeyPair(private_bytes=private, public_bytes=public)


@dataclass(frozen=True)
class Identity:
    participant_id: str
    role: Role
    public_key: bytes


@dataclass(frozen=True)
class SessionToken:
    participant_id: str
    role: Role
    issued_at: int
    expires_at: int
    signature: bytes

    def signing_body(self) -> bytes:
        w = Writer()
        w.str_(self.participant_id)
        w.str_(self.role.value)
        w.u64(self.issued_at)
        w.u64(self.expires_at)
        return w.getvalue()

    def encode(self) -> bytes:
        w = Writer()
        w.raw(self.signing_body())
        w.bytes_(self.signature)
        return w.getvalue()

    @classmethod
    def decode(cls, data: bytes) -> "SessionToken":
        r = Reader(data)
        participant_id = r.str_()
        role_raw = r.str_()
        try:
            role = Role(role_raw)
        except ValueError:
            raise CodecError(f"unknown role {role_raw!r}") from None
        issued_at = r.u64()
        expires_at = r.u64()
        signature = r.bytes_()
        r.expect_end()
        return cls(participant_id, role, issued_at, expires_at, signature)


def _b64url_encode(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def _b64url_decode(text: str) -> bytes:
    padding = -len(text) % 4
    try:
        return base64.urlsafe_b64decode(text + "=" * padding)
    except (ValueError, TypeError) as exc:
        raise TokenDecodeError(f"bad base64url segment: {exc}") from exc


def token_to_wire(token: SessionToken) -> str:
    """JWT-shaped three-part form. The signature is the Ed25519 signature
    over the token's canonical binary body, not over the base64 text, so
    re-encoding cannot change what verifies."""
    header = {"alg": "EdDSA", "typ": "JWT"}
    claims = {
        "sub": token.participant_id,
        "role": token.role.value,
        "iat": token.issued_at,
        "exp": token.expires_at,
    }
    parts = [
        _b64url_encode(json.dumps(header, sort_keys=True, separators=(",", ":")).encode()),
        _b64url_encode(json.dumps(claims, sort_keys=True, separators=(",", ":")).encode()),
        _b64url_encode(token.signature),
    ]
    return ".".join(parts)


def token_from_wire(wire: str) -> SessionToken:
    parts = wire.split(".")
    if len(parts) != 3:
        raise TokenDecodeError(f"expected 3 segments, got {len(parts)}")
    try:
        header = json.loads(_b64url_decode(parts[0]))
        claims = json.loads(_b64url_decode(parts[1]))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise TokenDecodeError(f"bad JSON segment: {exc}") from exc
    if not isinstance(header, dict) or header.get("alg") != "EdDSA":
        raise TokenDecodeError("unsupported or missing alg")
    try:
        return SessionToken(
            participant_id=str(claims["sub"]),
            role=Role(claims["role"]),
            issued_at=int(claims["iat"]),
            expires_at=int(claims["exp"]),
            signature=_b64url_decode(parts[2]),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise TokenDecodeError(f"bad claims: {exc}") from exc


class TokenIssuer:
    """Issues and checks session tokens against registered identities."""

    def __init__(self, ttl: int):
        if ttl <= 0:
            raise ZeroTTL("ttl must be positive")
        self.ttl = ttl

    def issue(self, keypair: KeyPair, participant_id: str, role: Role, now: int) -> SessionToken:
        unsigned = SessionToken(participant_id, role, now, now + self.ttl, b"")
        signature = keypair.private_key().sign(unsigned.signing_body())
        return SessionToken(participant_id, role, now, now + self.ttl, signature)

    @staticmethod
    def check(token: SessionToken, public_key_bytes: bytes, now: int) -> TokenStatus:
        """Signature first, then expiry: a forged token is never reported
        as merely expired. Expiry is half-open; now == expires_at is expired."""
        try:
            key = Ed25519PublicKey.from_public_bytes(public_key_bytes)
            key.verify(token.signature, token.signing_body())
        except (InvalidSignature, ValueError):
            return TokenStatus.BAD_SIGNATURE
        if now >= token.expires_at:
            return TokenStatus.EXPIRED
        return TokenStatus.VALID
