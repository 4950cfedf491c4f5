"""
Pluggable crypto provider.

Two implementations with the same failure semantics:

- CryptographyProvider (default): X25519, HKDF-SHA256, AES-GCM, Ed25519
  from `cryptography`. Key material and nonces come from the caller's
  seeded stream so runs stay reproducible.
- HashCryptoProvider: a toy construction built from SHA-256/HMAC
  (finite-field DH for agreement, hash-keyed stream cipher with an HMAC
  tag, registry-backed hash signatures). Useful for fast sweeps and as a
  cross-check that attacks depend on binding semantics only.
"""
from __future__ import annotations
import hashlib
import hmac
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from forklab.errors import DecryptionError
from forklab.settings import CryptoBackend

logger = logging.getLogger(__name__)

NONCE_SIZE = 12
KEY_SIZE = 32


@dataclass(frozen=True, slots=True)
class KeyPair:
    public: bytes
    secret: bytes = field(repr=False, metadata={"record": False})


class CryptoProvider(ABC):
    name: str = "abstract"

    def hash(self, data: bytes) -> bytes:
        return hashlib.sha256(data).digest()

    @abstractmethod
    def kdf(self, secret: bytes, *, salt: bytes = b"", info: bytes = b"", length: int = KEY_SIZE) -> bytes:
        ...

    @abstractmethod
    def agreement_keypair_from_secret(self, secret: bytes) -> KeyPair:
        ...

    @abstractmethod
    def agree(self, secret: bytes, peer_public: bytes) -> bytes:
        ...

    @abstractmethod
    def signing_keypair_from_secret(self, secret: bytes) -> KeyPair:
        ...

    @abstractmethod
    def sign(self, secret: bytes, message: bytes) -> bytes:
        ...

    @abstractmethod
    def verify(self, public: bytes, message: bytes, signature: bytes) -> bool:
        ...

    @abstractmethod
    def encrypt(self, key: bytes, plaintext: bytes, *, nonce: bytes, aad: bytes = b"") -> bytes:
        ...

    @abstractmethod
    def decrypt(self, key: bytes, ciphertext: bytes, *, nonce: bytes, aad: bytes = b"") -> bytes:
        """Raises DecryptionError when the key, nonce, aad or ciphertext do not match."""

    # --- helpers on top of the primitives ---

    def agreement_keypair(self, rng: np.random.Generator) -> KeyPair:
        return self.agreement_keypair_from_secret(rng.bytes(KEY_SIZE))

    def signing_keypair(self, rng: np.random.Generator) -> KeyPair:
        return self.signing_keypair_from_secret(rng.bytes(KEY_SIZE))

    def nonce(self, rng: np.random.Generator) -> bytes:
        return rng.bytes(NONCE_SIZE)

    def uniform(self, rng: np.random.Generator) -> float:
        return float(rng.random())


class CryptographyProvider(CryptoProvider):
    name = "cryptography"

    def kdf(self, secret: bytes, *, salt: bytes = b"", info: bytes = b"", length: int = KEY_SIZE) -> bytes:
        return HKDF(algorithm=hashes.SHA256(), length=length, salt=salt or None, info=info).derive(secret)

    def agreement_keypair_from_secret(self, secret: bytes) -> KeyPair:
        sk = X25519PrivateKey.from_private_bytes(secret[:KEY_SIZE])
        pk = sk.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
        raw = sk.private_bytes(
            serialization.Encoding.Raw, serialization.PrivateFormat.Raw, serialization.NoEncryption()
        )
        return KeyPair(public=pk, secret=raw)

    def agree(self, secret: bytes, peer_public: bytes) -> bytes:
        try:
            peer = X25519PublicKey.from_public_bytes(peer_public)
        except ValueError as e:
            raise DecryptionError(f"bad agreement key: {e}") from e
        return X25519PrivateKey.from_private_bytes(secret).exchange(peer)

    def signing_keypair_from_secret(self, secret: bytes) -> KeyPair:
        sk = Ed25519PrivateKey.from_private_bytes(secret[:KEY_SIZE])
        pk = sk.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
        return KeyPair(public=pk, secret=secret[:KEY_SIZE])

    def sign(self, secret: bytes, message: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(secret).sign(message)

    def verify(self, public: bytes, message: bytes, signature: bytes) -> bool:
        try:
            Ed25519PublicKey.from_public_bytes(public).verify(signature, message)
            return True
        except (InvalidSignature, ValueError):
            return False

    def encrypt(self, key: bytes, plaintext: bytes, *, nonce: bytes, aad: bytes = b"") -> bytes:
        return AESGCM(key).encrypt(nonce, plaintext, aad or None)

    def decrypt(self, key: bytes, ciphertext: bytes, *, nonce: bytes, aad: bytes = b"") -> bytes:
        try:
            return AESGCM(key).decrypt(nonce, ciphertext, aad or None)
        except (InvalidTag, ValueError) as e:
            raise DecryptionError("authenticated decryption failed") from e


# RFC 3526 group 14 (2048-bit MODP), generator 2.
_MODP_P = int(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74020BBEA63B139B22514A08798E3404DD"
    "EF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F"
    "83655D23DCA3AD961C62F356208552BB9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B"
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF6955817183995497CEA956AE515D2261898FA0510"
    "15728E5A8AACAA68FFFFFFFFFFFFFFFF",
    16,
)
_MODP_G = 2
_MODP_LEN = 256
_TAG_SIZE = 16


class HashCryptoProvider(CryptoProvider):
    """Toy provider; signatures only verify for keys this provider generated."""

    name = "hash"

    def __init__(self) -> None:
        self._signers: Dict[bytes, bytes] = {}

    def _mac(self, key: bytes, data: bytes) -> bytes:
        return hmac.new(key, data, hashlib.sha256).digest()

    def kdf(self, secret: bytes, *, salt: bytes = b"", info: bytes = b"", length: int = KEY_SIZE) -> bytes:
        prk = self._mac(salt or b"\x00" * 32, secret)
        out, block, counter = b"", b"", 1
        while len(out) < length:
            block = self._mac(prk, block + info + bytes([counter]))
            out += block
            counter += 1
        return out[:length]

    def agreement_keypair_from_secret(self, secret: bytes) -> KeyPair:
        x = int.from_bytes(secret[:KEY_SIZE], "big") | 1
        pk = pow(_MODP_G, x, _MODP_P).to_bytes(_MODP_LEN, "big")
        return KeyPair(public=pk, secret=secret[:KEY_SIZE])

    def agree(self, secret: bytes, peer_public: bytes) -> bytes:
        y = int.from_bytes(peer_public, "big")
        if len(peer_public) != _MODP_LEN or not 1 < y < _MODP_P - 1:
            raise DecryptionError("bad agreement key")
        x = int.from_bytes(secret, "big") | 1
        return self.hash(pow(y, x, _MODP_P).to_bytes(_MODP_LEN, "big"))

    def signing_keypair_from_secret(self, secret: bytes) -> KeyPair:
        sk = secret[:KEY_SIZE]
        pk = self.hash(b"forklab-pk" + sk)
        self._signers[pk] = sk
        return KeyPair(public=pk, secret=sk)

    def sign(self, secret: bytes, message: bytes) -> bytes:
        return self._mac(secret, b"sig" + message)

    def verify(self, public: bytes, message: bytes, signature: bytes) -> bool:
        sk = self._signers.get(public)
        if sk is None:
            return False
        return hmac.compare_digest(self._mac(sk, b"sig" + message), signature)

    def _keystream(self, key: bytes, nonce: bytes, size: int) -> bytes:
        out = bytearray()
        counter = 0
        while len(out) < size:
            out += self.hash(key + nonce + counter.to_bytes(8, "big"))
            counter += 1
        return bytes(out[:size])

    def encrypt(self, key: bytes, plaintext: bytes, *, nonce: bytes, aad: bytes = b"") -> bytes:
        ks = self._keystream(key, nonce, len(plaintext))
        body = bytes(a ^ b for a, b in zip(plaintext, ks))
        tag = self._mac(key, b"tag" + nonce + len(aad).to_bytes(8, "big") + aad + body)[:_TAG_SIZE]
        return body + tag

    def decrypt(self, key: bytes, ciphertext: bytes, *, nonce: bytes, aad: bytes = b"") -> bytes:
        if len(ciphertext) < _TAG_SIZE:
            raise DecryptionError("ciphertext too short")
        body, tag = ciphertext[:-_TAG_SIZE], ciphertext[-_TAG_SIZE:]
        expected = self._mac(key, b"tag" + nonce + len(aad).to_bytes(8, "big") + aad + body)[:_TAG_SIZE]
        if not hmac.compare_digest(tag, expected):
            raise DecryptionError("authenticated decryption failed")
        ks = self._keystream(key, nonce, len(body))
        return bytes(a ^ b for a, b in zip(body, ks))


def make_provider(backend: Optional[CryptoBackend] = None) -> CryptoProvider:
    """
    Pick a provider with a simple 'toy -> real' switch.

    Real primitives unless FORKLAB_CRYPTO asks for the hash construction.
    """
    if backend is None:
        from forklab.settings import Settings
        backend = Settings.from_env().crypto_backend
    provider: CryptoProvider = HashCryptoProvider() if backend == "hash" else CryptographyProvider()
    logger.debug("crypto provider=%s", provider.name)
    return provider
