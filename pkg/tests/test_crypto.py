import pytest

from forklab import rng as rngs
from forklab.enclave.crypto import CryptographyProvider, HashCryptoProvider, make_provider
from forklab.errors import DecryptionError


@pytest.fixture
def stream():
    return rngs.stream(11, 99)


class TestProviderContract:
    """Both providers fail the same way on the same misuse."""

    def test_encrypt_round_trip(self, provider, stream):
        key = provider.kdf(b"secret", info=b"test")
        nonce = provider.nonce(stream)
        ct = provider.encrypt(key, b"payload", nonce=nonce, aad=b"ctx")
        assert ct != b"payload"
        assert provider.decrypt(key, ct, nonce=nonce, aad=b"ctx") == b"payload"

    def test_tampered_ciphertext(self, provider, stream):
        key = provider.kdf(b"secret")
        nonce = provider.nonce(stream)
        ct = bytearray(provider.encrypt(key, b"payload", nonce=nonce))
        ct[0] ^= 0x01
        with pytest.raises(DecryptionError):
            provider.decrypt(key, bytes(ct), nonce=nonce)

    def test_wrong_aad_or_key(self, provider, stream):
        key = provider.kdf(b"secret")
        nonce = provider.nonce(stream)
        ct = provider.encrypt(key, b"payload", nonce=nonce, aad=b"a")
        with pytest.raises(DecryptionError):
            provider.decrypt(key, ct, nonce=nonce, aad=b"b")
        with pytest.raises(DecryptionError):
            provider.decrypt(provider.kdf(b"other"), ct, nonce=nonce, aad=b"a")

    def test_agreement_is_symmetric(self, provider, stream):
        a = provider.agreement_keypair(stream)
        b = provider.agreement_keypair(stream)
        assert provider.agree(a.secret, b.public) == provider.agree(b.secret, a.public)

    def test_agreement_rejects_malformed_key(self, provider, stream):
        a = provider.agreement_keypair(stream)
        with pytest.raises(DecryptionError):
            provider.agree(a.secret, b"\x01" * 5)

    def test_sign_and_verify(self, provider, stream):
        kp = provider.signing_keypair(stream)
        sig = provider.sign(kp.secret, b"message")
        assert provider.verify(kp.public, b"message", sig)
        assert not provider.verify(kp.public, b"other", sig)
        other = provider.signing_keypair(stream)
        assert not provider.verify(other.public, b"message", sig)

    def test_verify_unknown_key_is_false(self, provider):
        assert not provider.verify(b"\x00" * 3, b"m", b"s")

    def test_kdf_length_and_separation(self, provider):
        assert len(provider.kdf(b"s", length=48)) == 48
        assert provider.kdf(b"s", info=b"a") != provider.kdf(b"s", info=b"b")
        assert provider.kdf(b"s", salt=b"x") != provider.kdf(b"s", salt=b"y")

    def test_keys_follow_the_stream(self, provider):
        a = provider.signing_keypair(rngs.stream(3, 1))
        b = provider.signing_keypair(rngs.stream(3, 1))
        assert a.public == b.public

    def test_secret_is_not_in_repr(self, provider, stream):
        kp = provider.signing_keypair(stream)
        assert kp.secret.hex() not in repr(kp)


class TestMakeProvider:
    def test_explicit_backend(self):
        assert isinstance(make_provider("hash"), HashCryptoProvider)
        assert isinstance(make_provider("cryptography"), CryptographyProvider)

    def test_backend_from_env(self, monkeypatch):
        monkeypatch.setenv("FORKLAB_CRYPTO", "toy")
        assert make_provider().name == "hash"
        monkeypatch.setenv("FORKLAB_CRYPTO", "whatever")
        assert make_provider().name == "cryptography"
