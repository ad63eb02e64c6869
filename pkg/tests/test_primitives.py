"""Primitive-level contracts: PRP, XOR algebra, KDF, AEAD, hashing, RNG."""

import numpy as np
import pytest

from sikalink import primitives as prim
from sikalink.primitives import (AuthFailure, Ciphertext, SecurityParams, SeededRng,
                                 SystemRng, csprng_fill, derive_key, hash_id,
                                 prp_forward, prp_forward_many, prp_inverse,
                                 sym_decrypt, sym_encrypt, xor_bits)

# Single-block known answer for the 128-bit permutation with an all-zero key
# and block, pinned from a reference block-cipher run.
AES128_KAT = bytes.fromhex("66e94bd4ef8a2c3b884cfa59ca342b2e")


def test_security_params_pairs():
    SecurityParams(128, 40)
    SecurityParams(256, 80)
    with pytest.raises(ValueError):
        SecurityParams(128, 80)
    with pytest.raises(ValueError):
        SecurityParams(192, 40)


@pytest.mark.parametrize("kb", [16, 32])
def test_prp_round_trip(kb, rng):
    key = rng.fill(kb)
    for _ in range(1000):
        x = rng.fill(kb)
        assert prp_inverse(key, prp_forward(key, x)) == x
        assert prp_forward(key, prp_inverse(key, x)) == x


def test_prp_known_answer():
    assert prp_forward(bytes(16), bytes(16)) == AES128_KAT


def test_prp_256_is_two_chained_blocks(rng):
    # Output block 2 must equal E(key, block2 ^ E(key, block1)) where E is the
    # raw single-block cipher under the same 256-bit key.
    from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

    key = rng.fill(32)
    block = rng.fill(32)
    enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    c1 = enc.update(block[:16])
    c2 = enc.update(xor_bits(block[16:], c1))
    assert prp_forward(key, block) == c1 + c2


def test_prp_bijective_no_collisions(rng):
    key = rng.fill(16)
    blocks = {rng.fill(16) for _ in range(10_000)}
    outs = {prp_forward(key, b) for b in blocks}
    assert len(outs) == len(blocks)


def test_prp_distinct_keys_distinct_outputs(rng):
    block = rng.fill(16)
    outs = {prp_forward(rng.fill(16), block) for _ in range(100)}
    assert len(outs) == 100


def test_prp_length_mismatch():
    with pytest.raises(ValueError):
        prp_forward(bytes(16), bytes(32))
    with pytest.raises(ValueError):
        prp_inverse(bytes(8), bytes(8))


def test_prp_forward_many_matches_single(rng):
    for kb in (16, 32):
        key = rng.fill(kb)
        blocks = np.frombuffer(rng.fill(50 * kb), dtype=np.uint8).reshape(50, kb)
        bulk = prp_forward_many(key, blocks)
        for k in range(50):
            assert bulk[k].tobytes() == prp_forward(key, blocks[k].tobytes())


def test_xor_basics(rng):
    x = rng.fill(16)
    assert xor_bits(x, x) == bytes(16)
    assert xor_bits(x, bytes(16)) == x
    with pytest.raises(ValueError):
        xor_bits(x, rng.fill(32))


def test_xor_fold_matches_running(rng):
    shares = [rng.fill(16) for _ in range(9)]
    running = bytes(16)
    for s in shares:
        running = xor_bits(running, s)
    folded = shares[0]
    for s in shares[1:]:
        folded = xor_bits(folded, s)
    assert folded == running


def test_xor_group_laws(rng):
    for _ in range(200):
        a, b, c = rng.fill(16), rng.fill(16), rng.fill(16)
        assert xor_bits(a, b) == xor_bits(b, a)
        assert xor_bits(xor_bits(a, b), c) == xor_bits(a, xor_bits(b, c))
        assert xor_bits(a, a) == bytes(16)


def test_hash_id_contract():
    assert hash_id(b"a", 128) == hash_id(b"a", 128)
    assert hash_id(b"a", 128) != hash_id(b"b", 128)
    assert len(hash_id(b"x", 128)) == 16
    assert len(hash_id(b"x", 256)) == 32
    with pytest.raises(ValueError):
        hash_id(b"", 128)


def test_derive_key_contract(rng):
    sk = rng.fill(16)
    assert derive_key(sk, "payload") != derive_key(sk, "share")
    assert derive_key(sk, "payload") != derive_key(sk, "psi-id")
    assert derive_key(sk, "payload") == derive_key(sk, "payload")
    assert len(derive_key(sk, "share")) == 32
    with pytest.raises(ValueError):
        derive_key(sk, "nonsense")


def test_aead_round_trip(rng):
    key = derive_key(rng.fill(16), "payload")
    for _ in range(20):
        msg = rng.fill(1024)
        ct = sym_encrypt(key, msg, rng=rng)
        assert sym_decrypt(key, ct) == msg


def test_aead_randomized_nonces(rng):
    key = derive_key(rng.fill(16), "payload")
    c1 = sym_encrypt(key, b"same message")
    c2 = sym_encrypt(key, b"same message")
    assert c1.to_bytes() != c2.to_bytes()


def test_aead_bit_flip_rejected(rng):
    key = derive_key(rng.fill(16), "payload")
    ct = sym_encrypt(key, rng.fill(64), rng=rng)
    tampered = bytearray(ct.to_bytes())
    tampered[20] ^= 1
    with pytest.raises(AuthFailure):
        sym_decrypt(key, Ciphertext.from_bytes(bytes(tampered)))


def test_aead_wrong_derived_key(rng):
    for _ in range(50):
        sk, sk2 = rng.fill(16), rng.fill(16)
        ct = sym_encrypt(derive_key(sk, "payload"), b"secret", rng=rng)
        with pytest.raises(AuthFailure):
            sym_decrypt(derive_key(sk2, "payload"), ct)


def test_aead_no_false_accepts(rng):
    # Invariant: no wrong-key decryption slips through across 10^4 trials.
    msg = b"payload-bytes"
    for _ in range(10_000):
        ct = sym_encrypt(derive_key(rng.fill(16), "payload"), msg, rng=rng)
        try:
            sym_decrypt(derive_key(rng.fill(16), "payload"), ct)
            raise AssertionError("wrong key accepted")
        except AuthFailure:
            pass


def test_ciphertext_serialization(rng):
    key = derive_key(rng.fill(16), "share")
    ct = sym_encrypt(key, rng.fill(100), rng=rng)
    blob = ct.to_bytes()
    assert blob[:12] == ct.nonce and blob[-16:] == ct.tag
    assert Ciphertext.from_bytes(blob) == ct


def test_csprng_lengths_and_freshness():
    for bits in (128, 256, 512, 96):
        assert len(csprng_fill(bits)) == bits // 8
    assert csprng_fill(128) != csprng_fill(128)
    with pytest.raises(ValueError):
        csprng_fill(13)
    with pytest.raises(ValueError):
        csprng_fill(0)


def test_csprng_monobit():
    # 10^6 bits: ones within 4 sigma of n/2, sigma = sqrt(n)/2.
    n = 1_000_000
    data = np.frombuffer(csprng_fill(n), dtype=np.uint8)
    ones = int(np.unpackbits(data).sum())
    assert abs(ones - n / 2) <= 4 * (n ** 0.5) / 2, f"monobit count {ones}"


def test_seeded_rng_deterministic():
    a, b = SeededRng(b"seed"), SeededRng(b"seed")
    assert a.fill(64) == b.fill(64)
    assert SeededRng(b"seed").fill(32) != SeededRng(b"other").fill(32)
    assert SeededRng.for_party(b"s", 1).fill(32) != SeededRng.for_party(b"s", 2).fill(32)


def test_system_rng_fresh():
    r = SystemRng()
    assert r.fill(16) != r.fill(16)
