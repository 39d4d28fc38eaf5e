import numpy as np
import pytest

from deepbow.errors import BadMagic, DimensionMismatch, LengthMismatch, NoTrainingData, UnknownWord
from deepbow.normalize import root_sift
from deepbow.sketch import (
    project_descriptors,
    LshBank,
    hamming,
    hamming_to_many,
    he_signature,
    load_lsh_bank,
    lsh_sketch,
    pack_bits,
    save_lsh_bank,
    train_he,
    unpack_bits,
)
from deepbow.vocab import Vocabulary


def test_lsh_zero_projection_gives_one_bit():
    # Eq-style tie: r . v == 0 exactly must produce bit 1
    bank = LshBank(dim=2, bits=2, seed=0, hyperplanes=np.array([[1.0, 0.0], [0.0, 1.0]]))
    sig = lsh_sketch(np.array([0.0, 1.0]), bank)
    assert list(unpack_bits(sig)[:2]) == [1, 1]
    sig = lsh_sketch(np.array([0.0, -1.0]), bank)
    assert list(unpack_bits(sig)[:2]) == [1, 0]


def test_lsh_negation_is_complementary():
    bank = LshBank.from_seed(16, 128, seed=1)
    rng = np.random.default_rng(2)
    v = rng.standard_normal(16)
    assert hamming(lsh_sketch(v, bank), lsh_sketch(-v, bank)) == 128


def test_lsh_scale_invariance():
    bank = LshBank.from_seed(16, 128, seed=3)
    rng = np.random.default_rng(4)
    v = rng.standard_normal(16)
    np.testing.assert_array_equal(lsh_sketch(v, bank), lsh_sketch(100.0 * v, bank))


def test_lsh_dimension_mismatch():
    bank = LshBank.from_seed(16, 128, seed=5)
    with pytest.raises(DimensionMismatch):
        lsh_sketch(np.zeros(8), bank)


def test_lsh_bits_must_be_multiple_of_64():
    with pytest.raises(ValueError):
        LshBank.from_seed(16, 100, seed=0)


def test_lsh_angle_estimate():
    # normalized Hamming distance is an unbiased estimate of angle/pi
    bank = LshBank.from_seed(24, 128, seed=6)
    rng = np.random.default_rng(7)
    devs = []
    for _ in range(1000):
        u = rng.standard_normal(24)
        v = rng.standard_normal(24)
        dh = hamming(lsh_sketch(u, bank), lsh_sketch(v, bank))
        angle = np.arccos(
            np.clip(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)), -1, 1)
        )
        devs.append(dh / 128 - angle / np.pi)
    devs = np.array(devs)
    assert abs(devs.mean()) <= 0.02
    assert np.abs(devs).mean() <= 0.06


def test_hamming_basics():
    rng = np.random.default_rng(8)
    a = rng.integers(0, 256, 16).astype(np.uint8)
    assert hamming(a, a) == 0
    assert hamming(a, ~a) == 128


def test_hamming_matches_bit_loop_oracle():
    rng = np.random.default_rng(9)
    for _ in range(50):
        a = rng.integers(0, 256, 16).astype(np.uint8)
        b = rng.integers(0, 256, 16).astype(np.uint8)
        expected = sum(
            bin(int(x) ^ int(y)).count("1") for x, y in zip(a.tolist(), b.tolist())
        )
        assert hamming(a, b) == expected


def test_hamming_length_mismatch():
    with pytest.raises(LengthMismatch):
        hamming(np.zeros(16, dtype=np.uint8), np.zeros(8, dtype=np.uint8))
    with pytest.raises(LengthMismatch):
        hamming_to_many(np.zeros((4, 16), dtype=np.uint8), np.zeros(8, dtype=np.uint8))


def test_hamming_to_many_matches_scalar():
    rng = np.random.default_rng(10)
    sigs = rng.integers(0, 256, (20, 16)).astype(np.uint8)
    sig = rng.integers(0, 256, 16).astype(np.uint8)
    out = hamming_to_many(sigs, sig)
    for i in range(20):
        assert out[i] == hamming(sigs[i], sig)


def _tiny_vocab():
    centroids = np.zeros((2, 128), dtype=np.float32)
    centroids[0, 0] = 1.0
    centroids[1, 1] = 1.0
    return Vocabulary(centroids=centroids, doc_freq=np.zeros(2, dtype=np.int64))


def test_he_single_descriptor_per_word_signs_itself_all_ones():
    vocab = _tiny_vocab()
    d0 = np.zeros(128)
    d0[0] = 1.0
    d1 = np.zeros(128)
    d1[1] = 1.0
    model = train_he(vocab, np.stack([d0, d1]), bits=64, seed=0)
    # thresholds equal each descriptor's own projection -> every bit is >=
    assert np.all(unpack_bits(he_signature(d0, 0, model)) == 1)
    assert np.all(unpack_bits(he_signature(d1, 1, model)) == 1)


def test_he_median_balance_ties_to_one():
    # per word each bit is 1 for ceil(n/2) of n training samples
    vocab = _tiny_vocab()
    rng = np.random.default_rng(11)
    for n in (5, 8):
        descs = np.abs(rng.standard_normal((n, 128))) * 0.01
        descs[:, 0] += 1.0  # all quantize to word 0
        model = train_he(vocab, descs, bits=64, seed=1)
        projected = project_descriptors(descs, model)
        ones = (projected >= model.thresholds[0]).sum(axis=0)
        assert np.all(ones == (n + 1) // 2)


def test_he_identical_descriptors_distance_zero():
    vocab = _tiny_vocab()
    rng = np.random.default_rng(12)
    descs = rng.random((6, 128))
    model = train_he(vocab, descs, bits=64, seed=2)
    a = he_signature(descs[0], 0, model)
    b = he_signature(descs[0].copy(), 0, model)
    assert hamming(a, b) == 0


def test_he_signature_is_word_relative():
    vocab = _tiny_vocab()
    rng = np.random.default_rng(13)
    descs = rng.random((40, 128))
    descs[:20, 0] += 1.0
    descs[20:, 1] += 1.0
    model = train_he(vocab, descs, bits=64, seed=3)
    d = descs[0]
    sig0 = he_signature(d, 0, model)
    sig1 = he_signature(d, 1, model)
    assert hamming(sig0, sig1) > 0  # thresholds differ per word


def test_he_signature_packs_128_bits_into_16_bytes():
    vocab = _tiny_vocab()
    rng = np.random.default_rng(14)
    descs = rng.random((10, 128))
    model = train_he(vocab, descs, bits=128, seed=4)
    assert he_signature(descs[0], 0, model).shape == (16,)


def test_he_projection_rows_orthonormal():
    vocab = _tiny_vocab()
    rng = np.random.default_rng(15)
    model = train_he(vocab, rng.random((10, 128)), bits=128, seed=5)
    gram = model.projection.astype(np.float64) @ model.projection.T.astype(np.float64)
    np.testing.assert_allclose(gram, np.eye(128), atol=1e-6)


def test_he_unseen_word_inherits_global_medians():
    vocab = _tiny_vocab()
    rng = np.random.default_rng(16)
    descs = rng.random((10, 128))
    descs[:, 0] += 1.0  # everything lands on word 0
    model = train_he(vocab, descs, bits=64, seed=6)
    projected = project_descriptors(descs, model)
    np.testing.assert_allclose(model.thresholds[1], np.median(projected, axis=0))


def test_he_errors():
    vocab = _tiny_vocab()
    with pytest.raises(NoTrainingData):
        train_he(vocab, np.zeros((0, 128)), bits=64, seed=0)
    rng = np.random.default_rng(17)
    model = train_he(vocab, rng.random((4, 128)), bits=64, seed=0)
    with pytest.raises(UnknownWord):
        he_signature(rng.random(128), 2, model)


def test_he_median_balance_on_rootsift_population():
    # statistical balance check on realistic descriptors, >= 50 per word
    vocab = _tiny_vocab()
    rng = np.random.default_rng(18)
    raw = rng.integers(0, 256, (120, 128)).astype(np.uint8)
    descs = root_sift(raw)
    descs[:60, 0] += 1.0
    descs[60:, 1] += 1.0
    model = train_he(vocab, descs, bits=128, seed=7)
    projected = project_descriptors(descs, model)
    for w, rows in ((0, slice(0, 60)), (1, slice(60, 120))):
        frac = (projected[rows] >= model.thresholds[w]).mean(axis=0)
        assert np.all(frac >= 0.45) and np.all(frac <= 0.55)


def test_lsh_bank_roundtrip(tmp_path):
    bank = LshBank.from_seed(32, 128, seed=99)
    path = tmp_path / "bank.dlsh"
    save_lsh_bank(bank, path)
    loaded = load_lsh_bank(path)
    assert (loaded.dim, loaded.bits, loaded.seed) == (32, 128, 99)
    np.testing.assert_array_equal(loaded.hyperplanes, bank.hyperplanes)


def test_lsh_bank_bad_magic(tmp_path):
    path = tmp_path / "bad.dlsh"
    path.write_bytes(b"NOPE" + b"\0" * 16)
    with pytest.raises(BadMagic):
        load_lsh_bank(path)


def test_pack_unpack_roundtrip():
    rng = np.random.default_rng(19)
    bits = rng.integers(0, 2, size=(3, 64)).astype(bool)
    np.testing.assert_array_equal(unpack_bits(pack_bits(bits)), bits.astype(np.uint8))


def test_he_signature_stable_under_tiny_perturbation():
    # bits may flip only where the projected value sits within the
    # perturbation's reach of the threshold
    vocab = _tiny_vocab()
    rng = np.random.default_rng(20)
    descs = rng.random((12, 128))
    model = train_he(vocab, descs, bits=64, seed=8)
    d = descs[3]
    eps = rng.standard_normal(128)
    eps *= 1e-9 / np.linalg.norm(eps)
    a = unpack_bits(he_signature(d, 0, model))
    b = unpack_bits(he_signature(d + eps, 0, model))
    projected = project_descriptors(d[None, :], model)[0]
    margin = np.abs(projected - model.thresholds[0])
    flipped = np.flatnonzero(a != b)
    assert np.all(margin[flipped] <= 2e-9)
