"""Dealer correctness: triple identities, determinism, tape format, share uniformity."""

import numpy as np
import pytest
from scipy import stats

from arp.dealer import (
    AndRequest,
    BeaverRequest,
    Dealer,
    SquareRequest,
    read_tape,
    tape_from_bytes,
    tape_to_bytes,
    write_tape,
)
from arp.errors import FormatError, ProtocolDesyncError, TapeExhaustedError
from arp.fixed import FixedConfig, RingTensor

CFG = FixedConfig(64, 16)
CFG8 = FixedConfig(8, 4)


def naive_conv2d(x, w, stride, padding, mod):
    """Independent conv oracle: plain Python loops over big ints."""
    b, c, h, ww = x.shape
    oc, _, kh, kw = w.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (ww + 2 * padding - kw) // stride + 1
    xp = np.zeros((b, c, h + 2 * padding, ww + 2 * padding), dtype=object)
    xp[:, :, padding : padding + h, padding : padding + ww] = x.astype(object)
    out = np.zeros((b, oc, oh, ow), dtype=object)
    for bi in range(b):
        for oci in range(oc):
            for i in range(oh):
                for j in range(ow):
                    acc = 0
                    for ci in range(c):
                        for ki in range(kh):
                            for kj in range(kw):
                                acc += int(xp[bi, ci, i * stride + ki, j * stride + kj]) * int(
                                    w[oci, ci, ki, kj]
                                )
                    out[bi, oci, i, j] = acc % mod
    return out


class TestShares:
    def test_reconstruct(self):
        d = Dealer(0, CFG8)
        x = RingTensor(np.uint64(5), CFG8)
        s0, s1 = d.gen_shares(x)
        assert (s0 + s1).words == 5

    def test_zero_reconstructs(self):
        d = Dealer(3, CFG)
        s0, s1 = d.gen_shares(RingTensor.zeros((8,), CFG))
        assert np.all((s0 + s1).words == 0)
        assert np.array_equal(s1.words, (-s0).words)

    def test_seed_determinism(self):
        x = RingTensor(np.arange(100, dtype=np.uint64), CFG)
        a = Dealer(42, CFG)
        b = Dealer(42, CFG)
        for _ in range(5):
            sa, sb = a.gen_shares(x), b.gen_shares(x)
            assert sa[0] == sb[0] and sa[1] == sb[1]

    def test_marginal_uniformity_chi_squared(self):
        """Each single share is uniform; checked at L=8 over 1e5 draws."""
        d = Dealer(9, CFG8)
        x = RingTensor(np.full(100_000, 7, dtype=np.uint64), CFG8)
        s0, s1 = d.gen_shares(x)
        for share in (s0, s1):
            counts = np.bincount(share.words.astype(np.int64), minlength=256)
            assert stats.chisquare(counts).pvalue > 1e-3


class TestTriples:
    def test_elementwise_identity(self):
        d = Dealer(1, CFG8)
        t0, t1 = d.gen_triple(BeaverRequest("elementwise", (3,), (3,)))
        a = t0.a + t1.a
        b = t0.b + t1.b
        z = t0.z + t1.z
        assert z == a * b

    def test_matmul_identity_against_bigint(self):
        d = Dealer(2, CFG)
        t0, t1 = d.gen_triple(BeaverRequest("matmul", (2, 3), (3, 4)))
        a = (t0.a + t1.a).words
        b = (t0.b + t1.b).words
        z = (t0.z + t1.z).words
        assert z.shape == (2, 4)
        mod = 1 << 64
        for i in range(2):
            for j in range(4):
                expect = sum(int(a[i, k]) * int(b[k, j]) for k in range(3)) % mod
                assert int(z[i, j]) == expect

    def test_conv_identity_against_naive_oracle(self):
        d = Dealer(3, CFG)
        req = BeaverRequest("conv2d", (1, 1, 4, 4), (2, 1, 3, 3), stride=1, padding=1)
        t0, t1 = d.gen_triple(req)
        a = (t0.a + t1.a).words
        b = (t0.b + t1.b).words
        z = (t0.z + t1.z).words
        expect = naive_conv2d(a, b, 1, 1, 1 << 64)
        assert np.array_equal(z.astype(object), expect)

    def test_incompatible_shapes(self):
        d = Dealer(4, CFG)
        with pytest.raises(ValueError):
            d.gen_triple(BeaverRequest("matmul", (2, 3), (4, 2)))

    def test_square_pair_property(self):
        d = Dealer(5, CFG8)
        p0, p1 = d.gen_square_pair(SquareRequest((10_000,)))
        a = p0.a + p1.a
        z = p0.z + p1.z
        assert z == a * a

    def test_square_scalar(self):
        d = Dealer(6, FixedConfig(8, 0))
        p0, p1 = d.gen_square_pair(SquareRequest((1,)))
        a = int((p0.a + p1.a).words[0])
        z = int((p0.z + p1.z).words[0])
        assert z == (a * a) % 256

    def test_and_triples_exhaustive(self):
        d = Dealer(7, CFG8)
        t0, t1 = d.gen_and_triples(AndRequest((100_000,)))
        a = (t0.a ^ t1.a).words
        b = (t0.b ^ t1.b).words
        c = (t0.c ^ t1.c).words
        assert np.array_equal(c, a & b)


class TestTapes:
    def _requests(self):
        return [
            BeaverRequest("elementwise", (3,), (3,)),
            BeaverRequest("matmul", (2, 3), (3, 2)),
            BeaverRequest("conv2d", (1, 1, 4, 4), (1, 1, 3, 3), stride=1, padding=1),
            SquareRequest((2, 2)),
            AndRequest((5,)),
        ]

    def test_serialization_bit_identical(self, tmp_path):
        tapes = Dealer(11, CFG).build_tapes(self._requests())
        for tape in tapes:
            raw = tape_to_bytes(tape)
            again = tape_to_bytes(tape_from_bytes(raw))
            assert raw == again
            path = tmp_path / f"tape{tape.party}.arpt"
            write_tape(tape, path)
            loaded = read_tape(path)
            assert tape_to_bytes(loaded) == raw

    def test_replay_consumes_identical_randomness(self):
        reqs = self._requests()
        t_a = Dealer(21, CFG).build_tapes(reqs)
        t_b = Dealer(21, CFG).build_tapes(reqs)
        assert tape_to_bytes(t_a[0]) == tape_to_bytes(t_b[0])
        assert tape_to_bytes(t_a[1]) == tape_to_bytes(t_b[1])

    def test_reader_validation(self):
        tapes = Dealer(12, CFG).build_tapes([SquareRequest((2,))])
        rd = tapes[0].reader()
        with pytest.raises(ProtocolDesyncError):
            rd.next_beaver("elementwise", (2,), (2,))
        rd = tapes[0].reader()
        with pytest.raises(ProtocolDesyncError):
            rd.next_square((3,))
        rd = tapes[0].reader()
        rd.next_square((2,))
        with pytest.raises(TapeExhaustedError):
            rd.next_square((2,))

    def test_bad_magic(self):
        raw = tape_to_bytes(Dealer(13, CFG).build_tapes([AndRequest((1,))])[0])
        with pytest.raises(FormatError):
            tape_from_bytes(b"XXXX" + raw[4:])
        with pytest.raises(FormatError):
            tape_from_bytes(raw[:-2])
