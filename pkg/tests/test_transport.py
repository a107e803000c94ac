"""Framed exchange, counters, and backend transcript equivalence."""

import numpy as np
import pytest

from arp.errors import ProtocolDesyncError, TransportError
from arp.fixed import FixedConfig, RingTensor
from arp.runtime import run_both
from arp.transport import memory_channel_pair, tcp_connect, tcp_listen

from conftest import free_port

CFG = FixedConfig(64, 16)


def tensor(vals):
    return RingTensor(np.asarray(vals, dtype=np.uint64), CFG)


class TestExchange:
    def test_swap(self):
        ch0, ch1 = memory_channel_pair()
        r0, r1 = run_both(
            lambda: ch0.exchange(tensor([1, 2])),
            lambda: ch1.exchange(tensor([3, 4])),
        )
        assert r0.words.tolist() == [3, 4]
        assert r1.words.tolist() == [1, 2]

    def test_byte_accounting(self):
        # 4-byte length prefix + 8-byte shape header + 32 bytes payload
        ch0, ch1 = memory_channel_pair()
        run_both(
            lambda: ch0.exchange(tensor([1, 2, 3, 4])),
            lambda: ch1.exchange(tensor([5, 6, 7, 8])),
        )
        for ch in (ch0, ch1):
            assert ch.bytes_sent == 44
            assert ch.bytes_received == 44
            assert ch.rounds == 1

    def test_shape_mismatch_desync(self):
        ch0, ch1 = memory_channel_pair()
        with pytest.raises(ProtocolDesyncError):
            run_both(
                lambda: ch0.exchange(tensor([1, 2])),
                lambda: ch1.exchange(tensor([1, 2, 3])),
            )

    def test_timeout(self):
        ch0, _ = memory_channel_pair(timeout=0.05)
        with pytest.raises(TransportError):
            ch0.exchange(tensor([1]))

    def test_rounds_monotone(self):
        ch0, ch1 = memory_channel_pair()
        for k in range(5):
            run_both(
                lambda: ch0.exchange(tensor([k])),
                lambda: ch1.exchange(tensor([k])),
            )
        assert ch0.rounds == ch1.rounds == 5


class TestTcpBackend:
    def _run_script(self, ch, values):
        out = []
        for v in values:
            out.append(ch.exchange(tensor(v)).words.tolist())
        return out, ch.transcript_hash, ch.bytes_sent

    def test_transcript_matches_memory(self):
        """Same seeded exchange sequence gives byte-identical transcripts."""
        rng = np.random.default_rng(17)
        script0 = [rng.integers(0, 2**63, size=7).tolist() for _ in range(4)]
        script1 = [rng.integers(0, 2**63, size=7).tolist() for _ in range(4)]

        m0, m1 = memory_channel_pair()
        (mr0, mh0, mb0), (mr1, mh1, mb1) = run_both(
            lambda: self._run_script(m0, script0),
            lambda: self._run_script(m1, script1),
        )

        port = free_port()
        holder = {}

        def p0():
            ch = tcp_listen("127.0.0.1", port, timeout=10)
            holder[0] = ch
            return self._run_script(ch, script0)

        def p1():
            ch = tcp_connect("127.0.0.1", port, timeout=10)
            holder[1] = ch
            return self._run_script(ch, script1)

        (tr0, th0, tb0), (tr1, th1, tb1) = run_both(p0, p1)
        holder[0].close()
        holder[1].close()

        assert tr0 == mr0 and tr1 == mr1
        assert th0 == mh0 and th1 == mh1
        assert tb0 == mb0 and tb1 == mb1

    def test_large_symmetric_exchange(self):
        """A payload well past socket buffers must not deadlock."""
        port = free_port()
        big = np.arange(300_000, dtype=np.uint64)

        def p0():
            ch = tcp_listen("127.0.0.1", port, timeout=15)
            got = ch.exchange(RingTensor(big, CFG))
            ch.close()
            return got

        def p1():
            ch = tcp_connect("127.0.0.1", port, timeout=15)
            got = ch.exchange(RingTensor(big + np.uint64(1), CFG))
            ch.close()
            return got

        r0, r1 = run_both(p0, p1)
        assert np.array_equal(r0.words, big + np.uint64(1))
        assert np.array_equal(r1.words, big)
