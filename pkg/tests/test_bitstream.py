import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from colorguide.bitstream import BitReader, BitWriter, CorruptStreamError, TruncatedStreamError


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 32).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, 2**n - 1))), max_size=40))
def test_roundtrip(fields):
    w = BitWriter()
    for n, v in fields:
        w.write(v, n)
    total = sum(n for n, _ in fields)
    assert w.bits_written == total
    data = w.getvalue()
    assert len(data) == (total + 7) // 8
    r = BitReader(data)
    assert [r.read(n) for n, _ in fields] == [v for _, v in fields]
    r.check_padding()


def test_msb_first():
    w = BitWriter()
    w.write(1, 1)
    w.write(0b01, 2)
    assert w.getvalue() == bytes([0b10100000])


def test_write_rejects_overflow():
    w = BitWriter()
    with pytest.raises(ValueError):
        w.write(4, 2)
    with pytest.raises(ValueError):
        w.write(-1, 3)


def test_truncation_and_padding():
    r = BitReader(b"\xff")
    r.read(5)
    with pytest.raises(TruncatedStreamError):
        r.read(4)
    r = BitReader(b"\xf0\x00")
    r.read(4)
    with pytest.raises(CorruptStreamError):
        r.check_padding()  # a whole spare byte is trailing garbage
    r = BitReader(b"\xf1")
    r.read(4)
    with pytest.raises(CorruptStreamError):
        r.check_padding()
