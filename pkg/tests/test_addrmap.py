
import pytest
from hypothesis import given, settings, strategies as st

from rowguard.addrmap import SCHEMES, Coords, MappingScheme, decode, encode
from rowguard.dram import DeviceGeometry
from rowguard.errors import AddressRangeError, ConfigError


@pytest.mark.parametrize("kind", list(SCHEMES))
def test_roundtrip_window(kind):
    m = MappingScheme(kind)
    for i in range(0, 1 << 14):
        a = i * 64
        assert encode(decode(a, m), m) == a


def test_mop1_consecutive_lines_walk_banks():
    m = MappingScheme("MOP_1CL")
    g = m.geometry
    coords = [m.decode_flat(i * 64) for i in range(g.total_banks)]
    assert [c[0] for c in coords] == list(range(g.total_banks))
    assert {c[1] for c in coords} == {0}


def test_mop4_groups_share_bank():
    m = MappingScheme("mop4")
    banks = [m.decode_flat(i * 64)[0] for i in range(12)]
    assert banks == [0] * 4 + [1] * 4 + [2] * 4


def test_decode_example():
    m = MappingScheme("MOP_1CL")
    # 0x1FC0 is cacheline 127: flat bank 31, then the high column bits give 3
    assert decode(0x1FC0, m) == Coords(0, 1, 3, 3, 0, 3)


def test_out_of_range():
    m = MappingScheme()
    with pytest.raises(AddressRangeError):
        m.decode(m.capacity)
    with pytest.raises(AddressRangeError):
        m.encode((0, 2, 0, 0, 0, 0))
    with pytest.raises(ConfigError):
        MappingScheme("MOP_3CL")


def test_capacity_matches_geometry():
    g = DeviceGeometry(channels=2, rows_per_bank=1024)
    assert MappingScheme("MOP_8CL", g).capacity == g.capacity_bytes()


@settings(max_examples=300, deadline=None)
@given(st.sampled_from(list(SCHEMES)), st.integers(0, (32 << 30) // 64 - 1))
def test_roundtrip_property(kind, line):
    m = MappingScheme(kind)
    a = line * 64
    c = m.decode(a)
    assert m.encode(c) == a
    b, r, col = m.decode_flat(a)
    assert m.encode_flat(b, r, col) == a
    assert m.geometry.bank_index(c.channel, c.rank, c.bankgroup, c.bank) == b
