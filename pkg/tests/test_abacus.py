import random

import pytest

from rowguard.abacus import (AbacusBigTable, AbacusMitigation, AbacusTable, SCOPE,
                             activations_per_window, configure, entries_for, on_activate,
                             on_activate_big, preventive_refresh_targets)
from rowguard.dram import DEMAND, DeviceGeometry, TimingParams
from rowguard.errors import ConfigError

G = DeviceGeometry()


@pytest.mark.parametrize("nrh,expect", [
    (1000, (500, 498, 2720, 10, 32, 17)),
    (500, (250, 248, 5440, 9, 32, 17)),
    (250, (125, 123, 10880, 8, 32, 17)),
    (125, (62, 60, 21760, 7, 32, 17)),
])
def test_published_parameters(nrh, expect):
    c = configure(nrh)
    assert (c.prt, c.rct, c.n_entries, c.s_rac, c.s_sav, c.s_rid) == expect


def test_n_act_formula():
    # 64ms * (1 - 350/7900) / 45ns
    assert float(activations_per_window(TimingParams())) == pytest.approx(1359212.377, abs=0.001)
    assert entries_for(500, TimingParams()) == 2720
    assert entries_for(62, TimingParams()) == 21952


def test_degenerate_window_gives_min_entries():
    t = TimingParams(tREFW=45_000, tRC=45_000)
    assert configure(500, t).n_entries == 32


def test_scaled_window_entries():
    t = TimingParams().scaled(640_000_000)
    assert configure(1000, t).n_entries == 32
    assert configure(125, t).n_entries == 224


def test_invalid_nrh():
    with pytest.raises(ConfigError):
        configure(3)


def test_big_storage():
    c = configure(500, big=True)
    assert c.n_entries == G.rows_per_bank
    assert c.storage_bits // 8 // 1024 == 640


def _small(prt_nrh=20, entries=4):
    c = configure(prt_nrh, n_entries=entries)
    return c, AbacusTable(c)


def test_first_activation_tracks_row():
    c, t = _small()
    assert on_activate(t, c, 0, 7, 0) is None
    e = t.lookup(7)
    assert (e.rac, e.sav, e.overflow) == (1, 1, 0)


def test_sibling_sets_bit_only():
    c, t = _small()
    on_activate(t, c, 0, 7, 0)
    on_activate(t, c, 3, 7, 0)
    e = t.lookup(7)
    assert e.rac == 1 and e.sav == 0b1001


def test_repeat_increments_and_resets_sav():
    c, t = _small()
    on_activate(t, c, 0, 7, 0)
    on_activate(t, c, 3, 7, 0)
    on_activate(t, c, 3, 7, 0)
    e = t.lookup(7)
    assert e.rac == 2 and e.sav == 0b1000


def test_overflow_triggers_refresh_of_all_siblings():
    c, t = _small(20)  # prt 10
    act = None
    for i in range(c.prt):
        act = on_activate(t, c, 0, 50, i)
    assert act is not None and len(act.refreshes) == 2 * 32
    e = t.lookup(50)
    assert e.rac == 0 and e.overflow == 1 and t.cumulative(50) == c.prt


def test_spillover_and_lowest_index_replacement():
    c, t = _small(entries=4)
    for r in range(4):
        on_activate(t, c, 0, r, 0)
    # table full, all rac=1, spillover 0 -> spillover increments
    on_activate(t, c, 0, 100, 0)
    assert t.spillover == 1 and t.lookup(100) is None
    on_activate(t, c, 0, 101, 0)
    e = t.lookup(101)
    assert e.rac == 2 and t.row_id[0] == 101


def test_refresh_cycle_at_rct():
    c, t = _small(prt_nrh=12, entries=1)  # prt 6, rct 4
    on_activate(t, c, 0, 0, 0)
    out = None
    for r in range(1, 100):
        out = on_activate(t, c, 0, r, r)
        if out is not None:
            break
    assert out.refresh_cycle == SCOPE
    assert t.spillover == 0 and t.lookup(0) is None


def test_big_table_never_cycles():
    c = configure(20, big=True, geometry=DeviceGeometry(rows_per_bank=256))
    t = AbacusBigTable(c)
    rng = random.Random(1)
    for i in range(5000):
        a = on_activate_big(t, c, rng.randrange(32), rng.randrange(256), i)
        assert a is None or not a.refresh_cycle


def test_preventive_targets_blast_radius():
    tg = preventive_refresh_targets(10, 2, G)
    assert len(tg) == 4 * 32
    assert preventive_refresh_targets(0, 1, G, banks=[0]) == [(0, 1)]
    with pytest.raises(ConfigError):
        preventive_refresh_targets(10, 0, G)


def test_mitigation_rank_scope_maps_banks():
    c = configure(20, per_rank=True, n_entries=8)
    m = AbacusMitigation(c, G)
    assert len(m.tables) == 2
    for i in range(c.prt):
        act = m.on_activate(16, 40, i, DEMAND)
    assert {b for b, _ in act.refreshes} == set(range(16, 32))
