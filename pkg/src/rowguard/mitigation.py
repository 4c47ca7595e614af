"""Common mitigation interface used by the memory controller."""
from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class MitigationAction:
    """What a mitigation asks the controller to do after a command.

    ``refreshes`` are (bank, victim row) pairs to preventively refresh;
    ``traffic`` are (bank, row, "RD"|"WR") accesses the mitigation itself needs;
    ``refresh_cycle`` names the flat ranks to fully refresh.
    """

    refreshes: list = field(default_factory=list)
    traffic: list = field(default_factory=list)
    refresh_cycle: tuple = ()

    @property
    def is_none(self) -> bool:
        return not (self.refreshes or self.traffic or self.refresh_cycle)


NO_ACTION = None


def victims(row: int, blast_radius: int, rows_per_bank: int) -> list[int]:
    out = []
    for d in range(1, blast_radius + 1):
        if row - d >= 0:
            out.append(row - d)
        if row + d < rows_per_bank:
            out.append(row + d)
    return out


class Mitigation:
    """Base class; the default behaviour is "do nothing"."""

    name = "none"
    # whether the oracle's verdict is meaningful for this mechanism
    oracle_applicable = True

    def on_activate(self, bank: int, row: int, now: int, cause: str):
        return None

    def on_precharge(self, bank: int, row: int, now: int, cause: str):
        return None

    def periodic_reset(self, now: int) -> None:
        pass

    def adjust_timing(self, timing):
        return timing

    def stats(self) -> dict:
        return {}


class NoMitigation(Mitigation):
    name = "none"
