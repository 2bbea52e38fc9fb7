"""Conformance report: per-property verdicts and their evidence.

The report is a wire message (``REPORT``) so two runs can be compared byte
for byte, and it renders as a table with one glyph per property.
"""

from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Tuple, Union

import pandas as pd

from minidrm.core.wire import Kind, MessageType, WireMessage, decode, encode, item, wire

PROPERTY_COUNT = 21

# Properties this deployment may leave unclaimed.
NOT_CLAIMABLE: FrozenSet[int] = frozenset({11, 13, 19, 20, 21})

PROPERTY_TITLES: Dict[int, str] = {
    1: "Key generation",
    2: "Pre-license key transit",
    3: "License transit",
    4: "Key database",
    5: "Key storage on device",
    6: "Key disposal",
    7: "Suitable encryption algorithms",
    8: "Content re-keying",
    9: "Session key management",
    10: "Public key management",
    11: "Pre-packaged content storage",
    12: "Packaged content storage",
    13: "Pre-packaged content transit",
    14: "Packaged content transit",
    15: "Secure video path",
    16: "Secure manifest",
    17: "User authentication",
    18: "Server authentication",
    19: "DDoS security",
    20: "TEE security",
    21: "Quantum security",
}


class Verdict(IntEnum):
    PASS = 1
    FAIL = 2
    NOT_CLAIMED = 3

    @property
    def glyph(self) -> str:
        return GLYPHS[self]


GLYPHS: Dict[Verdict, str] = {
    Verdict.PASS: "✓",
    Verdict.FAIL: "✗",
    Verdict.NOT_CLAIMED: "◐",
}


@dataclass(frozen=True)
class Evidence(WireMessage):
    """One attack or check backing a verdict."""

    attack: str = wire(1, Kind.STR)
    outcome: str = wire(2, Kind.STR)
    detail: str = wire(3, Kind.STR)
    digest: str = wire(4, Kind.STR)


@dataclass(frozen=True)
class PropertyVerdict(WireMessage):
    """Verdict for one security property.

    Attributes:
        sp_id: Property number, 1..21
        title: Property name
        verdict: PASS, FAIL or NOT_CLAIMED
        evidence: Attacks and checks run for the property
        note: Scope note, required for NOT_CLAIMED
    """

    sp_id: int = wire(1, Kind.U16)
    title: str = wire(2, Kind.STR)
    verdict: Verdict = wire(3, Kind.ENUM, of=Verdict)
    evidence: Tuple[Evidence, ...] = wire(4, Kind.LIST, element=item(Kind.MESSAGE, Evidence))
    note: Optional[str] = wire(5, Kind.STR, optional=True)

    def __post_init__(self) -> None:
        """Validate property number and verdict."""
        super().__post_init__()
        if not 1 <= self.sp_id <= PROPERTY_COUNT:
            raise ValueError(f"sp_id must be between 1 and {PROPERTY_COUNT}, got {self.sp_id}")
        if self.verdict is Verdict.NOT_CLAIMED and self.sp_id not in NOT_CLAIMABLE:
            raise ValueError(f"SP{self.sp_id} cannot be left unclaimed")


@dataclass(frozen=True)
class ConformanceReport(WireMessage):
    """Verdicts for all 21 properties of one harness run.

    Attributes:
        suite: Crypto suite the deployment ran with
        fixture: Negative fixture name, ``none`` for the correct build
        seed: Harness RNG seed
        verdicts: One verdict per property, ordered by ``sp_id``
        footnotes: Scope notes printed under the table
    """

    TYPE_TAG = MessageType.REPORT

    suite: str = wire(1, Kind.STR)
    fixture: str = wire(2, Kind.STR)
    seed: int = wire(3, Kind.UINT)
    verdicts: Tuple[PropertyVerdict, ...] = wire(
        4, Kind.LIST, element=item(Kind.MESSAGE, PropertyVerdict)
    )
    footnotes: Tuple[str, ...] = wire(5, Kind.LIST, element=item(Kind.STR))

    def __post_init__(self) -> None:
        """Every property appears exactly once, in order."""
        super().__post_init__()
        ids = [v.sp_id for v in self.verdicts]
        if ids != list(range(1, PROPERTY_COUNT + 1)):
            raise ValueError(f"report must list SP1..SP{PROPERTY_COUNT} once each, got {ids}")

    def verdict(self, sp_id: int) -> Verdict:
        return self.verdicts[sp_id - 1].verdict

    def failed(self) -> List[int]:
        """Properties with a FAIL verdict."""
        return [v.sp_id for v in self.verdicts if v.verdict is Verdict.FAIL]

    @property
    def passed(self) -> bool:
        return not self.failed()

    def to_frame(self) -> pd.DataFrame:
        """One row per property.

        Returns
        -------
        pd.DataFrame
            Indexed by ``sp``, with columns title, verdict, glyph, evidence
            (attack count), blocked (attacks that were stopped) and note
        """
        rows = [
            {
                "sp": f"SP{v.sp_id}",
                "title": v.title,
                "verdict": v.verdict.name,
                "glyph": v.verdict.glyph,
                "evidence": len(v.evidence),
                "blocked": sum(e.outcome in ("blocked", "held") for e in v.evidence),
                "note": v.note or "",
            }
            for v in self.verdicts
        ]
        return pd.DataFrame(rows).set_index("sp")

    def evidence_frame(self) -> pd.DataFrame:
        """One row per attack or check, across all properties."""
        rows = [
            {
                "sp": f"SP{v.sp_id}",
                "attack": e.attack,
                "outcome": e.outcome,
                "detail": e.detail,
                "digest": e.digest,
            }
            for v in self.verdicts
            for e in v.evidence
        ]
        return pd.DataFrame(rows, columns=["sp", "attack", "outcome", "detail", "digest"])

    def to_table(self) -> str:
        """Human-readable table with glyphs and footnotes."""
        width = max(len(v.title) for v in self.verdicts)
        lines = [
            f"minidrm conformance  suite={self.suite}  fixture={self.fixture}  seed={self.seed}",
            "",
        ]
        for v in self.verdicts:
            mark = "*" if v.note else " "
            lines.append(
                f"  {v.verdict.glyph}  SP{v.sp_id:<3d}{v.title:<{width}}  {v.verdict.name}{mark}"
            )
        lines.append("")
        lines.append(
            f"  {GLYPHS[Verdict.PASS]} provided   {GLYPHS[Verdict.FAIL]} not provided   "
            f"{GLYPHS[Verdict.NOT_CLAIMED]} not claimed"
        )
        for v in self.verdicts:
            if v.note:
                lines.append(f"  * SP{v.sp_id}: {v.note}")
        lines.extend(f"  {note}" for note in self.footnotes)
        return "\n".join(lines)

    def export_csv(self, filepath: Union[str, Path]) -> None:
        """Export the per-property table to CSV.

        Examples
        --------
        >>> report.export_csv("conformance.csv")
        """
        self.to_frame().to_csv(filepath, index=True)

    def to_bytes(self) -> bytes:
        return encode(self)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ConformanceReport":
        return decode(data, cls)
