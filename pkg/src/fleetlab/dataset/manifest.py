"""Held-out floor-day splits, manifest files and sample shards."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from ..rng import make_rng

SHARD_BYTES = 64 * 1024 * 1024
SPLITS = ("train", "val", "test")


class InsufficientData(ValueError):
    pass


@dataclass
class ManifestEntry:
    episode: str
    floor: str
    day: int
    split: str = "train"

    def to_dict(self) -> dict:
        return {"episode": self.episode, "floor": self.floor, "day": int(self.day), "split": self.split}


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    floors: dict[str, str] = field(default_factory=dict)  # floor hash -> floor file
    meta: dict = field(default_factory=dict)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def floor_days(self, name: str) -> set[tuple[str, int]]:
        return {(e.floor, e.day) for e in self.split(name)}

    def to_json(self) -> str:
        doc = {"entries": [e.to_dict() for e in self.entries], "floors": dict(sorted(self.floors.items())),
               "meta": self.meta}
        return json.dumps(doc, indent=1, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> DatasetManifest:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        base = Path(path).parent
        entries = [ManifestEntry(**e) for e in doc["entries"]]
        floors = dict(doc.get("floors", {}))
        m = cls(entries, floors, doc.get("meta", {}))
        m.meta.setdefault("root", str(base))
        return m

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else Path(self.meta.get("root", ".")) / p


def split_manifest(episodes: Iterable, n_test_floors: int, n_test_days: int, seed: int,
                   val_fraction: float = 0.05) -> DatasetManifest:
    """Hold out whole floor-days for test, then split the rest by episode.

    ``episodes`` yields ``ManifestEntry``-like records (or dicts with keys
    episode, floor, day). Test floor-days are the cross product of
    ``n_test_floors`` seeded floors and ``n_test_days`` seeded days.
    """
    entries = [e if isinstance(e, ManifestEntry) else ManifestEntry(e["episode"], e["floor"], int(e["day"]))
               for e in episodes]
    entries = sorted(entries, key=lambda e: (e.floor, e.day, e.episode))
    floors = sorted({e.floor for e in entries})
    days = sorted({e.day for e in entries})
    if n_test_floors < 0 or n_test_days < 0:
        raise ValueError("held-out counts must be non-negative")
    held_out: set[tuple[str, int]] = set()
    if n_test_floors and n_test_days:
        if n_test_floors > len(floors) or n_test_days > len(days):
            raise InsufficientData(f"need {n_test_floors} floors and {n_test_days} days, "
                                   f"have {len(floors)} and {len(days)}")
        rng = make_rng(seed, "split", "test")
        tf = {floors[i] for i in rng.choice(len(floors), n_test_floors, replace=False)}
        td = {days[i] for i in rng.choice(len(days), n_test_days, replace=False)}
        held_out = {(e.floor, e.day) for e in entries if e.floor in tf and e.day in td}
        if not held_out:
            raise InsufficientData("no episodes on the selected floor-days")
    out = []
    rest = []
    for e in entries:
        if (e.floor, e.day) in held_out:
            out.append(ManifestEntry(e.episode, e.floor, e.day, "test"))
        else:
            rest.append(e)
    if held_out and not rest:
        raise InsufficientData("holding out the test floor-days leaves no training data")
    order = make_rng(seed, "split", "val").permutation(len(rest))
    n_val = int(round(val_fraction * len(rest)))
    val_idx = set(int(i) for i in order[:n_val])
    for i, e in enumerate(rest):
        out.append(ManifestEntry(e.episode, e.floor, e.day, "val" if i in val_idx else "train"))
    out.sort(key=lambda e: (e.floor, e.day, e.episode))
    return DatasetManifest(out, meta={"seed": int(seed), "n_test_floors": n_test_floors,
                                      "n_test_days": n_test_days})


def write_shards(records: Iterable[str], out_dir, max_bytes: int = SHARD_BYTES) -> list[Path]:
    """Write one JSON line per record into ``shard-%05d.jsonl`` files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: list[Path] = []
    fh = None
    size = 0
    try:
        for rec in records:
            line = (rec if isinstance(rec, str) else json.dumps(rec, sort_keys=True)).encode("utf-8") + b"\n"
            if len(line) > max_bytes:
                raise ValueError("single record exceeds the shard size limit")
            if fh is None or size + len(line) > max_bytes:
                if fh is not None:
                    fh.close()
                paths.append(out_dir / f"shard-{len(paths):05d}.jsonl")
                fh = open(paths[-1], "wb")
                size = 0
            fh.write(line)
            size += len(line)
    finally:
        if fh is not None:
            fh.close()
    return paths
