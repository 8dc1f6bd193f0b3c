"""Shared fixtures: small floors, the scripted desk-scale corpus and trained tiny models."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import pytest

from fleetlab.dataset.manifest import DatasetManifest, ManifestEntry, split_manifest
from fleetlab.floor import FloorGraph
from fleetlab.rng import derive_seed
from fleetlab.sim import Episode, generate_floor, simulate

# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        if {"corpus", "rc_trained", "gf_trained"} & set(getattr(item, "fixturenames", ())):
            item.add_marker(pytest.mark.slow)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])


# ------------------------------------------------------------------ corpus

CORPUS_FLOORS = 4
CORPUS_DAYS = 5
EPISODES_PER_FLOOR_DAY = 20
CORPUS_ROBOTS = 3
CORPUS_DURATION_S = 120


@dataclass
class Corpus:
    floors: dict[str, FloorGraph]
    episodes: dict[str, tuple[Episode, FloorGraph]]
    manifest: DatasetManifest

    def split(self, name: str) -> list[tuple[Episode, FloorGraph]]:
        return [self.episodes[e.episode] for e in self.manifest.split(name)]


@pytest.fixture(scope="session")
def corpus() -> Corpus:
    """400 scripted 3-robot episodes on four 8x8 storage floors over five days.

    One floor on one day (20 episodes) is held out as the test split.
    """
    floors = {f"floor{s}": generate_floor("storage", 8, 8, s) for s in range(CORPUS_FLOORS)}
    episodes = {}
    entries = []
    for fname, floor in floors.items():
        for day in range(CORPUS_DAYS):
            for k in range(EPISODES_PER_FLOOR_DAY):
                seed = derive_seed(0, "corpus", fname, day, k)
                name = f"{fname}/day{day}/ep{k}"
                episodes[name] = (simulate(floor, CORPUS_ROBOTS, CORPUS_DURATION_S, seed, day=day), floor)
                entries.append(ManifestEntry(name, fname, day))
    manifest = split_manifest(entries, n_test_floors=1, n_test_days=1, seed=0)
    return Corpus(floors, episodes, manifest)


@dataclass
class Trained:
    store: object
    config: object
    seconds: float
    rows: list


@pytest.fixture(scope="session")
def rc_trained(corpus) -> Trained:
    from fleetlab.dataset.rc import RCTable, build_rc_table
    from fleetlab.models.common import TrainConfig
    from fleetlab.models.rc import RCConfig, train_rc

    cfg = RCConfig()
    t0 = time.perf_counter()
    table = RCTable.concat([build_rc_table(ep, fl, cfg.K, cfg.K_r, cfg.K_p, cfg.K_x) for ep, fl in corpus.split("train")])
    store, rows = train_rc(table, cfg, TrainConfig(steps=4000, batch_size=64, lr=3e-3, log_every=50), seed=0)
    return Trained(store, cfg, time.perf_counter() - t0, rows)


@pytest.fixture(scope="session")
def gf_trained(corpus) -> Trained:
    from fleetlab.models.common import TrainConfig
    from fleetlab.models.gf import GFConfig, GFTable, train_gf

    cfg = GFConfig()
    t0 = time.perf_counter()
    table = GFTable(cfg)
    for ep, fl in corpus.split("train"):
        table.add(ep, fl)
    store, rows = train_gf(table, cfg, TrainConfig(steps=2000, batch_size=16, lr=3e-3, log_every=1), seed=0)
    return Trained(store, cfg, time.perf_counter() - t0, rows)


# ------------------------------------------------------------------ small helpers

@pytest.fixture(scope="session")
def floor8():
    return generate_floor("storage", 8, 8, 1)


@pytest.fixture(scope="session")
def episode8(floor8):
    return simulate(floor8, 3, 120, 42)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
