"""Shared fixture: a 16-sentence parallel corpus and a toy model."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import pytest

from knnqe_exporter import new_toy_model

SOURCES = [
    "der hund läuft im park",
    "die katze schläft auf dem sofa",
    "ich trinke jeden morgen kaffee",
    "das buch liegt auf dem tisch",
    "wir fahren morgen nach berlin",
    "der zug kommt heute später an",
    "sie liest gern lange romane",
    "das wetter ist heute sehr schön",
    "er kocht abends für die familie",
    "die kinder spielen hinter dem haus",
    "ich habe den schlüssel verloren",
    "der garten blüht im frühling",
    "wir treffen uns am bahnhof",
    "das konzert beginnt um acht uhr",
    "sie arbeitet in einer bibliothek",
    "der fluss fließt durch die stadt",
]

TARGETS = [
    "the dog runs in the park",
    "the cat sleeps on the sofa",
    "i drink coffee every morning",
    "the book lies on the table",
    "we travel to berlin tomorrow",
    "the train arrives later today",
    "she enjoys reading long novels",
    "the weather is very nice today",
    "he cooks for the family at night",
    "the children play behind the house",
    "i have lost the key",
    "the garden blooms in spring",
    "we meet at the station",
    "the concert starts at eight",
    "she works in a library",
    "the river flows through the town",
]


@dataclass
class ToyWorkspace:
    root: Path
    model: Path
    source: Path
    target: Path


@pytest.fixture(scope="session")
def toy(tmp_path_factory) -> ToyWorkspace:
    root = tmp_path_factory.mktemp("toy")
    source = root / "src.txt"
    target = root / "tgt.txt"
    source.write_text("\n".join(SOURCES) + "\n", encoding="utf-8")
    target.write_text("\n".join(TARGETS) + "\n", encoding="utf-8")
    words = [w for line in SOURCES + TARGETS for w in line.split()]
    model_path = root / "model.npz"
    new_toy_model(words, dim=24, seed=5, max_len=16).save(model_path)
    return ToyWorkspace(root=root, model=model_path, source=source, target=target)
