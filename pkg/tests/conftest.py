import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

import pytest

from febscan.client import BoardClient
from febscan.emulator import BoardEmulator
from febscan.transport import InMemoryTransport

GOLDEN_DIR = os.path.join(os.path.dirname(__file__), "data", "golden_frames")


def make_board(board="pfeb", seed=0, overrides=None):
    """Emulator plus an in-memory client bound to it."""
    emu = BoardEmulator(board, seed, overrides)
    client = BoardClient(InMemoryTransport(emu))
    return emu, client


@pytest.fixture
def pfeb():
    return make_board("pfeb", seed=17)


def golden_frame(name: str) -> bytes:
    with open(os.path.join(GOLDEN_DIR, name + ".hex")) as f:
        return bytes.fromhex(f.read().strip())


def golden_names() -> list:
    return sorted(
        os.path.splitext(p)[0] for p in os.listdir(GOLDEN_DIR) if p.endswith(".hex")
    )
