import numpy as np
import pytest

import minmarg as mm
from minmarg.bank import build_bank


@pytest.fixture
def tiny():
    return mm.tiny_instance()


@pytest.fixture
def tiny_bank(tiny):
    return build_bank(tiny, mm.decompose(tiny))


def random_is_bank(n=8, p=0.4, seed=0):
    inst = mm.generate_independent_set(n, p, seed)
    return inst, build_bank(inst, mm.decompose(inst))
