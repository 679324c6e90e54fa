from __future__ import annotations

import pytest

from dispatchq.clock import VirtualClock


@pytest.fixture
def clock() -> VirtualClock:
    return VirtualClock()
