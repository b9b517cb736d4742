import random
from datetime import datetime, timezone

import pytest

from senserag import KnowledgeStore, VehicleClass, VehicleRecord


@pytest.fixture
def store():
    return KnowledgeStore()


@pytest.fixture
def rng():
    return random.Random(20230924)


@pytest.fixture
def reference_vehicle():
    return VehicleRecord(
        entity_id="v42",
        timestamp=datetime(2023, 9, 24, 0, 1, 17, tzinfo=timezone.utc),
        x=604750.30, y=5792780.20,
        vx=-3.00, vy=1.00,
        ax=-0.50, ay=0.20,
        vehicle_class=VehicleClass.CAR,
    )


REFERENCE_QUERY = (
    "At timestamp 2023-09-24 00:01:17, provide the location, velocity, and "
    "acceleration of my car located at (604739.287, 5792784.4887500005). "
    "In addition, provide the same information for other vehicles around my car."
)

REFERENCE_VEHICLE_SENTENCE = (
    "At timestamp 2023-09-24 00:01:17, a vehicle was located at (604750.30, 5792780.20) "
    "with a velocity of (-3.00, 1.00) m/s and a speed magnitude of 3.16 m/s. "
    "The vehicle experienced an acceleration of (-0.50, 0.20) m/s² "
    "with a magnitude of 0.54 m/s²."
)

REFERENCE_SIGNAL_SENTENCE = "The traffic signal ahead is red."

REFERENCE_COMPAT_SQL = (
    "SELECT signal_status FROM traffic_data "
    "WHERE location = 'current_position' AND time = 'current_time';"
)
