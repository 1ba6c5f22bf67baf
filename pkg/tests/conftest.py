import pytest

from adrive.road import CriticalSection, PassingPlace, Path, RoadScene, single_track_scene


class StaticWorld:
    """Just enough of a world for the sensing helpers."""

    def __init__(self, scene, vehicles):
        self.scene = scene
        self.vehicles = list(vehicles)

    def all_vehicles(self):
        return self.vehicles


@pytest.fixture
def straight_scene():
    """One 100 m eastbound path whose section spans s in [10, 60]."""
    path = Path("p", ((0.0, 0.0), (100.0, 0.0)))
    sec = CriticalSection("sec", ((10, -2), (60, -2), (60, 2), (10, 2)), {"p": 10.0}, {"p": 60.0}, {"p": 8.0}, 50.0)
    return lambda pps=(): RoadScene([path], [sec], [PassingPlace(f"pp{i}", "p", pos, in_section=True) for i, pos in enumerate(pps)])


@pytest.fixture
def lane40():
    return single_track_scene(40.0)


# acceptance verdicts, printed together at the end of the session
VERDICTS: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance")
        for key in sorted(VERDICTS, key=lambda k: (len(k.split()[0]), k)):
            terminalreporter.write_line(VERDICTS[key])
