import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hoilayout.geometry import Camera, TriMesh

settings.register_profile("repo", deadline=None, max_examples=60, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture
def cam100():
    return Camera(100.0, 50.0, 50.0, 100, 100)


def quad(z, x0=-100.0, x1=100.0, y0=-100.0, y1=100.0):
    """Two-triangle fronto-parallel rectangle at depth z."""
    v = np.array([[x0, y0, z], [x1, y0, z], [x1, y1, z], [x0, y1, z]], dtype=float)
    return TriMesh(v, np.array([[0, 1, 2], [0, 2, 3]]))


def make_scene(camera, humans=(), objects=(), grid_n=32, **kw):
    """In-memory scene from ``(mesh, pose)`` pairs; ids run 1.. humans first."""
    from hoilayout.scene import Instance, Scene, ensure_grids

    hs, os_ = [], []
    k = 1
    for mesh, pose in humans:
        hs.append(Instance(k, "human", mesh, pose, source={"mesh": f"h{k}.obj"}))
        k += 1
    for mesh, pose in objects:
        os_.append(Instance(k, "object", mesh, pose, "object", exemplars=[mesh],
                            source={"exemplars": [f"o{k}.obj"], "has_pose": True}))
        k += 1
    scene = Scene(camera, hs, os_, **kw)
    return ensure_grids(scene, grid_n) if grid_n else scene


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one acceptance line; the terminal summary repeats them all."""
    def record(label, ok, detail):
        line = f"{label} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
