"""Shared fixtures: a toy car mesh, a small pose grid on disk, and the
deterministic surrogate victim. Session scope keeps rasterization cost
out of individual tests."""
import numpy as np
import pytest
import torch

from advcamo.geometry import build_toy_car, toy_car_paint
from advcamo.sampling import SamplingPolicy
from advcamo.scenes import GridSpec, SampleStore, generate_dataset
from advcamo.transforms import ScheduleEntry
from advcamo.victims import get_victim


def pytest_configure(config):
    config._acceptance_notes = []


@pytest.fixture(scope="session")
def acceptance_notes(request):
    """Measured numbers the acceptance checks want echoed after the run."""
    return request.config._acceptance_notes


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One status line per acceptance check, plus any measured numbers."""
    status: dict[str, str] = {}
    for key in ("failed", "error", "passed", "skipped"):
        for rep in terminalreporter.stats.get(key, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance" not in nodeid:
                continue
            if key == "passed" and getattr(rep, "when", "call") != "call":
                continue
            name = nodeid.split("::")[-1]
            if key in ("failed", "error"):
                status[name] = "FAIL"
            else:
                status.setdefault(name, "PASS" if key == "passed" else "SKIP")
    if status:
        terminalreporter.write_sep("-", "acceptance checks")
        for name in sorted(status):
            terminalreporter.write_line(f"{status[name]:4s} {name}")
        for note in config._acceptance_notes:
            terminalreporter.write_line(f"     {note}")


@pytest.fixture(scope="session")
def car_mesh():
    return build_toy_car()


@pytest.fixture(scope="session")
def paint64():
    return toy_car_paint((64, 64))


@pytest.fixture(scope="session")
def victim():
    return get_victim("surrogate-vlm", seed=0)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory, car_mesh):
    """Four samples (2 poses x 2 variants), one pitch only. Scenes are
    rendered at the victim's input size so evaluation needs no resizing."""
    root = tmp_path_factory.mktemp("tinyset")
    grid = GridSpec(
        distances=(5.0,),
        pitches=(22.5,),
        yaw_labels=("north", "east"),
        variants_per_pose=2,
        image_size=(224, 224),
    )
    return generate_dataset(car_mesh, grid, out_dir=root, seed=11)


@pytest.fixture(scope="session")
def tiny_store(tiny_dataset):
    return SampleStore(tiny_dataset)


@pytest.fixture(scope="session")
def tiny_sample(tiny_dataset, tiny_store):
    return tiny_store.load(tiny_dataset.entries[0])


@pytest.fixture(scope="session")
def tiny_policy():
    # the tiny grid only has the 22.5 degree pitch
    return SamplingPolicy(pitch_weights={22.5: 1.0}, batch_size=2, seed=0)


@pytest.fixture(scope="session")
def unit_schedule():
    """Single full-frame entry sized for the surrogate's 224x224 input."""
    return (ScheduleEntry(crop_fraction=1.0, weight=1.0, output_size=(224, 224), label="full"),)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


@pytest.fixture()
def small_texture(rng):
    from advcamo.texture import TextureMap

    return TextureMap(torch.from_numpy(rng.random((32, 32, 3))).to(torch.float32))
