import numpy as np
import pytest
import torch

from mcg.config import toy_config
from mcg.text import toy_vocabulary
from mcg.training import build_model

_CRITERIA = {}


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            item.user_properties.append(("criterion", marker.args[0]))


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    props = dict(report.user_properties)
    if "criterion" in props:
        ok = report.passed
        n = props["criterion"]
        _CRITERIA.setdefault(n, []).append((report.nodeid.split("::")[-1], ok))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        results = _CRITERIA[n]
        status = "PASS" if all(ok for _, ok in results) else "FAIL"
        names = ", ".join(f"{name}{'' if ok else ' (failed)'}" for name, ok in results)
        terminalreporter.write_line(f"criterion {n}: {status}  [{names}]")


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture
def vocab():
    return toy_vocabulary()


def tiny_config(**overrides):
    base = dict(
        model__dim=16, model__heads=2, model__video_depth=1, model__text_depth=1,
        model__fusion_depth=1, model__generator_depth=1, model__proj_dim=8, model__memory_dim=8,
        model__patch_size=8, data__resolution=16, data__frames=2, train__dtype="float64",
        train__batch_size=3,
    )
    base.update(overrides)
    return toy_config(**base)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture
def tiny_model(tiny_cfg, vocab):
    return build_model(tiny_cfg, vocab, seed=0)


def random_frames(b, t, h, seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(b, t, h, h, 3, generator=g, dtype=dtype)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    from mcg.manifest import load_manifest
    from mcg.synthetic import make_synthetic_dataset

    manifest = make_synthetic_dataset(tmp_path_factory.mktemp("tiny"), pairs=8, frames=4, resolution=16, seed=3)
    return manifest, load_manifest(manifest)
