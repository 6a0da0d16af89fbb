import shutil

import pytest

from airmm.backbone import BackboneConfig, init_backbone, pretrain_lm, save_backbone
from airmm.encoders import align, alignment_corpus, save_encoders
from airmm.harness import RunConfig
from airmm.scene import generate_dataset_dir

TINY_SEED = 3
TINY_BACKBONE = BackboneConfig(d_model=16, n_layers=2, n_heads=2, d_ff=32)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    """Two small areas plus encoder and backbone checkpoints, built once per session."""
    root = tmp_path_factory.mktemp("tiny")
    generate_dataset_dir(root, TINY_SEED, 2, 48, 24)
    train, _ = alignment_corpus(TINY_SEED, n_areas=2, per_area=32, held_out_per_area=0)
    enc, _ = align(train, TINY_SEED, epochs=3, batch=16)
    save_encoders(root / "encoders.aimw", enc)
    bb = init_backbone(TINY_SEED, TINY_BACKBONE)
    pretrain_lm(bb, TINY_SEED, steps=20, batch=8)
    save_backbone(root / "backbone.aimb", bb)
    return root


@pytest.fixture
def tiny_copy(tiny_data, tmp_path):
    """A private copy of the tiny data directory that a test may modify."""
    dst = tmp_path / "data"
    shutil.copytree(tiny_data, dst)
    return dst


@pytest.fixture
def tiny_run(tiny_data):
    def make(config="full", **kw):
        kw.setdefault("epochs", 2)
        kw.setdefault("batch_size", 16)
        return RunConfig(config=config, seed=TINY_SEED, data_dir=str(tiny_data), **kw)

    return make


# -- one PASS/FAIL line per acceptance criterion --------------------------------

_CRITERIA = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::test_")[-1]
    if report.failed:
        _CRITERIA[name] = "FAIL"
    elif report.skipped:
        _CRITERIA.setdefault(name, "SKIP")
    elif report.when == "call":
        _CRITERIA.setdefault(name, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA, key=lambda n: int(n.split("_")[1])):
        number, label = name.split("_")[1], " ".join(name.split("_")[2:])
        terminalreporter.write_line(f"criterion {number} ({label}): {_CRITERIA[name]}")
