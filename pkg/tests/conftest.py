import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from btmpg.backtranslator import BackTranslator, BTConfig  # noqa: E402
from btmpg.paraphraser import Paraphraser, ParaphraserConfig  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def pytest_addoption(parser):
    parser.addoption("--skip-slow", action="store_true", default=False, help="skip the long trend check")


def pytest_collection_modifyitems(config, items):
    if not config.getoption("--skip-slow"):
        return
    skip = pytest.mark.skip(reason="slow trend check skipped by --skip-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def tiny_models():
    """d_e=8, d_h=8, d_z=4, V=20 paraphraser and a matching 8-dim back-translator, float64, no dropout."""
    torch.manual_seed(0)
    para = Paraphraser(ParaphraserConfig(20, d_e=8, d_h=8, d_z=4, layers=2)).double()
    bt = BackTranslator(BTConfig(20, layers=2, model_dim=8, heads=2, ff_dim=16, dropout=0.0)).double()
    return para, bt

