import hashlib
import json
import sys
from pathlib import Path

import pytest
import yaml

import dmu
from dmu.model import load_model
from dmu.training import TrainConfig, train

sys.path.insert(0, str(Path(__file__).parent))

_RESULTS = {}
DESK_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "desk.yaml"


def desk_config() -> TrainConfig:
    return TrainConfig.from_dict(yaml.safe_load(DESK_CONFIG.read_text())["train"])


def _source_digest(cfg: TrainConfig) -> str:
    h = hashlib.sha256(json.dumps(cfg.to_dict(), sort_keys=True).encode())
    for path in sorted(Path(dmu.__file__).parent.rglob("*.py")):
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


@pytest.fixture(scope="session")
def desk_run(request):
    """(model, epoch totals, wall time, run dir) for the desk recipe, trained at most once per source tree.

    The run is cached under pytest's cache directory; ``pytest --cache-clear`` retrains.
    """
    cfg = desk_config()
    out = Path(request.config.cache.mkdir(f"dmu-desk-{_source_digest(cfg)}"))
    info = out / "run.json"
    if not info.exists():
        _, rep = train(cfg, out)
        info.write_text(json.dumps({"totals": rep.totals, "wall_time": rep.wall_time}))
    run = json.loads(info.read_text())
    return load_model(out / "model.ckpt"), run["totals"], run["wall_time"], out


@pytest.fixture
def report(request):
    """Record one pass/fail line for an acceptance criterion; printed in the terminal summary."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _RESULTS[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_RESULTS):
            terminalreporter.write_line(_RESULTS[number])
