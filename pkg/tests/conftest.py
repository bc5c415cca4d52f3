import numpy as np
import pytest

from weightmark import InsertionConfig, PrngStream, gen_synthetic_model, insert_watermark

DEFAULT_DIMS = dict(s=512, d=64, d_ff=128, n_layers=2)


@pytest.fixture(scope="session")
def base_model():
    return gen_synthetic_model(7, **DEFAULT_DIMS)


@pytest.fixture(scope="session")
def small_model():
    return gen_synthetic_model(3, s=96, d=16, d_ff=32, n_layers=2)


@pytest.fixture(scope="session")
def watermarked(base_model):
    wm, key = insert_watermark(base_model, InsertionConfig(), PrngStream(11))
    return wm, key


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config._acceptance = {}


@pytest.fixture
def verdict(request):
    """Record ``(criterion, part, ok, detail)`` for the end-of-run acceptance table."""
    table = request.config._acceptance

    def record(criterion, part, ok, detail):
        table.setdefault(criterion, []).append((part, bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    table = getattr(config, "_acceptance", {})
    if not table:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(table):
        parts = table[criterion]
        status = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        body = "; ".join(f"{part} {'ok' if ok else 'FAILED'} ({detail})"
                         for part, ok, detail in parts)
        terminalreporter.write_line(f"criterion {criterion}: {status} | {body}")
