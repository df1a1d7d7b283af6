import pytest


@pytest.fixture(autouse=True)
def _clean_output_env(monkeypatch):
    # MIXFLOW_OUT takes precedence over --out; keep the suite hermetic
    monkeypatch.delenv("MIXFLOW_OUT", raising=False)
