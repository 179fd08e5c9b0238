import json
from pathlib import Path

import pytest

from specforge.harness.mockpop3 import MockConfig, MockPop3Server
from specforge.harness.session import SutConfig
from specforge.llm import LlmResponse
from specforge.protocols import POP3

ROOT = Path(__file__).resolve().parents[1]
DATA = Path(__file__).resolve().parent / "data"
FIXTURES = ROOT / "fixtures"


class ScriptProvider:
    """Returns the queued texts in order and keeps every request."""

    def __init__(self, *texts):
        self.texts = list(texts)
        self.requests = []

    def complete(self, request):
        self.requests.append(request)
        if not self.texts:
            raise AssertionError(f"unexpected extra call ({request.kind})")
        t = self.texts.pop(0)
        return LlmResponse(t if isinstance(t, str) else json.dumps(t))


@pytest.fixture
def script():
    return ScriptProvider


@pytest.fixture(scope="session")
def pop3():
    return POP3


@pytest.fixture(scope="session")
def golden():
    return POP3.golden


@pytest.fixture(scope="session")
def sections():
    return POP3.sections


@pytest.fixture(scope="session")
def mock_server():
    with MockPop3Server(MockConfig(port=0)) as srv:
        yield srv


@pytest.fixture(scope="session")
def sut(mock_server):
    return SutConfig(port=mock_server.port)


def write_config(directory, output_root="out", extra=""):
    """A copy of configs/pop3.toml placed in ``directory``, replaying fixtures/llm."""
    text = (ROOT / "configs" / "pop3.toml").read_text()
    text = text.replace('output_root = "../build/pop3"', f'output_root = "{output_root}"')
    text = text.replace('fixture_dir = "../fixtures/llm"', f'fixture_dir = "{(FIXTURES / "llm").as_posix()}"')
    path = Path(directory) / "pop3.toml"
    path.write_text(text + extra)
    return path


@pytest.fixture(scope="session")
def replay_run(tmp_path_factory):
    """One full replay run shared by the tests that only inspect its artifacts."""
    from specforge.config import load_config
    from specforge.pipeline import Pipeline

    d = tmp_path_factory.mktemp("replay")
    pipe = Pipeline(load_config(write_config(d)))
    summary = pipe.run()
    return pipe, summary


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
