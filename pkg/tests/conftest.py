import pytest

from agentizer.a2a import serve
from agentizer.pipeline import agentize, load_env
from support import FIXTURES

IMAGE_REPOS = ("resize-repo", "stylize-repo", "caption-repo")


@pytest.fixture(scope="session")
def agentized(tmp_path_factory):
    """The three image fixtures, agentized once per session with the scripted planner."""
    root = tmp_path_factory.mktemp("agentized")
    return {name: agentize(FIXTURES / name, workspace=root / name) for name in IMAGE_REPOS}


@pytest.fixture(scope="session")
def live_agents(agentized):
    """One running task service per agentized image repo."""
    services = {}
    for name, outcome in agentized.items():
        services[name] = serve(outcome.card, load_env(outcome.workspace), outcome.toolbox)
    yield services
    for service in services.values():
        service.stop()
