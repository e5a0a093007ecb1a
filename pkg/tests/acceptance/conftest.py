import pytest

from tests.acceptance.test_helper import MockTransport


@pytest.fixture
def transport():
    return MockTransport()


@pytest.fixture
def settings(transport):
    return {
        'cftp.tracing_percent': 100,
        'cftp.transport_handler': transport,
    }
