import json
from unittest import mock

import pytest
from py_zipkin.storage import get_default_tracer

from ips_cftp import tracing
from ips_cftp.assembler import SampleResult
from ips_cftp.exception import ValidationError
from tests.acceptance.test_helper import MockTransport


@pytest.fixture
def transport():
    return MockTransport()


@pytest.fixture
def traced_settings(transport):
    return {
        'cftp.tracing_percent': 100,
        'cftp.transport_handler': transport,
    }


def dummy_result(seed):
    return SampleResult(seed, (0,), value=1, t_star=-2.5, l_star=3, points=4)


@pytest.mark.parametrize('percent', [0, 100])
@mock.patch.object(get_default_tracer(), 'zipkin_span', autospec=True)
def test_sampling_tween_always_enters_a_span(mock_span, percent):
    """The span context is pushed whether or not the seed is traced."""
    handler = mock.Mock(side_effect=dummy_result)
    sampler = tracing.sampling_tween(handler, {
        'cftp.tracing_percent': percent,
        'cftp.transport_handler': MockTransport(),
    })

    assert sampler(7) == dummy_result(7)
    assert handler.call_count == 1
    assert mock_span.call_count == 1
    kwargs = mock_span.call_args[1]
    assert kwargs['zipkin_attrs'].is_sampled == bool(percent)
    assert kwargs['span_name'] == 'sample 7'


def test_traced_seed_sends_one_span_with_the_result(traced_settings, transport):
    sampler = tracing.sampling_tween(dummy_result, traced_settings)
    sampler(7)

    spans = transport.get_payloads()
    assert len(spans) == 1
    span, = json.loads(spans[0])
    assert span['name'] == 'sample 7'
    assert span['traceId'] == tracing.create_zipkin_attr(7, True).trace_id
    assert span['localEndpoint']['serviceName'] == 'ips_cftp'
    assert span['tags']['cftp.seed'] == '7'
    assert span['tags']['cftp.value'] == '1'
    assert span['tags']['cftp.t_star'] == '-2.5'
    assert span['tags']['cftp.failed'] == 'false'
    assert span['tags']['otel.library.name'] == 'ips_cftp'


def test_untraced_seed_sends_nothing(transport):
    sampler = tracing.sampling_tween(dummy_result, {
        'cftp.tracing_percent': 0,
        'cftp.transport_handler': transport,
    })
    sampler(7)
    assert transport.get_payloads() == []


def test_sampling_tween_annotates_exceptions(traced_settings, transport):
    handler = mock.Mock(side_effect=ValueError('boom'))
    sampler = tracing.sampling_tween(handler, traced_settings)

    with pytest.raises(ValueError):
        sampler(3)

    span, = json.loads(transport.get_payloads()[0])
    assert span['tags']['error.type'] == 'ValueError'
    assert 'boom' in span['tags']['exception.stacktrace']
    assert handler.call_count == 1


def test_child_spans_share_the_trace(traced_settings, transport):
    def handler(seed):
        with tracing.child_span('build_amb_closure'):
            pass
        return dummy_result(seed)

    tracing.sampling_tween(handler, traced_settings)(11)

    spans = json.loads(transport.get_payloads()[0])
    names = {span['name'] for span in spans}
    assert names == {'sample 11', 'build_amb_closure'}
    assert len({span['traceId'] for span in spans}) == 1


def test_child_span_outside_a_sample_is_a_no_op():
    with tracing.child_span('resolve_all'):
        pass


def test_logs_warning_if_using_function_as_transport():
    calls = []
    settings = {
        'cftp.tracing_percent': 100,
        'cftp.transport_handler': lambda stream, payload: calls.append(stream),
        'cftp.stream_name': 'samples',
    }
    with pytest.deprecated_call():
        sampler = tracing.sampling_tween(dummy_result, settings)
    sampler(1)
    assert calls == ['samples']


def test_no_transport_discards_spans():
    sampler = tracing.sampling_tween(dummy_result, {'cftp.tracing_percent': 100})
    assert isinstance(sampler.transport_handler, tracing.NullTransport)
    assert sampler(5) == dummy_result(5)


def test_bad_tracing_percent_is_rejected():
    with pytest.raises(ValidationError):
        tracing.sampling_tween(dummy_result, {'cftp.tracing_percent': 101})


def test_should_trace_is_a_function_of_the_seed():
    assert not any(tracing.should_trace(s, 0.0) for s in range(200))
    assert all(tracing.should_trace(s, 100.0) for s in range(200))
    assert [tracing.should_trace(s, 50.0) for s in range(50)] == [
        tracing.should_trace(s, 50.0) for s in range(50)
    ]


def test_should_trace_samples_the_given_percentage():
    # 4000 Bernoulli(0.25) draws: standard deviation about 27
    traced = sum(tracing.should_trace(s, 25.0) for s in range(4000))
    assert abs(traced - 1000) < 140


def test_create_zipkin_attr_is_deterministic():
    a = tracing.create_zipkin_attr(42, True)
    assert a == tracing.create_zipkin_attr(42, True)
    assert len(a.trace_id) == 32
    assert len(a.span_id) == 16
    assert a.parent_span_id is None
    assert a.trace_id != tracing.create_zipkin_attr(43, True).trace_id


def test_get_binary_annotations_without_a_result():
    annotations = tracing.get_binary_annotations(5, None)
    assert annotations == {
        'cftp.seed': '5',
        'otel.library.name': 'ips_cftp',
        'otel.library.version': mock.ANY,
    }


def test_file_transport_appends_lines(tmp_path):
    path = tmp_path / 'spans.jsonl'
    file_transport = tracing.FileTransport(str(path))
    sampler = tracing.sampling_tween(dummy_result, {
        'cftp.tracing_percent': 100,
        'cftp.transport_handler': file_transport,
    })
    sampler(1)
    sampler(2)

    lines = path.read_text().splitlines()
    assert len(lines) == 2
    assert [json.loads(line)[0]['tags']['cftp.seed'] for line in lines] == [
        '1', '2',
    ]
