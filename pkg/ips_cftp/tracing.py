import functools
import traceback
import warnings
from typing import Any
from typing import Callable
from typing import Dict
from typing import Mapping
from typing import Optional

from py_zipkin import Encoding
from py_zipkin import Kind
from py_zipkin.storage import get_default_tracer
from py_zipkin.transport import BaseTransportHandler
from py_zipkin.zipkin import zipkin_span
from py_zipkin.zipkin import ZipkinAttrs

from ips_cftp.event_field import mix_seed
from ips_cftp.settings import get_settings
from ips_cftp.version import __version__


SERVICE_NAME = 'ips_cftp'

_TRACE_KEY = 0x7472616365


class NullTransport(BaseTransportHandler):
    """Discards every span."""

    def get_max_payload_bytes(self) -> Optional[int]:
        return None

    def send(self, payload: bytes) -> None:
        pass


class FileTransport(BaseTransportHandler):
    """Appends each encoded span batch as one line of `path`.

    The file is opened per batch so the transport can be pickled into worker
    processes.
    """

    def __init__(self, path: str) -> None:
        super().__init__()
        self.path = path

    def get_max_payload_bytes(self) -> Optional[int]:
        return None

    def send(self, payload: bytes) -> None:
        if isinstance(payload, str):
            payload = payload.encode('utf-8')
        with open(self.path, 'ab') as f:
            f.write(payload.rstrip(b'\n') + b'\n')


def should_trace(seed: int, tracing_percent: float) -> bool:
    """Whether the sample of `seed` is traced.

    A hash of the seed, so a batch traces the same seeds on every run.

    :param tracing_percent: value between 0.0 to 100.0
    """
    return (mix_seed(seed, _TRACE_KEY) % 10000) < tracing_percent * 100


def create_zipkin_attr(seed: int, is_sampled: bool) -> ZipkinAttrs:
    """ZipkinAttrs derived from the seed only."""
    return ZipkinAttrs(
        trace_id=(
            f'{mix_seed(seed, _TRACE_KEY, 1):016x}'
            f'{mix_seed(seed, _TRACE_KEY, 2):016x}'
        ),
        span_id=f'{mix_seed(seed, _TRACE_KEY, 3):016x}',
        parent_span_id=None,
        flags='0',
        is_sampled=is_sampled,
    )


def get_binary_annotations(seed: int, result: Any) -> Dict[str, str]:
    """Binary annotations of a finished sample.

    :param result: a sample result; its `binary_annotations()` are merged in
    """
    annotations = {
        'cftp.seed': str(seed),
        'otel.library.name': __name__.split('.')[0],
        'otel.library.version': __version__,
    }
    if hasattr(result, 'binary_annotations'):
        annotations.update(result.binary_annotations())
    return annotations


def _transport(settings: Mapping[str, Any], handler: Any) -> Any:
    if handler is None:
        return NullTransport()
    if not isinstance(handler, BaseTransportHandler):
        warnings.warn(
            'Using a function as transport_handler is deprecated. '
            'Please extend py_zipkin.transport.BaseTransportHandler',
            DeprecationWarning,
        )
        stream_name = settings.get('cftp.stream_name', 'cftp')
        return functools.partial(handler, stream_name)
    return handler


Handler = Callable[[int], Any]


class SamplingTween:
    """Wraps a per-seed sample function in a root py_zipkin span.

    Even when the seed is not traced the span context is pushed, so the
    child spans of the sampler find a consistent (unsampled) state.

    :param handler: function from a seed to a sample result
    :param settings: flat dict of dotted settings, see
        :func:`ips_cftp.settings.get_settings`
    """

    def __init__(self, handler: Handler, settings: Mapping[str, Any]) -> None:
        self.handler = handler
        self.settings = dict(settings)
        cftp_settings = get_settings(self.settings)
        self.tracing_percent = cftp_settings.tracing_percent
        self.service_name = cftp_settings.service_name
        self.transport_handler = _transport(
            self.settings, cftp_settings.transport_handler,
        )

    def __call__(self, seed: int) -> Any:
        tracer = get_default_tracer()
        is_sampled = should_trace(seed, self.tracing_percent)
        span_kwargs = dict(
            service_name=self.service_name,
            span_name=f'sample {seed}',
            zipkin_attrs=create_zipkin_attr(seed, is_sampled),
            transport_handler=self.transport_handler,
            report_root_timestamp=True,
            encoding=Encoding.V2_JSON,
            kind=Kind.SERVER,
        )
        with tracer.zipkin_span(**span_kwargs) as zipkin_context:
            result = None
            try:
                result = self.handler(seed)
            except Exception as e:
                exception_type = type(e).__name__
                zipkin_context.update_binary_annotations({
                    'error.type': exception_type,
                    'exception.stacktrace': traceback.format_exc(),
                })
                zipkin_context.add_annotation(exception_type)
                raise e
            finally:
                zipkin_context.update_binary_annotations(
                    get_binary_annotations(seed, result),
                )
            return result


def sampling_tween(handler: Handler, settings: Mapping[str, Any]) -> Handler:
    """Factory of the sample wrapper, see :class:`SamplingTween`."""
    return SamplingTween(handler, settings)


def child_span(span_name: str) -> zipkin_span:
    """A span nested in the current sample span; a no-op outside of one."""
    return zipkin_span(service_name=SERVICE_NAME, span_name=span_name)
