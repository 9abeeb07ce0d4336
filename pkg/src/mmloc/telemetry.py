"""OpenTelemetry tracing and metrics for pipeline stages and the HTTP service."""

from __future__ import annotations

import logging
import os
from functools import lru_cache

from opentelemetry import metrics, trace
from opentelemetry.exporter.otlp.proto.grpc.metric_exporter import OTLPMetricExporter
from opentelemetry.exporter.otlp.proto.grpc.trace_exporter import OTLPSpanExporter
from opentelemetry.instrumentation.fastapi import FastAPIInstrumentor
from opentelemetry.sdk.metrics import MeterProvider
from opentelemetry.sdk.metrics.export import PeriodicExportingMetricReader
from opentelemetry.sdk.resources import Resource
from opentelemetry.sdk.trace import TracerProvider
from opentelemetry.sdk.trace.export import BatchSpanProcessor

from mmloc import __version__

logger = logging.getLogger(__name__)


def setup_telemetry(service_name: str = "mmloc", endpoint: str | None = None) -> bool:
    """Install OTLP trace and metric exporters; no-op without an endpoint."""
    endpoint = endpoint or os.getenv("OTEL_EXPORTER_OTLP_ENDPOINT")
    if not endpoint:
        logger.info("telemetry_disabled", extra={"reason": "no OTLP endpoint"})
        return False

    resource = Resource.create({"service.name": service_name, "service.version": __version__})

    tracer_provider = TracerProvider(resource=resource)
    tracer_provider.add_span_processor(BatchSpanProcessor(OTLPSpanExporter(endpoint=endpoint)))
    trace.set_tracer_provider(tracer_provider)

    reader = PeriodicExportingMetricReader(
        exporter=OTLPMetricExporter(endpoint=endpoint),
        export_interval_millis=30000,
    )
    metrics.set_meter_provider(MeterProvider(resource=resource, metric_readers=[reader]))

    logger.info("telemetry_enabled", extra={"endpoint": endpoint, "service": service_name})
    return True


def instrument_app(app) -> None:
    FastAPIInstrumentor.instrument_app(app)
    logger.info("fastapi_instrumented")


def get_tracer(name: str):
    return trace.get_tracer(name)


def get_meter(name: str):
    return metrics.get_meter(name)


@lru_cache(maxsize=1)
def pipeline_metrics() -> dict:
    """Counters and histograms shared by every pipeline run in the process."""
    meter = get_meter("mmloc.pipeline")
    return {
        "frames": meter.create_counter(
            name="pipeline_frames_total", description="Frames processed per stage", unit="1"
        ),
        "failures": meter.create_counter(
            name="pipeline_frame_failures_total",
            description="Frames a solver could not process",
            unit="1",
        ),
        "duration": meter.create_histogram(
            name="pipeline_stage_duration_ms",
            description="Wall time of one pipeline stage",
            unit="ms",
        ),
    }
