"""Redes complexas com esparsificação variacional e pipeline de compressão."""
import os

# ferramenta numérica local: sem telemetria nem tracing do crewAI
os.environ.setdefault("CREWAI_DISABLE_TELEMETRY", "true")
os.environ.setdefault("OTEL_SDK_DISABLED", "true")
os.environ.setdefault("CREWAI_TRACING_ENABLED", "false")
