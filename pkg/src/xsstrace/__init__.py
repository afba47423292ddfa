"""Analysis toolkit for the payloads black-box XSS scanners send."""

from .capture import CapturedRequest, CaptureSource, IngestError, ingest
from .correlation import ClassifiedPayload, ReportFinding, correlate, dedup_negatives, triage
from .extraction import EntryPoint, Payload, SignatureSet, extract_all
from .metrics import TemplateMetrics, evaluate
from .templating import PRESETS, Template, TemplatingParams, cluster, levenshtein, match

__version__ = "0.1.0"

__all__ = [
    "CaptureSource", "CapturedRequest", "ClassifiedPayload", "EntryPoint", "IngestError",
    "PRESETS", "Payload", "ReportFinding", "SignatureSet", "Template", "TemplateMetrics",
    "TemplatingParams", "cluster", "correlate", "dedup_negatives", "evaluate", "extract_all",
    "ingest", "levenshtein", "match", "triage",
]
