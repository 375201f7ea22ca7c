"""Frozen-representation evaluation: linear probes, subgroup metrics, spectra."""

from lassl.eval.metrics import SubgroupMetrics, auroc, multiclass_subgroup_metrics, subgroup_metrics
from lassl.eval.probe import ProbeConfig, ProbeParams, bce_grad, bce_loss, extract, probe
from lassl.eval.spectral import (
    SpectrumReport,
    compare_spectra,
    gradient_identity_check,
    jacobi_svd,
    spectrum,
)

__all__ = [
    "ProbeConfig",
    "ProbeParams",
    "SpectrumReport",
    "SubgroupMetrics",
    "auroc",
    "bce_grad",
    "bce_loss",
    "compare_spectra",
    "extract",
    "gradient_identity_check",
    "jacobi_svd",
    "multiclass_subgroup_metrics",
    "probe",
    "spectrum",
    "subgroup_metrics",
]
