"""Verification and comparison tools for spherical mixing."""
from gaclab.analysis.bench import BenchRow, bench_sampling
from gaclab.analysis.concentration import TABLE_KAPPAS, ConcentrationRow, concentration_table
from gaclab.analysis.saturation import (
    SaturationReport,
    analytic_saturation_fraction,
    policy_saturation,
    saturation_cutoff,
    tanh_saturation,
)
from gaclab.analysis.vmf import (
    VmfSampleStats,
    bessel_ratio,
    log_bessel_iv,
    mean_resultant_length,
    vmf_entropy,
    vmf_entropy_asymptotic,
    vmf_sample,
    vmf_sample_batch,
    vmf_sample_stats,
)

__all__ = [
    "BenchRow",
    "bench_sampling",
    "TABLE_KAPPAS",
    "ConcentrationRow",
    "concentration_table",
    "SaturationReport",
    "analytic_saturation_fraction",
    "policy_saturation",
    "saturation_cutoff",
    "tanh_saturation",
    "VmfSampleStats",
    "bessel_ratio",
    "log_bessel_iv",
    "mean_resultant_length",
    "vmf_entropy",
    "vmf_entropy_asymptotic",
    "vmf_sample",
    "vmf_sample_batch",
    "vmf_sample_stats",
]
