"""Coordinator-model protocols: shared randomness, sampling and function sums."""

from protocols.comm import (
    CommStats,
    CoordinatorProtocol,
    PROTOCOL_REGISTRY,
    ServerVector,
    register_protocol,
    run_coordinator_protocol,
)
from protocols.correlations import brute_force_correlation, higher_order_correlation, run_correlation
from protocols.fsum import fk_estimate, fsum_estimate, run_fsum
from protocols.functions import FN_REGISTRY, FnSpec, cf_bound
from protocols.models import (
    FailReason,
    FsumOutcome,
    ProtocolConfig,
    RandomnessConfig,
    SampleResult,
    SamplerConfig,
)
from protocols.randomness import (
    Backend,
    ExpStream,
    KeyHash,
    audit_exponentials,
    gen_exponentials,
    nisan_prg,
    uniform_hash,
)
from protocols.sampler import dedup_leverage_sample, sample_additive

__all__ = [
    'CommStats',
    'CoordinatorProtocol',
    'PROTOCOL_REGISTRY',
    'ServerVector',
    'register_protocol',
    'run_coordinator_protocol',
    'brute_force_correlation',
    'higher_order_correlation',
    'run_correlation',
    'fk_estimate',
    'fsum_estimate',
    'run_fsum',
    'FN_REGISTRY',
    'FnSpec',
    'cf_bound',
    'FailReason',
    'FsumOutcome',
    'ProtocolConfig',
    'RandomnessConfig',
    'SampleResult',
    'SamplerConfig',
    'Backend',
    'ExpStream',
    'KeyHash',
    'audit_exponentials',
    'gen_exponentials',
    'nisan_prg',
    'uniform_hash',
    'dedup_leverage_sample',
    'sample_additive',
]
