"""Coherent bidirectional classical communication through bipartite unitaries:
statevector simulation, coherent wrapper, block coding, entanglement
concentration and resource accounting."""

from .qstate import TOL, QuantumState, RegisterLayout, WidthOverflowError, tolerances
from .protocol import (
    MessageProtocol,
    coherentify,
    extract_gamma,
    protocol_from_json,
    protocol_to_json,
    run_p_prime,
    run_protocol,
    verify_cobit,
)
from .code import BlockCode, CodeParams, build_code, decode, repetition_code
from .concentrate import SchmidtSpectrum, concentrate
from .compose import PipelineConfig, f_of, run_pipeline
from .resource import ResourcePoint, check_derivation, named_map, verify_identity

__all__ = [
    "TOL",
    "BlockCode",
    "CodeParams",
    "MessageProtocol",
    "PipelineConfig",
    "QuantumState",
    "RegisterLayout",
    "ResourcePoint",
    "SchmidtSpectrum",
    "WidthOverflowError",
    "build_code",
    "check_derivation",
    "coherentify",
    "concentrate",
    "decode",
    "extract_gamma",
    "f_of",
    "named_map",
    "protocol_from_json",
    "protocol_to_json",
    "repetition_code",
    "run_p_prime",
    "run_pipeline",
    "run_protocol",
    "tolerances",
    "verify_cobit",
    "verify_identity",
]
