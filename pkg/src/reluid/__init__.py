"""Identifiability tools for deep ReLU networks: equivalence, conditions and recovery."""
from .conditions import ConditionReport, Tolerances, Verdict, check_P
from .domain import DomainError, DomainSpec
from .equivalence import (EquivalenceWitness, apply_transform, check_equivalent,
                          compose_witness, invert_witness, normalize)
from .network import (Architecture, NetworkParams, activation_pattern, eval_f_k, eval_g_k,
                      forward, load, save)
from .oracle import QueryOracle, catalog, estimate_risk, functional_distance, make_teacher
from .recovery import RecoveryConfig, RecoveryResult, recover_network
from .regions import enumerate_regions, pushforward_domain, region_of

__all__ = [
    "Architecture", "ConditionReport", "DomainError", "DomainSpec", "EquivalenceWitness",
    "NetworkParams", "QueryOracle", "RecoveryConfig", "RecoveryResult", "Tolerances", "Verdict",
    "activation_pattern", "apply_transform", "catalog", "check_P", "check_equivalent",
    "compose_witness", "enumerate_regions", "estimate_risk", "eval_f_k", "eval_g_k", "forward",
    "functional_distance", "invert_witness", "load", "make_teacher", "normalize",
    "pushforward_domain", "recover_network", "region_of", "save",
]
