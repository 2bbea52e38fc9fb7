"""Conformance harness for the 21 security properties."""

from minidrm.conformance.attacks import (
    AttackOutcome,
    Outcome,
    attack_ckc_tamper,
    attack_downgrade,
    attack_expired_playback,
    attack_key_extraction,
    attack_lease_overflow,
    attack_license_replay,
    attack_manifest_swap,
)
from minidrm.conformance.deployment import (
    FIXTURE_TARGETS,
    Deployment,
    DeploymentSettings,
    Fixture,
)
from minidrm.conformance.harness import run_property, run_suite
from minidrm.conformance.properties import PROPERTIES, PropertySpec
from minidrm.conformance.report import (
    NOT_CLAIMABLE,
    ConformanceReport,
    Evidence,
    PropertyVerdict,
    Verdict,
)

__all__ = [
    "AttackOutcome",
    "ConformanceReport",
    "Deployment",
    "DeploymentSettings",
    "Evidence",
    "FIXTURE_TARGETS",
    "Fixture",
    "NOT_CLAIMABLE",
    "Outcome",
    "PROPERTIES",
    "PropertySpec",
    "PropertyVerdict",
    "Verdict",
    "attack_ckc_tamper",
    "attack_downgrade",
    "attack_expired_playback",
    "attack_key_extraction",
    "attack_lease_overflow",
    "attack_license_replay",
    "attack_manifest_swap",
    "run_property",
    "run_suite",
]
