"""Conformance harness: run every property check and build the report.

Each property gets its own deployment and its own RNG stream derived from
``(seed, sp_id)``, so verdicts do not depend on the order checks run in and
two runs with the same seed produce byte-identical reports.
"""

import logging
from typing import Callable, Optional, Union

import numpy as np

from minidrm.conformance.attacks import AttackOutcome, Outcome
from minidrm.conformance.deployment import Deployment, DeploymentSettings, Fixture
from minidrm.conformance.properties import PROPERTIES, PropertySpec
from minidrm.conformance.report import (
    PROPERTY_COUNT,
    ConformanceReport,
    Evidence,
    PropertyVerdict,
    Verdict,
)
from minidrm.core.errors import DrmError, ErrorCode
from minidrm.core.logs import log_event

logger = logging.getLogger(__name__)

FOOTNOTES = (
    "SP21 PASS means the pipeline runs unchanged under a second suite with a different "
    "KEM and signature scheme; it is not a claim of quantum security.",
    "Not claimed replaces 'insufficient information available': every property of this "
    "deployment is decidable.",
)


def _evidence(outcome: AttackOutcome) -> Evidence:
    return Evidence(
        attack=outcome.attack,
        outcome=outcome.outcome.value,
        detail=outcome.detail,
        digest=outcome.digest,
    )


def run_property(
    spec: PropertySpec,
    settings: DeploymentSettings,
    fixture: Fixture,
    seed: int,
) -> PropertyVerdict:
    """Run one property check against a fresh deployment.

    An exception other than a deployment setup failure turns into a FAIL
    verdict with the error recorded as evidence.

    Raises
    ------
    DrmError
        ``HARNESS_SETUP`` if the deployment cannot be built
    """
    if spec.check is None:
        return PropertyVerdict(
            sp_id=spec.sp_id,
            title=spec.title,
            verdict=Verdict.NOT_CLAIMED,
            evidence=(),
            note=spec.note,
        )

    rng = np.random.default_rng([seed, spec.sp_id])
    with Deployment(settings, fixture, rng) as dep:
        try:
            outcomes = spec.check(dep)
        except Exception as e:
            reason = e.code.name if isinstance(e, DrmError) else type(e).__name__
            log_event(
                logger, logging.WARNING, "check_crashed", sp=spec.sp_id, error=reason, detail=str(e)
            )
            outcomes = [AttackOutcome(f"sp{spec.sp_id}_check", Outcome.VIOLATED, reason)]

    verdict = Verdict.PASS if outcomes and all(o.ok for o in outcomes) else Verdict.FAIL
    log_event(
        logger,
        logging.INFO,
        "property_checked",
        sp=spec.sp_id,
        verdict=verdict,
        evidence=len(outcomes),
    )
    return PropertyVerdict(
        sp_id=spec.sp_id,
        title=spec.title,
        verdict=verdict,
        evidence=tuple(_evidence(o) for o in outcomes),
        note=spec.note,
    )


def run_suite(
    settings: Optional[DeploymentSettings] = None,
    fixture: Union[str, Fixture] = Fixture.NONE,
    seed: int = 0,
    progress_callback: Optional[Callable[[float], None]] = None,
) -> ConformanceReport:
    """Run all 21 property checks.

    Parameters
    ----------
    settings : DeploymentSettings, optional
        Deployment parameters (default: ``DeploymentSettings()``)
    fixture : str or Fixture, default Fixture.NONE
        Negative fixture to run against
    seed : int, default 0
        Harness RNG seed
    progress_callback : callable, optional
        Function called with progress (0.0 to 1.0) after each property

    Returns
    -------
    ConformanceReport
        One verdict per property

    Raises
    ------
    DrmError
        ``HARNESS_SETUP`` for an unknown fixture, a negative seed or a
        deployment that cannot be built

    Examples
    --------
    >>> report = run_suite(seed=7)
    >>> print(report.to_table())
    """
    settings = settings or DeploymentSettings()
    fixture = Fixture.parse(fixture)
    if seed < 0:
        raise DrmError(ErrorCode.HARNESS_SETUP, f"seed must be non-negative, got {seed}")

    log_event(
        logger, logging.INFO, "conformance_started", suite=settings.suite, fixture=fixture.value
    )
    verdicts = []
    for sp_id in range(1, PROPERTY_COUNT + 1):
        verdicts.append(run_property(PROPERTIES[sp_id], settings, fixture, seed))
        if progress_callback:
            progress_callback(sp_id / PROPERTY_COUNT)

    report = ConformanceReport(
        suite=settings.suite,
        fixture=fixture.value,
        seed=seed,
        verdicts=tuple(verdicts),
        footnotes=FOOTNOTES,
    )
    log_event(
        logger,
        logging.INFO,
        "conformance_finished",
        failed=",".join(f"SP{sp}" for sp in report.failed()) or "none",
    )
    return report
