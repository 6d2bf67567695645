"""Celery tasks for distributed robustness scans."""

import logging

import numpy as np

from laserctl.extensions import celery

logger = logging.getLogger(__name__)


def _decode_vector(parts):
    real, imag = parts
    return np.asarray(real, dtype=float) + 1j * np.asarray(imag, dtype=float)


@celery.task(name='laserctl.evaluate_scan_point')
def evaluate_scan_point(scheme, fixed, model_record, initial, target, rabi, delay):
    """Fidelity of one (rabi, delay) point in the few-level model; None on failure."""
    from laserctl.adiabatic import SCHEME_BUILDERS, FewLevelModel, RWAEvaluator

    try:
        model = FewLevelModel.from_record(model_record)
        sequence = SCHEME_BUILDERS[scheme](rabi=rabi, delay=delay, model=model, **fixed)
        evaluator = RWAEvaluator(model, _decode_vector(initial), _decode_vector(target))
        return evaluator(sequence)
    except Exception as e:
        logger.error(f"Failed to evaluate scan point rabi={rabi:.3g}, delay={delay:.3g}: {str(e)}")
        return None
