"""Shared fixtures for the synth-eval test suite."""

import logging

import numpy as np
import pytest

from synth_eval.phantom import PhantomSpec, generate_phantom, standard_phantom
from synth_eval.settings import SettingsManager
from synth_eval.volume_model import Modality


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    for var in ("SYNTH_EVAL_THREADS", "SYNTH_EVAL_LOG_LEVEL", "SYNTH_EVAL_LOG_FORMAT",
                "SYNTH_EVAL_SEED"):
        monkeypatch.delenv(var, raising=False)


@pytest.fixture(autouse=True)
def _reset_logging():
    """Undo setup_logging so caplog sees records from later tests."""
    yield
    logger = logging.getLogger("synth_eval")
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()
    logger.propagate = True
    logger.setLevel(logging.NOTSET)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def standard():
    """The standard phantom at seed 0."""
    return generate_phantom(standard_phantom(0))


@pytest.fixture(scope="session")
def small_phantom():
    return generate_phantom(PhantomSpec(dims=(32, 32, 6), seed=3, n_structures=5, lesion=True))


@pytest.fixture(scope="session")
def phantom_slices(standard):
    """Every T1 slice of the standard phantom."""
    return list(standard.volumes[Modality.T1].slices())


@pytest.fixture
def make_settings(tmp_path):
    """SettingsManager writing into a temporary output directory."""

    def factory(**sections):
        overrides = {"global": {"out_dir": str(tmp_path / "out"), "threads": 2}}
        for section, values in sections.items():
            overrides.setdefault(section, {}).update(values)
        return SettingsManager(overrides=overrides)

    return factory
