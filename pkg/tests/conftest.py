import numpy as np
import pytest

from ksplab import DiffusionModel, InitialLaw, ObservationModel, constant_diffusion


def brownian_motion(x0=0.0):
    """dX = dV from a point mass."""
    return DiffusionModel(
        dim_state=1,
        drift=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        diffusion_factor=constant_diffusion([[1.0]]),
        initial_law=InitialLaw.point_mass([x0]),
    )


def ornstein_uhlenbeck(theta=1.0, x0=0.0):
    """dX = -theta X dt + dV from a point mass."""
    return DiffusionModel(
        dim_state=1,
        drift=lambda x: -theta * np.asarray(x, dtype=float),
        diffusion_factor=constant_diffusion([[1.0]]),
        initial_law=InitialLaw.point_mass([x0]),
    )


def deterministic_model(drift, x0):
    return DiffusionModel(
        dim_state=1,
        drift=drift,
        diffusion_factor=constant_diffusion([[0.0]]),
        initial_law=InitialLaw.point_mass([x0]),
    )


def identity_sensor():
    return ObservationModel(dim_obs=1, sensor=lambda x: np.asarray(x, dtype=float))


def constant_sensor(c):
    return ObservationModel(
        dim_obs=1, sensor=lambda x: np.full(np.asarray(x).shape[:-1] + (1,), float(c))
    )


@pytest.fixture
def tmp_out(tmp_path):
    return str(tmp_path / "out")
