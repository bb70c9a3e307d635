import numpy as np
import pytest

from emarig import phantom
from emarig.rig import build_rig
from emarig.trackio import synth_trajectories


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


@pytest.fixture(scope="session")
def assets():
    return phantom.assets()


@pytest.fixture(scope="session")
def synth_traj():
    return synth_trajectories(phantom.synth_spec())


@pytest.fixture(scope="session")
def phantom_rig(assets, synth_traj):
    return build_rig(assets["tongue"], synth_traj.frame(0), phantom.rig_config(),
                     assets["mandible"], assets["maxilla"])
