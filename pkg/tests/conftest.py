import numpy as np
import pytest

from se3kit.liegroup import Twist, Pose, exp

# Rotation magnitudes stay inside the principal branch with margin so
# roundtrip tests never trip the near-pi guard.
ROT_CAP = 2.8


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_twist(rng, rho_scale=5.0, phi_cap=ROT_CAP):
    rho = rng.uniform(-rho_scale, rho_scale, 3)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    phi = axis * rng.uniform(0.0, phi_cap)
    return Twist.from_vector(np.concatenate([rho, phi]))


def random_pose(rng, rho_scale=5.0, phi_cap=ROT_CAP) -> Pose:
    return exp(random_twist(rng, rho_scale, phi_cap))


def random_spd(rng, n=6, lo=0.01, hi=0.5) -> np.ndarray:
    """Random SPD matrix with eigenvalues in [lo, hi]."""
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return q @ np.diag(rng.uniform(lo, hi, n)) @ q.T
