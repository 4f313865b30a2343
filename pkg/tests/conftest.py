import numpy as np
import pytest

import diskflow as df

ALPHA, BETA, Q, P = 0.3, 0.35, 3, 1  # default instance


@pytest.fixture(scope="session")
def plane_map():
    return df.extend_pseudo_rotation(None, ALPHA, BETA)


@pytest.fixture(scope="session")
def decomposition(plane_map):
    return df.decompose(plane_map, K_target=2.0, m_prime=8,
                        inner_factors=df.rotation_split(ALPHA, 4),
                        sample_count=10000, rng=0)


@pytest.fixture(scope="session")
def system(decomposition):
    return df.GeneratingSystem(decomposition, Q)


@pytest.fixture(scope="session")
def gentle_system(plane_map):
    """A decomposition with K <= 1.5 (more twist roots), for the tighter
    forward-backward consistency bound."""
    dec = df.decompose(plane_map, K_target=1.5, m_prime=14,
                       inner_factors=df.rotation_split(ALPHA, 4),
                       sample_count=4000, rng=1)
    return df.GeneratingSystem(dec, Q)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260808)


@pytest.fixture(scope="session")
def small_graph_mesh(system):
    from diskflow import disk
    return disk.graph_transform_disk(system, P, t=28.0, n_r=8, n_theta=16,
                                     t_base=10.0, sub_angles=8, holdout=2,
                                     rng=5)


@pytest.fixture(scope="session")
def small_shoot_mesh(system):
    from diskflow import disk
    return disk.shooting_disk(system, P, n_r=8, n_theta=16, T_f=28.0,
                              n_seeds=16)
