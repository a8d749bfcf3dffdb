"""Shared fixtures: small node sets and one reusable low-order assembly."""

from __future__ import annotations

import numpy as np
import pytest

from surfpde import geometry, rbf_assembly


@pytest.fixture(scope="session")
def sphere_level2() -> geometry.NodeSet:
    return geometry.generate_sphere_nodes(2)


@pytest.fixture(scope="session")
def sphere_level3() -> geometry.NodeSet:
    return geometry.generate_sphere_nodes(3)


@pytest.fixture(scope="session")
def torus_800() -> geometry.NodeSet:
    return geometry.generate_torus_nodes(800, seed=3)


@pytest.fixture(scope="session")
def deg2_config() -> rbf_assembly.AssemblyConfig:
    # second-order Laplacian setup: degree 2, 10 basis functions, 21-point stencils
    return rbf_assembly.AssemblyConfig.from_orders(1, 2, tau=1e-3)


@pytest.fixture(scope="session")
def torus_ops_deg2(torus_800, deg2_config):
    """Assembled global operators on the 800-node torus, low order for speed."""
    stencil_set = geometry.build_stencils(
        torus_800, deg2_config.stencil_size, deg2_config.delta
    )
    gops = rbf_assembly.assemble_global(stencil_set, torus_800, deg2_config)
    return gops, stencil_set


@pytest.fixture(scope="session")
def sphere_ops_deg2(sphere_level3, deg2_config):
    """Assembled global operators on the 642-node sphere, low order."""
    stencil_set = geometry.build_stencils(
        sphere_level3, deg2_config.stencil_size, deg2_config.delta
    )
    gops = rbf_assembly.assemble_global(stencil_set, sphere_level3, deg2_config)
    return gops, stencil_set


def random_unit_vectors(rng: np.random.Generator, count: int) -> np.ndarray:
    v = rng.standard_normal((count, 3))
    return v / np.linalg.norm(v, axis=1)[:, None]
