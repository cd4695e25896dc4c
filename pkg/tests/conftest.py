import os
import warnings

import numpy as np
import pytest

warnings.filterwarnings("ignore", message=".*TBB.*")

import hjras
from hjras.cli import build_precomputed, cmd_ras, cmd_solve, load_manifest
from hjras.config import load_config


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile / cache-load the numba kernels once, outside timed tests."""
    sysm = hjras.builtin_system("cart1d")
    grid = hjras.Grid([-1.0], [1.0], [11], [False])
    from hjras.solver import SolverWorkspace

    ws = SolverWorkspace(sysm, grid)
    v = np.abs(grid.axis_coords(0))
    ws.sweep(v, 1e-4, 0.0)
    ws.godunov_sweep(v, 1e-4, 0.0)


@pytest.fixture(scope="session")
def artifact_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("artifacts")


class ArtifactStore:
    """Solve/ras outputs per (config, scale), computed once per session."""

    def __init__(self, root):
        self.root = root
        self._solved = {}
        self._ras = {}

    def solve(self, name, scale="ci"):
        key = (name, scale)
        if key not in self._solved:
            out = os.path.join(self.root, f"{name}_{scale}")
            manifest = cmd_solve(name, out, scale=scale)
            self._solved[key] = manifest
        return self._solved[key]

    def ras(self, name, scale="ci", **kw):
        key = (name, scale, tuple(sorted(kw.items())))
        if key not in self._ras:
            manifest = self.solve(name, scale)
            out = os.path.join(self.root, f"{name}_{scale}_ras.txt")
            result = cmd_ras(name, manifest, out, **kw)
            self._ras[key] = (result, out)
        return self._ras[key]

    def loaded(self, name, scale="ci"):
        manifest_path = self.solve(name, scale)
        cfg = load_config(name)
        manifest, packs = load_manifest(manifest_path)
        pre, _ = build_precomputed(cfg, manifest, packs)
        return cfg, pre


@pytest.fixture(scope="session")
def artifacts(artifact_dir):
    return ArtifactStore(str(artifact_dir))
