"""Tests for the dual-backend numeric kernels.

Each kernel is checked against a brute-force oracle written here, and the
numba and numpy paths are checked against each other.  The numba-specific
cases skip when the module imported with the fallback active.
"""

import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose

from evcopula import _kernels as kn

needs_numba = pytest.mark.skipif(
    not kn.NUMBA_ENABLED, reason="numba backend disabled in this process"
)

BACKENDS = [False] + ([True] if kn.NUMBA_ENABLED else [])


def brute_tau_b(x, y):
    """Tie-corrected tau via the O(n^2) pair definition."""
    dx = np.sign(x[:, None] - x[None, :])
    dy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(len(x), k=1)
    num = float((dx * dy)[iu].sum())
    tot = len(x) * (len(x) - 1) / 2
    xtie = float((dx[iu] == 0).sum())
    ytie = float((dy[iu] == 0).sum())
    return num / math.sqrt((tot - xtie) * (tot - ytie))


class TestKendallTau:
    @pytest.mark.parametrize("use_numba", BACKENDS)
    def test_matches_pair_counting_oracle(self, use_numba):
        rng = np.random.default_rng(0)
        x = rng.normal(size=400)
        y = 0.5 * x + rng.normal(size=400)
        assert_allclose(
            kn.kendall_tau(x, y, use_numba=use_numba), brute_tau_b(x, y), rtol=1e-12
        )

    @pytest.mark.parametrize("use_numba", BACKENDS)
    def test_matches_oracle_with_heavy_ties(self, use_numba):
        rng = np.random.default_rng(1)
        x = rng.poisson(3.0, size=300).astype(float)
        y = rng.poisson(3.0, size=300).astype(float) + 0.3 * x
        assert_allclose(
            kn.kendall_tau(x, y, use_numba=use_numba), brute_tau_b(x, y), rtol=1e-12
        )

    @pytest.mark.parametrize("use_numba", BACKENDS)
    def test_perfect_concordance_is_exactly_one(self, use_numba):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        assert kn.kendall_tau(x, 2.0 * x, use_numba=use_numba) == 1.0
        assert kn.kendall_tau(x, -x, use_numba=use_numba) == -1.0

    @needs_numba
    def test_backends_agree_at_scale(self):
        rng = np.random.default_rng(2)
        x = np.round(rng.normal(size=5000), 1)  # rounding forces tie handling
        y = np.round(0.3 * x + rng.normal(size=5000), 1)
        assert_allclose(
            kn.kendall_tau(x, y, use_numba=True),
            kn.kendall_tau(x, y, use_numba=False),
            rtol=1e-12,
        )

    def test_input_validation(self):
        with pytest.raises(ValueError, match="equal length"):
            kn.kendall_tau(np.arange(4.0), np.arange(5.0))
        with pytest.raises(ValueError, match="at least 2"):
            kn.kendall_tau(np.array([1.0]), np.array([1.0]))
        with pytest.raises(ValueError, match="all-tied"):
            kn.kendall_tau(np.ones(10), np.arange(10.0))


class TestKdeLogpdf:
    @pytest.mark.parametrize("use_numba", BACKENDS)
    def test_single_kernel_closed_form(self, use_numba):
        # one centre: logpdf(q) = -r^2/(2h^2) - d log(h sqrt(2 pi))
        h = 0.7
        pt = np.array([[1.0, -2.0, 0.5]])
        q = np.array([[1.3, -1.6, 0.5]])
        r2 = 0.3**2 + 0.4**2
        expected = -r2 / (2 * h * h) - 3 * math.log(h * math.sqrt(2 * math.pi))
        got = kn.kde_logpdf(pt, q, h, use_numba=use_numba)
        assert_allclose(got, [expected], rtol=1e-12)

    @pytest.mark.parametrize("use_numba", BACKENDS)
    def test_two_kernels_via_logaddexp(self, use_numba):
        h = 0.4
        pts = np.array([[0.0, 0.0], [2.0, 1.0]])
        q = np.array([[0.5, 0.25]])
        e = [-(np.sum((q[0] - p) ** 2)) / (2 * h * h) for p in pts]
        expected = np.logaddexp(e[0], e[1]) - math.log(2) - 2 * math.log(
            h * math.sqrt(2 * math.pi)
        )
        assert_allclose(kn.kde_logpdf(pts, q, h, use_numba=use_numba), [expected], rtol=1e-12)

    @needs_numba
    def test_backends_agree(self):
        rng = np.random.default_rng(3)
        pts = rng.normal(size=(300, 3))
        qs = rng.normal(size=(300, 3))  # exceeds the numpy path chunk size
        assert_allclose(
            kn.kde_logpdf(pts, qs, 0.25, use_numba=True),
            kn.kde_logpdf(pts, qs, 0.25, use_numba=False),
            atol=1e-12,
        )

    @pytest.mark.parametrize("use_numba", BACKENDS)
    def test_far_query_stays_finite(self, use_numba):
        pts = np.zeros((50, 3))
        q = np.full((1, 3), 1e3)
        out = kn.kde_logpdf(pts, q, 0.1, use_numba=use_numba)
        assert np.isfinite(out[0])
        assert out[0] < -1e6

    def test_input_validation(self):
        pts = np.zeros((3, 2))
        with pytest.raises(ValueError, match="bandwidth"):
            kn.kde_logpdf(pts, pts, 0.0)
        with pytest.raises(ValueError, match="matching width"):
            kn.kde_logpdf(pts, np.zeros((3, 3)), 0.5)


class TestNearestDistances:
    @pytest.mark.parametrize("use_numba", BACKENDS)
    def test_matches_broadcast_oracle(self, use_numba):
        rng = np.random.default_rng(4)
        refs = rng.normal(size=(120, 3))
        qs = rng.normal(size=(80, 3))
        oracle = np.sqrt(
            (((qs[:, None, :] - refs[None, :, :]) ** 2).sum(axis=2)).min(axis=1)
        )
        assert_allclose(
            kn.nearest_distances(qs, refs, use_numba=use_numba), oracle, atol=1e-12
        )

    @pytest.mark.parametrize("use_numba", BACKENDS)
    def test_query_on_reference_is_zero(self, use_numba):
        refs = np.array([[0.0, 0.0], [1.0, 1.0]])
        out = kn.nearest_distances(refs[1:2], refs, use_numba=use_numba)
        assert out[0] == 0.0

    def test_input_validation(self):
        with pytest.raises(ValueError, match="empty"):
            kn.nearest_distances(np.zeros((2, 2)), np.zeros((0, 2)))
        with pytest.raises(ValueError, match="matching width"):
            kn.nearest_distances(np.zeros((2, 2)), np.zeros((2, 3)))


class TestBackendSwitch:
    def test_default_follows_module_flag(self):
        assert kn.using_numba() == kn.NUMBA_ENABLED

    def test_env_flag_forces_fallback(self):
        # fresh interpreter: the flag is read at import time
        code = (
            "import numpy as np\n"
            "from evcopula import _kernels as kn\n"
            "import json\n"
            "x = np.arange(8.0); y = x ** 2\n"
            "tau = kn.kendall_tau(x, y)\n"
            "err = None\n"
            "try:\n"
            "    kn.kendall_tau(x, y, use_numba=True)\n"
            "except RuntimeError as exc:\n"
            "    err = str(exc)\n"
            "print(json.dumps({'enabled': kn.using_numba(), 'tau': tau, 'err': err}))\n"
        )
        env = dict(os.environ, EVCOPULA_NUMBA="0")
        proc = subprocess.run(
            [sys.executable, "-c", code], capture_output=True, text=True, env=env
        )
        assert proc.returncode == 0, proc.stderr
        out = json.loads(proc.stdout.strip().splitlines()[-1])
        assert out["enabled"] is False
        assert_allclose(out["tau"], 1.0, rtol=1e-12)
        assert "numba" in out["err"]
