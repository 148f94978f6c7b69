import numpy as np
import pytest

from hybrid_rosenbrock.models import EvenParams, FullParams, HybridParams, ModelSpec, TwoDParams


def reference_log_kernel(spec, x):
    """Kernels written out term by term, independent of the term-list lowering."""
    x = np.asarray(x, dtype=float)
    p = spec.params
    if isinstance(p, TwoDParams):
        return -p.a * (x[..., 0] - p.mu) ** 2 - p.b * (x[..., 1] - x[..., 0] ** 2) ** 2
    if isinstance(p, FullParams):
        s = 0.0
        for i in range(p.n - 1):
            s = s + p.quad_coeff * (x[..., i + 1] - x[..., i] ** 2) ** 2 + (p.mu - x[..., i]) ** 2
        return -p.scale * s
    if isinstance(p, EvenParams):
        s = 0.0
        for i in range(p.n // 2):
            x_odd, x_even = x[..., 2 * i], x[..., 2 * i + 1]
            s = s + (x_odd - p.mus[i]) ** 2 + p.quad_coeff * (x_even - x_odd ** 2) ** 2
        return -p.scale * s
    assert isinstance(p, HybridParams)
    s = -p.a * (x[..., 0] - p.mu) ** 2
    for j in range(1, p.n2 + 1):
        prev = x[..., 0]
        for i in range(2, p.n1 + 1):
            cur = x[..., p.index(j, i)]
            s = s - p.b[j - 1][i - 2] * (cur - prev ** 2) ** 2
            prev = cur
    return s


SPECS = {
    "twod-standard": ModelSpec.twod(),
    "twod-round": ModelSpec.twod(mu=-0.7, a=0.5, b=0.5),
    "full-3": ModelSpec.full(3),
    "full-5": ModelSpec.full(5, scale=0.1, quad_coeff=20.0, mu=0.5),
    "even-4": ModelSpec.even(4, mus=(1.0, -0.5)),
    "even-2": ModelSpec.even(2, mus=(2.0,)),
    "hybrid-2-1": ModelSpec.hybrid(2, 1),
    "hybrid-3-2": ModelSpec.hybrid(3, 2),
    "hybrid-3-2-hetero": ModelSpec.hybrid(3, 2, mu=0.3, a=0.2, b=[[1.0, 4.0], [0.5, 2.5]]),
    "hybrid-4-3": ModelSpec.hybrid(4, 3, mu=-1.0, a=0.1, b=0.8),
    "hybrid-5-1": ModelSpec.hybrid(5, 1, b=0.3),
}


@pytest.fixture(params=sorted(SPECS))
def any_spec(request):
    return SPECS[request.param]


@pytest.fixture
def standard_hybrid():
    return ModelSpec.hybrid(3, 2)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
