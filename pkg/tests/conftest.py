import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from kinrisk import Dataset  # noqa: E402

settings.register_profile("ci", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


def random_dataset(rng, n, p_values=(0.0, 0.02, 0.51, 1.0), dw=1, dz=1, weighted=False,
                   beta=1.0, family_size=3, genotyped=False):
    """Small synthetic kin-cohort dataset with continuous covariates."""
    p = rng.choice(np.asarray(p_values, dtype=float), size=n)
    if genotyped:
        p = (rng.random(n) < 0.5).astype(float)
    x = (rng.random(n) < p).astype(float)
    W = rng.normal(size=(n, dw))
    Z = rng.normal(size=(n, dz))
    lp = beta * x + 0.3 * W.sum(axis=1) - 0.2 * Z.sum(axis=1)
    T = 50.0 * (rng.exponential(size=n) / np.exp(lp)) ** 0.5
    C = rng.uniform(0, 120, size=n)
    y = np.round(np.minimum(T, C), 6) + 1e-3
    delta = (T <= C).astype(int)
    if delta.sum() == 0:
        delta[0] = 1
    wt = rng.uniform(0.3, 3.0, size=n) if weighted else None
    return Dataset(family_id=[f"f{i // family_size}" for i in range(n)],
                   relative_id=[str(i) for i in range(n)], y=y, delta=delta, probs=p,
                   w=W, z=Z, weight=wt,
                   w_names=[f"w{j}" for j in range(dw)], z_names=[f"z{j}" for j in range(dz)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Published adjusted marginal risks for carriers and non-carriers (ages 60..80)
PUBLISHED_AGES = (60.0, 65.0, 70.0, 75.0, 80.0)
PUBLISHED_CARRIER = (0.0727, 0.1144, 0.1674, 0.2081, 0.2475)
PUBLISHED_NONCARRIER = (0.0301, 0.0480, 0.0715, 0.0901, 0.1087)


def published_curves():
    from kinrisk import RiskCurve
    return (RiskCurve(PUBLISHED_AGES, PUBLISHED_CARRIER, label="carrier"),
            RiskCurve(PUBLISHED_AGES, PUBLISHED_NONCARRIER, label="non-carrier"))


ACCEPTANCE_LINES = []


def report_criterion(number, ok, detail):
    """Record and print one acceptance line; the caller asserts ``ok`` afterwards."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
