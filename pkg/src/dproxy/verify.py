"""Self-contained verification suites behind the `verify` subcommand.

Four independent oracles: finite differences against the analytic
gradients of the full training loss, the convex-combination stability
bound on proxy updates, brute-force optimal partitions against K-means,
and exact pair enumeration against the Rand index.  The acceptance test
module drives the same functions, so the CLI and the test suite cannot
drift apart.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from . import diffmath as dm
from .clustering import kmeans
from .fusion import FusionConfig, init_fusion_params
from .metrics import nmi, rand_index, rand_index_bruteforce
from .proxy import proxy_weights
from .seeding import substream
from .trainer import TrainConfig, batch_loss


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def build_full_loss_instance(
    dim: int = 8,
    batch: int = 4,
    layers: int = 1,
    heads: int = 2,
    n_candidates: int = 3,
    seed: int = 1234,
    fusion_mode: str = "gated",
):
    """A small random instance of the complete training loss in float64.

    Returns (f, store) ready for grad_check: f rebuilds the loss graph
    from the store on every call, touching every registered parameter
    including the temperature, the token projection, the gates, and the
    per-sample base proxies.
    """
    rng = substream(seed, "gradcheck")
    visual = _unit_rows(rng, batch, dim)
    text = _unit_rows(rng, batch, dim)
    candidates = _unit_rows(rng, n_candidates, dim)

    fcfg = FusionConfig(dim=dim, heads=heads, layers=layers)
    store = dm.ParamStore()
    init_fusion_params(fcfg, store, substream(seed, "gradcheck-init"), dtype=np.float64)
    # verify at a generic point: training inits hold some projections at
    # zero, which would silence the very paths the check must exercise
    jitter = substream(seed, "gradcheck-jitter")
    for _, tensor in store.items():
        tensor.data = tensor.data + 0.2 * jitter.standard_normal(tensor.data.shape)
    # spread the base rows so softmax weights are not uniform
    store.add("proxies.base", 0.5 * rng.standard_normal((batch, dim)), dtype=np.float64)

    cfg = TrainConfig(
        tau_alpha=0.2, sigma=0.2, fusion_mode=fusion_mode,
        heads=heads, layers=layers,
    )
    idx = np.arange(batch)
    # mid-run schedule values so both constraint terms contribute
    weights = (1.0, 0.3, 0.1)

    def f(current_store: dm.ParamStore) -> dm.Tensor2:
        total, _, _ = batch_loss(
            current_store, fcfg, visual, text, idx, candidates, cfg, weights,
            dtype=np.float64,
        )
        return total

    return f, store


def gradient_suite(step: float = 1e-5, tolerance: float = 1e-4) -> SuiteResult:
    start = time.perf_counter()
    f, store = build_full_loss_instance()
    report = dm.grad_check(f, store, step=step, tolerance=tolerance)
    detail = (
        f"max rel err {report.max_rel_error:.3e} at {report.worst_param} "
        f"{report.worst_index} over {store.n_entries()} entries"
    )
    return SuiteResult("gradient-check", report.passed, detail, time.perf_counter() - start)


def proposition_suite(trials: int = 100, seed: int = 77, slack: float = 1e-9) -> SuiteResult:
    """Frozen-weight candidate swaps never move a proxy farther than the
    largest candidate movement."""
    start = time.perf_counter()
    rng = substream(seed, "proposition")
    violations = 0
    worst_margin = -np.inf
    for _ in range(trials):
        n = int(rng.integers(2, 12))
        k = int(rng.integers(1, 9))
        d = int(rng.integers(2, 17))
        base = rng.standard_normal((n, d))
        cands = rng.standard_normal((k, d))
        moved = cands + rng.standard_normal((k, d)) * rng.uniform(0.01, 2.0)
        weights = proxy_weights(base, cands, tau_alpha=float(rng.uniform(0.05, 1.0)))
        delta_proxy = np.linalg.norm(weights @ (moved - cands), axis=1)
        max_delta_cand = np.linalg.norm(moved - cands, axis=1).max()
        margin = float((delta_proxy - max_delta_cand).max())
        worst_margin = max(worst_margin, margin)
        if margin > slack:
            violations += 1
    detail = f"{violations} violations in {trials} trials; worst margin {worst_margin:.2e}"
    return SuiteResult("proxy-stability", violations == 0, detail, time.perf_counter() - start)


def bruteforce_inertia(points: np.ndarray, k: int) -> float:
    """Exhaustive minimum inertia over every assignment of points to k groups."""
    n = points.shape[0]
    best = np.inf
    for assign in itertools.product(range(k), repeat=n):
        a = np.asarray(assign)
        inertia = 0.0
        for j in range(k):
            members = points[a == j]
            if members.shape[0] == 0:
                continue
            centroid = members.mean(axis=0)
            inertia += ((members - centroid) ** 2).sum()
        if inertia < best:
            best = inertia
    return float(best)


def kmeans_oracle_suite(instances: int = 50, seed: int = 31, tol: float = 1e-9) -> SuiteResult:
    start = time.perf_counter()
    rng = substream(seed, "kmeans-oracle")
    failures = 0
    worst_gap = 0.0
    for i in range(instances):
        k = 2 if i % 2 == 0 else 3
        n = int(rng.integers(k + 1, 9))
        d = int(rng.integers(2, 4))
        points = rng.standard_normal((n, d))
        result = kmeans(points, k, seed=int(rng.integers(2**31)), restarts=10)
        optimum = bruteforce_inertia(points, k)
        gap = result.inertia - optimum
        worst_gap = max(worst_gap, gap)
        if gap > tol:
            failures += 1
    detail = f"{failures} gaps beyond {tol:.0e} in {instances} instances; worst {worst_gap:.2e}"
    return SuiteResult("kmeans-oracle", failures == 0, detail, time.perf_counter() - start)


def metrics_suite(fuzz_cases: int = 200, seed: int = 5) -> SuiteResult:
    start = time.perf_counter()
    rng = substream(seed, "metrics-fuzz")
    ok = True
    details = []

    mismatches = 0
    for _ in range(fuzz_cases):
        n = int(rng.integers(2, 51))
        a = rng.integers(0, int(rng.integers(1, 6)) + 1, size=n)
        b = rng.integers(0, int(rng.integers(1, 6)) + 1, size=n)
        if rand_index(a, b) != rand_index_bruteforce(a, b):
            mismatches += 1
    if mismatches:
        ok = False
    details.append(f"rand index: {mismatches} mismatches in {fuzz_cases} fuzz cases")

    ident = nmi([0, 0, 1, 1], [1, 1, 0, 0])
    indep = nmi([0, 0, 1, 1], [0, 1, 0, 1])
    if ident != 1.0 or indep != 0.0:
        ok = False
    details.append(f"nmi relabeled-identical {ident}, independent-uniform {indep}")

    return SuiteResult("metrics-oracle", ok, "; ".join(details), time.perf_counter() - start)


def run_all_suites() -> list[SuiteResult]:
    return [
        gradient_suite(),
        proposition_suite(),
        kmeans_oracle_suite(),
        metrics_suite(),
    ]
