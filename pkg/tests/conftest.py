import numpy as np
import pytest

from dproxy.synth import PerspectiveSpec, SynthSpec, generate
from dproxy.ioformats import load_bundle, load_candidates
from dproxy.candidates import CandidatePool


def small_spec(seed=7):
    """A bundle small enough for fast trainer tests."""
    return SynthSpec(
        samples=120,
        dim=16,
        perspectives=[PerspectiveSpec("color", 3, 5), PerspectiveSpec("shape", 3, 5)],
        noise_sigma=0.05,
        distractors=9,
        visual_text_gap=0.2,
        seed=seed,
    )


@pytest.fixture(scope="session")
def small_bundle(tmp_path_factory):
    out = generate(small_spec(), tmp_path_factory.mktemp("small") / "data")
    return load_bundle(out.manifest_path)


@pytest.fixture()
def small_pool(small_bundle):
    cand = load_candidates(
        small_bundle.perspective("color").candidates_path, small_bundle.dim
    )
    return CandidatePool.from_candidate_file(cand)


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)
