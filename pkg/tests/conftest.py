"""Shared fixtures. The trained-policy fixtures are expensive (~15 s each) and
session-scoped; everything that needs a competent policy shares them. Seeds
are frozen so every run trains byte-identical models."""

import numpy as np
import pytest

from streampolicy.envsim import EnvKind, KIND_CONTROLLER, KIND_DIRECT, generate_demos
from streampolicy.saliency import PredictorConfig, train_predictor
from streampolicy.trainer import TrainConfig, train

CTRL = EnvKind(variant=KIND_CONTROLLER)
DIRECT = EnvKind(variant=KIND_DIRECT)

# the training recipe all quality tests use: 16k iterations stays under the
# iteration budget while reaching full success on both env variants
RECIPE = TrainConfig(iterations=16000, batch_size=128, lr=2e-3,
                     lr_schedule="cosine", seed=0, hidden=(128, 128))
DEMO_COUNT = 600
DEMO_SEED = 11


@pytest.fixture(scope="session")
def ctrl_env():
    return CTRL


@pytest.fixture(scope="session")
def direct_env():
    return DIRECT


@pytest.fixture(scope="session")
def ctrl_demos():
    return generate_demos(CTRL, DEMO_COUNT, seed=DEMO_SEED)


@pytest.fixture(scope="session")
def direct_demos():
    return generate_demos(DIRECT, DEMO_COUNT, seed=DEMO_SEED)


@pytest.fixture(scope="session")
def small_demos():
    """A light dataset for structural tests that do not need a good policy."""
    return generate_demos(CTRL, 40, seed=21)


@pytest.fixture(scope="session")
def ctrl_policy(ctrl_demos):
    policy, _, _ = train(ctrl_demos, RECIPE, alpha0_convention="zero")
    return policy


@pytest.fixture(scope="session")
def direct_policy(direct_demos):
    policy, _, _ = train(direct_demos, RECIPE, alpha0_convention="initial_position")
    return policy


@pytest.fixture(scope="session")
def misaligned_policy(ctrl_demos):
    """Identical budget and seeds, but training windows seed their ledgers at
    zero instead of the precomputed prefix sums."""
    cfg = TrainConfig(iterations=RECIPE.iterations, batch_size=RECIPE.batch_size,
                      lr=RECIPE.lr, lr_schedule=RECIPE.lr_schedule, seed=RECIPE.seed,
                      hidden=RECIPE.hidden, use_state_alignment=False)
    policy, _, _ = train(ctrl_demos, cfg, alpha0_convention="zero")
    return policy


@pytest.fixture(scope="session")
def ctrl_predictor(ctrl_demos):
    predictor, _ = train_predictor(ctrl_demos, PredictorConfig(seed=0))
    return predictor


@pytest.fixture(scope="session")
def idle_policy(small_demos):
    """Untrained (zero-iteration) policy: near-zero actions, never succeeds.
    Timing and ledger tests want full-length episodes, not task skill."""
    cfg = TrainConfig(iterations=0, batch_size=8, lr=1e-3, hidden=(16, 16), seed=0)
    policy, _, _ = train(small_demos, cfg, alpha0_convention="zero")
    return policy


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
