"""Full two-stage training runs on a four-pattern synthetic set (slow)."""

import numpy as np
import pytest

from src.data.preprocessing import normalize_dataset
from src.data.synthetic import SyntheticConfig, generate_synthetic
from src.evaluation.predictor import EvalConfig, MotionPredictor, evaluate_dataset
from src.models.anchors import AnchorConfig
from src.models.networks import ModelConfig
from src.models.ode import SolverConfig
from src.models.train import Stage1Trainer, Stage2Trainer, TrainConfig

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2)
ANCHOR_COUNTS = (1, 2, 4, 8)
MODEL = ModelConfig(d_model=16, latent_rows=2, latent_dim=8, codebook_size=16, dynamics_hidden=16,
                    refine_hidden=16)
SOLVER = SolverConfig(method="euler", step_size=0.1, adaptive=False)
TRAIN = TrainConfig(batch_size=20, epochs=200, lr=1e-2, decay_every=100, progress=False)


def synthetic_config(seed):
    return SyntheticConfig(pattern_count=4, samples_per_pattern=20, t_obs=8, t_pred=10, joints=4,
                           frame_rate=10.0, seed=seed)


class Runs:
    """Trains each (seed, anchor count) once and keeps the results for every test in the module."""

    def __init__(self):
        self._stage1 = {}
        self._stage2 = {}

    def data(self, seed):
        config = synthetic_config(seed)
        train = generate_synthetic(config, split="train")
        test = generate_synthetic(config, split="test", samples_per_pattern=5)
        train, test = normalize_dataset(train, test)
        return config, train, test

    def stage1(self, seed):
        if seed not in self._stage1:
            _, train, _ = self.data(seed)
            trainer = Stage1Trainer(train, MODEL, SOLVER, TRAIN, AnchorConfig(count=4, restarts=8), seed=seed)
            log = trainer.train()
            self._stage1[seed] = (trainer, log)
        return self._stage1[seed]

    def stage2(self, seed, count):
        key = (seed, count)
        if key not in self._stage2:
            config, train, test = self.data(seed)
            trainer, _ = self.stage1(seed)
            trainer.anchor_config = AnchorConfig(count=count, restarts=8)
            trainer.fit_anchors()
            anchor_config = AnchorConfig(count=count, restarts=8)
            stage2 = Stage2Trainer(train, dict(trainer.params), MODEL, SOLVER, TRAIN, anchor_config, seed=seed,
                                   pseudo_threshold=2.0 * config.jitter_scale)
            log = stage2.train()
            predictor = MotionPredictor(stage2.params, MODEL, SOLVER, test.joints, test.coords, test.t_pred,
                                        test.frame_rate)
            eval_config = EvalConfig(top_k=count, samples_per_component=5, coverage_samples=5, horizons_ms=[100],
                                     mm_threshold=2.0 * config.jitter_scale)
            report, _ = evaluate_dataset(predictor, test, eval_config, seed=seed)
            self._stage2[key] = (log, report)
        return self._stage2[key]


@pytest.fixture(scope="module")
def runs():
    return Runs()


def test_anchors_cover_every_pattern_and_one_anchor_does_not(runs):
    _, with_anchors = runs.stage2(0, 4)
    _, single = runs.stage2(0, 1)
    assert with_anchors.coverage >= 0.9
    assert single.coverage <= 0.4


def test_diversity_grows_with_anchor_count(runs):
    monotone = 0
    for seed in SEEDS:
        values = [runs.stage2(seed, n)[1].apd for n in ANCHOR_COUNTS]
        monotone += all(b >= a for a, b in zip(values, values[1:]))
    assert monotone >= 2


@pytest.mark.parametrize("seed", SEEDS)
def test_both_stages_halve_their_loss(runs, seed):
    _, stage1_log = runs.stage1(seed)
    stage2_log, _ = runs.stage2(seed, 4)
    assert stage1_log["loss"].iloc[-1] < 0.5 * stage1_log["loss"].iloc[0]
    assert stage2_log["loss"].iloc[-1] < 0.5 * stage2_log["loss"].iloc[0]
