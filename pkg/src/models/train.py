"""
Two-stage training for the stochastic motion predictor.

Stage 1 learns the encoder, codebook, latent dynamics and decoder by
reconstructing futures through the quantised latent ODE, then clusters
pooled latents into the anchor set. Stage 2 trains a fresh observed-only
encoder, the refine head and the anchor FC against the NLL, anchor and
pseudo-label reconstruction losses.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist
from tqdm import tqdm

from src.autodiff import tensor as T
from src.autodiff.checkpoint import save_checkpoint
from src.autodiff.optim import AdamState, adam_step, clip_grad_norm, learning_rate
from src.autodiff.tensor import Node, backward
from src.config import derive_seed, make_rng
from src.data.dataset import Dataset
from src.data.preprocessing import iterate_batches
from src.errors import DivergenceError, NonFiniteError
from src.models.anchors import ANCHOR_KEY, AnchorConfig, AnchorSet, anchor_loss, kmeans
from src.models.gmm import nll_loss
from src.models.layers import as_nodes
from src.models.networks import ModelConfig, Networks, build_networks
from src.models.ode import SolverConfig
from src.models.vq import (
    CODEBOOK_KEY, Codebook, codeword_usage, lookup, quantize, reseed_dead_codewords,
    straight_through, vq_loss_terms,
)

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

Params = Dict[str, np.ndarray]


@dataclass
class TrainConfig:
    """
    Optimisation settings shared by both stages.

    ``pseudo_threshold`` is in generator units; None means 2 x the generator's jitter scale,
    resolved by the caller. ``samples_per_anchor`` is the number of latents
    decoded per anchor during stage-2 training.
    """

    batch_size: int = 128
    epochs: int = 500
    lr: float = 1e-4
    lr_decay: float = 0.98
    decay_every: int = 10
    alpha_nll: float = 0.4
    alpha_anchor: float = 0.3
    alpha_recon: float = 0.3
    pseudo_threshold: Optional[float] = None
    clip_norm: float = 10.0
    samples_per_anchor: int = 1
    freeze_decoder: bool = False
    progress: bool = True

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr <= 0 or self.decay_every < 1:
            raise ValueError("lr must be > 0 and decay_every >= 1")
        for name in ("alpha_nll", "alpha_anchor", "alpha_recon"):
            if getattr(self, name) < 0:
                raise ValueError(f"train.{name} must be >= 0, got {getattr(self, name)}")
        if self.pseudo_threshold is not None and self.pseudo_threshold < 0:
            raise ValueError(f"pseudo_threshold must be >= 0, got {self.pseudo_threshold}")
        if self.samples_per_anchor < 1:
            raise ValueError(f"samples_per_anchor must be >= 1, got {self.samples_per_anchor}")

    def lr_at(self, epoch: int) -> float:
        """Learning rate of training epoch ``epoch`` (1-based)."""
        return learning_rate(max(epoch - 1, 0), self.lr, self.lr_decay, self.decay_every)


# ---------------------------------------------------------------------------
# pseudo ground truth
# ---------------------------------------------------------------------------

def prefix_distances(queries: np.ndarray, prefixes: np.ndarray) -> np.ndarray:
    """
    Mean per-frame, per-joint Euclidean distance between observed prefixes.

    Args:
        queries: (q, T, V, C)
        prefixes: (n, T, V, C)

    Returns:
        (q, n) distance matrix
    """
    queries = np.asarray(queries, dtype=np.float64)
    prefixes = np.asarray(prefixes, dtype=np.float64)
    if queries.shape[1:] != prefixes.shape[1:]:
        raise ValueError(f"prefix shapes differ: {queries.shape[1:]} vs {prefixes.shape[1:]}")
    frames, joints = queries.shape[1], queries.shape[2]
    total = np.zeros((len(queries), len(prefixes)))
    for t in range(frames):
        for v in range(joints):
            total += cdist(queries[:, t, v], prefixes[:, t, v])
    return total / (frames * joints)


def raw_prefixes(dataset: Dataset, observed: Optional[np.ndarray] = None) -> np.ndarray:
    """Observed prefixes (the dataset's, or ``observed``) mapped back to generator units."""
    return dataset.denormalize(dataset.observed() if observed is None else observed)


class PseudoLabelIndex:
    """
    For every training sample, the indices of samples whose observed prefix lies within ``threshold``.

    Distances are measured in generator units, so the threshold means the
    same thing whether or not the dataset was normalised.
    """

    def __init__(self, dataset: Dataset, threshold: float):
        if threshold < 0:
            raise ValueError(f"pseudo-label threshold must be >= 0, got {threshold}")
        self.threshold = float(threshold)
        self.futures = dataset.future()
        prefixes = raw_prefixes(dataset)
        distances = prefix_distances(prefixes, prefixes)
        self.neighbours: List[np.ndarray] = []
        for i, row in enumerate(distances):
            found = np.flatnonzero(row <= self.threshold)
            if i not in found:
                found = np.union1d(found, [i])
            self.neighbours.append(found)
        sizes = np.array([len(n) for n in self.neighbours])
        logger.info(
            f"Pseudo labels: threshold={self.threshold:.4f}, P per sample "
            f"min={sizes.min()}, mean={sizes.mean():.1f}, max={sizes.max()}"
        )

    def __len__(self) -> int:
        return len(self.neighbours)

    def pseudo_futures(self, index: int) -> np.ndarray:
        """(P, H, V, C) futures treated as ground truth for sample ``index``."""
        return self.futures[self.neighbours[index]]

    def label_purity(self, labels: np.ndarray) -> float:
        """Fraction of samples whose neighbours all share the sample's label."""
        labels = np.asarray(labels)
        pure = [np.all(labels[n] == labels[i]) for i, n in enumerate(self.neighbours)]
        return float(np.mean(pure))


def pseudo_ground_truth(dataset: Dataset, observed: np.ndarray, threshold: float) -> np.ndarray:
    """
    Futures of every training sample whose observed prefix is within ``threshold`` of ``observed``.

    A query taken from ``dataset`` always retrieves its own future (distance 0).
    If nothing lies within the threshold the nearest sample's future is returned.

    Args:
        dataset: Training set
        observed: (T, V, C) observed prefix, in the dataset's coordinates
        threshold: Mean per-frame joint distance in generator units, >= 0

    Returns:
        (P, H, V, C) futures, P >= 1
    """
    if threshold < 0:
        raise ValueError(f"pseudo-label threshold must be >= 0, got {threshold}")
    query = raw_prefixes(dataset, np.asarray(observed)[None])
    distances = prefix_distances(query, raw_prefixes(dataset))[0]
    found = np.flatnonzero(distances <= threshold)
    if found.size == 0:
        found = np.array([int(np.argmin(distances))])
    return dataset.future()[found]


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _as_node(x) -> Node:
    return x if isinstance(x, Node) else T.constant(x)


def reconstruction_loss(predictions, pseudo) -> Node:
    """
    ``(1/P) sum_p min_j ||pred_j - Y_p||^2`` with squared Frobenius norms.

    The minimum for each pseudo future is routed to the closest prediction,
    ties to the lowest ``j``.

    Args:
        predictions: (S, H, V, C) predicted futures
        pseudo: (P, H, V, C) pseudo ground-truth futures
    """
    predictions = _as_node(predictions)
    pseudo = np.asarray(pseudo, dtype=np.float64)
    if predictions.shape[1:] != pseudo.shape[1:]:
        raise ValueError(f"prediction frames {predictions.shape[1:]} do not match pseudo futures {pseudo.shape[1:]}")
    axes = tuple(range(1, pseudo.ndim))
    sq = np.array([[np.sum((pred - y) ** 2) for y in pseudo] for pred in predictions.value])
    best = np.argmin(sq, axis=0)
    chosen = T.take(predictions, best, axis=0)
    return T.square(chosen - pseudo).sum(axis=axes).mean()


def batch_reconstruction_loss(predictions: Node, pseudo_sets: Sequence[np.ndarray]) -> Node:
    """
    Batch mean of ``reconstruction_loss`` for (B, S, H, V, C) predictions.

    Every (sample, pseudo future) pair is gathered once so the whole batch is
    a single gather and reduction.
    """
    batch, samples = predictions.shape[:2]
    if len(pseudo_sets) != batch:
        raise ValueError(f"{len(pseudo_sets)} pseudo sets for a batch of {batch}")
    values = predictions.value
    rows, targets, weights = [], [], []
    for b, pseudo in enumerate(pseudo_sets):
        diff = values[b][:, None] - pseudo[None]
        sq = np.sum(diff.reshape(samples, len(pseudo), -1) ** 2, axis=-1)
        rows.append(b * samples + np.argmin(sq, axis=0))
        targets.append(pseudo)
        weights.append(np.full(len(pseudo), 1.0 / (len(pseudo) * batch)))
    flat = T.reshape(predictions, (batch * samples,) + predictions.shape[2:])
    chosen = T.take(flat, np.concatenate(rows), axis=0)
    target = np.concatenate(targets)
    per_pair = T.square(chosen - target).sum(axis=tuple(range(1, target.ndim)))
    return (per_pair * np.concatenate(weights)).sum()


def total_loss(l_nll, l_anchor, l_re, config: Optional[TrainConfig] = None):
    """
    ``alpha_nll * l_nll + alpha_anchor * l_anchor + alpha_recon * l_re``.

    Terms with a zero coefficient are dropped, so they may be None.
    """
    config = config or TrainConfig()
    total = 0.0
    for alpha, term in ((config.alpha_nll, l_nll), (config.alpha_anchor, l_anchor), (config.alpha_recon, l_re)):
        if alpha != 0:
            total = total + alpha * term
    return total


def _check_finite(loss, stage: str, epoch: int, batch: int) -> float:
    value = float(np.asarray(loss.value if isinstance(loss, Node) else loss))
    if not np.isfinite(value):
        logger.error(f"{stage}: loss {value} at epoch {epoch}, batch {batch}")
        raise DivergenceError(stage, epoch, batch, value)
    return value


def pooled_latents(params: Mapping[str, np.ndarray], networks: Networks, sequences: np.ndarray,
                   batch_size: int = 128) -> np.ndarray:
    """(n, latent_dim) mean over latent rows of the continuous encoder output."""
    p = as_nodes(params)
    out = []
    for start in range(0, len(sequences), batch_size):
        z = networks.encoder(p, sequences[start:start + batch_size])
        out.append(z.value.mean(axis=1))
    return np.concatenate(out)


class _Trainer:
    """Shared epoch loop: Adam over the trainable subset, clipping, loss log."""

    stage = "stage"
    columns: Tuple[str, ...] = ()

    def __init__(self, dataset: Dataset, train_config: TrainConfig, seed: int):
        train_config.validate()
        self.dataset = dataset
        self.config = train_config
        self.seed = seed
        self.params: Params = {}
        self.trainable: Tuple[str, ...] = ()
        self.state = AdamState()
        self.history: List[Dict[str, float]] = []

    def batch_loss(self, p: Mapping[str, Node], idx: np.ndarray, rng: np.random.Generator) -> Dict[str, Node]:
        raise NotImplementedError

    def end_epoch(self, epoch: int) -> Dict[str, float]:
        return {}

    def _nodes(self) -> Dict[str, Node]:
        trainable = set(self.trainable)
        return {k: (T.parameter(v, k) if k in trainable else T.constant(v, k)) for k, v in self.params.items()}

    def evaluate(self) -> Dict[str, float]:
        """Mean batch losses over the dataset in index order, current weights."""
        rng = make_rng(self.seed, f"{self.stage}.evaluate")
        p = as_nodes(self.params)
        totals: Dict[str, float] = {}
        n = len(self.dataset)
        for start in range(0, n, self.config.batch_size):
            idx = np.arange(start, min(start + self.config.batch_size, n))
            try:
                terms = self.batch_loss(p, idx, rng)
            except NonFiniteError as exc:
                raise DivergenceError(self.stage, 0, start // self.config.batch_size, float("nan")) from exc
            for k, v in terms.items():
                totals[k] = totals.get(k, 0.0) + _check_finite(v, self.stage, 0, start // self.config.batch_size)
        batches = -(-n // self.config.batch_size)
        return {k: v / batches for k, v in totals.items()}

    def step(self, idx: np.ndarray, lr: float, rng: np.random.Generator, epoch: int, batch: int) -> Dict[str, float]:
        p = self._nodes()
        try:
            terms = self.batch_loss(p, idx, rng)
            values = {k: _check_finite(v, self.stage, epoch, batch) for k, v in terms.items()}
            leaves = [p[k] for k in self.trainable]
            grads = dict(zip(self.trainable, backward(terms["loss"], leaves)))
            grads, _ = clip_grad_norm(grads, self.config.clip_norm)
            updated, self.state = adam_step({k: self.params[k] for k in self.trainable}, grads, self.state, lr)
        except NonFiniteError as exc:
            logger.error(f"{self.stage}: {exc}")
            raise DivergenceError(self.stage, epoch, batch, float("nan")) from exc
        self.params.update(updated)
        return values

    def train(self, epochs: Optional[int] = None) -> pd.DataFrame:
        """
        Run the epoch loop and return the loss log.

        Row 0 is the loss on the initial weights; row ``e`` is the mean batch
        loss of training epoch ``e``.
        """
        epochs = self.config.epochs if epochs is None else epochs
        rng = make_rng(self.seed, f"{self.stage}.batches")
        initial = self.evaluate()
        self.history = [{"epoch": 0, "lr": self.config.lr_at(1), **initial}]
        logger.info(f"{self.stage}: initial loss {initial['loss']:.4f}")
        bar = tqdm(range(1, epochs + 1), desc=self.stage, disable=not self.config.progress)
        for epoch in bar:
            lr = self.config.lr_at(epoch)
            totals: Dict[str, float] = {}
            batches = 0
            for b, idx in enumerate(iterate_batches(len(self.dataset), self.config.batch_size, rng)):
                for k, v in self.step(idx, lr, rng, epoch, b).items():
                    totals[k] = totals.get(k, 0.0) + v
                batches += 1
            row = {"epoch": epoch, "lr": lr, **{k: v / batches for k, v in totals.items()}}
            row.update(self.end_epoch(epoch))
            self.history.append(row)
            bar.set_postfix(loss=f"{row['loss']:.4f}")
        logger.info(f"{self.stage}: final loss {self.history[-1]['loss']:.4f} after {epochs} epochs")
        return self.loss_log()

    def loss_log(self) -> pd.DataFrame:
        # the initial-weights row carries no per-epoch counters
        return pd.DataFrame(self.history, columns=["epoch", "lr", *self.columns]).fillna(0.0)


class Stage1Trainer(_Trainer):
    """VQ reconstruction stage: encoder, codebook, latent ODE and decoder."""

    stage = "stage1"
    columns = ("loss", "recon", "codebook", "commitment", "reseeded")

    def __init__(self, dataset: Dataset, model_config: ModelConfig, solver: SolverConfig,
                 train_config: TrainConfig, anchor_config: Optional[AnchorConfig] = None,
                 seed: int = 42, n_jobs: int = 1):
        super().__init__(dataset, train_config, seed)
        solver.validate()
        self.model_config = model_config
        self.solver = solver
        self.anchor_config = anchor_config or AnchorConfig()
        self.anchor_config.validate()
        self.n_jobs = n_jobs
        self.networks = build_networks(dataset.joints, dataset.coords, dataset.t_pred, model_config)
        rng = make_rng(seed, "stage1.init")
        self.params = self.networks.init(rng)
        self.params[CODEBOOK_KEY] = Codebook.initialize(model_config.codebook_size, model_config.latent_dim, rng).entries
        self.trainable = tuple(sorted(self.params))
        self.state = AdamState.zeros_like({k: self.params[k] for k in self.trainable})
        self.frame_times = dataset.frame_times()
        self.anchors: Optional[AnchorSet] = None
        self._reseed_rng = make_rng(seed, "stage1.reseed")
        self._usage = np.zeros(model_config.codebook_size, dtype=np.int64)
        self._latents: List[np.ndarray] = []

    def batch_loss(self, p: Mapping[str, Node], idx: np.ndarray, rng: np.random.Generator) -> Dict[str, Node]:
        z = self.networks.encoder(p, self.dataset.full()[idx])
        _, codes = quantize(z, Codebook(p[CODEBOOK_KEY].value))
        z_q = lookup(p[CODEBOOK_KEY], codes)
        z_x = self.networks.encoder(p, self.dataset.observed()[idx])
        y_hat = self.networks.decoder.predict(p, straight_through(z, z_q), z_x, self.frame_times, self.solver)
        terms = vq_loss_terms(self.dataset.future()[idx], y_hat, z, z_q, batch_mean=True)
        terms["loss"] = terms["recon"] + terms["codebook"] + self.model_config.beta * terms["commitment"]
        if p[CODEBOOK_KEY].requires_grad:
            self._usage += codeword_usage(codes, self.model_config.codebook_size)
            self._latents.append(z.value.reshape(-1, self.model_config.latent_dim))
        return terms

    def end_epoch(self, epoch: int) -> Dict[str, float]:
        entries, count = reseed_dead_codewords(
            self.params[CODEBOOK_KEY], self._usage, np.concatenate(self._latents), self._reseed_rng
        )
        self.params[CODEBOOK_KEY] = entries
        self._usage[:] = 0
        self._latents = []
        return {"reseeded": float(count)}

    def pooled_latents(self) -> np.ndarray:
        return pooled_latents(self.params, self.networks, self.dataset.full(), self.config.batch_size)

    def fit_anchors(self) -> AnchorSet:
        """Cluster the pooled latents of every training sequence into the anchor set."""
        cfg = self.anchor_config
        self.anchors = kmeans(self.pooled_latents(), cfg.count, cfg.restarts, cfg.max_iters,
                              seed=derive_seed(self.seed, "anchors.kmeans"), n_jobs=self.n_jobs)
        self.params[ANCHOR_KEY] = self.anchors.centers
        return self.anchors

    def save(self, path: Union[str, Path]) -> Path:
        return save_checkpoint(self.params, path)


class Stage2Trainer(_Trainer):
    """Stochastic stage: observed-only encoder, refine head, anchor FC (decoder optionally frozen)."""

    stage = "stage2"
    columns = ("loss", "nll", "anchor", "recon")

    def __init__(self, dataset: Dataset, stage1_params: Mapping[str, np.ndarray], model_config: ModelConfig,
                 solver: SolverConfig, train_config: TrainConfig, anchor_config: Optional[AnchorConfig] = None,
                 seed: int = 42, pseudo_threshold: Optional[float] = None):
        super().__init__(dataset, train_config, seed)
        solver.validate()
        if ANCHOR_KEY not in stage1_params:
            raise ValueError("stage-1 parameters carry no anchor set")
        self.model_config = model_config
        self.solver = solver
        self.anchor_config = anchor_config or AnchorConfig()
        self.anchor_config.validate()
        self.anchors = AnchorSet(stage1_params[ANCHOR_KEY])
        self.networks = build_networks(dataset.joints, dataset.coords, dataset.t_pred, model_config,
                                       anchor_count=self.anchors.size)
        self.frame_times = dataset.frame_times()

        self.targets, self.matched, self.h0_targets = self._stage1_targets(stage1_params)

        rng = make_rng(seed, "stage2.init")
        fresh = self.networks.init(rng)
        self.params = {k: v for k, v in fresh.items() if k.startswith(("refine.", "anchor_fc."))}
        for k, v in stage1_params.items():
            if k.startswith(("enc.", "dec.")):
                self.params[k] = np.array(v, dtype=np.float64)
        self.params[ANCHOR_KEY] = self.anchors.centers
        frozen = ("dec.",) if train_config.freeze_decoder else ()
        self.trainable = tuple(sorted(
            k for k in self.params if k != ANCHOR_KEY and not k.startswith(frozen)
        ))
        self.state = AdamState.zeros_like({k: self.params[k] for k in self.trainable})

        threshold = train_config.pseudo_threshold if pseudo_threshold is None else pseudo_threshold
        self.pseudo = PseudoLabelIndex(dataset, np.inf if threshold is None else threshold)

    def _stage1_targets(self, stage1_params: Mapping[str, np.ndarray]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Ground-truth latents s, matched anchors and anchor-loss targets from the frozen stage-1 model."""
        stage1 = build_networks(self.dataset.joints, self.dataset.coords, self.dataset.t_pred, self.model_config)
        s = pooled_latents(stage1_params, stage1, self.dataset.full(), self.config.batch_size)
        matched = self.anchors.assign(s)
        if self.anchor_config.target == "pooled_latent":
            h0 = s
        else:
            p = as_nodes(stage1_params)
            book = Codebook(stage1_params[CODEBOOK_KEY])
            rows = []
            for start in range(0, len(self.dataset), self.config.batch_size):
                z = stage1.encoder(p, self.dataset.full()[start:start + self.config.batch_size])
                z_q, _ = quantize(z, book)
                rows.append(stage1.decoder.initial_state(p, z_q).value)
            h0 = np.concatenate(rows)
        counts = np.bincount(matched, minlength=self.anchors.size)
        logger.info(f"Stage-1 targets: matched anchor counts {counts.tolist()}")
        return s, matched, h0

    def sample_predictions(self, p: Mapping[str, Node], z_obs: Node, offsets: Node, log_var: Node,
                           rng: np.random.Generator) -> Node:
        """(B, N*m, H, V, C) decoded futures of reparameterised draws around every anchor."""
        batch, n, d = offsets.shape
        m = self.config.samples_per_anchor
        means = T.reshape(offsets + self.anchors.centers, (batch, n, 1, d))
        std = T.reshape(T.exp(log_var * 0.5), (batch, n, 1, d))
        eps = rng.standard_normal((batch, n, m, d))
        z = T.broadcast_to(means, (batch, n, m, d)) + T.broadcast_to(std, (batch, n, m, d)) * eps
        samples = n * m
        h0 = self.networks.fc(p, T.reshape(z, (batch * samples, d)))
        rows = z_obs.shape[1]
        cond = T.broadcast_to(T.reshape(z_obs, (batch, 1, rows * d)), (batch, samples, rows * d))
        z_x = T.reshape(cond, (batch * samples, rows, d))
        frames = self.networks.decoder.predict(p, None, z_x, self.frame_times, self.solver, h0=h0)
        return T.reshape(frames, (batch, samples) + frames.shape[1:])

    def batch_loss(self, p: Mapping[str, Node], idx: np.ndarray, rng: np.random.Generator) -> Dict[str, Node]:
        cfg = self.config
        z_obs = self.networks.encoder(p, self.dataset.observed()[idx])
        logits, offsets, log_var = self.networks.refine(p, z_obs)
        zero = T.constant(0.0)
        terms = {"nll": zero, "anchor": zero, "recon": zero}
        if cfg.alpha_nll != 0:
            terms["nll"] = nll_loss(logits, offsets, log_var, self.anchors, self.targets[idx], self.matched[idx])
        if cfg.alpha_anchor != 0:
            terms["anchor"] = anchor_loss(self.anchors, offsets, self.h0_targets[idx], self.networks.fc, p)
        if cfg.alpha_recon != 0:
            predictions = self.sample_predictions(p, z_obs, offsets, log_var, rng)
            pseudo = [self.pseudo.pseudo_futures(i) for i in idx]
            terms["recon"] = batch_reconstruction_loss(predictions, pseudo)
        terms["loss"] = _as_node(total_loss(terms["nll"], terms["anchor"], terms["recon"], cfg))
        return terms

    def save(self, path: Union[str, Path]) -> Path:
        return save_checkpoint(self.params, path)


def train_stage1(dataset: Dataset, model_config: ModelConfig, solver: SolverConfig,
                 train_config: TrainConfig, anchor_config: Optional[AnchorConfig] = None,
                 seed: int = 42, checkpoint_path: Optional[Union[str, Path]] = None,
                 n_jobs: int = 1) -> Tuple[Params, AnchorSet, pd.DataFrame]:
    """
    Convenience function for the reconstruction stage.

    Returns:
        Tuple of (parameters including codebook and anchors, anchor set, loss log)
    """
    trainer = Stage1Trainer(dataset, model_config, solver, train_config, anchor_config, seed, n_jobs)
    log = trainer.train()
    anchors = trainer.fit_anchors()
    if checkpoint_path is not None:
        trainer.save(checkpoint_path)
    return trainer.params, anchors, log


def train_stage2(dataset: Dataset, stage1_params: Mapping[str, np.ndarray], model_config: ModelConfig,
                 solver: SolverConfig, train_config: TrainConfig, anchor_config: Optional[AnchorConfig] = None,
                 seed: int = 42, checkpoint_path: Optional[Union[str, Path]] = None,
                 pseudo_threshold: Optional[float] = None) -> Tuple[Params, pd.DataFrame]:
    """
    Convenience function for the stochastic stage.

    Returns:
        Tuple of (stage-2 parameters, loss log)
    """
    trainer = Stage2Trainer(dataset, stage1_params, model_config, solver, train_config, anchor_config,
                            seed, pseudo_threshold)
    log = trainer.train()
    if checkpoint_path is not None:
        trainer.save(checkpoint_path)
    return trainer.params, log

