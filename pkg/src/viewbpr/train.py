"""SGD for the BPR pair loss and the view-weighted triple loss.

Updates follow standard BPR ascent on the log-likelihood, i.e. descent on

    -ln s(r_ui - r_uj)
    - a ln s(r_ui - r_uv) - (1 - a) ln s(r_uv - r_uj)

with every factor in a step read before any is written. The inner loops are
compiled with numba; one compiled step routine is shared by the single-step
API and the epoch loops.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from numba import njit

from . import samplers
from .core import (
    FactorModel,
    FeedbackDataset,
    ItemSets,
    LearningRateMode,
    SamplerConfig,
    SamplerKind,
    TrainConfig,
    WeightingConfig,
    WeightingMode,
)
from .evaluation import Splits, evaluate
from .ingest import UserWeights, compute_user_weights
from .model import init_model

logger = logging.getLogger(__name__)

ADAGRAD_EPS = 1e-8
REPORT_VERSION = 1

# generator streams derived from the run seed
STREAM_SAMPLER = 1
STREAM_VALIDATION = 2
STREAM_SPACES = 3
STREAM_SPLIT = 4


def stream(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, tag])


class TrainingDiverged(RuntimeError):
    pass


@njit(cache=True)
def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


@njit(cache=True)
def _neg_log_sigmoid(x):
    # -ln s(x) without overflow for large |x|
    if x >= 0:
        return math.log1p(math.exp(-x))
    return -x + math.log1p(math.exp(x))


def sigmoid(x):
    """Logistic function, stable for large negative and positive inputs."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    z = np.exp(x[~pos])
    out[~pos] = z / (1.0 + z)
    return out if out.ndim else float(out)


@njit(cache=True)
def _apply(theta, acc, row, f, g, lr, adagrad):
    if adagrad:
        acc[row, f] += g * g
        theta[row, f] += lr / math.sqrt(acc[row, f] + 1e-8) * g
    else:
        theta[row, f] += lr * g


@njit(cache=True)
def _pair_step(P, Q, u, i, j, lr, reg, adagrad, accP, accQ):
    K = P.shape[1]
    x = 0.0
    for f in range(K):
        x += P[u, f] * Q[i, f] - P[u, f] * Q[j, f]
    d = _sigmoid(-x)
    for f in range(K):
        pu = P[u, f]
        qi = Q[i, f]
        qj = Q[j, f]
        _apply(P, accP, u, f, d * (qi - qj) - reg * pu, lr, adagrad)
        _apply(Q, accQ, i, f, d * pu - reg * qi, lr, adagrad)
        _apply(Q, accQ, j, f, -d * pu - reg * qj, lr, adagrad)
    return _neg_log_sigmoid(x)


@njit(cache=True)
def _quad_step(P, Q, u, i, v, j, alpha, lr, reg, adagrad, accP, accQ):
    K = P.shape[1]
    rui = 0.0
    ruv = 0.0
    ruj = 0.0
    for f in range(K):
        rui += P[u, f] * Q[i, f]
        ruv += P[u, f] * Q[v, f]
        ruj += P[u, f] * Q[j, f]
    d1 = _sigmoid(-(rui - ruj))
    d2 = _sigmoid(-(rui - ruv))
    d3 = _sigmoid(-(ruv - ruj))
    a2 = alpha * d2
    b3 = (1.0 - alpha) * d3
    for f in range(K):
        pu = P[u, f]
        qi = Q[i, f]
        qv = Q[v, f]
        qj = Q[j, f]
        _apply(P, accP, u, f, d1 * (qi - qj) + a2 * (qi - qv) + b3 * (qv - qj) - reg * pu, lr, adagrad)
        _apply(Q, accQ, i, f, (d1 + a2) * pu - reg * qi, lr, adagrad)
        _apply(Q, accQ, v, f, (-a2 + b3) * pu - reg * qv, lr, adagrad)
        _apply(Q, accQ, j, f, (-d1 - b3) * pu - reg * qj, lr, adagrad)
    return (
        _neg_log_sigmoid(rui - ruj)
        + alpha * _neg_log_sigmoid(rui - ruv)
        + (1.0 - alpha) * _neg_log_sigmoid(ruv - ruj)
    )


@njit(cache=True)
def _hardest(P, Q, u, cands):
    best = cands[0]
    best_score = -np.inf
    for c in cands:
        s = 0.0
        for f in range(P.shape[1]):
            s += P[u, f] * Q[c, f]
        if s > best_score or (s == best_score and c < best):
            best = c
            best_score = s
    return best


@njit(cache=True)
def _pair_epoch(P, Q, us, pos, neg, lr, reg, adagrad, accP, accQ):
    total = 0.0
    for t in range(len(us)):
        loss = _pair_step(P, Q, us[t], pos[t], neg[t], lr, reg, adagrad, accP, accQ)
        if not np.isfinite(loss):
            return total, t
        total += loss
    return total, -1


@njit(cache=True)
def _dns_epoch(P, Q, us, pos, cands, lr, reg, adagrad, accP, accQ):
    total = 0.0
    for t in range(len(us)):
        j = _hardest(P, Q, us[t], cands[t])
        loss = _pair_step(P, Q, us[t], pos[t], j, lr, reg, adagrad, accP, accQ)
        if not np.isfinite(loss):
            return total, t
        total += loss
    return total, -1


@njit(cache=True)
def _quad_epoch(P, Q, us, is_, vs, js, alphas, lr, reg, adagrad, accP, accQ):
    total = 0.0
    for t in range(len(us)):
        u = us[t]
        if vs[t] < 0:
            loss = _pair_step(P, Q, u, is_[t], js[t], lr, reg, adagrad, accP, accQ)
        else:
            loss = _quad_step(P, Q, u, is_[t], vs[t], js[t], alphas[u], lr, reg, adagrad, accP, accQ)
        if not np.isfinite(loss):
            return total, t
        total += loss
    return total, -1


@njit(cache=True)
def _pair_losses(P, Q, us, pos, neg):
    out = np.empty(len(us))
    for t in range(len(us)):
        x = 0.0
        for f in range(P.shape[1]):
            x += P[us[t], f] * Q[pos[t], f] - P[us[t], f] * Q[neg[t], f]
        out[t] = _neg_log_sigmoid(x)
    return out


@njit(cache=True)
def _quad_losses(P, Q, us, is_, vs, js, alphas):
    out = np.empty(len(us))
    for t in range(len(us)):
        u = us[t]
        rui = 0.0
        ruv = 0.0
        ruj = 0.0
        for f in range(P.shape[1]):
            rui += P[u, f] * Q[is_[t], f]
            ruj += P[u, f] * Q[js[t], f]
            if vs[t] >= 0:
                ruv += P[u, f] * Q[vs[t], f]
        if vs[t] < 0:
            out[t] = _neg_log_sigmoid(rui - ruj)
        else:
            a = alphas[u]
            out[t] = (
                _neg_log_sigmoid(rui - ruj)
                + a * _neg_log_sigmoid(rui - ruv)
                + (1.0 - a) * _neg_log_sigmoid(ruv - ruj)
            )
    return out


_NO_ACC = np.zeros((1, 1))


def _accumulators(accumulators):
    if accumulators is None:
        return False, _NO_ACC, _NO_ACC
    return True, accumulators[0], accumulators[1]


def bpr_step(model: FactorModel, u: int, i: int, j: int, lr: float, reg: float, accumulators=None) -> float:
    """One in-place SGD step on triple (u, i, j); returns the pre-step loss.

    Pass ``accumulators=(accP, accQ)`` (arrays shaped like P and Q) for
    Adagrad step sizes with base rate ``lr``.
    """
    adagrad, accP, accQ = _accumulators(accumulators)
    return _pair_step(model.P, model.Q, u, i, j, lr, reg, adagrad, accP, accQ)


def view_loss_step(model: FactorModel, u: int, i: int, v: int, j: int, alpha: float, lr: float, reg: float, accumulators=None) -> float:
    """One in-place SGD step on (u, i, v, j) under the weighted triple loss.

    ``alpha`` weights the purchased-over-viewed relation and ``1 - alpha`` the
    viewed-over-unobserved one. Returns the pre-step loss.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    adagrad, accP, accQ = _accumulators(accumulators)
    return _quad_step(model.P, model.Q, u, i, v, j, alpha, lr, reg, adagrad, accP, accQ)


def pair_loss(model: FactorModel, u: int, i: int, j: int) -> float:
    return float(_pair_losses(model.P, model.Q, np.array([u]), np.array([i]), np.array([j]))[0])


def view_loss(model: FactorModel, u: int, i: int, v: int, j: int, alpha: float) -> float:
    alphas = np.full(model.num_users, alpha)
    return float(_quad_losses(model.P, model.Q, np.array([u]), np.array([i]), np.array([v]), np.array([j]), alphas)[0])


def adagrad_rate(accumulator: np.ndarray, base_rate: float, grad) -> np.ndarray:
    """Add ``grad**2`` to ``accumulator`` in place and return per-entry step sizes."""
    accumulator += np.square(grad)
    return base_rate / np.sqrt(accumulator + ADAGRAD_EPS)


@dataclass
class EpochRow:
    epoch: int
    steps: int
    train_loss: float
    val_loss: float
    hr: float
    ndcg: float
    seconds: float = 0.0


@dataclass
class TrainReport:
    rows: List[EpochRow] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False
    k: int = 100

    COLUMNS = ("epoch", "steps", "train_loss", "val_loss", "hr", "ndcg")

    def best_row(self) -> EpochRow:
        return self.rows[self.best_epoch - 1]

    def to_tsv(self, header: Optional[dict] = None, include_timing: bool = False) -> str:
        """Serialize rows; wall-clock time is opt-in so reports stay reproducible."""
        lines = [f"#viewbpr-report\t{REPORT_VERSION}"]
        for key, value in (header or {}).items():
            lines.append(f"# {key}={value}")
        lines.append(f"# best_epoch={self.best_epoch}")
        lines.append(f"# stopped_early={int(self.stopped_early)}")
        cols = list(self.COLUMNS)
        cols[4:6] = [f"hr@{self.k}", f"ndcg@{self.k}"]
        if include_timing:
            cols.append("seconds")
        lines.append("\t".join(cols))
        for r in self.rows:
            vals = [str(r.epoch), str(r.steps)] + [repr(float(x)) for x in (r.train_loss, r.val_loss, r.hr, r.ndcg)]
            if include_timing:
                vals.append(f"{r.seconds:.3f}")
            lines.append("\t".join(vals))
        return "\n".join(lines) + "\n"


class EarlyStopping:
    """Stop once validation loss has risen for ``patience + 1`` epochs in a row."""

    def __init__(self, patience: int = 0):
        self.patience = patience
        self.best_loss = math.inf
        self.best_epoch = 0
        self.previous = math.inf
        self.rises = 0

    def update(self, epoch: int, loss: float) -> bool:
        """Record ``loss`` for ``epoch``; True means stop now."""
        improved = loss < self.best_loss
        if improved:
            self.best_loss, self.best_epoch = loss, epoch
        self.rises = self.rises + 1 if loss > self.previous else 0
        self.previous = loss
        return self.rises > self.patience

    def is_best(self, epoch: int) -> bool:
        return self.best_epoch == epoch


def _with_validation_items(train: FeedbackDataset, validation: np.ndarray) -> FeedbackDataset:
    rows = []
    for u in range(train.num_users):
        pairs = list(zip(train.purchased(u).tolist(), train.purchases.times(u).tolist()))
        pairs.append((int(validation[u]), 0))
        rows.append(pairs)
    return FeedbackDataset(train.num_users, train.num_items, ItemSets.from_lists(rows), train.views)


class _ValidationSet:
    """Validation examples with negatives drawn once from a fixed stream."""

    def __init__(self, splits: Splits, sampler: SamplerConfig, spaces, rng: np.random.Generator):
        train = splits.train
        users = np.arange(train.num_users, dtype=np.int64)
        pos = np.asarray(splits.validation, dtype=np.int64)
        # the validation item itself is never a negative
        pool = _with_validation_items(train, pos)
        self.quad = sampler.kind is SamplerKind.TRIPLE
        if sampler.kind is SamplerKind.REDUCED:
            neg = self._reduced_negatives(users, pos, spaces, pool, rng)
        else:
            exclude_views = sampler.exclude_views or sampler.kind in (SamplerKind.BIASED, SamplerKind.TRIPLE)
            neg = samplers.draw_negatives(pool, users, rng, exclude_views)
        self.users, self.pos, self.neg = users, pos, neg
        if self.quad:
            has = train.views.sizes() > 0
            self.views = np.full(len(users), -1, dtype=np.int64)
            self.views[has] = samplers._pick(train.views, users[has], rng)

    @staticmethod
    def _reduced_negatives(users, pos, spaces, pool, rng):
        neg = np.empty(len(users), dtype=np.int64)
        for u in users:
            space = spaces.space(u)
            space = space[space != pos[u]]
            if len(space):
                neg[u] = space[rng.integers(0, len(space))]
            else:
                neg[u] = samplers.draw_negatives(pool, np.array([u]), rng)[0]
        return neg

    def loss(self, model: FactorModel, alphas: np.ndarray) -> float:
        if self.quad:
            losses = _quad_losses(model.P, model.Q, self.users, self.pos, self.views, self.neg, alphas)
        else:
            losses = _pair_losses(model.P, model.Q, self.users, self.pos, self.neg)
        return float(np.mean(losses))


def resolve_alphas(train: FeedbackDataset, weighting: WeightingConfig, user_weights: Optional[UserWeights] = None) -> np.ndarray:
    if weighting.mode is WeightingMode.GLOBAL:
        return np.full(train.num_users, float(weighting.alpha))
    if user_weights is None:
        user_weights = compute_user_weights(train, weighting.beta, weighting.session_gap)
    return np.asarray(user_weights.alpha, dtype=np.float64)


def run_training(
    splits: Splits,
    sampler: SamplerConfig = SamplerConfig(),
    weighting: WeightingConfig = WeightingConfig(),
    config: TrainConfig = TrainConfig(),
    user_weights: Optional[UserWeights] = None,
    val_loss_fn: Optional[Callable[[FactorModel], float]] = None,
    on_epoch: Optional[Callable[[EpochRow, FactorModel], None]] = None,
) -> Tuple[FactorModel, TrainReport]:
    """Train on ``splits.train`` and return the best-validation model.

    ``val_loss_fn`` replaces the built-in validation loss (used to drive the
    stopping rule from outside); ``on_epoch`` sees every finished epoch.
    """
    train = splits.train
    seed = config.seed
    model = init_model(train.num_users, train.num_items, config.factors, seed, config.init_scale)
    P, Q = model.P, model.Q
    adagrad = config.lr_mode is LearningRateMode.ADAGRAD
    accP = np.zeros_like(P) if adagrad else _NO_ACC
    accQ = np.zeros_like(Q) if adagrad else _NO_ACC
    steps = config.steps_per_epoch or train.num_purchases

    rng = stream(seed, STREAM_SAMPLER)
    spaces = None
    if sampler.kind is SamplerKind.REDUCED:
        spaces = samplers.build_reduced_spaces(train, sampler.gamma, stream(seed, STREAM_SPACES), sampler.exclude_views)
    alphas = resolve_alphas(train, weighting, user_weights)
    kind_probs = samplers.kind_probabilities(train, sampler.omega) if sampler.kind is SamplerKind.BIASED else None
    if val_loss_fn is None:
        validation = _ValidationSet(splits, sampler, spaces, stream(seed, STREAM_VALIDATION))
        val_loss_fn = lambda m: validation.loss(m, alphas)  # noqa: E731

    lr, reg = config.learning_rate, config.regularization
    report = TrainReport(k=config.eval_k)
    stopper = EarlyStopping(config.patience)
    best = model.copy()
    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        kind = sampler.kind
        if kind is SamplerKind.UNIFORM:
            us, pos, neg = samplers.draw_uniform_triples(train, steps, rng, sampler.exclude_views)
            total, bad = _pair_epoch(P, Q, us, pos, neg, lr, reg, adagrad, accP, accQ)
        elif kind is SamplerKind.REDUCED:
            us, pos, neg = samplers.draw_reduced_triples(train, spaces, steps, rng)
            total, bad = _pair_epoch(P, Q, us, pos, neg, lr, reg, adagrad, accP, accQ)
        elif kind is SamplerKind.BIASED:
            us, pos, neg, _ = samplers.draw_biased_pairs(train, sampler.omega, steps, rng, kind_probs)
            total, bad = _pair_epoch(P, Q, us, pos, neg, lr, reg, adagrad, accP, accQ)
        elif kind is SamplerKind.DNS:
            us, pos, cands = samplers.draw_dns_candidates(train, steps, sampler.dns_candidates, rng, sampler.exclude_views)
            total, bad = _dns_epoch(P, Q, us, pos, cands, lr, reg, adagrad, accP, accQ)
        else:
            us, is_, vs, js = samplers.draw_quads(train, steps, rng, sampler.pair_fallback)
            total, bad = _quad_epoch(P, Q, us, is_, vs, js, alphas, lr, reg, adagrad, accP, accQ)
        if bad >= 0:
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {bad} (user {int(us[bad])})")
        val_loss = float(val_loss_fn(model))
        if not math.isfinite(val_loss):
            raise TrainingDiverged(f"non-finite validation loss after epoch {epoch}")
        hr = ndcg = 0.0
        if config.eval_every_epoch:
            hr, ndcg = evaluate(model, splits, config.eval_k)
        row = EpochRow(epoch, steps, total / steps, val_loss, hr, ndcg, time.perf_counter() - started)
        report.rows.append(row)
        logger.info("epoch %d loss %.5f val %.5f hr@%d %.4f", epoch, row.train_loss, val_loss, config.eval_k, hr)
        if on_epoch is not None:
            on_epoch(row, model)
        stop = stopper.update(epoch, val_loss)
        if stopper.is_best(epoch):
            best = model.copy()
        if stop:
            report.stopped_early = True
            break
    report.best_epoch = stopper.best_epoch
    return best, report
