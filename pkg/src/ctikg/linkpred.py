"""TuckER link prediction in numpy: scoring, 1-N BCE training and rank evaluation.

The score of a triple is the core tensor contracted with the head, relation
and tail vectors:

    score(h, r, t) = sum_ijk W[i, j, k] * E[h, i] * R[r, j] * E[t, k]

Gradients are written out by hand; ``gradient_check`` compares them with
central finite differences.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import CTIKGError

log = logging.getLogger(__name__)

Triple = tuple[int, int, int]
HITS_AT = (3, 10, 30)
SETTINGS = ("raw", "filtered")


class LinkPredError(CTIKGError):
    pass


class IndexOutOfRange(LinkPredError, IndexError):
    pass


class EmptyTrainSet(LinkPredError, ValueError):
    pass


class EmptyTestSet(LinkPredError, ValueError):
    pass


class CheckpointError(LinkPredError, ValueError):
    pass


# --- model ------------------------------------------------------------------


@dataclass
class TuckerModel:
    """Embedding tables plus core tensor.

    With ``reciprocal`` set, ``R`` holds ``2 * n_relations`` rows: relation
    ``r + n_relations`` is the inverse of ``r`` and head queries are answered
    as tail queries on the inverse.
    """

    E: np.ndarray
    R: np.ndarray
    W: np.ndarray
    n_relations: int
    reciprocal: bool = False

    def __post_init__(self) -> None:
        d_e, d_r = self.E.shape[1], self.R.shape[1]
        if self.W.shape != (d_e, d_r, d_e):
            raise ValueError(f"core tensor shape {self.W.shape} does not match d_e={d_e}, d_r={d_r}")
        expected = self.n_relations * (2 if self.reciprocal else 1)
        if self.R.shape[0] != expected:
            raise ValueError(f"expected {expected} relation rows, got {self.R.shape[0]}")

    @classmethod
    def init(cls, n_entities: int, n_relations: int, d_e: int = 50, d_r: int = 50,
             reciprocal: bool = False, seed: int = 0, dtype=np.float64) -> "TuckerModel":
        rng = np.random.default_rng(seed)
        rows = n_relations * (2 if reciprocal else 1)
        E = rng.normal(0.0, math.sqrt(2.0 / (n_entities + d_e)), (n_entities, d_e))
        R = rng.normal(0.0, math.sqrt(2.0 / (rows + d_r)), (rows, d_r))
        W = rng.uniform(-1.0, 1.0, (d_e, d_r, d_e))
        return cls(E.astype(dtype), R.astype(dtype), W.astype(dtype), n_relations, reciprocal)

    @property
    def n_entities(self) -> int:
        return self.E.shape[0]

    @property
    def d_e(self) -> int:
        return self.E.shape[1]

    @property
    def d_r(self) -> int:
        return self.R.shape[1]

    def _check(self, h: int | None, r: int, t: int | None) -> None:
        for e in (h, t):
            if e is not None and not 0 <= e < self.n_entities:
                raise IndexOutOfRange(f"entity id {e} outside 0..{self.n_entities - 1}")
        if not 0 <= r < self.n_relations:
            raise IndexOutOfRange(f"relation id {r} outside 0..{self.n_relations - 1}")

    def core(self, r: int) -> np.ndarray:
        """The d_e x d_e matrix W x_2 R[r]."""
        return np.einsum("j,ijk->ik", self.R[r], self.W)

    def score(self, h: int, r: int, t: int) -> float:
        self._check(h, r, t)
        return float(self.E[h] @ self.core(r) @ self.E[t])

    def score_tails(self, h: int, r: int) -> np.ndarray:
        """Scores of (h, r, e) for every entity e."""
        self._check(h, r, None)
        return self.E @ (self.E[h] @ self.core(r))

    def score_heads(self, r: int, t: int) -> np.ndarray:
        """Scores of (e, r, t) for every entity e.

        Reciprocal models answer through the inverse relation, matching how
        they were trained.
        """
        self._check(None, r, t)
        if self.reciprocal:
            return self.E @ (self.E[t] @ self.core(r + self.n_relations))
        return self.E @ (self.core(r) @ self.E[t])

    def copy(self) -> "TuckerModel":
        return TuckerModel(self.E.copy(), self.R.copy(), self.W.copy(), self.n_relations, self.reciprocal)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# --- training ---------------------------------------------------------------


@dataclass
class TrainConfig:
    d_e: int = 50
    d_r: int = 50
    batch_size: int = 64
    learning_rate: float = 0.001
    epochs: int = 500
    strategy: str = "1-N"              # or "negative_sampling"
    num_negatives: int = 10
    label_smoothing: float = 0.1
    input_dropout: float = 0.2
    hidden_dropout1: float = 0.2
    hidden_dropout2: float = 0.3
    optimizer: str = "adam"            # or "sgd"
    lr_decay: float = 1.0
    reciprocal: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.d_e < 1 or self.d_r < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("dimensions, batch size and epochs must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.strategy not in ("1-N", "negative_sampling"):
            raise ValueError(f"unknown training strategy {self.strategy!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.label_smoothing < 0:
            raise ValueError("label_smoothing must be >= 0")
        for name in ("input_dropout", "hidden_dropout1", "hidden_dropout2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be in [0, 1)")

    @classmethod
    def from_mapping(cls, data: Mapping) -> "TrainConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**dict(data))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Batch:
    """Queries (h, r) with a 0/1 target row over entities and a column mask."""

    heads: np.ndarray
    rels: np.ndarray
    targets: np.ndarray
    mask: np.ndarray | None = None


@dataclass
class Grads:
    E: np.ndarray
    R: np.ndarray
    W: np.ndarray


def _dropout_mask(rng, shape, rate: float, dtype) -> np.ndarray | None:
    if rng is None or rate <= 0:
        return None
    return (rng.random(shape) >= rate).astype(dtype) / (1.0 - rate)


def loss_and_grads(model: TuckerModel, batch: Batch, label_smoothing: float = 0.0,
                   dropout: tuple[float, float, float] = (0.0, 0.0, 0.0),
                   rng: np.random.Generator | None = None) -> tuple[float, Grads]:
    """Mean binary cross-entropy of one batch and its gradients.

    Dropout masks are drawn from ``rng``; pass ``rng=None`` for a
    deterministic, dropout-free evaluation.
    """
    E, R, W = model.E, model.R, model.W
    dt = E.dtype
    B = len(batch.heads)
    n_e = model.n_entities

    eh = E[batch.heads]
    m0 = _dropout_mask(rng, eh.shape, dropout[0], dt)
    x0 = eh if m0 is None else eh * m0
    wr = R[batch.rels]
    d_e, d_r = W.shape[0], W.shape[1]
    W_flat = W.transpose(1, 0, 2).reshape(d_r, d_e * d_e)
    core = (wr @ W_flat).reshape(B, d_e, d_e)
    m1 = _dropout_mask(rng, core.shape, dropout[1], dt)
    core_d = core if m1 is None else core * m1
    x1 = np.matmul(x0[:, None, :], core_d)[:, 0, :]
    m2 = _dropout_mask(rng, x1.shape, dropout[2], dt)
    x2 = x1 if m2 is None else x1 * m2
    logits = x2 @ E.T

    y = batch.targets.astype(dt)
    if label_smoothing:
        y = (1.0 - label_smoothing) * y + 1.0 / n_e
    # stable BCE with logits
    bce = np.maximum(logits, 0) - logits * y + np.log1p(np.exp(-np.abs(logits)))
    if batch.mask is None:
        denom = B * n_e
        loss = float(bce.sum() / denom)
        dlogits = (sigmoid(logits) - y) / denom
    else:
        denom = float(batch.mask.sum())
        loss = float((bce * batch.mask).sum() / denom)
        dlogits = batch.mask * (sigmoid(logits) - y) / denom

    dE = dlogits.T @ x2
    dx2 = dlogits @ E
    dx1 = dx2 if m2 is None else dx2 * m2
    dcore_d = x0[:, :, None] * dx1[:, None, :]
    dx0 = np.matmul(core_d, dx1[:, :, None])[:, :, 0]
    dcore = (dcore_d if m1 is None else dcore_d * m1).reshape(B, d_e * d_e)
    dW = (wr.T @ dcore).reshape(d_r, d_e, d_e).transpose(1, 0, 2)
    dwr = dcore @ W_flat.T
    deh = dx0 if m0 is None else dx0 * m0
    np.add.at(dE, batch.heads, deh)
    dR = np.zeros_like(R)
    np.add.at(dR, batch.rels, dwr)
    return loss, Grads(dE, dR, dW)


class _Adam:
    def __init__(self, params: Sequence[np.ndarray], lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _SGD:
    def __init__(self, params, lr: float):
        self.lr = lr

    def step(self, params, grads) -> None:
        for p, g in zip(params, grads):
            p -= self.lr * g


def _training_queries(triples: Sequence[Triple], n_relations: int, reciprocal: bool) -> dict:
    queries: dict[tuple[int, int], set[int]] = {}
    for h, r, t in triples:
        queries.setdefault((h, r), set()).add(t)
        if reciprocal:
            queries.setdefault((t, r + n_relations), set()).add(h)
    return queries


@dataclass
class TrainResult:
    model: TuckerModel
    losses: list[float] = field(default_factory=list)


def train(triples: Sequence[Triple], config: TrainConfig | None = None,
          n_entities: int | None = None, n_relations: int | None = None) -> TrainResult:
    """Fit a TuckER model on id triples; deterministic for a fixed ``config.seed``."""
    config = config or TrainConfig()
    triples = [tuple(map(int, x)) for x in triples]
    if not triples:
        raise EmptyTrainSet("cannot train on an empty triple list")
    n_entities = n_entities or 1 + max(max(h, t) for h, _, t in triples)
    n_relations = n_relations or 1 + max(r for _, r, _ in triples)
    rng = np.random.default_rng(config.seed)
    model = TuckerModel.init(n_entities, n_relations, config.d_e, config.d_r,
                             config.reciprocal, seed=int(rng.integers(2**31)))
    queries = _training_queries(triples, n_relations, config.reciprocal)
    keys = sorted(queries)
    if config.strategy == "negative_sampling":
        rows = [(h, r, t) for (h, r) in keys for t in sorted(queries[(h, r)])]
    params = [model.E, model.R, model.W]
    opt = _Adam(params, config.learning_rate) if config.optimizer == "adam" else _SGD(params, config.learning_rate)
    dropout = (config.input_dropout, config.hidden_dropout1, config.hidden_dropout2)
    losses: list[float] = []

    for epoch in range(config.epochs):
        order = rng.permutation(len(keys) if config.strategy == "1-N" else len(rows))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            targets = np.zeros((len(idx), n_entities))
            mask = None
            if config.strategy == "1-N":
                batch_keys = [keys[i] for i in idx]
                for b, k in enumerate(batch_keys):
                    targets[b, list(queries[k])] = 1.0
            else:
                batch_keys = [rows[i][:2] for i in idx]
                mask = np.zeros_like(targets)
                for b, i in enumerate(idx):
                    t = rows[i][2]
                    targets[b, t] = 1.0
                    mask[b, t] = 1.0
                    mask[b, rng.integers(0, n_entities, config.num_negatives)] = 1.0
            batch = Batch(np.array([k[0] for k in batch_keys]), np.array([k[1] for k in batch_keys]),
                          targets, mask)
            loss, g = loss_and_grads(model, batch, config.label_smoothing, dropout, rng)
            opt.step(params, [g.E, g.R, g.W])
            epoch_losses.append(loss)
        losses.append(float(np.mean(epoch_losses)))
        if not math.isfinite(losses[-1]):
            raise LinkPredError(f"loss diverged at epoch {epoch}")
        opt.lr *= config.lr_decay
        if epoch % 50 == 0:
            log.debug("epoch %d loss %.6f", epoch, losses[-1])
    return TrainResult(model, losses)


# --- gradient check ---------------------------------------------------------


def batch_from_triples(triples: Sequence[Triple], n_entities: int) -> Batch:
    """1-N batch with one row per distinct (h, r) in ``triples``."""
    queries = _training_queries(triples, 0, False)
    keys = sorted(queries)
    targets = np.zeros((len(keys), n_entities))
    for b, k in enumerate(keys):
        targets[b, list(queries[k])] = 1.0
    return Batch(np.array([k[0] for k in keys]), np.array([k[1] for k in keys]), targets)


def gradient_check(model: TuckerModel, batch: Batch | Sequence[Triple], label_smoothing: float = 0.1,
                   step: float = 1e-5,
                   grad_fn: Callable[[TuckerModel, Batch], Grads] | None = None) -> float:
    """Largest relative error between analytic and central-difference gradients.

    The error for each parameter tensor is ``|a - n| / (|a| + |n|)`` in the
    Frobenius norm, and 0 when both gradients vanish. Dropout is disabled and
    everything runs in float64. ``grad_fn`` swaps in another analytic
    gradient (used for negative controls).
    """
    m = TuckerModel(model.E.astype(np.float64), model.R.astype(np.float64),
                    model.W.astype(np.float64), model.n_relations, model.reciprocal)
    if not isinstance(batch, Batch):
        batch = batch_from_triples(batch, m.n_entities)

    def loss_only() -> float:
        return loss_and_grads(m, batch, label_smoothing)[0]

    if grad_fn is None:
        analytic = loss_and_grads(m, batch, label_smoothing)[1]
    else:
        analytic = grad_fn(m, batch)
    worst = 0.0
    for name in ("E", "R", "W"):
        param = getattr(m, name)
        numeric = np.zeros_like(param)
        it = np.nditer(param, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = param[i]
            param[i] = orig + step
            up = loss_only()
            param[i] = orig - step
            down = loss_only()
            param[i] = orig
            numeric[i] = (up - down) / (2 * step)
        a = getattr(analytic, name)
        denom = np.linalg.norm(a) + np.linalg.norm(numeric)
        if denom > 1e-12:
            worst = max(worst, float(np.linalg.norm(a - numeric) / denom))
    return worst


# --- ranking ----------------------------------------------------------------


def rank_from_scores(scores: np.ndarray, target: int, exclude: Iterable[int] = ()) -> int:
    """Rank of ``target`` with ties resolved to the expected (mid) rank.

    rank = 1 + #strictly higher + ceil(#other ties / 2). Candidates in
    ``exclude`` (other than the target) leave the pool first.
    """
    s = np.asarray(scores, dtype=np.float64)
    keep = np.ones(len(s), dtype=bool)
    ex = [e for e in exclude if e != target]
    if ex:
        keep[ex] = False
    ts = s[target]
    pool = s[keep]
    higher = int(np.sum(pool > ts))
    ties = int(np.sum(pool == ts)) - 1
    return 1 + higher + (ties + 1) // 2


def _known_index(known: Iterable[Triple]):
    tails: dict[tuple[int, int], set[int]] = {}
    heads: dict[tuple[int, int], set[int]] = {}
    for h, r, t in known:
        tails.setdefault((h, r), set()).add(t)
        heads.setdefault((r, t), set()).add(h)
    return tails, heads


def rank(model: TuckerModel, query: tuple, known: Iterable[Triple] = (), setting: str = "filtered") -> int:
    """Rank the true entity of ``query``.

    ``query`` is ``(h, r, t, "tail")`` to predict ``t`` or ``(h, r, t, "head")``
    to predict ``h``.
    """
    if setting not in SETTINGS:
        raise ValueError(f"setting must be one of {SETTINGS}")
    h, r, t, direction = query
    model._check(h, r, t)
    filt = setting == "filtered"
    if direction == "tail":
        exclude = {kt for kh, kr, kt in known if kh == h and kr == r} if filt else ()
        return rank_from_scores(model.score_tails(h, r), t, exclude)
    if direction == "head":
        exclude = {kh for kh, kr, kt in known if kr == r and kt == t} if filt else ()
        return rank_from_scores(model.score_heads(r, t), h, exclude)
    raise ValueError(f"direction must be 'head' or 'tail', got {direction!r}")


@dataclass(frozen=True)
class RankMetrics:
    mrr: float
    hits: dict
    count: int

    @classmethod
    def from_ranks(cls, ranks: Sequence[int], ks: Sequence[int] = HITS_AT) -> "RankMetrics":
        if not len(ranks):
            raise EmptyTestSet("no ranks to summarise")
        r = np.asarray(ranks, dtype=np.float64)
        if np.any(r < 1):
            raise ValueError("ranks must be >= 1")
        return cls(float(np.mean(1.0 / r)), {k: float(np.mean(r <= k)) for k in ks}, len(r))

    def to_dict(self) -> dict:
        return {"mrr": self.mrr, **{f"hits@{k}": v for k, v in self.hits.items()}, "count": self.count}


@dataclass
class RankReport:
    head: RankMetrics
    tail: RankMetrics
    both: RankMetrics
    setting: str
    head_ranks: list[int] = field(default_factory=list)
    tail_ranks: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "setting": self.setting,
            "tail": self.tail.to_dict(),
            "head": self.head.to_dict(),
            "both": self.both.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self, label: str = "model") -> str:
        ks = sorted(self.both.hits)
        head = f"link prediction ({self.setting})"
        cols = ["", "MRR"] + [f"H@{k}" for k in ks]
        lines = [head, "  ".join(f"{c:>8}" for c in [label[:8]] + cols[1:])]
        for name, m in (("Tail", self.tail), ("Head", self.head), ("Both", self.both)):
            vals = [m.mrr] + [m.hits[k] for k in ks]
            lines.append("  ".join([f"{name:>8}"] + [f"{v:>8.4f}" for v in vals]))
        return "\n".join(lines)


def report_from_ranks(head_ranks: Sequence[int], tail_ranks: Sequence[int], setting: str,
                      ks: Sequence[int] = HITS_AT) -> RankReport:
    """Summarise ranks; the Both block pools head and tail queries together."""
    return RankReport(
        head=RankMetrics.from_ranks(head_ranks, ks),
        tail=RankMetrics.from_ranks(tail_ranks, ks),
        both=RankMetrics.from_ranks(list(head_ranks) + list(tail_ranks), ks),
        setting=setting,
        head_ranks=list(head_ranks),
        tail_ranks=list(tail_ranks),
    )


def evaluate(model: TuckerModel, test: Sequence[Triple], known: Iterable[Triple] = (),
             setting: str = "filtered", ks: Sequence[int] = HITS_AT) -> RankReport:
    """Head and tail ranks for every test triple.

    In the filtered setting every triple of ``known`` (normally train, valid
    and test together) other than the one being ranked leaves the pool.
    """
    if setting not in SETTINGS:
        raise ValueError(f"setting must be one of {SETTINGS}")
    if not test:
        raise EmptyTestSet("no test triples")
    tails, heads = _known_index(known) if setting == "filtered" else ({}, {})
    head_ranks, tail_ranks = [], []
    for h, r, t in test:
        model._check(h, r, t)
        tail_ranks.append(rank_from_scores(model.score_tails(h, r), t, tails.get((h, r), ())))
        head_ranks.append(rank_from_scores(model.score_heads(r, t), h, heads.get((r, t), ())))
    return report_from_ranks(head_ranks, tail_ranks, setting, ks)


def load_ranks(path: str | Path) -> tuple[list[int], list[int]]:
    """Read an external rank file: one ``head|tail<TAB>rank`` pair per line."""
    heads, tails = [], []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or parts[0] not in ("head", "tail"):
            raise ValueError(f"line {n}: expected 'head|tail<TAB>rank'")
        (heads if parts[0] == "head" else tails).append(int(parts[1]))
    return heads, tails


# --- checkpoint -------------------------------------------------------------

MAGIC = b"TUCK"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIIB")


def save_model(model: TuckerModel, path: str | Path) -> None:
    """Header then E, R, W as row-major little-endian float32."""
    header = _HEADER.pack(MAGIC, VERSION, model.d_e, model.d_r, model.n_entities,
                          model.n_relations, int(model.reciprocal))
    with Path(path).open("wb") as fh:
        fh.write(header)
        for arr in (model.E, model.R, model.W):
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_model(path: str | Path) -> TuckerModel:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise CheckpointError("file too short for a checkpoint header")
    magic, version, d_e, d_r, n_e, n_r, recip = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError("not a TuckER checkpoint")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    rows = n_r * (2 if recip else 1)
    shapes = [(n_e, d_e), (rows, d_r), (d_e, d_r, d_e)]
    expected = _HEADER.size + 4 * sum(math.prod(s) for s in shapes)
    if len(data) != expected:
        raise CheckpointError(f"checkpoint size {len(data)} != expected {expected}")
    arrays, offset = [], _HEADER.size
    for shape in shapes:
        n = math.prod(shape)
        arrays.append(np.frombuffer(data, dtype="<f4", count=n, offset=offset).reshape(shape).astype(np.float64))
        offset += 4 * n
    return TuckerModel(*arrays, n_relations=n_r, reciprocal=bool(recip))


# --- fixtures ---------------------------------------------------------------


def rule_graph(n: int = 20, held_out: int = 5, seed: int = 0) -> tuple[list[Triple], list[Triple]]:
    """Ring graph with ``next`` (i -> i+1 mod n, relation 0) and ``prev`` (relation 1).

    ``held_out`` ``next`` triples form the test set; their ``prev`` mirrors
    stay in training, so the rule is learnable.
    """
    nxt = [(i, 0, (i + 1) % n) for i in range(n)]
    prv = [((i + 1) % n, 1, i) for i in range(n)]
    rng = np.random.default_rng(seed)
    test_idx = set(rng.choice(len(nxt), size=held_out, replace=False).tolist())
    test = [nxt[i] for i in sorted(test_idx)]
    train_set = [x for i, x in enumerate(nxt) if i not in test_idx] + prv
    return train_set, test
