"""Joint state/explanation embedding model and its training loop.

Two towers per domain: a state tower over (s_prev, s_curr, context) and an
explanation tower (token embedding into an LSTM).  Both project into the
same space (16 dims for Connect 4, 8 for the lander) and train against the
contrastive objective mean((||s - e|| - y)^2): aligned pairs pull to
distance 0, misaligned push to distance 1.
"""

from __future__ import annotations

import hashlib
import json
import re
import struct
from dataclasses import dataclass, field

import numpy as np

from . import concepts, connect4, lander, substrate
from .concepts import Explanation
from .core import ContextInfo, DomainId, RunSeed, derive_stream
from .dataset import Corpus, Sample
from .errors import (
    EmptyFold,
    IoError,
    NonFinite,
    SchemaVersionMismatch,
    ShapeMismatch,
    UnknownToken,
)

EMBED_DIM = {DomainId.CONNECT4: 16, DomainId.LUNAR_LANDER: 8}
TOKEN_DIM = 32

CHECKPOINT_MAGIC = b"S2EMDL\n"
CHECKPOINT_SCHEMA = 1


# --------------------------------------------------------------------------
# Vocabulary
# --------------------------------------------------------------------------

def tokenize(text: str) -> list[str]:
    """Lowercased word tokens; digit runs collapse to the placeholder "n".

    Column numbers in action phrases are channel for the action, not the
    concept: collapsing them keeps every rendered template on a single token
    sequence per concept set, so each text receives both aligned and
    misaligned training signal regardless of which column was played.
    """
    return ["n" if tok.isdigit() else tok for tok in re.findall(r"[a-z0-9]+", text.lower())]


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]  # index = position + 1; 0 is padding
    index: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "index", {tok: i + 1 for i, tok in enumerate(self.tokens)}
        )

    def __len__(self) -> int:
        return len(self.tokens) + 1  # with padding slot

    def encode(self, text: str) -> list[int]:
        ids = []
        for tok in tokenize(text):
            try:
                ids.append(self.index[tok])
            except KeyError:
                raise UnknownToken(f"token {tok!r} not in vocabulary")
        return ids

    def sha256(self) -> str:
        return hashlib.sha256(json.dumps(list(self.tokens)).encode()).hexdigest()


def _domain_texts(domain: DomainId) -> list[str]:
    cat = concepts.template_catalog(domain)
    texts = [cat.body(cs) for cs in cat.sets]
    if domain is DomainId.CONNECT4:
        texts += [f"Play column {n}" for n in range(1, connect4.COLS + 1)]
    else:
        texts += ["Fire main engine", "Fire side engine", "Do nothing"]
    return texts


def build_vocabulary(domain: DomainId) -> Vocabulary:
    toks = sorted({t for text in _domain_texts(domain) for t in tokenize(text)})
    return Vocabulary(tuple(toks))


# --------------------------------------------------------------------------
# Model
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 128
    epochs: int = 10
    seed: RunSeed = RunSeed(0)

    def __post_init__(self) -> None:
        if self.learning_rate < 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("training hyperparameters must be positive")


class JointModel:
    """Both towers for one domain; parameters live in the layer objects."""

    def __init__(self, domain: DomainId, seed: RunSeed):
        rng = seed.generator()
        self.domain = domain
        self.dim = EMBED_DIM[domain]
        self.vocab = build_vocabulary(domain)
        L = substrate
        if domain is DomainId.CONNECT4:
            self.conv_a_curr = L.Conv3x3(rng, 1, 4, pad=1)
            self.conv_b_curr = L.Conv3x3(rng, 4, 6, pad=1)
            self.conv_a_prev = L.Conv3x3(rng, 1, 4, pad=1)
            self.conv_b_prev = L.Conv3x3(rng, 4, 6, pad=1)
            flat = 6 * 7 * 7  # two padded 3x3 convs keep the 7x7 grid
            self.fc1 = L.Linear(rng, 2 * flat + 10, 64)
            self.fc2 = L.Linear(rng, 64, 32)
            self.fc3 = L.Linear(rng, 32, 16)
            self._state_layers = {
                "conv_a_curr": self.conv_a_curr, "conv_b_curr": self.conv_b_curr,
                "conv_a_prev": self.conv_a_prev, "conv_b_prev": self.conv_b_prev,
                "fc1": self.fc1, "fc2": self.fc2, "fc3": self.fc3,
            }
        else:
            self.fc1_curr = L.Linear(rng, 10, 64)
            self.fc2_curr = L.Linear(rng, 64, 32)
            self.fc1_prev = L.Linear(rng, 10, 64)
            self.fc2_prev = L.Linear(rng, 64, 32)
            self.head1 = L.Linear(rng, 65, 16)
            self.head2 = L.Linear(rng, 16, 8)
            self._state_layers = {
                "fc1_curr": self.fc1_curr, "fc2_curr": self.fc2_curr,
                "fc1_prev": self.fc1_prev, "fc2_prev": self.fc2_prev,
                "head1": self.head1, "head2": self.head2,
            }
        self.token_table = L.EmbeddingTable(rng, len(self.vocab), TOKEN_DIM)
        self.lstm = L.LSTM(rng, TOKEN_DIM, self.dim)
        self._relus: dict[str, substrate.Relu] = {}
        self._layers = dict(self._state_layers)
        self._layers["token_table"] = self.token_table
        self._layers["lstm"] = self.lstm

    # -- parameter plumbing --------------------------------------------

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for lname, layer in self._layers.items():
            for pname, arr in layer.params().items():
                out[f"{lname}.{pname}"] = arr
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for lname, layer in self._layers.items():
            for pname, arr in layer.grads().items():
                out[f"{lname}.{pname}"] = arr
        return out

    def zero_grads(self) -> None:
        for layer in self._layers.values():
            layer.zero_grads()

    def set_params(self, values: dict[str, np.ndarray]) -> None:
        live = self.params()
        if set(values) != set(live):
            raise ShapeMismatch("parameter names do not match the architecture")
        for k, v in values.items():
            if live[k].shape != v.shape:
                raise ShapeMismatch(f"{k}: {v.shape} != {live[k].shape}")
            live[k][...] = v

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params().items()}

    def quantize(self) -> None:
        """Snap parameters to the float32 grid used by checkpoints."""
        for v in self.params().values():
            v[...] = v.astype(np.float32).astype(np.float64)

    def _relu(self, name: str) -> substrate.Relu:
        # one cache slot per call site so backward sees the right mask
        if name not in self._relus:
            self._relus[name] = substrate.Relu()
        return self._relus[name]

    # -- state tower -----------------------------------------------------

    def _board_plane(self, board, mover: int) -> np.ndarray:
        if not isinstance(board, connect4.Connect4Board):
            raise ShapeMismatch("expected a Connect 4 board")
        plane = np.zeros((7, 7))
        grid = board.grid
        plane[: connect4.ROWS, :] = (grid == mover).astype(float) - (
            grid == (3 - mover)
        ).astype(float)
        return plane

    def state_arrays(
        self, s_prev, s_curr, ctx: ContextInfo
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self.domain is DomainId.CONNECT4:
            mover = ctx.current_player
            if mover not in (1, 2):
                raise ShapeMismatch("Connect 4 context needs current_player")
            xp = self._board_plane(s_prev, mover)[None, :, :]
            xc = self._board_plane(s_curr, mover)[None, :, :]
            # game information: mover one-hot, terminal flag, and the played
            # column (recovered from the board difference) as a one-hot
            col = np.zeros(connect4.COLS)
            _, c, _ = connect4.played_cell(s_prev, s_curr)
            col[c] = 1.0
            g = np.concatenate(
                [[float(mover == 1), float(mover == 2), float(ctx.game_over)], col]
            )
            return xp, xc, g
        if not isinstance(s_prev, lander.LanderState) or not isinstance(
            s_curr, lander.LanderState
        ):
            raise ShapeMismatch("expected lander states")
        return (
            s_prev.vector(),
            s_curr.vector(),
            np.array([float(ctx.game_over)]),
        )

    def forward_states(
        self, xp: np.ndarray, xc: np.ndarray, g: np.ndarray
    ) -> np.ndarray:
        if self.domain is DomainId.CONNECT4:
            hc = self._relu("ca").forward(self.conv_a_curr.forward(xc))
            hc = self._relu("cb").forward(self.conv_b_curr.forward(hc))
            hp = self._relu("pa").forward(self.conv_a_prev.forward(xp))
            hp = self._relu("pb").forward(self.conv_b_prev.forward(hp))
            B = xc.shape[0]
            self._split = (hc.shape, hp.shape)
            h = np.concatenate(
                [hc.reshape(B, -1), hp.reshape(B, -1), g], axis=1
            )
            h = self._relu("f1").forward(self.fc1.forward(h))
            h = self._relu("f2").forward(self.fc2.forward(h))
            return self.fc3.forward(h)
        hc = self._relu("c1").forward(self.fc1_curr.forward(xc))
        hc = self._relu("c2").forward(self.fc2_curr.forward(hc))
        hp = self._relu("p1").forward(self.fc1_prev.forward(xp))
        hp = self._relu("p2").forward(self.fc2_prev.forward(hp))
        h = np.concatenate([hc, hp, g], axis=1)
        h = self._relu("h1").forward(self.head1.forward(h))
        return self.head2.forward(h)

    def backward_states(self, gout: np.ndarray) -> None:
        if self.domain is DomainId.CONNECT4:
            g = self.fc3.backward(gout)
            g = self.fc2.backward(self._relu("f2").backward(g))
            g = self.fc1.backward(self._relu("f1").backward(g))
            shc, shp = self._split
            nc = int(np.prod(shc[1:]))
            npv = int(np.prod(shp[1:]))
            gc = g[:, :nc].reshape(shc)
            gp = g[:, nc:nc + npv].reshape(shp)
            gc = self.conv_b_curr.backward(self._relu("cb").backward(gc))
            self.conv_a_curr.backward(self._relu("ca").backward(gc))
            gp = self.conv_b_prev.backward(self._relu("pb").backward(gp))
            self.conv_a_prev.backward(self._relu("pa").backward(gp))
            return
        g = self.head2.backward(gout)
        g = self.head1.backward(self._relu("h1").backward(g))
        gc = g[:, :32]
        gp = g[:, 32:64]
        gc = self.fc2_curr.backward(self._relu("c2").backward(gc))
        self.fc1_curr.backward(self._relu("c1").backward(gc))
        gp = self.fc2_prev.backward(self._relu("p2").backward(gp))
        self.fc1_prev.backward(self._relu("p1").backward(gp))

    # -- explanation tower -----------------------------------------------

    def forward_explanations(self, ids: np.ndarray, mask: np.ndarray) -> np.ndarray:
        return self.lstm.forward(self.token_table.forward(ids), mask)

    def backward_explanations(self, gout: np.ndarray) -> None:
        self.token_table.backward(self.lstm.backward(gout))

    # -- public single-item encoders --------------------------------------

    def encode_state(self, s_prev, s_curr, ctx: ContextInfo) -> np.ndarray:
        xp, xc, g = self.state_arrays(s_prev, s_curr, ctx)
        return self.forward_states(xp[None], xc[None], g[None])[0].copy()

    def encode_explanation(self, e) -> np.ndarray:
        text = e.full_text if isinstance(e, Explanation) else str(e)
        ids = self.vocab.encode(text)
        if not ids:
            raise UnknownToken("explanation has no tokens")
        arr = np.array([ids])
        mask = np.ones_like(arr, dtype=float)
        return self.forward_explanations(arr, mask)[0].copy()


# --------------------------------------------------------------------------
# Batch assembly
# --------------------------------------------------------------------------

def _encode_texts(vocab: Vocabulary, texts: list[str]) -> tuple[np.ndarray, np.ndarray]:
    id_lists = [vocab.encode(t) for t in texts]
    T = max(len(ids) for ids in id_lists)
    ids = np.zeros((len(id_lists), T), dtype=np.int64)
    for i, row in enumerate(id_lists):
        ids[i, : len(row)] = row
    return ids, (ids != 0).astype(float)


def batch_arrays(model: JointModel, samples: list[Sample]):
    xps, xcs, gs = [], [], []
    for s in samples:
        xp, xc, g = model.state_arrays(s.s_prev, s.s_curr, s.ctx)
        xps.append(xp)
        xcs.append(xc)
        gs.append(g)
    ids, mask = _encode_texts(model.vocab, [s.explanation.full_text for s in samples])
    y = np.array([float(s.y) for s in samples])
    return np.stack(xps), np.stack(xcs), np.stack(gs), ids, mask, y


def loss_on_batch(model: JointModel, samples: list[Sample], backward: bool = True) -> float:
    xp, xc, g, ids, mask, y = batch_arrays(model, samples)
    s_embed = model.forward_states(xp, xc, g)
    # templated explanations repeat heavily within a batch; run the recurrent
    # tower once per distinct token row and scatter the results back
    uniq, inv = np.unique(ids, axis=0, return_inverse=True)
    e_uniq = model.forward_explanations(uniq, (uniq != 0).astype(float))
    e_embed = e_uniq[inv]
    loss, gs, ge = substrate.contrastive_loss(s_embed, e_embed, y)
    if backward:
        model.backward_states(gs)
        ge_uniq = np.zeros_like(e_uniq)
        np.add.at(ge_uniq, inv, ge)
        model.backward_explanations(ge_uniq)
    return loss


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------

def train(
    train_fold: Corpus, valid_fold: Corpus, config: TrainConfig
) -> tuple[JointModel, list[dict]]:
    """Minibatch Adam over the contrastive loss; keeps the best-recall epoch."""
    from . import retrieval  # local import: retrieval consumes models

    if not train_fold.samples or not valid_fold.samples:
        raise EmptyFold("train and valid folds must be non-empty")
    model = JointModel(train_fold.domain, derive_stream(config.seed, "init"))
    opt = substrate.Adam(model.params(), lr=config.learning_rate)
    valid_aligned = valid_fold.aligned()
    history: list[dict] = []
    best = (-1.0, None)
    n = len(train_fold.samples)
    # shuffle whole aligned groups so a state's true explanation and its z
    # contrast texts land in the same minibatch: each state then receives
    # its full attract/repel gradient at once instead of in scattered
    # fragments, which keeps the two towers from co-adapting into merged
    # text clusters
    by_group: dict[int, list[int]] = {}
    for i, s in enumerate(train_fold.samples):
        by_group.setdefault(s.group, []).append(i)
    group_ids = sorted(by_group)
    for epoch in range(config.epochs):
        rng = derive_stream(config.seed, f"epoch/{epoch}").generator()
        order = np.concatenate(
            [by_group[group_ids[int(i)]] for i in rng.permutation(len(group_ids))]
        )
        losses = []
        for lo in range(0, n, config.batch_size):
            batch = [train_fold.samples[int(i)] for i in order[lo:lo + config.batch_size]]
            model.zero_grads()
            loss = loss_on_batch(model, batch, backward=True)
            if not np.isfinite(loss):
                raise NonFinite(f"training loss diverged at epoch {epoch}")
            opt.step(model.grads())
            losses.append(loss)
        valid_losses = [
            loss_on_batch(model, valid_fold.samples[lo:lo + config.batch_size], backward=False)
            for lo in range(0, len(valid_fold.samples), config.batch_size)
        ]
        index = retrieval.build_index(model)
        recall1 = (
            retrieval.recall_at_k(index, model, valid_aligned, 1)
            if valid_aligned else 0.0
        )
        history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "valid_loss": float(np.mean(valid_losses)),
                "valid_recall1": recall1,
            }
        )
        if recall1 > best[0]:
            best = (recall1, model.snapshot())
    if best[1] is not None:
        model.set_params(best[1])
    model.quantize()
    return model, history


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

def save_checkpoint(model: JointModel, path: str) -> None:
    """Write float32 tensors; quantizes the live model so outputs match."""
    model.quantize()
    params = model.params()
    names = sorted(params)
    header = {
        "kind": "s2e-model",
        "schema": CHECKPOINT_SCHEMA,
        "domain": model.domain.value,
        "dim": model.dim,
        "vocab_sha256": model.vocab.sha256(),
        "arch": {"activation": "relu", "state_towers": "separate"},
        "tensors": [[name, list(params[name].shape)] for name in names],
    }
    blob = json.dumps(header).encode("utf-8")
    try:
        with open(path, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(struct.pack("<I", len(blob)))
            f.write(blob)
            for name in names:
                f.write(params[name].astype("<f4").tobytes())
    except OSError as e:
        raise IoError(str(e)) from e


def load_checkpoint(path: str, domain: DomainId | None = None) -> JointModel:
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise IoError(str(e)) from e
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise SchemaVersionMismatch("not a model checkpoint")
    off = len(CHECKPOINT_MAGIC)
    try:
        (hlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        header = json.loads(raw[off:off + hlen])
        off += hlen
    except (struct.error, json.JSONDecodeError) as e:
        raise SchemaVersionMismatch(f"corrupt checkpoint header: {e}") from e
    if header.get("kind") != "s2e-model" or header.get("schema") != CHECKPOINT_SCHEMA:
        raise SchemaVersionMismatch("unsupported checkpoint schema")
    ck_domain = DomainId(header["domain"])
    if domain is not None and ck_domain is not domain:
        raise ShapeMismatch(f"checkpoint is {ck_domain.value}, expected {domain.value}")
    model = JointModel(ck_domain, RunSeed(0))
    if header.get("vocab_sha256") != model.vocab.sha256():
        raise SchemaVersionMismatch("vocabulary hash mismatch")
    values = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape))
        end = off + 4 * count
        if end > len(raw):
            raise SchemaVersionMismatch("truncated checkpoint body")
        values[name] = (
            np.frombuffer(raw[off:end], dtype="<f4").astype(np.float64).reshape(shape)
        )
        off = end
    if off != len(raw):
        raise SchemaVersionMismatch("trailing bytes after tensors")
    model.set_params(values)
    return model
