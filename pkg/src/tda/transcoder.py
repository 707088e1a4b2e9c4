"""Shared-bottleneck transcoder between a private and a public feature space.

Each side has its own encoder and decoder; both pass through one shared
stack. Training alternates one private and one public batch, each step
updating only the active side's encoder/decoder plus the shared stack.
Private rows rendered through the public decoder are the crossover samples.
"""

from __future__ import annotations

import base64
import copy
import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from tda.dataset import TabularDataset, as_matrix
from tda.errors import DivergenceError, ValidationError
from tda.nn import AdamState, MlpBlock, init_block, squared_error_loss
from tda.seeding import derive_seed
from tda.similarity import dataset_curve, sad

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
PRIVATE, PUBLIC = "private", "public"
BLOCK_NAMES = ("enc_prv", "enc_pub", "shared", "dec_prv", "dec_pub")
_PATHS = {
    PRIVATE: ("enc_prv", "shared", "dec_prv"),
    PUBLIC: ("enc_pub", "shared", "dec_pub"),
}


@dataclass
class TranscoderConfig:
    enc_widths: list = field(default_factory=lambda: [128, 64])
    shared_widths: list = field(default_factory=lambda: [64, 32, 64])
    dec_widths: list = field(default_factory=lambda: [64, 128])
    epochs: int = 1000
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 256
    leaky_slope: float = 0.01
    seed: int = 0

    def __post_init__(self):
        for name in ("enc_widths", "shared_widths", "dec_widths"):
            widths = [int(w) for w in getattr(self, name)]
            if not widths or min(widths) < 1:
                raise ValidationError(f"{name} must be non-empty positive widths, got {widths}")
            setattr(self, name, widths)
        if int(self.epochs) < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ValidationError(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise ValidationError(f"{name} must lie in [0, 1)")
        if int(self.batch_size) < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.leaky_slope < 0:
            raise ValidationError("leaky_slope must be non-negative")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class TranscoderModel:
    blocks: dict
    d_prv: int
    d_pub: int
    config: TranscoderConfig

    def __post_init__(self):
        b = self.blocks
        if b["enc_prv"].in_width != self.d_prv or b["dec_prv"].out_width != self.d_prv:
            raise ValidationError("private encoder/decoder widths do not match d_prv")
        if b["enc_pub"].in_width != self.d_pub or b["dec_pub"].out_width != self.d_pub:
            raise ValidationError("public encoder/decoder widths do not match d_pub")
        for enc in ("enc_prv", "enc_pub"):
            if b[enc].out_width != b["shared"].in_width:
                raise ValidationError(f"{enc} output does not feed the shared stack")
        for dec in ("dec_prv", "dec_pub"):
            if b["shared"].out_width != b[dec].in_width:
                raise ValidationError(f"shared stack output does not feed {dec}")

    def __getattr__(self, name):
        blocks = self.__dict__.get("blocks", {})
        if name in blocks:
            return blocks[name]
        raise AttributeError(name)

    def width(self, side):
        return self.d_prv if side == PRIVATE else self.d_pub

    def copy(self):
        return TranscoderModel(
            {k: v.copy() for k, v in self.blocks.items()},
            self.d_prv, self.d_pub, copy.deepcopy(self.config),
        )


def init_transcoder(config: TranscoderConfig, d_prv: int, d_pub: int, seed: Optional[int] = None) -> TranscoderModel:
    if d_prv < 1 or d_pub < 1:
        raise ValidationError(f"feature counts must be >= 1, got {d_prv}, {d_pub}")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    enc, shr, dec = config.enc_widths, config.shared_widths, config.dec_widths
    slope = config.leaky_slope
    blocks = {
        "enc_prv": init_block(rng, [d_prv, *enc], slope),
        "enc_pub": init_block(rng, [d_pub, *enc], slope),
        "shared": init_block(rng, [enc[-1], *shr], slope),
        "dec_prv": init_block(rng, [shr[-1], *dec, d_prv], slope, linear_last=True),
        "dec_pub": init_block(rng, [shr[-1], *dec, d_pub], slope, linear_last=True),
    }
    return TranscoderModel(blocks, int(d_prv), int(d_pub), copy.deepcopy(config))


def _check_side(side):
    if side not in _PATHS:
        raise ValidationError(f"side must be {PRIVATE!r} or {PUBLIC!r}, got {side!r}")


def _run(model, x, path):
    for name in path:
        x = model.blocks[name].forward(x)
    return x


def _check_width(X, width, what):
    if X.shape[1] != width:
        raise ValidationError(f"{what}: expected {width} features, got {X.shape[1]}")


def reconstruct(model: TranscoderModel, batch, side: str) -> np.ndarray:
    _check_side(side)
    X = as_matrix(batch)
    _check_width(X, model.width(side), "reconstruct")
    return _run(model, X, _PATHS[side])


def crossover(model: TranscoderModel, prv_X) -> np.ndarray:
    """Private rows through the private encoder, shared stack and public decoder."""
    X = as_matrix(prv_X)
    _check_width(X, model.d_prv, "crossover")
    return _run(model, X, ("enc_prv", "shared", "dec_pub"))


def loss_and_grads(model: TranscoderModel, batch, side: str):
    """Loss of one side's term and gradients for the blocks on that side's path."""
    _check_side(side)
    X = as_matrix(batch)
    _check_width(X, model.width(side), "train_step")
    path = _PATHS[side]
    h, caches = X, []
    for name in path:
        h, cache = model.blocks[name].forward_cached(h)
        caches.append(cache)
    loss, g = squared_error_loss(X, h)
    grads = {}
    for name, cache in zip(reversed(path), reversed(caches)):
        grads[name], g = model.blocks[name].backward(cache, g)
    return loss, grads


def new_adam(config: TranscoderConfig) -> AdamState:
    return AdamState(lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2)


def train_step(model: TranscoderModel, batch, side: str, adam: AdamState) -> float:
    """One Adam step on a batch from ``side``; returns the pre-update batch loss."""
    loss, grads = loss_and_grads(model, batch, side)
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite loss on {side} batch", side=side)
    for name, layer_grads in grads.items():
        adam.step(name, model.blocks[name], layer_grads)
    return loss


@dataclass
class LossHistory:
    """Mean batch loss per epoch for each side."""

    private: list = field(default_factory=list)
    public: list = field(default_factory=list)

    def rows(self):
        for epoch, (a, b) in enumerate(zip(self.private, self.public), start=1):
            yield epoch, PRIVATE, a
            yield epoch, PUBLIC, b

    def write_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "side", "loss"])
            for epoch, side, loss in self.rows():
                writer.writerow([epoch, side, repr(float(loss))])


def _batches(X, batch_size, seed):
    order = np.random.default_rng(seed).permutation(X.shape[0])
    return [X[order[i:i + batch_size]] for i in range(0, X.shape[0], batch_size)]


def train(model: TranscoderModel, prv, pub, epochs: Optional[int] = None):
    """Fit a copy of ``model`` on normalized private and public data.

    Every epoch pairs one private batch with one public batch until both
    sides have been fully covered; the side with fewer batches cycles.

    Returns
    -------
    (TranscoderModel, LossHistory)
    """
    Xp, Xq = as_matrix(prv), as_matrix(pub)
    _check_width(Xp, model.d_prv, "private data")
    _check_width(Xq, model.d_pub, "public data")
    cfg = model.config
    epochs = cfg.epochs if epochs is None else int(epochs)
    model = model.copy()
    adam = new_adam(cfg)
    history = LossHistory()
    bs = cfg.batch_size
    for epoch in range(1, epochs + 1):
        bp = _batches(Xp, bs, derive_seed(cfg.seed, "batches", PRIVATE, epoch))
        bq = _batches(Xq, bs, derive_seed(cfg.seed, "batches", PUBLIC, epoch))
        lp, lq = [], []
        for i in range(max(len(bp), len(bq))):
            for side, batches, losses in ((PRIVATE, bp, lp), (PUBLIC, bq, lq)):
                try:
                    losses.append(train_step(model, batches[i % len(batches)], side, adam))
                except DivergenceError as exc:
                    raise DivergenceError(
                        f"training diverged at epoch {epoch} ({side} side)", epoch=epoch, side=side
                    ) from exc
        history.private.append(float(np.mean(lp)))
        history.public.append(float(np.mean(lq)))
        if epoch == 1 or epoch % 100 == 0:
            log.debug("epoch %d: private %.5f public %.5f", epoch, history.private[-1], history.public[-1])
    return model, history


def ds_diff(a, b) -> float:
    """Dataset difference: SAD between the z-scored reconstruction curves."""
    return sad(dataset_curve(_as_dataset(a)), dataset_curve(_as_dataset(b)))


def _as_dataset(d):
    return d if isinstance(d, TabularDataset) else TabularDataset("matrix", as_matrix(d))


def transformation_success(prv, pub, co) -> bool:
    """True iff the crossover is strictly closer to the private data than the public data is."""
    return ds_diff(prv, pub) > ds_diff(prv, co)


# ---------------------------------------------------------------------------
# serialization

def _b64(arrays):
    flat = np.concatenate([a.ravel() for a in arrays]).astype("<f8")
    return base64.b64encode(flat.tobytes()).decode("ascii")


def _unb64(text):
    return np.frombuffer(base64.b64decode(text), dtype="<f8").astype(np.float64)


def model_to_dict(model: TranscoderModel) -> dict:
    blocks = []
    for name in BLOCK_NAMES:
        blk = model.blocks[name]
        blocks.append({
            "name": name,
            "widths": blk.widths,
            "linear_last": blk.linear_last,
            "weights_b64": _b64(blk.weights),
            "biases_b64": _b64(blk.biases),
        })
    return {
        "schema_version": SCHEMA_VERSION,
        "config": model.config.to_dict(),
        "d_prv": model.d_prv,
        "d_pub": model.d_pub,
        "blocks": blocks,
    }


def model_from_dict(d: dict) -> TranscoderModel:
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ValidationError(f"unsupported model schema version {d.get('schema_version')}")
    config = TranscoderConfig.from_dict(d["config"])
    blocks = {}
    for entry in d["blocks"]:
        widths = entry["widths"]
        w_flat, b_flat = _unb64(entry["weights_b64"]), _unb64(entry["biases_b64"])
        n_w = sum(a * b for a, b in zip(widths[:-1], widths[1:]))
        if n_w != w_flat.size or sum(widths[1:]) != b_flat.size:
            raise ValidationError(f"block {entry['name']}: parameter count does not match widths")
        weights, biases, wi, bi = [], [], 0, 0
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            weights.append(w_flat[wi:wi + fan_in * fan_out].reshape(fan_out, fan_in).copy())
            biases.append(b_flat[bi:bi + fan_out].copy())
            wi += fan_in * fan_out
            bi += fan_out
        blocks[entry["name"]] = MlpBlock(weights, biases, config.leaky_slope, entry["linear_last"])
    return TranscoderModel(blocks, int(d["d_prv"]), int(d["d_pub"]), config)


def save_model(model: TranscoderModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1))


def load_model(path) -> TranscoderModel:
    return model_from_dict(json.loads(Path(path).read_text()))
