"""The fixed patch classifier: architecture, training loop, model files.

The stack is conv(7 filters, 3x3) -> maxpool(2) -> conv(12 filters, 2x2)
-> dense(500) -> dense(2) with softmax, ReLU after each hidden layer.
Training is plain momentum SGD over shuffled mini-batches for a fixed
number of epochs; every source of randomness is seeded, so the same
(data, config, seed) always yields the same bytes on disk.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumMismatchError,
    ConfigInvalidError,
    DivergedLossError,
    EmptyTrainingError,
    PatchTooSmallError,
    ShapeMismatchError,
    SingleClassDatasetError,
    TruncatedFileError,
    VersionUnsupportedError,
)
from .neural import LayerSpec, Network, build_layers, sgd_step, softmax_probs
from .patches import DatasetSplit, split_fingerprint

__all__ = [
    "DEFAULT_STACK",
    "NetworkConfig",
    "TrainConfig",
    "TrainedModel",
    "feature_geometry",
    "build_network",
    "patches_to_arrays",
    "train",
    "predict_patch",
    "predict_batch",
    "save_loss_log",
    "save_model",
    "load_model",
]

MODEL_MAGIC = b"PSCN"
MODEL_VERSION = 1

DEFAULT_STACK = (
    LayerSpec(kind="conv", filters=7, filter_size=3),
    LayerSpec(kind="maxpool", factor=2),
    LayerSpec(kind="conv", filters=12, filter_size=2),
    LayerSpec(kind="dense", units=500),
    LayerSpec(kind="softmax-output", units=2),
)


@dataclass(frozen=True)
class NetworkConfig:
    patch_size: int = 32
    channels: int = 3
    layers: tuple = DEFAULT_STACK

    def __post_init__(self):
        if self.channels < 1:
            raise ConfigInvalidError("channels must be >= 1")
        feature_geometry(self)  # raises PatchTooSmall on bad geometry

    def to_dict(self) -> dict:
        return {
            "patch_size": self.patch_size,
            "channels": self.channels,
            "layers": [s.to_dict() for s in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(
            patch_size=int(d["patch_size"]),
            channels=int(d["channels"]),
            layers=tuple(LayerSpec.from_dict(s) for s in d["layers"]),
        )


def feature_geometry(config: NetworkConfig):
    """Chain the feature-map shapes through the stack.

    Returns [(layer description, (c, h, w) or units), ...]. Raises
    PatchTooSmall when any stage would produce an empty feature map;
    the default stack needs patch_size >= 8.
    """
    if config.patch_size < 8:
        raise PatchTooSmallError(
            f"patch_size {config.patch_size} < 8 (stack collapses)"
        )
    c, h, w = config.channels, config.patch_size, config.patch_size
    stages = []
    for spec in config.layers:
        if spec.kind == "conv":
            c, h, w = spec.filters, h - spec.filter_size + 1, w - spec.filter_size + 1
            stages.append((f"conv {spec.filters}@{spec.filter_size}x{spec.filter_size}",
                           (c, h, w)))
        elif spec.kind == "maxpool":
            h, w = h // spec.factor, w // spec.factor
            stages.append((f"maxpool /{spec.factor}", (c, h, w)))
        elif spec.kind in ("dense", "softmax-output"):
            stages.append((f"{spec.kind} {spec.units}", spec.units))
            c, h, w = spec.units, 1, 1
            continue
        if h < 1 or w < 1:
            raise PatchTooSmallError(
                f"patch_size {config.patch_size}: feature map vanished at "
                f"{stages[-1][0]}"
            )
    return stages


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 64
    seed: int = 0
    shuffle_each_epoch: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigInvalidError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigInvalidError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "shuffle_each_epoch": self.shuffle_each_epoch,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainedModel:
    """A network plus everything needed to reproduce or audit it.

    training_history holds the mean-over-batches cross-entropy of each
    epoch actually run. provenance records the dataset fingerprint, the
    TrainConfig and (when known) the patch spec the data was built with.
    """

    config: NetworkConfig
    network: Network
    training_history: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)


def build_network(patch_size: int = 32, seed: int = 0,
                  config: NetworkConfig | None = None) -> TrainedModel:
    """A freshly initialized (untrained) model; same seed, same weights."""
    if config is None:
        config = NetworkConfig(patch_size=patch_size)
    layers = build_layers(config.layers, (config.channels, config.patch_size,
                                          config.patch_size), seed=seed)
    return TrainedModel(config=config, network=Network(layers),
                        provenance={"init_seed": seed})


def patches_to_arrays(patches):
    """Stack patches into network-ready tensors: X (N,3,p,p), y (N,)."""
    if not patches:
        raise EmptyTrainingError("no patches supplied")
    X = np.stack([p.pixels for p in patches]).astype(np.float32)
    X = np.ascontiguousarray(X.transpose(0, 3, 1, 2))
    y = np.array([p.label for p in patches], dtype=np.int64)
    return X, y


def train(model: TrainedModel, split: DatasetSplit, cfg: TrainConfig,
          progress_sink=None, patch_spec=None) -> TrainedModel:
    """Mini-batch momentum SGD for cfg.epochs full passes.

    Returns a new TrainedModel; the input model is left untouched. The
    shuffle of each epoch is seeded from (cfg.seed, epoch), so a run is
    reproducible and epochs are independent of one another. progress_sink,
    if given, is called as progress_sink(epoch, mean_loss) after each
    epoch; returning a truthy value stops training early with the weights
    as of that epoch.
    """
    X, y = patches_to_arrays(split.train)
    classes = np.unique(y)
    if classes.size < 2:
        raise SingleClassDatasetError(
            f"training set contains only class {classes[0]}"
        )

    net = model.network.astype(np.float32)  # private copy of the weights
    n = len(y)
    velocity = [np.zeros_like(arr) for _, _, arr in net.parameters()]
    history = []
    for epoch in range(1, cfg.epochs + 1):
        if cfg.shuffle_each_epoch:
            order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        else:
            order = np.arange(n)
        batch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = net.loss_and_gradients(X[idx], y[idx])
            if not np.isfinite(loss):
                raise DivergedLossError(
                    f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}"
                )
            params = [arr for _, _, arr in net.parameters()]
            new_params, velocity = sgd_step(
                params, grads, cfg.learning_rate, cfg.momentum, velocity
            )
            net.set_parameters(new_params)
            batch_losses.append(float(loss))
        mean_loss = float(np.mean(batch_losses))
        history.append(mean_loss)
        if progress_sink is not None and progress_sink(epoch, mean_loss):
            break

    provenance = {
        "init_seed": model.provenance.get("init_seed"),
        "train_config": cfg.to_dict(),
        "dataset_fingerprint": split_fingerprint(split),
        "train_patches": len(split.train),
        "test_patches": len(split.test),
    }
    if patch_spec is not None:
        provenance["patch_spec"] = patch_spec.to_dict()
    return TrainedModel(config=model.config, network=net,
                        training_history=history, provenance=provenance)


def _as_input_batch(config: NetworkConfig, pixels: np.ndarray) -> np.ndarray:
    p, c = config.patch_size, config.channels
    if pixels.ndim == 3:
        pixels = pixels[None]
    if pixels.ndim != 4 or pixels.shape[1:] != (p, p, c):
        raise ShapeMismatchError(
            f"expected patches of shape ({p}, {p}, {c}), got {pixels.shape}"
        )
    return np.ascontiguousarray(
        pixels.astype(np.float32).transpose(0, 3, 1, 2)
    )


def predict_batch(model: TrainedModel, pixels: np.ndarray) -> np.ndarray:
    """Positive-class probabilities for a stack of (p, p, 3) patches."""
    x = _as_input_batch(model.config, pixels)
    logits = model.network.forward(x)
    return np.array([softmax_probs(row)[1] for row in logits])


def predict_patch(model: TrainedModel, pixels: np.ndarray) -> float:
    """Probability in [0, 1] that a single patch contains the target class."""
    return float(predict_batch(model, pixels)[0])


def save_loss_log(history, path) -> None:
    """Plain CSV of the training curve: epoch, mean_loss."""
    lines = ["epoch,mean_loss"]
    lines += [f"{i},{loss!r}" for i, loss in enumerate(history, start=1)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# model file: magic "PSCN" | u32 version | u32 header_len | header JSON
#             | u64 body_len | float32-LE weight blobs in layer order | u32 crc
# ---------------------------------------------------------------------------

def save_model(model: TrainedModel, path) -> None:
    params = model.network.parameters()
    header = {
        "config": model.config.to_dict(),
        "params": [
            {"layer": layer.name, "param": name, "shape": list(arr.shape)}
            for layer, name, arr in params
        ],
        "training_history": model.training_history,
        "provenance": model.provenance,
    }
    header_bytes = json.dumps(header, sort_keys=True,
                              separators=(",", ":")).encode()
    body = b"".join(
        np.ascontiguousarray(arr, dtype="<f4").tobytes() for _, _, arr in params
    )
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", MODEL_VERSION))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(struct.pack("<Q", len(body)))
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body)))


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise TruncatedFileError(f"file ends inside {what}")
    return data


def load_model(path) -> TrainedModel:
    """Read a model file back; weight round-trip is bit-exact."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MODEL_MAGIC:
            raise BadMagicError("not a model file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != MODEL_VERSION:
            raise VersionUnsupportedError(f"model version {version}")
        (header_len,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        header = json.loads(_read_exact(fh, header_len, "header"))
        (body_len,) = struct.unpack("<Q", _read_exact(fh, 8, "body length"))
        body = _read_exact(fh, body_len, "weights")
        (crc,) = struct.unpack("<I", _read_exact(fh, 4, "checksum"))
    if zlib.crc32(body) != crc:
        raise ChecksumMismatchError("weight data fails its checksum")

    config = NetworkConfig.from_dict(header["config"])
    layers = build_layers(config.layers, (config.channels, config.patch_size,
                                          config.patch_size), seed=0)
    net = Network(layers)
    expected = net.parameters()
    meta = header["params"]
    if len(meta) != len(expected):
        raise TruncatedFileError("parameter list disagrees with architecture")

    arrays, offset = [], 0
    for (layer, name, arr), entry in zip(expected, meta):
        shape = tuple(entry["shape"])
        if shape != arr.shape or entry["layer"] != layer.name or entry["param"] != name:
            raise ShapeMismatchError(
                f"stored parameter {entry['layer']}.{entry['param']} {shape} "
                f"does not match architecture {layer.name}.{name} {arr.shape}"
            )
        count = int(np.prod(shape))
        if offset + count * 4 > body_len:
            raise TruncatedFileError("weight blob shorter than declared shapes")
        arrays.append(np.frombuffer(body, dtype="<f4", count=count,
                                    offset=offset).reshape(shape).copy())
        offset += count * 4
    if offset != body_len:
        raise TruncatedFileError("weight blob longer than declared shapes")
    net.set_parameters(arrays)
    return TrainedModel(
        config=config,
        network=net,
        training_history=list(header["training_history"]),
        provenance=header["provenance"],
    )
