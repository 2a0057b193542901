"""Model bundle: vision featurizer, projector and language transformer as one predictor."""

import hashlib
from dataclasses import asdict, dataclass
from typing import Iterable, Optional

import numpy as np

from ..core.config import ModelConfig
from ..core.conversation import AttentionMaskKind, Role, SequenceLayout
from ..core.errors import ValidationError
from ..core.seeding import Stream, stream_rng
from ..core.stages import PARAM_GROUPS
from ..core.vocab import Vocabulary
from .predictor import MaskPredictor, PredictionGrid, PredictorInput
from .transformer import TinyTransformer, softmax
from .vision import Projector, VisionStub

Params = dict[str, np.ndarray]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def masked_cross_entropy(logits: np.ndarray, targets: np.ndarray, weight: float = 1.0):
    """
    Weighted sum of -log p(target) over rows whose target is >= 0.

    Returns (loss, dloss/dlogits).
    """
    rows = np.flatnonzero(targets >= 0)
    dlogits = np.zeros_like(logits)
    if rows.size == 0:
        return 0.0, dlogits
    logp = log_softmax(logits[rows])
    picked = targets[rows]
    loss = -weight * float(logp[np.arange(rows.size), picked].sum())
    p = np.exp(logp)
    p[np.arange(rows.size), picked] -= 1.0
    dlogits[rows] = weight * p
    return loss, dlogits


@dataclass(frozen=True, eq=False)
class ObjectiveTerm:
    """One corrupted layout with its targets (-1 = ignored) and loss weight."""
    input: PredictorInput
    targets: np.ndarray
    weight: float = 1.0

    @property
    def n_targets(self) -> int:
        return int((np.asarray(self.targets) >= 0).sum())


@dataclass
class ForwardCache:
    logits: np.ndarray
    transformer: dict
    projector: Optional[tuple] = None


class ModelBundle(MaskPredictor):
    """
    Trainable predictor grouped into ``vision``, ``projector`` and ``language``.

    Parameter names carry their group as prefix (``language.Wq``,
    ``projector.W1``). The vision featurizer has no parameters.
    """

    def __init__(self, cfg: ModelConfig, vocab: Vocabulary, vision: VisionStub, params: Params):
        self.cfg = cfg
        self.vocab = vocab
        self.vision = vision
        self.transformer = TinyTransformer(cfg, vocab.embedding_size, vocab.output_size, vocab.mask_id)
        self.projector = Projector(vision.feature_dim, cfg.projector_hidden, cfg.d_model)

        expected = self.param_shapes()
        if set(params) != set(expected):
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            raise ValidationError(f"parameter set mismatch: missing {missing}, unexpected {extra}")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ValidationError(f"{name} has shape {params[name].shape}, expected {shape}")
        self.params = {name: np.asarray(params[name], dtype=np.float64) for name in sorted(params)}

    @classmethod
    def initialize(cls, cfg: ModelConfig, vocab: Vocabulary, vision: VisionStub, seed: int) -> "ModelBundle":
        """Fresh parameters drawn uniformly in [-init_scale, init_scale] from the INIT stream."""
        rng = stream_rng(seed, Stream.INIT)
        transformer = TinyTransformer(cfg, vocab.embedding_size, vocab.output_size, vocab.mask_id)
        projector = Projector(vision.feature_dim, cfg.projector_hidden, cfg.d_model)
        params = {f"language.{k}": v for k, v in transformer.init_params(rng).items()}
        params.update({f"projector.{k}": v for k, v in projector.init_params(rng, cfg.init_scale).items()})
        return cls(cfg, vocab, vision, params)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {f"language.{k}": v for k, v in self.transformer.shapes().items()}
        shapes.update({f"projector.{k}": v for k, v in self.projector.shapes().items()})
        return shapes

    def with_params(self, params: Params) -> "ModelBundle":
        return ModelBundle(self.cfg, self.vocab, self.vision, params)

    @property
    def output_size(self) -> int:
        return self.vocab.output_size

    @staticmethod
    def group_of(name: str) -> str:
        return name.split(".", 1)[0]

    def group_names(self, group: str) -> list[str]:
        if group not in PARAM_GROUPS:
            raise ValidationError(f"unknown parameter group {group!r}")
        return [name for name in self.params if self.group_of(name) == group]

    def checksum(self, group: str) -> str:
        """SHA-256 over the names and raw bytes of one group, in name order."""
        digest = hashlib.sha256(group.encode())
        for name in self.group_names(group):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes())
        return digest.hexdigest()

    def checksums(self) -> dict[str, str]:
        return {group: self.checksum(group) for group in PARAM_GROUPS}

    def metadata(self) -> dict:
        return {
            "model": asdict(self.cfg),
            "vocab": {"content_size": self.vocab.content_size, "with_tags": self.vocab.with_tags},
            "vision": asdict(self.vision),
        }

    # -- prediction -------------------------------------------------------

    def input_for(self, lay: SequenceLayout, kind: AttentionMaskKind) -> PredictorInput:
        features = self.vision.encode_image(lay.image) if lay.image is not None else None
        return PredictorInput.from_layout(lay, kind, features)

    def _split(self, params: Params) -> tuple[Params, Params]:
        language, projector = {}, {}
        for name, value in params.items():
            group, short = name.split(".", 1)
            (language if group == "language" else projector)[short] = value
        return language, projector

    def forward_with_params(self, inp: PredictorInput, params: Optional[Params] = None):
        """Return (PredictionGrid, ForwardCache) under ``params`` (defaults to the bundle's)."""
        language, projector = self._split(self.params if params is None else params)
        image_emb, proj_cache = None, None
        if np.any(inp.roles == Role.IMAGE):
            image_emb, proj_cache = self.projector.project(projector, inp.features)
        logits, cache = self.transformer.forward(language, inp, image_emb)
        return PredictionGrid(softmax(logits)), ForwardCache(logits, cache, proj_cache)

    def predict(self, inp: PredictorInput) -> PredictionGrid:
        return self.forward_with_params(inp)[0]

    def backward(self, params: Params, cache: ForwardCache, dlogits: np.ndarray) -> Params:
        language, projector = self._split(params)
        lang_grads, dimage = self.transformer.backward(language, cache.transformer, dlogits)
        grads = {f"language.{k}": v for k, v in lang_grads.items()}
        if dimage is not None:
            proj_grads = self.projector.backward(projector, cache.projector, dimage)
        else:
            proj_grads = {k: np.zeros_like(v) for k, v in projector.items()}
        grads.update({f"projector.{k}": v for k, v in proj_grads.items()})
        return grads


def forward_with_params(model: ModelBundle, inp: PredictorInput, params: Optional[Params] = None):
    return model.forward_with_params(inp, params)


def loss_gradients(
    model: ModelBundle,
    terms: Iterable[ObjectiveTerm],
    params: Optional[Params] = None,
) -> tuple[float, Params]:
    """
    Summed loss and its gradient for every parameter tensor.

    Terms without targets contribute nothing and skip the forward pass.
    """
    params = model.params if params is None else params
    total = 0.0
    grads = {name: np.zeros_like(value) for name, value in params.items()}
    for term in terms:
        targets = np.asarray(term.targets, dtype=np.int64)
        if targets.size != term.input.length:
            raise ValidationError("targets must cover every layout position")
        if term.n_targets == 0:
            continue
        _, cache = model.forward_with_params(term.input, params)
        loss, dlogits = masked_cross_entropy(cache.logits, targets, term.weight)
        total += loss
        for name, g in model.backward(params, cache, dlogits).items():
            grads[name] += g
    return total, grads
