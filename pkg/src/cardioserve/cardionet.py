"""Residual 1-D CNN trunk with shared weights across segments, a GRU over
segment embeddings, and sigmoid multi-label heads."""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import dsp
from .autodiff import GruParams, Parameter, Tensor
from .bundle import BundleError, WeightBundle
from .dsp import FilterSpec, RrMeasurements, SegmentBatch
from .ecg import EcgRecording, LeadConfiguration, LeadId, MissingLeads, PhysicalSignal, to_physical

STANDARDIZE_EPS = 1e-6

DEFAULT_LABELS = (
    ("NSR", "Normal sinus rhythm"),
    ("AF", "Atrial fibrillation"),
    ("AVBI", "First-degree atrioventricular block"),
    ("LBBB", "Left bundle branch block"),
    ("RBBB", "Right bundle branch block"),
    ("PAC", "Premature atrial contraction"),
    ("PVC", "Premature ventricular contraction"),
)


class ConfigError(ValueError):
    pass


class LeadMismatch(MissingLeads):
    """Recording's leads are incompatible with the model's lead configuration."""


@dataclass(frozen=True)
class ModelConfig:
    lead_configuration: LeadConfiguration
    model_rate_hz: float = dsp.MODEL_RATE_HZ
    segment_seconds: float = dsp.SEGMENT_SECONDS
    conv_layers: int = 32
    base_filters: int = 32
    kernel_size: int = 9
    downsample_every: int = 4
    filter_double_every: int = 8
    shortcut_every: int = 2
    rnn_hidden: int = 64
    rnn_cell: str = "gru"
    head_hidden: int | None = 64
    labels: tuple[tuple[str, str], ...] = DEFAULT_LABELS

    def __post_init__(self):
        if self.conv_layers < 1:
            raise ConfigError("conv_layers must be positive")
        if self.conv_layers % self.shortcut_every != 0:
            raise ConfigError(
                f"conv_layers ({self.conv_layers}) must be divisible by "
                f"shortcut_every ({self.shortcut_every})"
            )
        if self.conv_layers % self.downsample_every != 0:
            raise ConfigError(
                f"conv_layers ({self.conv_layers}) must be divisible by "
                f"downsample_every ({self.downsample_every})"
            )
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ConfigError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if self.base_filters < 1 or self.rnn_hidden < 1:
            raise ConfigError("base_filters and rnn_hidden must be positive")
        if self.rnn_cell != "gru":
            raise ConfigError(f"unsupported recurrent cell {self.rnn_cell!r}")
        if not self.labels:
            raise ConfigError("label vocabulary must be non-empty")
        codes = [code for code, _ in self.labels]
        if len(set(codes)) != len(codes):
            raise ConfigError("label codes must be unique")
        object.__setattr__(self, "labels", tuple((str(c), str(n)) for c, n in self.labels))

    @property
    def input_channels(self) -> int:
        return self.lead_configuration.input_channels

    @property
    def segment_length(self) -> int:
        return int(round(self.segment_seconds * self.model_rate_hz))

    @property
    def num_blocks(self) -> int:
        return self.conv_layers // self.shortcut_every

    @property
    def label_codes(self) -> tuple[str, ...]:
        return tuple(code for code, _ in self.labels)

    def layer_filters(self, layer: int) -> int:
        """Output channels of 1-based conv layer: doubling every filter_double_every."""
        return self.base_filters * 2 ** ((layer - 1) // self.filter_double_every)

    def layer_stride(self, layer: int) -> int:
        return 2 if layer % self.downsample_every == 0 else 1

    def layer_in_channels(self, layer: int) -> int:
        return self.input_channels if layer == 1 else self.layer_filters(layer - 1)

    @property
    def trunk_out_channels(self) -> int:
        return self.layer_filters(self.conv_layers)

    def trunk_out_length(self, segment_length: int | None = None) -> int:
        length = self.segment_length if segment_length is None else segment_length
        for layer in range(1, self.conv_layers + 1):
            length = -(-length // self.layer_stride(layer))
        return length

    def to_dict(self) -> dict:
        return {
            "lead_configuration": self.lead_configuration.value,
            "model_rate_hz": self.model_rate_hz,
            "segment_seconds": self.segment_seconds,
            "conv_layers": self.conv_layers,
            "base_filters": self.base_filters,
            "kernel_size": self.kernel_size,
            "downsample_every": self.downsample_every,
            "filter_double_every": self.filter_double_every,
            "shortcut_every": self.shortcut_every,
            "rnn_hidden": self.rnn_hidden,
            "rnn_cell": self.rnn_cell,
            "head_hidden": self.head_hidden,
            "labels": [list(pair) for pair in self.labels],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        data = dict(raw)
        data["lead_configuration"] = LeadConfiguration(data["lead_configuration"])
        data["labels"] = tuple((c, n) for c, n in data["labels"])
        return cls(**data)


def toy_config(lead_configuration: LeadConfiguration = LeadConfiguration.SINGLE_LEAD,
               labels: tuple[tuple[str, str], ...] = DEFAULT_LABELS) -> ModelConfig:
    """Small 8-layer variant for desk-scale training and tests."""
    return ModelConfig(
        lead_configuration=lead_configuration,
        conv_layers=8,
        base_filters=4,
        filter_double_every=4,
        rnn_hidden=32,
        head_hidden=16,
        labels=labels,
    )


@dataclass(frozen=True)
class Prediction:
    """Independent per-label probabilities, ordered by the label vocabulary."""

    labels: tuple[tuple[str, str], ...]
    probabilities: tuple[float, ...]

    def __post_init__(self):
        if len(self.labels) != len(self.probabilities):
            raise ValueError("one probability per label required")
        for p in self.probabilities:
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"probability {p} outside [0, 1]")

    def by_code(self) -> dict[str, float]:
        return {code: p for (code, _), p in zip(self.labels, self.probabilities)}

    def __getitem__(self, code: str) -> float:
        for (c, _), p in zip(self.labels, self.probabilities):
            if c == code:
                return p
        raise KeyError(code)


class ConvLayer:
    def __init__(self, weight: Parameter, bias: Parameter, stride: int):
        self.weight = weight
        self.bias = bias
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv1d(x, self.weight, self.bias, stride=self.stride)


class ResidualBlock:
    """Pre-activation block: out = shortcut(x) + conv2(relu(conv1(relu(x)))).

    The shortcut is the identity when channel counts match and the block does
    not downsample; otherwise a strided 1x1 projection convolution.
    """

    def __init__(self, convs: list[ConvLayer], projection: ConvLayer | None):
        self.convs = convs
        self.projection = projection

    @property
    def stride(self) -> int:
        return math.prod(c.stride for c in self.convs)

    def __call__(self, x: Tensor) -> Tensor:
        branch = x
        for conv in self.convs:
            branch = conv(ad.relu(branch))
        shortcut = self.projection(x) if self.projection is not None else x
        return shortcut + branch


class CardioNet:
    """A built network: trunk blocks, recurrent layer, and dense heads."""

    def __init__(self, config: ModelConfig, blocks: list[ResidualBlock],
                 rnn: GruParams, head_hidden: tuple[Parameter, Parameter] | None,
                 head_logits: tuple[Parameter, Parameter]):
        self.config = config
        self.blocks = blocks
        self.rnn = rnn
        self.head_hidden = head_hidden
        self.head_logits = head_logits

    def named_parameters(self) -> dict[str, Parameter]:
        named: dict[str, Parameter] = {}
        for b, block in enumerate(self.blocks, start=1):
            for c, conv in enumerate(block.convs, start=1):
                named[f"block{b:02d}.conv{c}.weight"] = conv.weight
                named[f"block{b:02d}.conv{c}.bias"] = conv.bias
            if block.projection is not None:
                named[f"block{b:02d}.proj.weight"] = block.projection.weight
                named[f"block{b:02d}.proj.bias"] = block.projection.bias
        for gate in GruParams.GATE_NAMES:
            named[f"rnn.{gate}"] = getattr(self.rnn, gate)
        if self.head_hidden is not None:
            named["head.hidden.weight"], named["head.hidden.bias"] = self.head_hidden
        named["head.logits.weight"], named["head.logits.bias"] = self.head_logits
        return named

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def to_bundle(self) -> WeightBundle:
        tensors = {name: p.data.copy() for name, p in self.named_parameters().items()}
        return WeightBundle(model_config=self.config.to_dict(), tensors=tensors)


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> Parameter:
    return Parameter(ad.xavier_uniform(rng, shape, fan_in, fan_out))


def _zero_bias(n: int) -> Parameter:
    return Parameter(np.zeros(n))


def build(config: ModelConfig, seed: int) -> CardioNet:
    """Deterministically initialize a network from (config, seed).

    Weight tensors are drawn uniform within the Glorot bound of their layer's
    fan-in/fan-out; biases start at zero (a net without normalization layers
    cannot absorb random constant offsets).  Identical (config, seed) pairs
    produce bit-identical parameters.
    """
    rng = np.random.default_rng(seed)
    k = config.kernel_size

    blocks: list[ResidualBlock] = []
    for b in range(1, config.num_blocks + 1):
        first_layer = (b - 1) * config.shortcut_every + 1
        convs = []
        for offset in range(config.shortcut_every):
            layer = first_layer + offset
            c_in = config.layer_in_channels(layer)
            c_out = config.layer_filters(layer)
            stride = config.layer_stride(layer)
            weight = _glorot(rng, (c_out, c_in, k), c_in * k, c_out * k)
            convs.append(ConvLayer(weight, _zero_bias(c_out), stride))
        block_in = config.layer_in_channels(first_layer)
        block_out = config.layer_filters(first_layer + config.shortcut_every - 1)
        block_stride = math.prod(c.stride for c in convs)
        if block_in == block_out and block_stride == 1:
            projection = None
        else:
            weight = _glorot(rng, (block_out, block_in, 1), block_in, block_out)
            projection = ConvLayer(weight, _zero_bias(block_out), block_stride)
        blocks.append(ResidualBlock(convs, projection))

    emb = config.trunk_out_channels
    hidden = config.rnn_hidden
    gates = {}
    for gate in GruParams.GATE_NAMES:
        if gate.startswith("w"):
            gates[gate] = _glorot(rng, (hidden, emb), emb, hidden)
        elif gate.startswith("u"):
            gates[gate] = _glorot(rng, (hidden, hidden), hidden, hidden)
        else:
            gates[gate] = _zero_bias(hidden)
    rnn = GruParams(**gates)

    n_labels = len(config.labels)
    if config.head_hidden is not None:
        hw = _glorot(rng, (config.head_hidden, hidden), hidden, config.head_hidden)
        head_hidden = (hw, _zero_bias(config.head_hidden))
        logits_in = config.head_hidden
    else:
        head_hidden = None
        logits_in = hidden
    lw = _glorot(rng, (n_labels, logits_in), logits_in, n_labels)

    return CardioNet(config, blocks, rnn, head_hidden, (lw, _zero_bias(n_labels)))


def from_bundle(bundle: WeightBundle) -> CardioNet:
    """Rebuild a network from a saved bundle, verifying names and shapes."""
    config = ModelConfig.from_dict(bundle.model_config)
    net = build(config, seed=0)
    named = net.named_parameters()
    missing = named.keys() - bundle.tensors.keys()
    extra = bundle.tensors.keys() - named.keys()
    if missing or extra:
        raise BundleError(
            f"bundle does not match architecture: missing {sorted(missing)}, unexpected {sorted(extra)}"
        )
    for name, param in named.items():
        stored = bundle.tensors[name]
        if stored.shape != param.data.shape:
            raise BundleError(
                f"tensor {name!r} has shape {stored.shape}, architecture needs {param.data.shape}"
            )
        param.data = stored.copy()
        param.grad = np.zeros_like(param.data)
    return net


def forward_graph(net: CardioNet, segments: np.ndarray) -> Tensor:
    """Differentiable forward pass: (S, C, L) segments to per-label probabilities."""
    cfg = net.config
    if segments.ndim != 3 or segments.shape[1] != cfg.input_channels:
        raise ad.ShapeError(
            f"expected (S, {cfg.input_channels}, L) segments, got {segments.shape}"
        )
    x = Tensor(segments)
    for block in net.blocks:
        x = block(x)
    embeddings = ad.mean_last_axis(x)  # (S, trunk channels)
    steps = [ad.row(embeddings, i) for i in range(segments.shape[0])]
    h = ad.gru_layer(steps, net.rnn)
    if net.head_hidden is not None:
        h = ad.relu(ad.dense(h, *net.head_hidden))
    logits = ad.dense(h, *net.head_logits)
    return ad.sigmoid(logits)


def forward_segments(net: CardioNet, batch: SegmentBatch) -> Prediction:
    """Inference over an already-preprocessed segment batch."""
    expected = net.config.segment_length
    if batch.segment_length != expected:
        raise ad.ShapeError(
            f"segment length {batch.segment_length} does not match model's {expected}"
        )
    with ad.no_grad():
        probs = forward_graph(net, batch.segments)
    return Prediction(labels=net.config.labels, probabilities=tuple(float(p) for p in probs.data))


def _select_leads(sig: PhysicalSignal, config: ModelConfig) -> PhysicalSignal:
    if config.lead_configuration is LeadConfiguration.SINGLE_LEAD:
        return PhysicalSignal(sample_rate_hz=sig.sample_rate_hz,
                              channels=((LeadId.I, sig.lead(LeadId.I)),))
    missing = [lead.value for lead in LeadId if not sig.has(lead)]
    if missing:
        raise LeadMismatch(f"twelve-lead model requires all 12 leads, missing: {', '.join(missing)}")
    return sig


def standardize(sig: PhysicalSignal) -> PhysicalSignal:
    """Per-channel zero mean, unit variance (std floored at 1e-6) over the recording."""
    channels = []
    for lead, values in sig.channels:
        std = float(np.std(values))
        scaled = (values - float(np.mean(values))) / max(std, STANDARDIZE_EPS)
        channels.append((lead, scaled))
    return PhysicalSignal(sample_rate_hz=sig.sample_rate_hz, channels=tuple(channels))


def preprocess(config: ModelConfig, rec: EcgRecording,
               filter_spec: FilterSpec = FilterSpec()) -> tuple[SegmentBatch, PhysicalSignal]:
    """The serving preprocessing stage: physical units, resample to the model
    rate, band-pass, standardize, segment.

    Returns the segment batch and the filtered (pre-standardization) signal,
    the latter used for rhythm measurements.
    """
    physical = _select_leads(to_physical(rec), config)
    resampled = dsp.resample(physical, config.model_rate_hz)
    filtered = dsp.bandpass(resampled, filter_spec)
    batch = dsp.segment(standardize(filtered), config.segment_seconds)
    return batch, filtered


@dataclass(frozen=True)
class AnalysisResult:
    prediction: Prediction
    measurements: RrMeasurements | None


def predict(net: CardioNet, rec: EcgRecording) -> AnalysisResult:
    """Full pipeline on a raw recording; deterministic for fixed weights."""
    batch, filtered = preprocess(net.config, rec)
    prediction = forward_segments(net, batch)
    measurements = dsp.measure_rhythm(filtered)
    return AnalysisResult(prediction=prediction, measurements=measurements)


def aggregate_chunks(preds: list[Prediction]) -> Prediction:
    """Combine chunk predictions of one long recording: per-label maximum."""
    if not preds:
        raise ValueError("aggregate_chunks needs at least one prediction")
    vocab = preds[0].labels
    for p in preds[1:]:
        if p.labels != vocab:
            raise ValueError("cannot aggregate predictions over different vocabularies")
    combined = tuple(
        max(p.probabilities[i] for p in preds) for i in range(len(vocab))
    )
    return Prediction(labels=vocab, probabilities=combined)
