"""The three architecture generations and their layer summary."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .tensor import DTYPE, ShapeError

VARIANTS = {
    "initial": {"conv": (11,), "fc": (40,)},
    "modified": {"conv": (11, 22), "fc": (100, 50)},
    "final": {"conv": (11, 22, 44), "fc": (200, 100, 50)},
}

# Reference parameter counts for the final variant at 224x224 with no batch
# norm. Used only to flag deviations.
REFERENCE_COUNTS = {
    "Conv2d-1": 308,
    "Conv2d-2": 2178,
    "Conv2d-3": 8760,
    "FC1": 5_950_000,
    "FC2": 20_100,
    "FC3": 5_050,
    "Output": 102,
    "Total": 5_995_698,
}


@dataclass
class ModelConfig:
    variant: str = "final"
    use_batchnorm: bool = False
    dropout_rate: float = 0.0
    input_size: int = 224
    num_classes: int = 2
    init_seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {sorted(VARIANTS)}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.num_classes != 2:
            raise ValueError("only binary classification (2 outputs) is supported")

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (3, self.input_size, self.input_size)


@dataclass
class LayerSummaryRow:
    layer_name: str
    output_shape: str
    parameter_count: int
    reference_count: int | None = None

    @property
    def deviates(self) -> bool:
        return self.reference_count is not None and self.reference_count != self.parameter_count


@dataclass
class Model:
    config: ModelConfig
    layers: list = field(default_factory=list)
    names: list = field(default_factory=list)
    _ready: bool = False

    def set_step(self, step: int):
        """Select the dropout stream position for the next train forward."""
        for layer in self.layers:
            if isinstance(layer, L.Dropout):
                layer.step = step

    def forward(self, batch: np.ndarray, train: bool = False) -> np.ndarray:
        expected = self.config.input_shape
        if batch.ndim != 4 or batch.shape[1:] != expected:
            raise ShapeError(f"model expects [N,{','.join(map(str, expected))}], got {batch.shape}")
        x = batch
        for layer in self.layers:
            x = layer.forward(x, train)
        self._ready = train
        return x

    def backward(self, loss_grad: np.ndarray) -> np.ndarray:
        if not self._ready:
            raise L.ContractError("backward requires an immediately preceding train-mode forward")
        g = loss_grad
        for layer in reversed(self.layers):
            g = layer.backward(g)
        self._ready = False
        return g

    def named_parameters(self):
        """Yield (qualified name, parameter, gradient) in layer order."""
        for name, layer in zip(self.names, self.layers):
            for key in layer.params:
                yield f"{name}.{key}", layer.params[key], layer.grads[key]

    def named_buffers(self):
        for name, layer in zip(self.names, self.layers):
            for key, buf in layer.buffers.items():
                yield f"{name}.{key}", buf

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    @property
    def parameter_count(self) -> int:
        return sum(layer.parameter_count for layer in self.layers)

    def clone(self) -> "Model":
        return copy.deepcopy(self)


def build(config: ModelConfig, dtype=DTYPE) -> Model:
    spec = VARIANTS[config.variant]
    rng = np.random.default_rng(config.init_seed)
    model = Model(config)
    n_drop = 0

    def add(name, layer):
        model.names.append(name)
        model.layers.append(layer)

    def add_dropout(tag):
        nonlocal n_drop
        if config.dropout_rate > 0:
            add(f"Dropout-{tag}", L.Dropout(config.dropout_rate, index=n_drop, seed=config.init_seed))
            n_drop += 1

    shape = config.input_shape
    in_ch = shape[0]
    for b, out_ch in enumerate(spec["conv"], start=1):
        add(f"Conv2d-{b}", L.Conv2d(in_ch, out_ch, rng, dtype=dtype))
        if config.use_batchnorm:
            add(f"BatchNorm2d-{b}", L.BatchNorm2d(out_ch, dtype=dtype))
        add(f"ReLU-c{b}", L.ReLU())
        add(f"MaxPool2d-{b}", L.MaxPool2x2())
        # final variant drops out after blocks 2 and 3 only
        if config.variant != "final" or b >= 2:
            add_dropout(f"c{b}")
        in_ch = out_ch
        shape = (out_ch, (shape[1] - 2) // 2, (shape[2] - 2) // 2)
        if min(shape[1:]) < 1:
            raise ShapeError(f"input size {config.input_size} too small for the {config.variant} variant")

    add("Flatten", L.Flatten())
    features = int(np.prod(shape))
    for k, width in enumerate(spec["fc"], start=1):
        add(f"FC{k}", L.Linear(features, width, rng, dtype=dtype))
        add(f"ReLU-f{k}", L.ReLU())
        add_dropout(f"f{k}")
        features = width
    add("Output", L.Linear(features, config.num_classes, rng, dtype=dtype))
    return model


def _shape_text(shape) -> str:
    if len(shape) == 3:
        return f"{shape[1]}x{shape[2]}"
    return str(shape[0])


def summarize(model: Model) -> list[LayerSummaryRow]:
    """One row per layer (flatten omitted), then a Total row.

    Reference counts are attached only for the configuration they describe:
    final variant, 224x224 input, no batch norm.
    """
    cfg = model.config
    reference = (cfg.variant == "final" and cfg.input_size == 224 and not cfg.use_batchnorm)
    c, h, w = cfg.input_shape
    rows = [LayerSummaryRow("Input", f"{c}, {h}x{w}", 0)]
    shape = cfg.input_shape
    for name, layer in zip(model.names, model.layers):
        shape = layer.output_shape(shape)
        if isinstance(layer, L.Flatten):
            continue
        label = name.split("-")[0] if isinstance(layer, (L.ReLU, L.Dropout)) else name
        if isinstance(layer, L.MaxPool2x2):
            label = "MaxPool2d"
        text = _shape_text(shape)
        if isinstance(layer, L.Linear):
            text += " Neurons"
        rows.append(LayerSummaryRow(label, text, layer.parameter_count,
                                    REFERENCE_COUNTS.get(name) if reference else None))
    rows.append(LayerSummaryRow("Total", "-", model.parameter_count,
                                REFERENCE_COUNTS["Total"] if reference else None))
    return rows


def format_summary(rows: list[LayerSummaryRow]) -> str:
    lines = [f"{'Layer':<14}{'Output Shape':<16}{'Parameters':>12}"]
    notes = []
    for r in rows:
        count = "-" if r.parameter_count == 0 and r.layer_name not in ("Total",) else f"{r.parameter_count:,}"
        lines.append(f"{r.layer_name:<14}{r.output_shape:<16}{count:>12}")
        if r.deviates:
            notes.append(f"note: {r.layer_name} computes to {r.parameter_count:,}; "
                         f"the reference table lists {r.reference_count:,}")
    return "\n".join(lines + notes)


def summary_csv(rows: list[LayerSummaryRow]) -> str:
    out = ["layer,output_shape,parameters,reference_parameters"]
    for r in rows:
        pub = "" if r.reference_count is None else str(r.reference_count)
        out.append(f"{r.layer_name},\"{r.output_shape}\",{r.parameter_count},{pub}")
    return "\n".join(out) + "\n"
