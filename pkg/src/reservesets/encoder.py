"""Context-to-shape MLP encoder.

The last layer emits d(d+1)/2 values that fill the lower triangle row by row;
diagonal positions go through exp() and the whole factor is then scaled to
tr(L L^T) = d. Parameters are float64 throughout so that parameter gradients
can be checked against finite differences.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .data import N_FEATURES, Context, stream
from .errors import BadParams
from .geometry import CholeskyShape, ShapeGradient, project_shape, vech

DEFAULT_WIDTHS = (N_FEATURES, 128, 64, 120)


def _dim_from_width(width: int) -> int:
    d = (math.isqrt(8 * width + 1) - 1) // 2
    if d * (d + 1) // 2 != width:
        raise BadParams(f"Output width {width} is not a triangular number d(d+1)/2")
    return d


class MlpEncoder(nn.Module):
    def __init__(self, widths: tuple[int, ...] = DEFAULT_WIDTHS, seed: int = 0):
        super().__init__()
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise BadParams(f"Encoder widths must be at least two positive sizes, got {widths}")
        self.widths = tuple(int(w) for w in widths)
        self.dim = _dim_from_width(self.widths[-1])
        self.layers = nn.ModuleList(
            nn.Linear(a, b, dtype=torch.float64) for a, b in zip(self.widths[:-1], self.widths[1:], strict=True)
        )
        rows, cols = np.tril_indices(self.dim)
        self.register_buffer("rows", torch.as_tensor(rows), persistent=False)
        self.register_buffer("cols", torch.as_tensor(cols), persistent=False)
        self.register_buffer("diag_pos", torch.as_tensor(np.flatnonzero(rows == cols)), persistent=False)
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) from the seeded encoder stream."""
        rng = stream(seed, "encoder")
        with torch.no_grad():
            for layer in self.layers:
                bound = 1.0 / math.sqrt(layer.in_features)
                layer.weight.copy_(torch.from_numpy(rng.uniform(-bound, bound, layer.weight.shape)))
                layer.bias.copy_(torch.from_numpy(rng.uniform(-bound, bound, layer.bias.shape)))

    def raw(self, x: torch.Tensor) -> torch.Tensor:
        for layer in self.layers[:-1]:
            x = torch.relu(layer(x))
        return self.layers[-1](x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(n, input) features -> (n, d, d) trace-normalized lower-triangular factors."""
        out = self.raw(x)
        values = out.clone()
        values[:, self.diag_pos] = torch.exp(out[:, self.diag_pos])
        L = torch.zeros(out.shape[0], self.dim, self.dim, dtype=out.dtype)
        L[:, self.rows, self.cols] = values
        scale = torch.sqrt(self.dim / (L * L).sum(dim=(1, 2), keepdim=True))
        return L * scale


def _features(X) -> torch.Tensor:
    return torch.as_tensor(np.atleast_2d(np.asarray(X, dtype=float)))


def mlp_forward(enc: MlpEncoder, ctx: Context) -> CholeskyShape:
    return contextual_shapes(enc, ctx.features())[0]


def contextual_factors(enc: MlpEncoder, X: np.ndarray) -> np.ndarray:
    with torch.no_grad():
        return enc(_features(X)).numpy()


def contextual_shapes(enc: MlpEncoder, X: np.ndarray) -> list[CholeskyShape]:
    return [project_shape(L) for L in contextual_factors(enc, X)]


def mlp_backward(enc: MlpEncoder, ctx: Context, upstream: ShapeGradient) -> dict[str, np.ndarray]:
    """d<G, L_phi(xi)>/d phi for every named parameter."""
    G = torch.as_tensor(upstream.entries)[None]
    L = enc(_features(ctx.features()))
    params = dict(enc.named_parameters())
    grads = torch.autograd.grad((G * L).sum(), list(params.values()))
    return {name: g.numpy() for name, g in zip(params, grads, strict=True)}


def init_from_static(enc: MlpEncoder, L: CholeskyShape) -> None:
    """Zero the last layer's weights and set its bias so every context maps to L."""
    if L.dim != enc.dim:
        raise BadParams(f"Static shape has dim {L.dim}, encoder emits dim {enc.dim}")
    entries = np.array(L.entries)
    idx = np.diag_indices(L.dim)
    entries[idx] = np.log(entries[idx])
    last = enc.layers[-1]
    with torch.no_grad():
        last.weight.zero_()
        last.bias.copy_(torch.from_numpy(vech(entries)))


def encoder_to_json(enc: MlpEncoder) -> dict:
    return {
        "widths": list(enc.widths),
        "weights": [layer.weight.detach().numpy().tolist() for layer in enc.layers],
        "biases": [layer.bias.detach().numpy().tolist() for layer in enc.layers],
    }


def encoder_from_json(data: dict) -> MlpEncoder:
    enc = MlpEncoder(tuple(data["widths"]))
    with torch.no_grad():
        for layer, w, b in zip(enc.layers, data["weights"], data["biases"], strict=True):
            layer.weight.copy_(torch.tensor(w, dtype=torch.float64))
            layer.bias.copy_(torch.tensor(b, dtype=torch.float64))
    return enc


def save_encoder(enc: MlpEncoder, path: Path) -> None:
    Path(path).write_text(json.dumps(encoder_to_json(enc)) + "\n")


def load_encoder(path: Path) -> MlpEncoder:
    return encoder_from_json(json.loads(Path(path).read_text()))
