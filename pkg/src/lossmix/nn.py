"""Dense networks on the tape: the per-frame denoiser and the rho-MLP."""
import json
from dataclasses import dataclass

import numpy as np

from lossmix import autodiff as ad

ACTIVATIONS = ("linear", "leaky_relu", "sigmoid")
CHECKPOINT_MAGIC = "lossmix-checkpoint/1"


@dataclass
class Layer:
    weight: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray  # (fan_out,)
    activation: str = "linear"
    slope: float = 0.2

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ValueError(f"bad layer shapes: weight {self.weight.shape}, bias {self.bias.shape}")


class Network:
    """A stack of dense layers applied along the last axis of its input.

    ``bottleneck`` names the layer whose activations form the embedding
    (``None`` for networks without one, such as the rho-MLP).
    """

    def __init__(self, layers, name="net", bottleneck=None):
        for i, (a, b) in enumerate(zip(layers, layers[1:])):
            if a.weight.shape[1] != b.weight.shape[0]:
                raise ValueError(f"layer {i} output {a.weight.shape[1]} does not feed "
                                 f"layer {i + 1} input {b.weight.shape[0]}")
        if bottleneck is not None and not 0 <= bottleneck < len(layers):
            raise ValueError(f"bottleneck index {bottleneck} out of range")
        self.layers = list(layers)
        self.name = name
        self.bottleneck = bottleneck

    @classmethod
    def build(cls, sizes, activations, rng, name="net", bottleneck=None, slope=0.2):
        """Glorot-uniform weights, zero biases."""
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        layers = []
        for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            layers.append(Layer(w, np.zeros(fan_out), act, slope))
        return cls(layers, name=name, bottleneck=bottleneck)

    @property
    def in_dim(self):
        return self.layers[0].weight.shape[0]

    @property
    def out_dim(self):
        return self.layers[-1].weight.shape[1]

    @property
    def embed_dim(self):
        return None if self.bottleneck is None else self.layers[self.bottleneck].weight.shape[1]

    def params(self):
        """Named parameter registry, in a fixed order. Arrays are live, not copies."""
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{self.name}.{i}.weight"] = layer.weight
            out[f"{self.name}.{i}.bias"] = layer.bias
        return out

    def n_params(self):
        return int(np.sum([p.size for p in self.params().values()]))

    def copy(self):
        layers = [Layer(l.weight.copy(), l.bias.copy(), l.activation, l.slope) for l in self.layers]
        return Network(layers, name=self.name, bottleneck=self.bottleneck)

    def bind(self, tape, param_vars=None):
        """Register (or look up) this network's parameters on ``tape``."""
        if param_vars is not None:
            return [(param_vars[f"{self.name}.{i}.weight"], param_vars[f"{self.name}.{i}.bias"])
                    for i in range(len(self.layers))]
        return [(tape.param(f"{self.name}.{i}.weight", l.weight),
                 tape.param(f"{self.name}.{i}.bias", l.bias))
                for i, l in enumerate(self.layers)]


def _activate(h, layer):
    if layer.activation == "leaky_relu":
        return ad.leaky_relu(h, layer.slope)
    if layer.activation == "sigmoid":
        return ad.sigmoid(h)
    return h


def _run(net, x, bound):
    acts = []
    h = x
    for layer, (w, b) in zip(net.layers, bound):
        h = _activate(ad.matmul(h, w) + b, layer)
        acts.append(h)
    return acts


@dataclass
class DenoiserOutput:
    prediction: ad.Var  # same shape as the input spectrogram(s)
    embedding: ad.Var  # (embed_dim,) or (batch, embed_dim)


def forward_denoiser(net, x, tape, bound=None):
    """Run the denoiser frame by frame; pool the bottleneck over frames.

    ``x`` is a (frames, bins) spectrogram or a (batch, frames, bins) stack.
    ``bound`` reuses parameter nodes already registered on ``tape``.
    """
    xv = x.value if isinstance(x, ad.Var) else np.asarray(x, dtype=np.float64)
    if xv.ndim not in (2, 3) or xv.shape[-1] != net.in_dim:
        raise ValueError(f"input shape {xv.shape} does not match network input "
                         f"(frames, {net.in_dim}) or (batch, frames, {net.in_dim})")
    if net.bottleneck is None:
        raise ValueError("denoiser network needs a bottleneck layer")
    bound = bound if bound is not None else net.bind(tape)
    acts = _run(net, tape.lift(x), bound)
    embedding = ad.mean(acts[net.bottleneck], axis=-2)
    return DenoiserOutput(acts[-1], embedding)


def forward_mlp(net, e, tape, bound=None):
    """Scalar MLP output per embedding row: (d,) -> (), (n, d) -> (n,)."""
    ev = e.value if isinstance(e, ad.Var) else np.asarray(e, dtype=np.float64)
    if ev.ndim not in (1, 2) or ev.shape[-1] != net.in_dim:
        raise ValueError(f"embedding shape {ev.shape} does not match MLP input {net.in_dim}")
    if net.out_dim != 1:
        raise ValueError(f"rho-MLP must have a single output, has {net.out_dim}")
    bound = bound if bound is not None else net.bind(tape)
    out = _run(net, tape.lift(e), bound)[-1]
    return ad.reshape(out, ev.shape[:-1])


def make_denoiser(n_bins, rng, hidden=32, bottleneck=16, slope=0.2, name="denoiser"):
    """bins -> hidden -> bottleneck -> hidden -> bins, applied per frame."""
    return Network.build([n_bins, hidden, bottleneck, hidden, n_bins],
                         ["leaky_relu", "leaky_relu", "leaky_relu", "linear"],
                         rng, name=name, bottleneck=1, slope=slope)


def make_rho_mlp(embed_dim, rng, width=32, slope=0.2, name="rho"):
    return Network.build([embed_dim, width, 1], ["leaky_relu", "linear"], rng, name=name, slope=slope)


def save_checkpoint(path, networks, meta=None):
    """Write named arrays as JSON; floats use repr so values round-trip exactly."""
    payload = {"magic": CHECKPOINT_MAGIC, "meta": meta or {}, "networks": {}}
    for net in networks:
        payload["networks"][net.name] = {
            "bottleneck": net.bottleneck,
            "layers": [{"activation": l.activation, "slope": l.slope} for l in net.layers],
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                       for k, v in net.params().items()},
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``({name: Network}, meta)``."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("magic") != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a lossmix checkpoint (magic {payload.get('magic')!r})")
    nets = {}
    for name, spec in payload["networks"].items():
        layers = []
        for i, lspec in enumerate(spec["layers"]):
            w = spec["params"][f"{name}.{i}.weight"]
            b = spec["params"][f"{name}.{i}.bias"]
            layers.append(Layer(np.array(w["data"], dtype=np.float64).reshape(w["shape"]),
                                np.array(b["data"], dtype=np.float64).reshape(b["shape"]),
                                lspec["activation"], lspec["slope"]))
        nets[name] = Network(layers, name=name, bottleneck=spec["bottleneck"])
    return nets, payload.get("meta", {})
