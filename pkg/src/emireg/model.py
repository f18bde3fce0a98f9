"""The full network: three modality branches, VAD audio pathway, fusion, head.

The architecture is a fixed DAG, so the backward pass is written as an
explicit reverse traversal instead of a tape. Parameter initialization is
keyed by parameter name, which makes shared layers start identically across
configurations that add or remove the VAD pathway.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, StateError
from .layers import Dropout, Linear, Param, adaptive_avg_pool
from .tensor import (
    Array,
    as_tensor,
    relu,
    relu_grad_mask,
    sigmoid,
    sigmoid_grad_from_output,
)

MODALITIES = ("visual", "audio", "text")
N_TARGETS = 6
VAD_DIM = 3

_INIT_STREAM = 0x1217
_DROPOUT_STREAM = 0x2D0D


def _rng_for(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *key])))


def _init_rng(seed: int, name: str) -> np.random.Generator:
    return _rng_for(seed, _INIT_STREAM, zlib.crc32(name.encode("utf-8")))


@dataclass
class ForwardOutputs:
    """Everything one forward pass produces, shaped for the loss module."""

    y_hat: Array
    y_logits: Array
    aux: dict[str, Array]
    v_hat: Array | None
    z: dict[str, Array]
    z_audio_main: Array
    z_fus: Array


def fuse(z_visual, z_audio, z_text, mode: str) -> Array:
    """Join branch embeddings: ``concat`` preserves subspaces, ``average`` mixes."""
    parts = [as_tensor(z) for z in (z_visual, z_audio, z_text)]
    flat = parts[0].ndim == 1
    if flat:
        parts = [p[None, :] for p in parts]
    if any(p.shape != parts[0].shape for p in parts):
        raise ShapeError(
            "fuse expects equal embedding shapes, got "
            + ", ".join(str(p.shape) for p in parts)
        )
    if mode == "concat":
        out = np.concatenate(parts, axis=1)
    elif mode == "average":
        out = (parts[0] + parts[1] + parts[2]) / 3.0
    else:
        raise ConfigError(f"unknown fusion mode {mode!r}")
    return out[0] if flat else out


def unfuse_grad(d_fused: Array, hidden_dim: int, mode: str) -> dict[str, Array]:
    """Split the fused-representation gradient back onto the three branches."""
    if mode == "concat":
        return {
            m: d_fused[:, i * hidden_dim : (i + 1) * hidden_dim].copy()
            for i, m in enumerate(MODALITIES)
        }
    if mode == "average":
        return {m: d_fused / 3.0 for m in MODALITIES}
    raise ConfigError(f"unknown fusion mode {mode!r}")


def _activation(name: str, x: Array) -> Array:
    if name == "relu":
        return relu(x)
    if name == "sigmoid":
        return sigmoid(x)
    if name == "identity":
        return x
    raise ConfigError(f"unknown activation {name!r}")


def _activation_grad(name: str, pre: Array, out: Array, upstream: Array) -> Array:
    if name == "relu":
        return upstream * relu_grad_mask(pre)
    if name == "sigmoid":
        return upstream * sigmoid_grad_from_output(out)
    if name == "identity":
        return upstream
    raise ConfigError(f"unknown activation {name!r}")


class Model:
    """Concatenation-fusion regressor with auxiliary heads and VAD audio prior.

    Branch pipeline per modality: adaptive pooling happens at batch assembly,
    then rows are projected to the hidden size, activated, dropped out, and
    mean-pooled over time into one embedding. The audio branch additionally
    predicts a 3-D latent from the pre-activation projected rows and injects
    it back additively; the injection map starts at zero so a fresh model
    behaves exactly like its VAD-free counterpart.
    """

    def __init__(
        self,
        dims: dict[str, int],
        hidden_dim: int,
        fusion: str = "concat",
        vad_enabled: bool = True,
        dropout: float = 0.2,
        hidden_activation: str = "relu",
        output_activation: str = "sigmoid",
        align_len: int = 128,
        seed: int = 0,
    ):
        if set(dims) != set(MODALITIES):
            raise ConfigError(f"dims must cover {MODALITIES}, got {sorted(dims)}")
        if fusion not in ("concat", "average"):
            raise ConfigError(f"unknown fusion mode {fusion!r}")
        if hidden_activation not in ("relu", "sigmoid", "identity"):
            raise ConfigError(f"unknown activation {hidden_activation!r}")
        if output_activation not in ("sigmoid", "identity"):
            raise ConfigError(f"unknown output activation {output_activation!r}")
        self.dims = dict(dims)
        self.hidden_dim = hidden_dim
        self.fusion = fusion
        self.vad_enabled = vad_enabled
        self.hidden_activation = hidden_activation
        self.output_activation = output_activation
        self.align_len = align_len
        self.fused_dim = 3 * hidden_dim if fusion == "concat" else hidden_dim

        dropout_rng = _rng_for(seed, _DROPOUT_STREAM)
        self.proj = {
            m: Linear(hidden_dim, dims[m], rng=_init_rng(seed, f"{m}.proj"))
            for m in MODALITIES
        }
        self.drop = {m: Dropout(dropout, dropout_rng) for m in MODALITIES}
        self.aux_head = {
            m: Linear(N_TARGETS, hidden_dim, rng=_init_rng(seed, f"{m}.aux"))
            for m in MODALITIES
        }
        if vad_enabled:
            self.vad_head = Linear(VAD_DIM, hidden_dim, rng=_init_rng(seed, "vad.head"))
            # zero start keeps the injection inert until training engages it
            self.inj = Linear(hidden_dim, VAD_DIM, bias=False, init="zero")
        else:
            self.vad_head = None
            self.inj = None
        self.fusion_hidden = Linear(
            hidden_dim, self.fused_dim, rng=_init_rng(seed, "fusion.hidden")
        )
        self.fusion_drop = Dropout(dropout, dropout_rng)
        self.fusion_out = Linear(
            N_TARGETS, hidden_dim, rng=_init_rng(seed, "fusion.out")
        )
        self._cache: dict | None = None

    # -- parameter plumbing ------------------------------------------------

    def parameters(self) -> dict[str, Param]:
        """Named parameters in a fixed, reproducible order."""
        out: dict[str, Param] = {}
        for m in MODALITIES:
            out[f"{m}.proj.weight"] = self.proj[m].weight
            out[f"{m}.proj.bias"] = self.proj[m].bias
        for m in MODALITIES:
            out[f"{m}.aux.weight"] = self.aux_head[m].weight
            out[f"{m}.aux.bias"] = self.aux_head[m].bias
        if self.vad_enabled:
            out["vad.head.weight"] = self.vad_head.weight
            out["vad.head.bias"] = self.vad_head.bias
            out["vad.inj.weight"] = self.inj.weight
        out["fusion.hidden.weight"] = self.fusion_hidden.weight
        out["fusion.hidden.bias"] = self.fusion_hidden.bias
        out["fusion.out.weight"] = self.fusion_out.weight
        out["fusion.out.bias"] = self.fusion_out.bias
        return out

    def zero_grads(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def get_values(self) -> dict[str, Array]:
        return {name: p.value.copy() for name, p in self.parameters().items()}

    def set_values(self, values: dict[str, Array]) -> None:
        params = self.parameters()
        missing = set(params) - set(values)
        if missing:
            raise ConfigError(f"missing parameter values: {sorted(missing)}")
        for name, p in params.items():
            incoming = as_tensor(values[name])
            if incoming.shape != p.value.shape:
                raise ShapeError(
                    f"parameter {name!r}: stored shape {incoming.shape} "
                    f"!= model shape {p.value.shape}"
                )
            p.value[...] = incoming

    def param_count(self) -> int:
        return sum(p.value.size for p in self.parameters().values())

    # -- forward / backward -------------------------------------------------

    def branch_embed(self, features, modality: str, train: bool = False) -> Array:
        """Embed one raw [L x d] sequence through a single branch.

        Pool to the alignment length, project, activate, drop out, then
        mean over time. For audio this is the pre-injection embedding.
        Standalone convenience; the batched path does not use it.
        """
        x = adaptive_avg_pool(as_tensor(features), self.align_len)
        if x.shape[1] != self.dims[modality]:
            raise ConfigError(
                f"{modality} feature dim {x.shape[1]} != configured {self.dims[modality]}"
            )
        pre = self.proj[modality].forward(x)
        act = _activation(self.hidden_activation, pre)
        dropped = self.drop[modality].forward(act, train)
        return dropped.mean(axis=0)

    def forward(self, features: dict[str, Array], train: bool) -> ForwardOutputs:
        """Run the whole network on pooled features [batch x align x dim]."""
        cache: dict = {"train": train}
        batch = None
        z: dict[str, Array] = {}
        for m in MODALITIES:
            x = as_tensor(features[m])
            if x.ndim != 3 or x.shape[2] != self.dims[m]:
                raise ConfigError(
                    f"{m} features must be [batch x {self.align_len} x {self.dims[m]}], "
                    f"got {x.shape}"
                )
            if x.shape[1] != self.align_len:
                raise ShapeError(
                    f"{m} features not aligned: {x.shape[1]} rows != {self.align_len}"
                )
            if batch is None:
                batch = x.shape[0]
                if batch == 0:
                    raise ShapeError("empty batch")
            elif x.shape[0] != batch:
                raise ShapeError(f"modalities disagree on batch size at {m}")
            flat = x.reshape(batch * self.align_len, self.dims[m])
            pre = self.proj[m].forward(flat)
            act = _activation(self.hidden_activation, pre)
            dropped = self.drop[m].forward(act, train)
            z[m] = dropped.reshape(batch, self.align_len, self.hidden_dim).mean(axis=1)
            cache[m] = {"pre": pre, "act": act, "rows": x.shape}

        z_audio_main = z["audio"]
        if self.vad_enabled:
            a_mean = (
                cache["audio"]["pre"]
                .reshape(batch, self.align_len, self.hidden_dim)
                .mean(axis=1)
            )
            v_logits = self.vad_head.forward(a_mean)
            v_hat = sigmoid(v_logits)
            z["audio"] = z_audio_main + self.inj.forward(v_hat)
            cache["vad"] = {"v_hat": v_hat}
        else:
            v_hat = None

        z_fus = fuse(z["visual"], z["audio"], z["text"], self.fusion)
        h_pre = self.fusion_hidden.forward(z_fus)
        h_act = _activation(self.hidden_activation, h_pre)
        h_drop = self.fusion_drop.forward(h_act, train)
        y_logits = self.fusion_out.forward(h_drop)
        y_hat = (
            sigmoid(y_logits) if self.output_activation == "sigmoid" else y_logits
        )

        aux: dict[str, Array] = {}
        aux_logits: dict[str, Array] = {}
        for m in MODALITIES:
            logits = self.aux_head[m].forward(z[m])
            aux_logits[m] = logits
            aux[m] = sigmoid(logits) if self.output_activation == "sigmoid" else logits

        cache.update(
            batch=batch,
            z=z,
            z_audio_main=z_audio_main,
            h_pre=h_pre,
            h_act=h_act,
            y_logits=y_logits,
            y_hat=y_hat,
            aux=aux,
        )
        self._cache = cache
        return ForwardOutputs(
            y_hat=y_hat,
            y_logits=y_logits,
            aux=aux,
            v_hat=v_hat,
            z=dict(z),
            z_audio_main=z_audio_main,
            z_fus=z_fus,
        )

    def _output_act_grad(self, upstream: Array, out: Array) -> Array:
        if self.output_activation == "sigmoid":
            return upstream * sigmoid_grad_from_output(out)
        return upstream

    def backward(
        self,
        d_y_hat: Array,
        d_aux: dict[str, Array],
        d_v_hat: Array | None = None,
    ) -> dict[str, Array]:
        """Reverse traversal of the forward DAG; accumulates parameter grads.

        Returns the gradients w.r.t. the (pooled) input features, mostly for
        verification. ``d_v_hat`` carries the direct regularizer gradient on
        the latent VAD vector.
        """
        if self._cache is None:
            raise StateError("model backward called before forward")
        c = self._cache
        batch = c["batch"]

        d_y_logits = self._output_act_grad(as_tensor(d_y_hat), c["y_hat"])
        d_h_drop = self.fusion_out.backward(d_y_logits)
        d_h_act = self.fusion_drop.backward(d_h_drop)
        d_h_pre = _activation_grad(
            self.hidden_activation, c["h_pre"], c["h_act"], d_h_act
        )
        d_z = unfuse_grad(
            self.fusion_hidden.backward(d_h_pre), self.hidden_dim, self.fusion
        )

        for m in MODALITIES:
            up = d_aux.get(m) if d_aux else None
            if up is None:
                continue
            d_logits = self._output_act_grad(as_tensor(up), c["aux"][m])
            d_z[m] = d_z[m] + self.aux_head[m].backward(d_logits)

        d_pre_extra_audio = None
        if self.vad_enabled:
            v_hat = c["vad"]["v_hat"]
            d_v_total = self.inj.backward(d_z["audio"])
            if d_v_hat is not None:
                d_v_total = d_v_total + as_tensor(d_v_hat)
            d_v_logits = d_v_total * sigmoid_grad_from_output(v_hat)
            d_a_mean = self.vad_head.backward(d_v_logits)
            # mean over time: every projected row shares the pooled gradient
            d_pre_extra_audio = np.repeat(
                d_a_mean[:, None, :] / self.align_len, self.align_len, axis=1
            ).reshape(batch * self.align_len, self.hidden_dim)

        input_grads: dict[str, Array] = {}
        for m in MODALITIES:
            d_rows = np.repeat(
                d_z[m][:, None, :] / self.align_len, self.align_len, axis=1
            ).reshape(batch * self.align_len, self.hidden_dim)
            d_act = self.drop[m].backward(d_rows)
            d_pre = _activation_grad(
                self.hidden_activation, c[m]["pre"], c[m]["act"], d_act
            )
            if m == "audio" and d_pre_extra_audio is not None:
                d_pre = d_pre + d_pre_extra_audio
            d_flat = self.proj[m].backward(d_pre)
            input_grads[m] = d_flat.reshape(c[m]["rows"])
        return input_grads
