"""Model families with hand-written forward/backward passes.

All computation is float64.  Parameters live in an ordered name->array
registry; the flat vector used by optimizers and checkpoints packs them in
registration order.  Loss is MSE averaged over batch and output entries.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from ..errors import ShapeMismatch

LN_EPS = 1e-8


def _uniform_init(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Model:
    """Base: parameter registry, flat packing, MSE loss plumbing."""

    def __init__(self):
        self._params: dict[str, np.ndarray] = {}

    def _register(self, name: str, value: np.ndarray) -> np.ndarray:
        arr = np.asarray(value, dtype=np.float64)
        self._params[name] = arr
        return arr

    @property
    def param_names(self) -> list[str]:
        return list(self._params)

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self._params.values())

    def param_breakdown(self) -> dict[str, int]:
        return {name: p.size for name, p in self._params.items()}

    def get_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self._params.values()])

    def set_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ShapeMismatch(f"expected {self.n_params} params, got {flat.size}")
        offset = 0
        for p in self._params.values():
            p[...] = flat[offset:offset + p.size].reshape(p.shape)
            offset += p.size

    def _grads_to_flat(self, grads: dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([
            np.asarray(grads[name]).ravel() for name in self._params
        ])

    # subclasses implement: predict, loss_and_grad, relu_margin

    def predict(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def loss(self, x: np.ndarray, y: np.ndarray) -> float:
        pred = self.predict(x)
        if pred.shape != y.shape:
            raise ShapeMismatch(f"prediction {pred.shape} vs target {y.shape}")
        return float(np.mean((pred - y) ** 2))

    def loss_and_grad(self, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def relu_margin(self, x: np.ndarray) -> float:
        """Smallest |pre-activation| over every ReLU input (kink distance)."""
        raise NotImplementedError

    def spec(self) -> dict:
        raise NotImplementedError


class DenseNet(Model):
    """Fully connected ReLU network; hidden widths may be empty (linear map)."""

    def __init__(self, widths: Sequence[int], seed: int = 0):
        super().__init__()
        if len(widths) < 2:
            raise ShapeMismatch("DenseNet needs at least input and output widths")
        self.widths = tuple(int(w) for w in widths)
        rng = np.random.default_rng(seed)
        for l, (n_in, n_out) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            self._register(f"W{l}", _uniform_init(rng, (n_in, n_out), n_in, n_out))
            self._register(f"b{l}", np.zeros(n_out))

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def spec(self) -> dict:
        return {"kind": "dense", "widths": list(self.widths)}

    @classmethod
    def from_spec(cls, spec: dict) -> "DenseNet":
        return cls(spec["widths"])

    def _forward(self, x: np.ndarray):
        if x.ndim != 2 or x.shape[1] != self.widths[0]:
            raise ShapeMismatch(
                f"expected input (B, {self.widths[0]}), got {x.shape}"
            )
        hs = [x]
        zs = []
        h = x
        for l in range(self.n_layers):
            z = h @ self._params[f"W{l}"] + self._params[f"b{l}"]
            zs.append(z)
            h = np.maximum(z, 0.0) if l < self.n_layers - 1 else z
            hs.append(h)
        return hs, zs

    def predict(self, x: np.ndarray) -> np.ndarray:
        hs, _ = self._forward(np.asarray(x, dtype=np.float64))
        return hs[-1]

    def relu_margin(self, x: np.ndarray) -> float:
        _, zs = self._forward(np.asarray(x, dtype=np.float64))
        if self.n_layers == 1:
            return math.inf
        return float(min(np.abs(z).min() for z in zs[:-1]))

    def loss_and_grad(self, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        hs, zs = self._forward(x)
        pred = hs[-1]
        if pred.shape != y.shape:
            raise ShapeMismatch(f"prediction {pred.shape} vs target {y.shape}")
        resid = pred - y
        loss = float(np.mean(resid ** 2))
        grads: dict[str, np.ndarray] = {}
        delta = 2.0 * resid / resid.size
        for l in range(self.n_layers - 1, -1, -1):
            grads[f"W{l}"] = hs[l].T @ delta
            grads[f"b{l}"] = delta.sum(axis=0)
            if l > 0:
                delta = (delta @ self._params[f"W{l}"].T) * (zs[l - 1] > 0)
        return loss, self._grads_to_flat(grads)


# ---------------------------------------------------------------------------
# sequence models
# ---------------------------------------------------------------------------

class _CausalConvStack:
    """Dilated causal conv1d layers with ReLU, parameters owned by a Model."""

    def __init__(self, model: Model, prefix: str, rng: np.random.Generator,
                 in_features: int, hidden: int, kernel: int, dilations: Sequence[int]):
        self.model = model
        self.prefix = prefix
        self.kernel = kernel
        self.dilations = tuple(dilations)
        c_in = in_features
        for l, _ in enumerate(self.dilations):
            model._register(
                f"{prefix}.W{l}",
                _uniform_init(rng, (kernel, c_in, hidden), kernel * c_in, kernel * hidden),
            )
            model._register(f"{prefix}.b{l}", np.zeros(hidden))
            c_in = hidden

    def forward(self, x: np.ndarray, cache: dict) -> np.ndarray:
        h = x
        cache["inputs"] = []
        cache["zs"] = []
        for l, d in enumerate(self.dilations):
            w = self.model._params[f"{self.prefix}.W{l}"]
            b = self.model._params[f"{self.prefix}.b{l}"]
            pad = (self.kernel - 1) * d
            hp = np.pad(h, ((0, 0), (pad, 0), (0, 0)))
            T = h.shape[1]
            z = np.full((h.shape[0], T, w.shape[2]), b, dtype=np.float64)
            for k in range(self.kernel):
                z += hp[:, k * d:k * d + T] @ w[k]
            cache["inputs"].append(hp)
            cache["zs"].append(z)
            h = np.maximum(z, 0.0)
        return h

    def backward(self, dh: np.ndarray, cache: dict, grads: dict) -> np.ndarray:
        for l in range(len(self.dilations) - 1, -1, -1):
            d = self.dilations[l]
            w = self.model._params[f"{self.prefix}.W{l}"]
            hp = cache["inputs"][l]
            z = cache["zs"][l]
            dz = dh * (z > 0)
            T = z.shape[1]
            dw = np.empty_like(w)
            dhp = np.zeros_like(hp)
            for k in range(self.kernel):
                seg = hp[:, k * d:k * d + T]
                dw[k] = np.einsum("bti,bto->io", seg, dz)
                dhp[:, k * d:k * d + T] += dz @ w[k].T
            grads[f"{self.prefix}.W{l}"] = dw
            grads[f"{self.prefix}.b{l}"] = dz.sum(axis=(0, 1))
            pad = (self.kernel - 1) * d
            dh = dhp[:, pad:]
        return dh

    def margins(self, cache: dict) -> list[float]:
        return [float(np.abs(z).min()) for z in cache["zs"]]


def _layer_norm_forward(x, g, b, cache_key, cache):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    cache[cache_key] = (xhat, inv)
    return g * xhat + b


def _layer_norm_backward(dy, g, cache_key, cache):
    xhat, inv = cache[cache_key]
    n = xhat.shape[-1]
    dxhat = dy * g
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dx = (inv / n) * (
        n * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )
    return dx, dg, db


class _EncoderBlock:
    """Pre-norm residual block: causal multi-head attention + feedforward."""

    def __init__(self, model: Model, prefix: str, rng: np.random.Generator,
                 dim: int, heads: int, ff_dim: int):
        if dim % heads:
            raise ShapeMismatch(f"model dim {dim} not divisible by {heads} heads")
        self.model = model
        self.prefix = prefix
        self.dim = dim
        self.heads = heads
        self.dh = dim // heads
        for name in ("Wq", "Wk", "Wv", "Wo"):
            model._register(f"{prefix}.{name}", _uniform_init(rng, (dim, dim), dim, dim))
            model._register(f"{prefix}.{name.replace('W', 'b')}", np.zeros(dim))
        model._register(f"{prefix}.ln1_g", np.ones(dim))
        model._register(f"{prefix}.ln1_b", np.zeros(dim))
        model._register(f"{prefix}.F1", _uniform_init(rng, (dim, ff_dim), dim, ff_dim))
        model._register(f"{prefix}.f1", np.zeros(ff_dim))
        model._register(f"{prefix}.F2", _uniform_init(rng, (ff_dim, dim), ff_dim, dim))
        model._register(f"{prefix}.f2", np.zeros(dim))
        model._register(f"{prefix}.ln2_g", np.ones(dim))
        model._register(f"{prefix}.ln2_b", np.zeros(dim))

    def _p(self, name):
        return self.model._params[f"{self.prefix}.{name}"]

    def forward(self, x: np.ndarray, cache: dict) -> np.ndarray:
        B, T, D = x.shape
        cache["x"] = x
        xn = _layer_norm_forward(x, self._p("ln1_g"), self._p("ln1_b"), "ln1", cache)
        cache["xn"] = xn
        q = xn @ self._p("Wq") + self._p("bq")
        k = xn @ self._p("Wk") + self._p("bk")
        v = xn @ self._p("Wv") + self._p("bv")

        def split(m):  # (B,T,D) -> (B,H,T,dh)
            return m.reshape(B, T, self.heads, self.dh).transpose(0, 2, 1, 3)

        qh, kh, vh = split(q), split(k), split(v)
        scores = qh @ kh.transpose(0, 1, 3, 2) / math.sqrt(self.dh)
        mask = np.triu(np.full((T, T), -np.inf), k=1)
        scores = scores + mask
        scores -= scores.max(axis=-1, keepdims=True)
        exps = np.exp(scores)
        attn = exps / exps.sum(axis=-1, keepdims=True)
        ctx = attn @ vh                                      # (B,H,T,dh)
        ctx_flat = ctx.transpose(0, 2, 1, 3).reshape(B, T, D)
        attn_out = ctx_flat @ self._p("Wo") + self._p("bo")
        cache.update(qh=qh, kh=kh, vh=vh, attn=attn, ctx_flat=ctx_flat)

        y = x + attn_out
        cache["y"] = y
        yn = _layer_norm_forward(y, self._p("ln2_g"), self._p("ln2_b"), "ln2", cache)
        cache["yn"] = yn
        z1 = yn @ self._p("F1") + self._p("f1")
        cache["z1"] = z1
        h1 = np.maximum(z1, 0.0)
        cache["h1"] = h1
        ff_out = h1 @ self._p("F2") + self._p("f2")
        return y + ff_out

    def backward(self, dout: np.ndarray, cache: dict, grads: dict) -> np.ndarray:
        B, T, D = cache["x"].shape
        pre = self.prefix

        # feedforward branch
        dff = dout
        grads[f"{pre}.F2"] = np.einsum("btf,btd->fd", cache["h1"], dff)
        grads[f"{pre}.f2"] = dff.sum(axis=(0, 1))
        dh1 = dff @ self._p("F2").T
        dz1 = dh1 * (cache["z1"] > 0)
        grads[f"{pre}.F1"] = np.einsum("btd,btf->df", cache["yn"], dz1)
        grads[f"{pre}.f1"] = dz1.sum(axis=(0, 1))
        dyn = dz1 @ self._p("F1").T
        dy_ln, dg2, db2 = _layer_norm_backward(dyn, self._p("ln2_g"), "ln2", cache)
        grads[f"{pre}.ln2_g"] = dg2
        grads[f"{pre}.ln2_b"] = db2
        dy = dout + dy_ln

        # attention branch
        dattn_out = dy
        grads[f"{pre}.Wo"] = np.einsum("btd,bte->de", cache["ctx_flat"], dattn_out)
        grads[f"{pre}.bo"] = dattn_out.sum(axis=(0, 1))
        dctx_flat = dattn_out @ self._p("Wo").T
        dctx = dctx_flat.reshape(B, T, self.heads, self.dh).transpose(0, 2, 1, 3)

        attn, qh, kh, vh = cache["attn"], cache["qh"], cache["kh"], cache["vh"]
        dattn = dctx @ vh.transpose(0, 1, 3, 2)
        dvh = attn.transpose(0, 1, 3, 2) @ dctx
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dscores /= math.sqrt(self.dh)
        dqh = dscores @ kh
        dkh = dscores.transpose(0, 1, 3, 2) @ qh

        def merge(m):  # (B,H,T,dh) -> (B,T,D)
            return m.transpose(0, 2, 1, 3).reshape(B, T, D)

        dq, dk, dv = merge(dqh), merge(dkh), merge(dvh)
        xn = cache["xn"]
        dxn = np.zeros_like(xn)
        for name, dm in (("Wq", dq), ("Wk", dk), ("Wv", dv)):
            grads[f"{pre}.{name}"] = np.einsum("btd,bte->de", xn, dm)
            grads[f"{pre}.{name.replace('W', 'b')}"] = dm.sum(axis=(0, 1))
            dxn += dm @ self._p(name).T
        dx_ln, dg1, db1 = _layer_norm_backward(dxn, self._p("ln1_g"), "ln1", cache)
        grads[f"{pre}.ln1_g"] = dg1
        grads[f"{pre}.ln1_b"] = db1
        return dy + dx_ln

    def margins(self, cache: dict) -> list[float]:
        return [float(np.abs(cache["z1"]).min())]


class TCNNet(Model):
    """Causal TCN with a per-step linear head (the sequence baseline)."""

    def __init__(self, in_features: int, hidden: int = 64, kernel: int = 3,
                 dilations: Sequence[int] = (1, 2), out_dim: int = 6, seed: int = 0):
        super().__init__()
        self.in_features = in_features
        self.hidden = hidden
        self.kernel = kernel
        self.dilations = tuple(dilations)
        self.out_dim = out_dim
        rng = np.random.default_rng(seed)
        self.stack = _CausalConvStack(self, "tcn", rng, in_features, hidden,
                                      kernel, self.dilations)
        self._register("head.W", _uniform_init(rng, (hidden, out_dim), hidden, out_dim))
        self._register("head.b", np.zeros(out_dim))

    def spec(self) -> dict:
        return {
            "kind": "tcn",
            "in_features": self.in_features,
            "hidden": self.hidden,
            "kernel": self.kernel,
            "dilations": list(self.dilations),
            "out_dim": self.out_dim,
        }

    @classmethod
    def from_spec(cls, spec: dict) -> "TCNNet":
        return cls(spec["in_features"], spec["hidden"], spec["kernel"],
                   spec["dilations"], spec["out_dim"])

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != self.in_features:
            raise ShapeMismatch(
                f"expected input (B, T, {self.in_features}), got {x.shape}"
            )
        return x

    def forward_seq(self, x: np.ndarray, cache: Optional[dict] = None) -> np.ndarray:
        x = self._check_input(x)
        cache = cache if cache is not None else {}
        h = self.stack.forward(x, cache)
        cache["h_final"] = h
        return h @ self._params["head.W"] + self._params["head.b"]

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward_seq(x)[:, -1, :]

    def relu_margin(self, x: np.ndarray) -> float:
        cache: dict = {}
        self.forward_seq(x, cache)
        return min(self.stack.margins(cache))

    def loss_and_grad(self, x, y):
        x = self._check_input(x)
        y = np.asarray(y, dtype=np.float64)
        cache: dict = {}
        out = self.forward_seq(x, cache)
        pred = out[:, -1, :]
        if pred.shape != y.shape:
            raise ShapeMismatch(f"prediction {pred.shape} vs target {y.shape}")
        resid = pred - y
        loss = float(np.mean(resid ** 2))
        dout = np.zeros_like(out)
        dout[:, -1, :] = 2.0 * resid / resid.size
        grads: dict[str, np.ndarray] = {}
        h = cache["h_final"]
        grads["head.W"] = np.einsum("bth,bto->ho", h, dout)
        grads["head.b"] = dout.sum(axis=(0, 1))
        dh = dout @ self._params["head.W"].T
        self.stack.backward(dh, cache, grads)
        return loss, self._grads_to_flat(grads)


class SeqNet(Model):
    """Dilated causal TCN front-end plus a causal pre-norm encoder stack.

    Positional information comes from the TCN front-end; no positional
    encoding is added.  Output at step t depends only on inputs <= t.
    """

    def __init__(self, in_features: int = 36, hidden: int = 64, kernel: int = 3,
                 tcn_dilations: Sequence[int] = (1, 2, 4), n_blocks: int = 2,
                 heads: int = 4, ff_dim: int = 128, out_dim: int = 6, seed: int = 0):
        super().__init__()
        self.in_features = in_features
        self.hidden = hidden
        self.kernel = kernel
        self.tcn_dilations = tuple(tcn_dilations)
        self.n_blocks = n_blocks
        self.heads = heads
        self.ff_dim = ff_dim
        self.out_dim = out_dim
        rng = np.random.default_rng(seed)
        self.stack = _CausalConvStack(self, "tcn", rng, in_features, hidden,
                                      kernel, self.tcn_dilations)
        self.blocks = [
            _EncoderBlock(self, f"enc{i}", rng, hidden, heads, ff_dim)
            for i in range(n_blocks)
        ]
        self._register("ln_f_g", np.ones(hidden))
        self._register("ln_f_b", np.zeros(hidden))
        self._register("head.W", _uniform_init(rng, (hidden, out_dim), hidden, out_dim))
        self._register("head.b", np.zeros(out_dim))

    def spec(self) -> dict:
        return {
            "kind": "seqnet",
            "in_features": self.in_features,
            "hidden": self.hidden,
            "kernel": self.kernel,
            "tcn_dilations": list(self.tcn_dilations),
            "n_blocks": self.n_blocks,
            "heads": self.heads,
            "ff_dim": self.ff_dim,
            "out_dim": self.out_dim,
        }

    @classmethod
    def from_spec(cls, spec: dict) -> "SeqNet":
        return cls(spec["in_features"], spec["hidden"], spec["kernel"],
                   spec["tcn_dilations"], spec["n_blocks"], spec["heads"],
                   spec["ff_dim"], spec["out_dim"])

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != self.in_features:
            raise ShapeMismatch(
                f"expected input (B, T, {self.in_features}), got {x.shape}"
            )
        return x

    def forward_seq(self, x: np.ndarray, cache: Optional[dict] = None) -> np.ndarray:
        x = self._check_input(x)
        cache = cache if cache is not None else {}
        h = self.stack.forward(x, cache)
        cache["blocks"] = []
        for block in self.blocks:
            bc: dict = {}
            h = block.forward(h, bc)
            cache["blocks"].append(bc)
        hn = _layer_norm_forward(h, self._params["ln_f_g"], self._params["ln_f_b"],
                                 "ln_f", cache)
        cache["hn_final"] = hn
        return hn @ self._params["head.W"] + self._params["head.b"]

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward_seq(x)[:, -1, :]

    def relu_margin(self, x: np.ndarray) -> float:
        cache: dict = {}
        self.forward_seq(x, cache)
        margins = self.stack.margins(cache)
        for block, bc in zip(self.blocks, cache["blocks"]):
            margins.extend(block.margins(bc))
        return min(margins)

    def loss_and_grad(self, x, y):
        x = self._check_input(x)
        y = np.asarray(y, dtype=np.float64)
        cache: dict = {}
        out = self.forward_seq(x, cache)
        pred = out[:, -1, :]
        if pred.shape != y.shape:
            raise ShapeMismatch(f"prediction {pred.shape} vs target {y.shape}")
        resid = pred - y
        loss = float(np.mean(resid ** 2))
        dout = np.zeros_like(out)
        dout[:, -1, :] = 2.0 * resid / resid.size

        grads: dict[str, np.ndarray] = {}
        hn = cache["hn_final"]
        grads["head.W"] = np.einsum("bth,bto->ho", hn, dout)
        grads["head.b"] = dout.sum(axis=(0, 1))
        dhn = dout @ self._params["head.W"].T
        dh, dgf, dbf = _layer_norm_backward(dhn, self._params["ln_f_g"], "ln_f", cache)
        grads["ln_f_g"] = dgf
        grads["ln_f_b"] = dbf
        for block, bc in zip(reversed(self.blocks), reversed(cache["blocks"])):
            dh = block.backward(dh, bc, grads)
        self.stack.backward(dh, cache, grads)
        return loss, self._grads_to_flat(grads)
