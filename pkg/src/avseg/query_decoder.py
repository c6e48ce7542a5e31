"""Transformer decoder over object queries against the coarse pixel levels.

Queries (learnable, audio-derived, or their sum) cycle through levels
P4 -> P3 -> P2 for L rounds.  Every layer applies masked cross-attention,
self-attention and a feed-forward block (pre-norm, residual), then emits
class logits and mask logits; mask logits are query/pixel dot products
against the fused P1 embedding.  Cross-attention of a layer is restricted to
pixels the previous layer predicted as foreground (sigmoid >= 0.5); a query
whose mask empties out falls back to unmasked attention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ConfigurationError
from .params import ParamStore
from .tensor import Tensor


@dataclass
class PredictionSet:
    """Per-layer outputs: class logits (B,T,Nq,Kc+1), mask logits (B,T,Nq,H1,W1)."""
    cls_logits: Tensor
    mask_logits: Tensor


def build_queries(fa_fused: Tensor, learnable: Tensor, expand: Tensor,
                  mode: str, replicate: int | None = None) -> Tensor:
    """(B,T,d) fused audio -> (B,T,Nq,d) effective per-frame queries."""
    n_q, d = learnable.shape
    if fa_fused.shape[-1] != d:
        raise ConfigurationError(
            f"audio width {fa_fused.shape[-1]} does not match query width {d}")
    audio_q = T.matmul(fa_fused, expand)                     # (B,T,d)
    b, t, _ = audio_q.shape
    audio_q = T.reshape(audio_q, (b, t, 1, d))
    if mode == "add":
        return T.add(audio_q, learnable)
    if mode == "all":
        if replicate is not None and replicate != n_q:
            raise ConfigurationError(
                f"mode=all replicates {n_q} queries, {replicate} requested")
        return T.broadcast_to(audio_q, (b, t, n_q, d))
    raise ConfigurationError(f"unknown query mode {mode!r}")


class QueryDecoder:
    def __init__(self, pixel_dim: int, embed_dim: int, num_queries: int,
                 num_classes: int, rounds: int, store: ParamStore):
        self.d = embed_dim
        self.n_q = num_queries
        self.k_c = num_classes
        self.rounds = rounds
        self.num_layers = 3 * rounds
        d = embed_dim
        store.embedding("qdec/queries", (num_queries, d), scale=1.0 / np.sqrt(d))
        store.linear("qdec/expand", d, d)
        for lev in range(3):
            store.linear(f"qdec/levproj{lev}", pixel_dim, d)
            store.zeros(f"qdec/levproj{lev}_b", (d,))
        for layer in range(self.num_layers):
            for block in ("cross", "self"):
                for w in ("wq", "wk", "wv", "wo"):
                    store.linear(f"qdec/l{layer}/{block}_{w}", d, d)
            for ln in ("ln1", "ln2", "ln3"):
                store.ones(f"qdec/l{layer}/{ln}_g", (d,))
                store.zeros(f"qdec/l{layer}/{ln}_b", (d,))
            store.linear(f"qdec/l{layer}/ffn_w1", d, 2 * d)
            store.zeros(f"qdec/l{layer}/ffn_b1", (2 * d,))
            store.linear(f"qdec/l{layer}/ffn_w2", 2 * d, d)
            store.zeros(f"qdec/l{layer}/ffn_b2", (d,))
        store.ones("qdec/final_g", (d,))
        store.zeros("qdec/final_b", (d,))
        store.linear("qdec/cls_w", d, num_classes + 1)
        store.zeros("qdec/cls_b", (num_classes + 1,))
        for i in range(3):
            store.linear(f"qdec/mask_w{i}", d, d)
            store.zeros(f"qdec/mask_b{i}", (d,))
        self.store = store

    # -- building blocks -----------------------------------------------------

    def _ln(self, x, layer, name):
        p = self.store.params
        return T.layer_norm(x, p[f"qdec/l{layer}/{name}_g"], p[f"qdec/l{layer}/{name}_b"])

    def _attend(self, q, k, v, bias=None):
        s = T.mul(T.matmul(q, T.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(self.d))
        if bias is not None:
            s = T.add(s, bias)
        return T.matmul(T.softmax(s, axis=-1), v)

    def _mask_head(self, y):
        p = self.store.params
        h = T.relu(T.add(T.matmul(y, p["qdec/mask_w0"]), p["qdec/mask_b0"]))
        h = T.relu(T.add(T.matmul(h, p["qdec/mask_w1"]), p["qdec/mask_b1"]))
        return T.add(T.matmul(h, p["qdec/mask_w2"]), p["qdec/mask_b2"])

    @staticmethod
    def _attention_bias(prev_mask: Tensor, level_hw: tuple[int, int]) -> np.ndarray:
        """-1e9 where the previous layer's pooled mask probability is < 0.5.

        Operates on detached data: the bias is a hard gate, not a gradient
        path.  All-masked rows fall back to unmasked attention so no softmax
        row is ever entirely suppressed.
        """
        bt_nq = prev_mask.shape[:-2]
        h1, w1 = prev_mask.shape[-2:]
        h, w = level_hw
        fh, fw = h1 // h, w1 // w
        probs = 1.0 / (1.0 + np.exp(-prev_mask.data))
        pooled = probs.reshape(*bt_nq, h, fh, w, fw).mean(axis=(-3, -1))
        bias = np.where(pooled.reshape(*bt_nq, h * w) < 0.5, -1e9, 0.0)
        all_masked = (bias <= -1e9).all(axis=-1)
        bias[all_masked] = 0.0
        assert bias.max(axis=-1).min() == 0.0  # every row keeps a live key
        return bias

    # -- forward ---------------------------------------------------------------

    def forward(self, coarse_levels: list[Tensor], p1_fused: Tensor,
                fa_fused: Tensor, query_mode: str = "add") -> list[PredictionSet]:
        """coarse_levels = [P4, P3, P2] with pixel-decoder width; p1_fused is
        the (B,T,d,H1,W1) BFM output.  Returns one PredictionSet per layer."""
        p = self.store.params
        b, t, d, h1, w1 = p1_fused.shape
        bt = b * t
        tokens = []
        for lev, feat in enumerate(coarse_levels):
            c, h, w = feat.shape[-3:]
            flat = T.reshape(T.transpose(T.reshape(feat, (bt, c, h * w)), (0, 2, 1)),
                             (bt, h * w, c))
            proj = T.add(T.matmul(flat, p[f"qdec/levproj{lev}"]),
                         p[f"qdec/levproj{lev}_b"])
            tokens.append((proj, (h, w)))

        p1_flat = T.reshape(p1_fused, (bt, d, h1 * w1))
        x = T.reshape(build_queries(fa_fused, p["qdec/queries"], p["qdec/expand"],
                                    query_mode, replicate=self.n_q),
                      (bt, self.n_q, d))

        outputs = []
        prev_mask = None
        for layer in range(self.num_layers):
            keys, level_hw = tokens[layer % 3]
            bias = None
            if prev_mask is not None:
                bias = self._attention_bias(prev_mask, level_hw)
            qn = self._ln(x, layer, "ln1")
            cross = self._attend(T.matmul(qn, p[f"qdec/l{layer}/cross_wq"]),
                                 T.matmul(keys, p[f"qdec/l{layer}/cross_wk"]),
                                 T.matmul(keys, p[f"qdec/l{layer}/cross_wv"]),
                                 bias)
            x = T.add(x, T.matmul(cross, p[f"qdec/l{layer}/cross_wo"]))
            qn = self._ln(x, layer, "ln2")
            self_att = self._attend(T.matmul(qn, p[f"qdec/l{layer}/self_wq"]),
                                    T.matmul(qn, p[f"qdec/l{layer}/self_wk"]),
                                    T.matmul(qn, p[f"qdec/l{layer}/self_wv"]))
            x = T.add(x, T.matmul(self_att, p[f"qdec/l{layer}/self_wo"]))
            qn = self._ln(x, layer, "ln3")
            h = T.relu(T.add(T.matmul(qn, p[f"qdec/l{layer}/ffn_w1"]),
                             p[f"qdec/l{layer}/ffn_b1"]))
            x = T.add(x, T.add(T.matmul(h, p[f"qdec/l{layer}/ffn_w2"]),
                               p[f"qdec/l{layer}/ffn_b2"]))

            y = T.layer_norm(x, p["qdec/final_g"], p["qdec/final_b"])
            cls = T.add(T.matmul(y, p["qdec/cls_w"]), p["qdec/cls_b"])
            mask = T.matmul(self._mask_head(y), p1_flat)     # (BT, Nq, H1*W1)
            prev_mask = T.reshape(mask, (bt, self.n_q, h1, w1))
            outputs.append(PredictionSet(
                cls_logits=T.reshape(cls, (b, t, self.n_q, self.k_c + 1)),
                mask_logits=T.reshape(mask, (b, t, self.n_q, h1, w1))))
        return outputs


def upsample_masks(mask_logits: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear logit upsampling (align_corners=False) to full resolution."""
    return T.upsample_bilinear(mask_logits, out_h, out_w)
