"""End-to-end model: siam encoding, pixel decoding, bilateral fusion, query
decoding, plus checkpoint persistence (one CTNS file per parameter and a JSON
manifest)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import tensor as T
from .bfm import BilateralFusion
from .config import RunConfig
from .encoder import EncoderConfig, SiamEncoder, forward_pyramid
from .params import ParamStore
from .pixel_decoder import PixelDecoder
from .query_decoder import PredictionSet, QueryDecoder, upsample_masks
from .tensor import Tensor
from .tensor_io import read_tensor, write_tensor


class Model:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.store = ParamStore(cfg.seed)
        self.encoder = SiamEncoder(
            EncoderConfig(stage_channels=cfg.stage_channels,
                          shared_weights=cfg.shared_weights),
            self.store, use_siam=cfg.use_siam)
        self.pixel_decoder = PixelDecoder(cfg.stage_channels, cfg.pixel_dim,
                                          self.store)
        self.bfm = BilateralFusion(cfg.pixel_dim, cfg.audio_dim, cfg.embed_dim,
                                   cfg.frames, self.store,
                                   per_frame=cfg.per_frame_attention)
        self.query_decoder = QueryDecoder(cfg.pixel_dim, cfg.embed_dim,
                                          cfg.num_queries, cfg.num_classes,
                                          cfg.decoder_rounds, self.store)

    @property
    def params(self) -> dict[str, Tensor]:
        return self.store.params

    def forward(self, frames: np.ndarray, maskiges: np.ndarray,
                audio: np.ndarray) -> tuple[list[PredictionSet], Tensor]:
        """frames/maskiges (B,T,3,H,W), audio (B,T,D) -> per-layer predictions
        and the fused P1 embedding."""
        b, t = frames.shape[:2]
        flat_frames = Tensor(frames.reshape(b * t, *frames.shape[2:]))
        flat_mask = Tensor(maskiges.reshape(b * t, *maskiges.shape[2:])) \
            if self.cfg.use_siam else None
        pyramid = forward_pyramid(self.encoder, flat_frames, flat_mask)
        p_levels = self.pixel_decoder.decode(pyramid)
        # restore the clip axis for the fusion stage
        p1 = T.reshape(p_levels[0], (b, t, *p_levels[0].shape[1:]))
        p1_pos, audio_pos = self.bfm.add_positional(p1, Tensor(audio))
        p1_fused, fa_fused = self.bfm.forward(p1_pos, audio_pos,
                                              mode=self.cfg.fusion_mode)
        coarse = [T.reshape(lvl, (b, t, *lvl.shape[1:]))
                  for lvl in (p_levels[3], p_levels[2], p_levels[1])]
        preds = self.query_decoder.forward(coarse, p1_fused, fa_fused,
                                           query_mode=self.cfg.query_mode)
        return preds, p1_fused

    def infer_clip(self, frames: np.ndarray, maskiges: np.ndarray,
                   audio: np.ndarray) -> np.ndarray:
        """Single clip (T,3,H,W)/(T,D) -> (T,H,W) label map."""
        from .metrics import semantic_inference
        with T.no_grad():
            preds, _ = self.forward(frames[None], maskiges[None], audio[None])
            final = preds[-1]
            up = upsample_masks(final.mask_logits, self.cfg.height, self.cfg.width)
        return semantic_inference(final.cls_logits.data[0], up.data[0],
                                  self.cfg.bg_threshold)

    # -- persistence -----------------------------------------------------------

    def save_checkpoint(self, directory, extra: dict | None = None):
        directory = Path(directory)
        (directory / "params").mkdir(parents=True, exist_ok=True)
        manifest = {"config": self.cfg.to_dict(), "params": {}}
        if extra:
            manifest.update(extra)
        for name, tensor in sorted(self.params.items()):
            fname = name.replace("/", "__") + ".ctns"
            write_tensor(directory / "params" / fname, tensor.data)
            manifest["params"][name] = f"params/{fname}"
        (directory / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load_checkpoint(cls, directory) -> "Model":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        cfg = RunConfig.from_dict(manifest["config"])
        model = cls(cfg)
        for name, rel in manifest["params"].items():
            if name not in model.params:
                raise ValueError(f"checkpoint parameter {name} not in model")
            data = read_tensor(directory / rel)
            if data.shape != model.params[name].shape:
                raise ValueError(f"checkpoint shape mismatch for {name}: "
                                 f"{data.shape} vs {model.params[name].shape}")
            model.params[name].data = data
        return model
