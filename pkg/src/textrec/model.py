"""Full recognizer: rectify, encode, decode, with one flat parameter
namespace used by the optimizer and the checkpoint format."""

import numpy as np

from .config import ModelConfig
from .decoder import Decoder
from .encoder import Encoder
from .errors import ConfigError
from .rectify import Rectifier
from .tensor import Tensor


class Model:
    def __init__(self, cfg: ModelConfig, seed=0, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.rectifier = Rectifier(
            rng, cfg.in_h, cfg.in_w, in_c=cfg.in_c, k=cfg.k_points,
            margin=cfg.point_margin, loc_channels=cfg.loc_channels,
            loc_fc=cfg.loc_fc, dtype=dtype,
        )
        self.encoder = Encoder(rng, cfg, dtype=dtype)
        self.decoder = Decoder(rng, cfg, dtype=dtype)

    def params(self):
        out = [("rect." + n, t) for n, t in self.rectifier.params()]
        out += [("enc." + n, t) for n, t in self.encoder.params()]
        out += [("dec." + n, t) for n, t in self.decoder.params()]
        return out

    def param_dict(self):
        d = {}
        for name, t in self.params():
            if name in d:
                raise ConfigError(f"duplicate parameter name {name!r}")
            d[name] = t
        return d

    def encode_image(self, img, mode="eval", rng=None):
        if not isinstance(img, Tensor):
            img = Tensor(np.asarray(img, dtype=self.dtype), dtype=self.dtype)
        rectified, points = self.rectifier(img)
        values, holistic = self.encoder(rectified, mode=mode, rng=rng)
        return values, holistic, rectified, points

    def forward_train(self, img, targets, rng):
        """Teacher-forced class scores [B, L, n_classes] in train mode."""
        values, holistic, _, _ = self.encode_image(img, mode="train", rng=rng)
        return self.decoder.teacher_forced_logits(values, holistic, targets,
                                                 mode="train", rng=rng)

    def recognize(self, img, max_steps=None):
        """Greedy decode in eval mode."""
        values, holistic, _, _ = self.encode_image(img, mode="eval")
        return self.decoder.greedy_decode(values, holistic, max_steps=max_steps)
