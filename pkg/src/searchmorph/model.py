"""The full registration network: encode, correlate, iterate."""
import numpy as np

from .correlation import build_pyramid, compute_cost_volume, search_channels
from .iterator import iterate
from .nn import ConvGRU, Encoder, FlowHead, Module, encode

CONTEXT_DIM = 32


class SearchMorph(Module):
    def __init__(self, cfg, rng=None):
        if rng is None:
            rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.encoder = Encoder(rng=rng, context_dim=CONTEXT_DIM)
        in_dim = search_channels(cfg.radius) + CONTEXT_DIM + (2 if cfg.field_input else 0)
        self.gru = ConvGRU(in_dim, cfg.hidden_dim, rng=rng)
        self.head = FlowHead(cfg.hidden_dim, rng=rng, zero_init=cfg.flow_head_init == "zero")

    def correlate(self, fm):
        if self.cfg.query == "fixed":
            cv = compute_cost_volume(fm.hF, fm.hM, self.cfg.normalize_cost)
        else:
            cv = compute_cost_volume(fm.hM, fm.hF, self.cfg.normalize_cost)
        return build_pyramid(cv)

    def __call__(self, moving, fixed, hook=None):
        """Predict the full-resolution field for (N, 1, H, W) image batches.

        Returns ``(field, steps)`` as :func:`iterate` does.
        """
        fm = encode(moving, fixed, self.encoder)
        pyr = self.correlate(fm)
        return iterate(fm, pyr, self.cfg, self.gru, self.head, hook=hook)
