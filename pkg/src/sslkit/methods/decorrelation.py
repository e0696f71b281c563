"""Methods that regularize the embedding statistics instead of using negatives."""

from ..losses import barlow_loss, vicreg_terms, wmse_loss
from .base import Method


class BarlowTwins(Method):
    def compute_loss(self, batch):
        h1, z1 = self.encoder(batch.views[0])
        _, z2 = self.encoder(batch.views[1])
        return barlow_loss(z1, z2, self.cfg.barlow_lambda), {}, h1


class VICReg(Method):
    def compute_loss(self, batch):
        h1, z1 = self.encoder(batch.views[0])
        _, z2 = self.encoder(batch.views[1])
        terms = vicreg_terms(z1, z2)
        cfg = self.cfg
        loss = cfg.vicreg_sim * terms["sim"] + cfg.vicreg_var * terms["var"] + cfg.vicreg_cov * terms["cov"]
        return loss, {k: float(v.detach()) for k, v in terms.items()}, h1


class WMSE(Method):
    def compute_loss(self, batch):
        h1, z1 = self.encoder(batch.views[0])
        _, z2 = self.encoder(batch.views[1])
        return wmse_loss([z1, z2], self.cfg.wmse_sub_batch), {}, h1
