"""Random small inputs for every method loss, paired with the naive oracle.

Each case knows which arguments carry gradient and which are documented as
detached, so the same table drives the oracle, finite-difference,
stop-gradient and permutation tests.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from sslkit import losses as L

import oracles

B, D = 8, 4


@dataclass
class Case:
    name: str
    inputs: dict
    lib: Callable[[dict], torch.Tensor]
    oracle: Callable[[dict], float]
    grad: list
    detached: list = field(default_factory=list)
    rows: list = field(default_factory=list)  # inputs indexed by batch row

    def value(self, **override):
        return self.lib({**self.inputs, **override})

    def oracle_value(self):
        return self.oracle({k: v.numpy() for k, v in self.inputs.items()})


def _unit(t):
    return t / t.norm(dim=1, keepdim=True)


def _queue(bank):
    q = L.FeatureQueue(bank.shape[0], bank.shape[1]).double()
    q.enqueue(bank)
    return q


def make_case(name: str, seed: int = 0) -> Case:
    g = torch.Generator().manual_seed(seed)

    def r(*shape):
        return torch.rand(*shape, generator=g, dtype=torch.float64) * 4 - 2

    if name == "simclr":
        inp = {"z1": r(B, D), "z2": r(B, D)}
        return Case(
            name, inp,
            lambda a: L.nt_xent(a["z1"], a["z2"], 0.2),
            lambda a: oracles.nt_xent(a["z1"], a["z2"], 0.2),
            grad=["z1", "z2"], rows=["z1", "z2"],
        )
    if name == "mocov2plus":
        inp = {"q": r(B, D), "k": r(B, D), "bank": _unit(r(6, D))}
        return Case(
            name, inp,
            lambda a: L.infonce_queue(a["q"], a["k"], _queue(a["bank"]), 0.2),
            lambda a: oracles.infonce_queue(a["q"], a["k"], a["bank"], 0.2),
            grad=["q"], detached=["k", "bank"], rows=["q", "k"],
        )
    if name == "nnclr":
        inp = {"z1": r(B, D), "z2": r(B, D), "p1": r(B, D), "p2": r(B, D), "bank": _unit(r(6, D))}
        return Case(
            name, inp,
            lambda a: L.nnclr_loss(a["z1"], a["z2"], a["p1"], a["p2"], _queue(a["bank"]), 0.2),
            lambda a: oracles.nnclr(a["z1"], a["z2"], a["p1"], a["p2"], a["bank"], 0.2),
            grad=["p1", "p2"], detached=["z1", "z2", "bank"], rows=["z1", "z2", "p1", "p2"],
        )
    if name == "byol":
        inp = {"p1": r(B, D), "p2": r(B, D), "t1": r(B, D), "t2": r(B, D)}
        return Case(
            name, inp,
            lambda a: L.byol_loss(a["p1"], a["p2"], a["t1"], a["t2"]),
            lambda a: oracles.byol(a["p1"], a["p2"], a["t1"], a["t2"]),
            grad=["p1", "p2"], detached=["t1", "t2"], rows=["p1", "p2", "t1", "t2"],
        )
    if name == "simsiam":
        inp = {"p1": r(B, D), "p2": r(B, D), "z1": r(B, D), "z2": r(B, D)}
        return Case(
            name, inp,
            lambda a: L.simsiam_loss(a["p1"], a["p2"], a["z1"], a["z2"]),
            lambda a: oracles.simsiam(a["p1"], a["p2"], a["z1"], a["z2"]),
            grad=["p1", "p2"], detached=["z1", "z2"], rows=["p1", "p2", "z1", "z2"],
        )
    if name == "barlow":
        inp = {"z1": r(B, D), "z2": r(B, D)}
        return Case(
            name, inp,
            lambda a: L.barlow_loss(a["z1"], a["z2"], 5e-3),
            lambda a: oracles.barlow(a["z1"], a["z2"], 5e-3),
            grad=["z1", "z2"], rows=["z1", "z2"],
        )
    if name == "vicreg":
        inp = {"z1": r(B, D), "z2": r(B, D)}
        return Case(
            name, inp,
            lambda a: L.vicreg_loss(a["z1"], a["z2"]),
            lambda a: oracles.vicreg(a["z1"], a["z2"]),
            grad=["z1", "z2"], rows=["z1", "z2"],
        )
    if name == "swav":
        inp = {"z1": r(B, D), "z2": r(B, D), "c": _unit(r(5, D))}

        def codes(a):
            return [L.sinkhorn(_unit(z) @ a["c"].T, 0.05, 3) for z in (a["z1"], a["z2"])]

        frozen = codes(inp)
        return Case(
            name, inp,
            # the stop-gradient on q means the analytic gradient is that of the
            # loss with assignments held fixed; finite differences see the same
            # function only when codes are frozen at the base point
            lambda a: L.swav_loss(a["z1"], a["z2"], a["c"], 0.1, 0.05, 3, codes=frozen if a.get("frozen") else None),
            lambda a: oracles.swav(a["z1"], a["z2"], a["c"], 0.1, 0.05, 3),
            grad=["z1", "z2", "c"], rows=["z1", "z2"],
        )
    if name == "deepclusterv2":
        inp = {"z": r(B, D), "c": _unit(r(3, D)), "assigned": torch.randint(0, 3, (B,), generator=g)}
        return Case(
            name, inp,
            lambda a: L.deepclusterv2_loss(a["z"], a["c"], a["assigned"], 0.1),
            lambda a: oracles.deepclusterv2(a["z"], a["c"], a["assigned"], 0.1),
            grad=["z", "c"], rows=["z", "assigned"],
        )
    if name == "dino":
        inp = {"s1": r(B, D), "s2": r(B, D), "t1": r(B, D), "t2": r(B, D), "center": r(1, D) * 0.1}
        return Case(
            name, inp,
            lambda a: L.dino_loss([a["s1"], a["s2"]], [a["t1"], a["t2"]], a["center"], 0.1, 0.04),
            lambda a: oracles.dino([a["s1"], a["s2"]], [a["t1"], a["t2"]], a["center"][0], 0.1, 0.04),
            grad=["s1", "s2"], detached=["t1", "t2", "center"], rows=["s1", "s2", "t1", "t2"],
        )
    if name == "ressl":
        inp = {"zs": r(B, D), "zt": r(B, D), "bank": _unit(r(6, D))}
        return Case(
            name, inp,
            lambda a: L.ressl_loss(a["zs"], a["zt"], _queue(a["bank"]), 0.1, 0.04),
            lambda a: oracles.ressl(a["zs"], a["zt"], a["bank"], 0.1, 0.04),
            grad=["zs"], detached=["zt", "bank"], rows=["zs", "zt"],
        )
    if name == "wmse":
        inp = {"z1": r(B, D), "z2": r(B, D)}
        return Case(
            name, inp,
            lambda a: L.wmse_loss([a["z1"], a["z2"]], sub_batch=64),
            lambda a: oracles.wmse([a["z1"], a["z2"]], 64),
            grad=["z1", "z2"], rows=["z1", "z2"],
        )
    if name == "supcon":
        labels = torch.tensor([0, 0, 1, 1, 2, 2, 3, 3])[torch.randperm(B, generator=g)]
        inp = {"z": r(B, D), "labels": labels}
        return Case(
            name, inp,
            lambda a: L.supcon_loss(a["z"], a["labels"], 0.1),
            lambda a: oracles.supcon(a["z"], a["labels"], 0.1),
            grad=["z"], rows=["z", "labels"],
        )
    raise KeyError(name)


NAMES = [
    "simclr", "mocov2plus", "byol", "simsiam", "barlow", "vicreg", "nnclr",
    "swav", "deepclusterv2", "dino", "ressl", "wmse", "supcon",
]


def grad_error(case: Case, arg: str, h: float = 1e-5) -> float:
    from sslkit.ndiff import grad_check

    extra = {"frozen": True} if case.name == "swav" else {}
    return grad_check(lambda t: case.value(**{arg: t}, **extra), case.inputs[arg], h)


def permuted(case: Case, perm: torch.Tensor) -> dict:
    return {k: (v[perm] if k in case.rows else v) for k, v in case.inputs.items()}


def as_numpy(x):
    return np.asarray(x.detach().numpy() if isinstance(x, torch.Tensor) else x)
