"""Ready-made problem bundles: chain + energy + input domain."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .energy import EnergyModel, IkEnergy, KtoEnergy
from .kinematics import ChainSpec
from .policy import init_policy
from .sampling import SampleDomain


@dataclass
class Problem:
    name: str
    chain: ChainSpec
    energy: EnergyModel
    domain: SampleDomain

    @property
    def input_dim(self) -> int:
        return self.energy.input_dim

    @property
    def action_dim(self) -> int:
        return self.energy.action_dim

    def input_normalisation(self):
        lo, hi = self.domain.bounds
        return (lo + hi) / 2, (hi - lo) / 2

    def new_policy(self, rng, hidden=(512, 512), encoding="sincos"):
        offset, scale = self.input_normalisation()
        return init_policy(self.input_dim, self.action_dim, hidden, encoding, rng,
                           input_offset=offset, input_scale=scale)


def planar_ik(n_links: int = 2, reach: float = 0.3, disk_radius: float = 0.25,
              link_lengths=None, **weights) -> Problem:
    chain = (ChainSpec(tuple(link_lengths)) if link_lengths is not None
             else ChainSpec.uniform(n_links, reach))
    return Problem(f"ik{chain.n_links}", chain, IkEnergy(chain, **weights),
                   SampleDomain.disk((0.0, 0.0), disk_radius))


def planar_kto(n_links: int = 2, reach: float = 0.3, ref_range: float = np.pi / 2,
               target_half_width: float = 0.2, link_lengths=None, **settings) -> Problem:
    """KTO with inputs ``[a_ref, target]`` drawn from a box."""
    chain = (ChainSpec(tuple(link_lengths)) if link_lengths is not None
             else ChainSpec.uniform(n_links, reach))
    n = chain.n_links
    lower = [-ref_range] * n + [-target_half_width] * 2
    upper = [ref_range] * n + [target_half_width] * 2
    return Problem(f"kto{n}", chain, KtoEnergy(chain, **settings),
                   SampleDomain.box(lower, upper))
