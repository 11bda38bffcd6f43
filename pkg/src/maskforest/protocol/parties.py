"""State held by each party. Parties exchange information only through
envelopes on a :class:`~maskforest.protocol.messages.Network`."""
from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from .. import paillier
from ..isoforest import Forest
from ..linalg import MaskingMatrix
from .messages import SERVER_A, SERVER_P, client_id

XI_UPPER = 1 << 48


@dataclass
class ClientState:
    index: int
    x_local: np.ndarray
    rng: random.Random = field(repr=False)
    noise_rng: np.random.Generator = field(repr=False)
    labels: np.ndarray | None = None
    pk: paillier.PublicKey | None = None
    sk: paillier.SecretKey | None = field(default=None, repr=False)
    peer_pks: list = field(default_factory=list)
    xi_share: int | None = field(default=None, repr=False)
    xi_global: int | None = None
    n_total: int | None = None
    start: int | None = field(default=None, repr=False)
    z_set: list = field(default_factory=list)
    masking: MaskingMatrix | None = field(default=None, repr=False)
    r_noise: np.ndarray | None = field(default=None, repr=False)
    scores: np.ndarray | None = field(default=None, repr=False)
    flags: np.ndarray | None = None

    @property
    def party(self) -> str:
        return client_id(self.index)

    @property
    def n_local(self) -> int:
        return self.x_local.shape[0]

    @property
    def dims(self) -> int:
        return self.x_local.shape[1]

    def draw_xi_share(self) -> int:
        if self.xi_share is None:
            self.xi_share = self.rng.randrange(1, XI_UPPER)
        return self.xi_share

    def local_scores(self) -> np.ndarray:
        """Scores of this client's rows, in local row order."""
        return self.scores[np.asarray(self.z_set, dtype=np.int64)]

    def cleaned(self):
        keep = ~self.flags
        labels = None if self.labels is None else self.labels[keep]
        return self.x_local[keep], labels


@dataclass
class ServerAState:
    rng: random.Random = field(repr=False)
    peer_pks: list = field(default_factory=list)
    collected_xi: list = field(default_factory=list)  # [i][j] = [xi^i] under pk^j
    collected_counts: list = field(default_factory=list)  # [i][j] = [N^i] under pk^j
    n_total: int | None = None
    h_offset: int | None = None
    r_sum: np.ndarray | None = field(default=None, repr=False)

    party = SERVER_A


@dataclass
class ServerPState:
    peer_pks: list = field(default_factory=list)
    n_total: int | None = None
    w_sum: np.ndarray | None = field(default=None, repr=False)
    r_sum: np.ndarray | None = field(default=None, repr=False)
    x_masked: np.ndarray | None = field(default=None, repr=False)
    forest: Forest | None = field(default=None, repr=False)
    scores: np.ndarray | None = field(default=None, repr=False)

    party = SERVER_P
