"""The protocol steps, executed in order by :func:`run_full_round`.

Every step reads its inputs from the network and writes its outputs to it;
nothing is passed between parties behind the transport's back.
"""
from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field

import numpy as np

from .. import isoforest, paillier
from ..detrng import derive_seed, permutation
from ..linalg import DEFAULT_NOISE_SIGMA, ShapeError, as_matrix, build_masking_matrix, noise_matrix
from .messages import (
    SERVER_A,
    SERVER_P,
    Network,
    ProtocolAbort,
    Transcript,
    decode_ints,
    decode_json,
    decode_matrix,
    encode_ints,
    encode_json,
    encode_matrix,
)
from .parties import ClientState, ServerAState, ServerPState

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OutlierPolicy:
    """Consortium rule for turning scores into flags.

    ``contamination`` flags the top ``ceil(f * N)`` scores globally;
    ``threshold`` flags every score strictly above ``tau``.
    """

    contamination: float | None = None
    threshold: float | None = None

    def __post_init__(self):
        if (self.contamination is None) == (self.threshold is None):
            raise ValueError("set exactly one of contamination or threshold")
        if self.contamination is not None and not 0 < self.contamination < 1:
            raise ValueError(f"contamination must lie in (0, 1), got {self.contamination}")
        if self.threshold is not None and not 0 < self.threshold <= 1:
            raise ValueError(f"threshold must lie in (0, 1], got {self.threshold}")

    def to_dict(self):
        if self.contamination is not None:
            return {"contamination": self.contamination}
        return {"threshold": self.threshold}

    @classmethod
    def from_dict(cls, d):
        return cls(contamination=d.get("contamination"), threshold=d.get("threshold"))

    def flag_global(self, scores: np.ndarray) -> np.ndarray:
        scores = np.asarray(scores, dtype=np.float64)
        if self.threshold is not None:
            return scores > self.threshold
        k = math.ceil(self.contamination * len(scores))
        # ties broken towards the lower row index
        order = np.lexsort((np.arange(len(scores)), -scores))
        flags = np.zeros(len(scores), dtype=bool)
        flags[order[:k]] = True
        return flags


def _require_pair(clients, round_name):
    if len(clients) < 2:
        raise ProtocolAbort(round_name, f"at least 2 clients are required (m >= 2), got m = {len(clients)}")


def distribute_keys(net: Network, clients, server_a: ServerAState, server_p: ServerPState):
    """Clients publish public keys via A, which relays the full list to everyone."""
    for c in clients:
        net.send(c.party, SERVER_A, "pk_broadcast", encode_ints([c.pk.n]))
    pks = []
    for c in clients:
        env = net.receive(SERVER_A, "pk_broadcast", sender=c.party, round_name="distribute_keys")
        pks.append(paillier.PublicKey(decode_ints(env.payload)[0]))
    server_a.peer_pks = pks
    payload = encode_ints(pk.n for pk in pks)
    for c in clients:
        net.send(SERVER_A, c.party, "pk_broadcast", payload)
    net.send(SERVER_A, SERVER_P, "pk_broadcast", payload)
    for c in clients:
        env = net.receive(c.party, "pk_broadcast", round_name="distribute_keys")
        c.peer_pks = [paillier.PublicKey(n) for n in decode_ints(env.payload)]
    env = net.receive(SERVER_P, "pk_broadcast", round_name="distribute_keys")
    server_p.peer_pks = [paillier.PublicKey(n) for n in decode_ints(env.payload)]


def _collect_encrypted(net, server_a, clients, kind, round_name):
    m = len(server_a.peer_pks)
    table = []
    for c in clients:
        env = net.receive(SERVER_A, kind, sender=c.party, round_name=round_name)
        cts = [paillier.Ciphertext(v) for v in decode_ints(env.payload)]
        if len(cts) != m:
            raise ProtocolAbort(round_name, f"{c.party} sent {len(cts)} ciphertexts, expected {m}")
        table.append(cts)
    if len(table) != m:
        raise ProtocolAbort(round_name, f"got {len(table)} contributions, expected {m}")
    return table


def agree_seed(net: Network, clients, server_a: ServerAState) -> None:
    """Joint seed = sum of private shares, aggregated under each client's key by A."""
    round_name = "agree_seed"
    _require_pair(clients, round_name)
    for c in clients:
        xi = c.draw_xi_share()
        cts = [paillier.enc(xi, pk, c.rng) for pk in c.peer_pks]
        net.send(c.party, SERVER_A, "enc_xi", encode_ints(ct.value for ct in cts))
    server_a.collected_xi = _collect_encrypted(net, server_a, clients, "enc_xi", round_name)
    for i, c in enumerate(clients):
        pk = server_a.peer_pks[i]
        total = paillier.hom_sum((row[i] for row in server_a.collected_xi), pk)
        net.send(SERVER_A, c.party, "enc_Xi_sum", encode_ints([total.value]))
    for c in clients:
        env = net.receive(c.party, "enc_Xi_sum", round_name=round_name)
        c.xi_global = _decrypt(c, decode_ints(env.payload)[0], round_name)


def _decrypt(client: ClientState, value: int, round_name: str) -> int:
    try:
        return paillier.dec(paillier.Ciphertext(value), client.sk, client.pk)
    except paillier.InvalidCiphertext as exc:
        raise ProtocolAbort(round_name, f"{client.party} could not decrypt: {exc}") from None


def _send_counts(net, clients):
    for c in clients:
        cts = [paillier.enc(c.n_local, pk, c.rng) for pk in c.peer_pks]
        net.send(c.party, SERVER_A, "enc_count", encode_ints(ct.value for ct in cts))


def secure_total_count(net: Network, clients, server_a: ServerAState, server_p: ServerPState) -> int:
    """Total row count, decrypted by client 0 (in A's order) and relayed by A."""
    round_name = "secure_total_count"
    _require_pair(clients, round_name)
    _send_counts(net, clients)
    table = _collect_encrypted(net, server_a, clients, "enc_count", round_name)
    designated = clients[0]
    pk0 = server_a.peer_pks[0]
    net.send(SERVER_A, designated.party, "enc_count",
             encode_ints([paillier.hom_sum((row[0] for row in table), pk0).value]))
    env = net.receive(designated.party, "enc_count", sender=SERVER_A, round_name=round_name)
    n_total = _decrypt(designated, decode_ints(env.payload)[0], round_name)
    designated.n_total = n_total
    net.send(designated.party, SERVER_A, "count_result", encode_ints([n_total]))
    env = net.receive(SERVER_A, "count_result", sender=designated.party, round_name=round_name)
    server_a.n_total = decode_ints(env.payload)[0]
    net.send(SERVER_A, SERVER_P, "count_result", env.payload)
    for c in clients[1:]:
        net.send(SERVER_A, c.party, "count_result", env.payload)
    server_p.n_total = decode_ints(net.receive(SERVER_P, "count_result", round_name=round_name).payload)[0]
    for c in clients[1:]:
        c.n_total = decode_ints(net.receive(c.party, "count_result", round_name=round_name).payload)[0]
    return n_total


def assign_indices(net: Network, clients, server_a: ServerAState, h: int | None = None) -> None:
    """Give each client a disjoint set of global row indices.

    A adds an offset ``H = sum_{j<h} xi^j`` (``h`` in 1..m-1) to running
    homomorphic sums of the sample sizes; each client decrypts its starting
    point and reads a window of the seeded permutation of ``range(N)``.
    """
    round_name = "assign_indices"
    _require_pair(clients, round_name)
    m = len(clients)
    _send_counts(net, clients)
    server_a.collected_counts = _collect_encrypted(net, server_a, clients, "enc_count", round_name)
    if not server_a.collected_xi:
        raise ProtocolAbort(round_name, "auxiliary server holds no seed shares; run agree_seed first")
    if h is None:
        h = server_a.rng.randrange(1, m)
    if not 1 <= h <= m - 1:
        raise ValueError(f"offset count h must lie in [1, {m - 1}], got {h}")
    server_a.h_offset = h
    for i, c in enumerate(clients):
        pk = server_a.peer_pks[i]
        start = paillier.hom_sum((server_a.collected_xi[j][i] for j in range(h)), pk)
        for j in range(i):
            start = paillier.hom_add(start, server_a.collected_counts[j][i], pk)
        net.send(SERVER_A, c.party, "enc_offset_start", encode_ints([start.value]))
    for c in clients:
        env = net.receive(c.party, "enc_offset_start", round_name=round_name)
        c.start = _decrypt(c, decode_ints(env.payload)[0], round_name)
        n = c.n_total
        if not n:
            raise ProtocolAbort(round_name, "total sample size is zero")
        z = permutation(n, c.xi_global)
        c.z_set = [z[(c.start + j) % n] for j in range(c.n_local)]


def prepare_matrices(clients, t_param: float, sigma: float = DEFAULT_NOISE_SIGMA) -> None:
    for c in clients:
        c.masking = build_masking_matrix(c.dims, c.xi_global, t_param)
        c.r_noise = noise_matrix(c.n_total, c.dims, sigma, rng=c.noise_rng)


def client_mask_and_send(net: Network, client: ClientState) -> np.ndarray:
    """Send ``R^i`` to A and ``W^i`` (noise plus masked rows at ``Z~^i``) to P."""
    r = client.r_noise
    if r.shape != (client.n_total, client.dims):
        raise ShapeError(f"noise matrix has shape {r.shape}, expected {(client.n_total, client.dims)}")
    w = r.copy()
    if client.n_local:
        w[np.asarray(client.z_set, dtype=np.int64)] += client.masking.apply(client.x_local)
    net.send(client.party, SERVER_A, "noise_matrix", encode_matrix(r))
    net.send(client.party, SERVER_P, "masked_matrix", encode_matrix(w))
    return w


def aggregate_and_denoise(net: Network, server_a: ServerAState, server_p: ServerPState) -> np.ndarray:
    round_name = "aggregate_and_denoise"
    m = len(server_a.peer_pks)
    r_sum = None
    for _ in range(m):
        r = decode_matrix(net.receive(SERVER_A, "noise_matrix", round_name=round_name).payload)
        r_sum = r if r_sum is None else r_sum + r
    server_a.r_sum = r_sum
    net.send(SERVER_A, SERVER_P, "noise_sum", encode_matrix(r_sum))

    w_sum = None
    for _ in range(len(server_p.peer_pks)):
        w = decode_matrix(net.receive(SERVER_P, "masked_matrix", round_name=round_name).payload)
        if w_sum is not None and w.shape != w_sum.shape:
            raise ProtocolAbort(round_name, "masked matrices disagree in shape")
        w_sum = w if w_sum is None else w_sum + w
    server_p.w_sum = w_sum
    server_p.r_sum = decode_matrix(net.receive(SERVER_P, "noise_sum", round_name=round_name).payload)
    if server_p.r_sum.shape != w_sum.shape:
        raise ProtocolAbort(round_name, "noise sum and masked sum disagree in shape")
    server_p.x_masked = w_sum - server_p.r_sum
    return server_p.x_masked


def detect_and_report(net: Network, server_p: ServerPState, clients, policy: OutlierPolicy,
                      algo: str = "if", t: int = isoforest.DEFAULT_TREES,
                      psi: int = isoforest.DEFAULT_PSI, seed: int = 0):
    """P scores the masked rows and broadcasts the whole score vector.

    Returns the per-client boolean flag arrays, in local row order.
    """
    round_name = "detect_and_report"
    server_p.forest = isoforest.fit(server_p.x_masked, algo=algo, t=t, psi=psi, seed=seed)
    server_p.scores = isoforest.score_all(server_p.forest, server_p.x_masked)
    payload = encode_matrix(server_p.scores)
    policy_payload = encode_json(policy.to_dict())
    for c in clients:
        net.send(SERVER_P, c.party, "score_vector", payload)
        net.send(SERVER_P, c.party, "outlier_policy", policy_payload)
    flags = []
    for c in clients:
        c.scores = decode_matrix(net.receive(c.party, "score_vector", round_name=round_name).payload)[:, 0]
        agreed = OutlierPolicy.from_dict(
            decode_json(net.receive(c.party, "outlier_policy", round_name=round_name).payload))
        global_flags = agreed.flag_global(c.scores)
        c.flags = global_flags[np.asarray(c.z_set, dtype=np.int64)] if c.n_local else np.zeros(0, dtype=bool)
        flags.append(c.flags)
    return flags


# -- whole round ------------------------------------------------------------

@dataclass
class RoundConfig:
    data: list
    labels: list | None = None
    algo: str = "if"
    t: int = isoforest.DEFAULT_TREES
    psi: int = isoforest.DEFAULT_PSI
    t_param: float = 2.0
    keysize: int = paillier.DEFAULT_KEYSIZE
    policy: OutlierPolicy = field(default_factory=lambda: OutlierPolicy(contamination=0.1))
    seed: int | None = None
    sigma: float = DEFAULT_NOISE_SIGMA
    forest_seed: int | None = None

    def resolved_forest_seed(self) -> int:
        if self.forest_seed is not None:
            return self.forest_seed
        if self.seed is None:
            return random.SystemRandom().getrandbits(64)
        return derive_seed(self.seed, "forest")


@dataclass
class RoundResult:
    cleaned: list
    transcript: Transcript
    scores: np.ndarray
    flags: list
    clients: list
    server_a: ServerAState
    server_p: ServerPState


def _private_rng(seed, *labels) -> random.Random:
    if seed is None:
        return random.SystemRandom()
    return random.Random(derive_seed(seed, *labels))


def _noise_rng(seed, i) -> np.random.Generator:
    if seed is None:
        return np.random.default_rng()
    return np.random.default_rng(derive_seed(seed, "noise", i))


def make_parties(config: RoundConfig):
    """Clients and servers with private randomness derived from ``config.seed``.

    With ``seed=None`` every party draws from OS entropy.
    """
    data = [as_matrix(x) for x in config.data]
    if len({x.shape[1] for x in data}) > 1:
        raise ShapeError("all clients must hold the same number of columns")
    labels = config.labels or [None] * len(data)
    clients = [
        ClientState(index=i, x_local=x,
                    labels=None if lab is None else np.asarray(lab),
                    rng=_private_rng(config.seed, "client", i),
                    noise_rng=_noise_rng(config.seed, i))
        for i, (x, lab) in enumerate(zip(data, labels))
    ]
    server_a = ServerAState(rng=_private_rng(config.seed, "server:A"))
    server_p = ServerPState()
    return clients, server_a, server_p


def run_full_round(config: RoundConfig) -> RoundResult:
    _require_pair(config.data, "run_full_round")
    clients, server_a, server_p = make_parties(config)
    net = Network()

    log.info("generating %d-bit Paillier keys for %d clients", config.keysize, len(clients))
    for c in clients:
        c.pk, c.sk = paillier.gen(config.keysize, c.rng)
    distribute_keys(net, clients, server_a, server_p)
    agree_seed(net, clients, server_a)
    secure_total_count(net, clients, server_a, server_p)
    assign_indices(net, clients, server_a)
    log.info("masking %d rows with T=%g", server_a.n_total, config.t_param)
    prepare_matrices(clients, config.t_param, config.sigma)
    for c in clients:
        client_mask_and_send(net, c)
    aggregate_and_denoise(net, server_a, server_p)
    flags = detect_and_report(net, server_p, clients, config.policy, algo=config.algo,
                              t=config.t, psi=config.psi, seed=config.resolved_forest_seed())
    log.info("flagged %d of %d rows", int(sum(f.sum() for f in flags)), server_p.n_total)
    return RoundResult(
        cleaned=[c.cleaned() for c in clients],
        transcript=net.transcript,
        scores=server_p.scores,
        flags=flags,
        clients=clients,
        server_a=server_a,
        server_p=server_p,
    )
