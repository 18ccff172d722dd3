# -*- coding: utf-8 -*-
"""
Transport par messages entre contextes de workers et les trois stratégies
d'agrégation : serveur de paramètres, all-reduce en anneau, gossip.

Le transport relie chaque paire ordonnée d'extrémités par une file FIFO et
compte messages et octets. Il fonctionne avec des threads (files
``queue.Queue``) ou des processus (files ``multiprocessing``).
"""
import enum
import logging
import math
import queue
import threading
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ProtocolError, TransportAborted

logger = logging.getLogger(__name__)

POLL_SECONDS = 0.05


class StrategyKind(str, enum.Enum):
    """Stratégie d'agrégation, fixe pour un entraînement"""
    ALLREDUCE = 'allreduce'
    PARAMETER_SERVER = 'ps'
    GOSSIP = 'gossip'


@dataclass(frozen=True)
class WorkerId:
    rank: int
    world_size: int

    def __post_init__(self):
        if self.world_size < 1 or not 0 <= self.rank < self.world_size:
            raise ValueError(f"rang {self.rank} hors de [0, {self.world_size})")

    @property
    def left(self) -> int:
        return (self.rank - 1) % self.world_size

    @property
    def right(self) -> int:
        return (self.rank + 1) % self.world_size


@dataclass(frozen=True)
class TransportStats:
    messages: int
    bytes: int

    def __sub__(self, other: 'TransportStats') -> 'TransportStats':
        return TransportStats(self.messages - other.messages, self.bytes - other.bytes)


class _LocalCounter:
    """Même interface que multiprocessing.Value pour le backend threads"""

    def __init__(self):
        self.value = 0
        self._lock = threading.Lock()

    def get_lock(self):
        return self._lock


class Transport:
    """
    Liens point à point FIFO entre ``n_endpoints`` extrémités. Aucune perte,
    aucune duplication ; les compteurs ne font que croître.
    """

    def __init__(self, n_endpoints: int, backend: str = 'thread', context=None,
                 recv_timeout: Optional[float] = None):
        if n_endpoints < 1:
            raise ValueError('au moins une extrémité requise')
        self.n_endpoints = n_endpoints
        self.backend = backend
        self.recv_timeout = recv_timeout
        if backend == 'thread':
            make_queue, self._messages, self._bytes = queue.Queue, _LocalCounter(), _LocalCounter()
            self._abort = threading.Event()
        elif backend == 'process':
            if context is None:
                raise ValueError('un contexte multiprocessing est requis pour le backend process')
            make_queue = context.Queue
            self._messages, self._bytes = context.Value('q', 0), context.Value('q', 0)
            self._abort = context.Event()
        else:
            raise ValueError(f"backend inconnu: {backend}")
        self._links: Dict[Tuple[int, int], object] = {
            (src, dst): make_queue()
            for src in range(n_endpoints) for dst in range(n_endpoints) if src != dst
        }
        self._closed = False

    def _link(self, src: int, dst: int):
        try:
            return self._links[(src, dst)]
        except KeyError:
            raise ProtocolError(f"pas de lien {src} -> {dst}")

    def send(self, src: int, dst: int, payload: np.ndarray) -> None:
        if self._closed:
            raise ProtocolError(f"transport fermé (envoi {src} -> {dst})")
        if self._abort.is_set():
            raise TransportAborted(f"transport interrompu (envoi {src} -> {dst})")
        payload = np.array(payload, copy=True)
        link = self._link(src, dst)
        with self._messages.get_lock():
            self._messages.value += 1
        with self._bytes.get_lock():
            self._bytes.value += payload.nbytes
        link.put(payload)

    def recv(self, dst: int, src: int, timeout: Optional[float] = None) -> np.ndarray:
        link = self._link(src, dst)
        timeout = self.recv_timeout if timeout is None else timeout
        deadline = None if timeout is None else time.monotonic() + timeout
        while True:
            if self._abort.is_set():
                raise TransportAborted(f"transport interrompu (réception {src} -> {dst})")
            try:
                return link.get(timeout=POLL_SECONDS)
            except queue.Empty:
                if deadline is not None and time.monotonic() > deadline:
                    raise ProtocolError(f"aucun message de {src} vers {dst} après {timeout}s")

    def abort(self) -> None:
        self._abort.set()

    @property
    def aborted(self) -> bool:
        return self._abort.is_set()

    def close(self) -> None:
        """Ferme les liens ; les files multiprocessing sont fermées puis jointes"""
        if self._closed:
            return
        self._closed = True
        if self.backend == 'process':
            for link in self._links.values():
                link.close()
                link.join_thread()

    @property
    def closed(self) -> bool:
        return self._closed

    def stats(self) -> TransportStats:
        return TransportStats(int(self._messages.value), int(self._bytes.value))


# --- ALL-REDUCE EN ANNEAU ---

def chunk_bounds(length: int, n: int) -> List[Tuple[int, int]]:
    """N morceaux ; les (length mod N) premiers ont ceil(length / N) éléments"""
    base, extra = divmod(length, n)
    bounds, start = [], 0
    for index in range(n):
        size = base + (1 if index < extra else 0)
        bounds.append((start, start + size))
        start += size
    return bounds


def ring_all_reduce(local: np.ndarray, worker: WorkerId, transport: Transport) -> np.ndarray:
    """
    Somme élément par élément des vecteurs de tous les workers, appelée en
    même temps par les N workers. Reduce-scatter en N-1 étapes puis
    all-gather en N-1 étapes : 2 N (N-1) messages au total.
    """
    n, rank = worker.world_size, worker.rank
    buffer = np.array(local, copy=True).ravel()
    if n == 1:
        return buffer
    bounds = chunk_bounds(buffer.size, n)

    def exchange(send_chunk: int, recv_chunk: int) -> np.ndarray:
        lo, hi = bounds[send_chunk]
        transport.send(rank, worker.right, buffer[lo:hi])
        received = transport.recv(rank, worker.left)
        lo, hi = bounds[recv_chunk]
        if received.shape != (hi - lo,):
            raise ProtocolError(
                f"worker {rank}: morceau {recv_chunk} de {received.shape[0]} éléments, "
                f"attendu {hi - lo} (vecteurs de longueurs différentes)"
            )
        return received

    for step in range(n - 1):
        target = (rank - step - 1) % n
        received = exchange((rank - step) % n, target)
        lo, hi = bounds[target]
        buffer[lo:hi] += received

    for step in range(n - 1):
        target = (rank - step) % n
        received = exchange((rank + 1 - step) % n, target)
        lo, hi = bounds[target]
        buffer[lo:hi] = received
    return buffer


def gather_sum(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Somme naïve par rangs croissants (oracle de l'all-reduce)"""
    total = np.array(vectors[0], copy=True)
    for vector in vectors[1:]:
        total += vector
    return total


# --- SERVEUR DE PARAMETRES ---

def parameter_server_round(server_params: np.ndarray, worker_grads: Sequence[np.ndarray],
                           optimizer_step: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> np.ndarray:
    """Moyenne des N rapports (rangs croissants) puis un pas d'optimisation"""
    if not worker_grads:
        raise ProtocolError('aucun rapport de worker')
    lengths = {g.shape for g in worker_grads}
    if len(lengths) != 1 or server_params.shape not in lengths:
        raise ProtocolError(f"rapports de formes différentes: {sorted(lengths)} vs {server_params.shape}")
    mean = gather_sum(worker_grads) / len(worker_grads)
    return optimizer_step(server_params, mean)


class ParameterServer:
    """
    Contexte serveur à l'extrémité ``rank`` (= N) du transport : reçoit N
    rapports, applique l'étape, diffuse les paramètres (2N messages par tour).
    """

    def __init__(self, params: np.ndarray, n_workers: int, transport: Transport):
        self.params = np.array(params, copy=True)
        self.n_workers = n_workers
        self.rank = n_workers
        self.transport = transport

    def serve_round(self, optimizer_step: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> np.ndarray:
        reports = [self.transport.recv(self.rank, worker) for worker in range(self.n_workers)]
        self.params = parameter_server_round(self.params, reports, optimizer_step)
        for worker in range(self.n_workers):
            self.transport.send(self.rank, worker, self.params)
        return self.params

    def serve(self, rounds: int, optimizer_step) -> np.ndarray:
        for _ in range(rounds):
            self.serve_round(optimizer_step)
        return self.params


def push_pull(report: np.ndarray, worker: WorkerId, server_rank: int, transport: Transport) -> np.ndarray:
    """Côté worker : envoie son rapport au serveur et attend les paramètres diffusés"""
    transport.send(worker.rank, server_rank, report)
    return transport.recv(worker.rank, server_rank)


# --- GOSSIP ---

def ring_graph(n: int) -> List[Tuple[int, int]]:
    """Arêtes de l'anneau sur les rangs"""
    if n < 2:
        return []
    return sorted({tuple(sorted((i, (i + 1) % n))) for i in range(n)})


def gossip_pairs(n: int, round_index: int) -> List[Tuple[int, int]]:
    """
    Appariement déterministe sur l'anneau : tours pairs (0,1), (2,3)... ;
    tours impairs (1,2), (3,4)..., (N-1,0). Un worker déjà apparié est sauté.
    """
    pairs, matched = [], set()
    for i in range(round_index % 2, n, 2):
        j = (i + 1) % n
        if i == j or i in matched or j in matched:
            continue
        pairs.append((i, j))
        matched.update((i, j))
    return pairs


def _pair_mean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a + b) / 2


def gossip_round(worker_params: Sequence[np.ndarray], neighbor_graph: Sequence[Tuple[int, int]],
                 round_index: int) -> List[np.ndarray]:
    """Chaque paire appariée remplace ses deux vecteurs par leur moyenne"""
    n = len(worker_params)
    edges = {tuple(sorted(e)) for e in neighbor_graph}
    result = [np.array(p, copy=True) for p in worker_params]
    for i, j in gossip_pairs(n, round_index):
        if tuple(sorted((i, j))) not in edges:
            raise ProtocolError(f"paire ({i}, {j}) absente du graphe de voisinage")
        low, high = sorted((i, j))
        mean = _pair_mean(worker_params[low], worker_params[high])
        result[i], result[j] = mean, mean.copy()
    return result


def gossip_exchange(local: np.ndarray, worker: WorkerId, round_index: int, transport: Transport) -> np.ndarray:
    """Version transport de gossip_round vue d'un worker"""
    for i, j in gossip_pairs(worker.world_size, round_index):
        if worker.rank in (i, j):
            peer = j if worker.rank == i else i
            transport.send(worker.rank, peer, local)
            remote = transport.recv(worker.rank, peer)
            if remote.shape != local.shape:
                raise ProtocolError(f"gossip: formes {local.shape} et {remote.shape}")
            low, high = (local, remote) if worker.rank < peer else (remote, local)
            return _pair_mean(low, high)
    return np.array(local, copy=True)


def gossip_finalize(worker_params: Sequence[np.ndarray]) -> List[np.ndarray]:
    """Moyenne globale exacte (rangs croissants) installée sur chaque worker"""
    mean = gather_sum(worker_params) / len(worker_params)
    return [mean.copy() for _ in worker_params]


def gossip_finalize_exchange(local: np.ndarray, worker: WorkerId, transport: Transport) -> np.ndarray:
    """Collecte vers le rang 0, moyenne, diffusion : 2 (N-1) messages"""
    n = worker.world_size
    if n == 1:
        return np.array(local, copy=True)
    if worker.rank == 0:
        vectors = [np.asarray(local)] + [transport.recv(0, r) for r in range(1, n)]
        mean = gossip_finalize(vectors)[0]
        for r in range(1, n):
            transport.send(0, r, mean)
        return mean
    transport.send(worker.rank, 0, local)
    return transport.recv(worker.rank, 0)


def spread(worker_params: Sequence[np.ndarray]) -> float:
    """Ecart max - min entre workers, sur toutes les coordonnées"""
    stacked = np.stack([np.asarray(p) for p in worker_params])
    return float(np.max(stacked.max(axis=0) - stacked.min(axis=0)))


def max_pairwise_distance(worker_params: Sequence[np.ndarray]) -> float:
    reference = np.asarray(worker_params[0])
    return max(float(np.max(np.abs(np.asarray(p) - reference), initial=0.0)) for p in worker_params)


def expected_ring_messages(n: int) -> int:
    return 2 * n * (n - 1)


def max_chunk_elements(length: int, n: int) -> int:
    return math.ceil(length / n)
