# -*- coding: utf-8 -*-
"""
Gestion des contextes d'exécution des workers (threads ou processus)
"""

import logging
import multiprocessing
import queue
import threading
import traceback
from typing import Callable, List, Optional

from threadpoolctl import threadpool_limits

from . import errors
from .modules.collective import Transport

logger = logging.getLogger(__name__)

# Messages posés dans la file de résultats : (type, rang, ...)
MSG_EPOCH = 'epoch'
MSG_DONE = 'done'
MSG_ERROR = 'error'

CMD_CONTINUE = 'continue'
CMD_STOP = 'stop'


def _guarded(target: Callable, rank: int, results, pin_blas: bool, *args):
    """Exécute ``target`` ; toute exception devient un message d'erreur"""
    try:
        if pin_blas:
            with threadpool_limits(limits=1):
                target(rank, *args, results)
        else:
            target(rank, *args, results)
    except Exception as e:
        if not isinstance(e, errors.TransportAborted):
            logger.error(f"❌ Contexte {rank}: {type(e).__name__}: {e}")
            logger.debug(traceback.format_exc())
        results.put((MSG_ERROR, rank, type(e).__name__, str(e)))


def rebuild_error(type_name: str, message: str) -> Exception:
    """Recrée côté coordinateur l'exception levée dans un worker"""
    cls = getattr(errors, type_name, None)
    if isinstance(cls, type) and issubclass(cls, errors.DcnnError):
        if cls in (errors.ParseError, errors.EncodeError, errors.CheckpointError):
            return errors.DcnnError(message)
        return cls(message)
    return errors.WorkerError(f"{type_name}: {message}")


class ProcessManager:
    """Lance les contextes, fournit transport, canaux de contrôle et résultats"""

    def __init__(self, backend: str = 'thread', start_method: Optional[str] = None):
        if backend not in ('thread', 'process'):
            raise errors.ConfigurationError(f"backend inconnu: {backend}")
        self.backend = backend
        self.context = multiprocessing.get_context(start_method) if backend == 'process' else None
        self._handles: List = []
        self._channels: List = []
        self.results = self.make_channel()

    def make_channel(self):
        channel = queue.Queue() if self.backend == 'thread' else self.context.Queue()
        self._channels.append(channel)
        return channel

    def make_transport(self, n_endpoints: int, recv_timeout: Optional[float] = None) -> Transport:
        return Transport(n_endpoints, self.backend, self.context, recv_timeout)

    def spawn(self, target: Callable, rank: int, *args, name: Optional[str] = None):
        name = name or f"worker-{rank}"
        if self.backend == 'thread':
            handle = threading.Thread(
                target=_guarded, args=(target, rank, self.results, False) + args,
                name=name, daemon=True,
            )
        else:
            handle = self.context.Process(
                target=_guarded, args=(target, rank, self.results, True) + args,
                name=name, daemon=True,
            )
        handle.start()
        self._handles.append(handle)
        logger.debug(f"Contexte {name} démarré ({self.backend})")
        return handle

    def next_result(self, timeout: Optional[float] = None):
        try:
            return self.results.get(timeout=timeout)
        except queue.Empty:
            dead = [h.name for h in self._handles if not h.is_alive()]
            raise errors.ProtocolError(
                f"aucun résultat des workers après {timeout}s (contextes arrêtés: {dead or 'aucun'})"
            )

    def join(self, timeout: Optional[float] = None):
        for handle in self._handles:
            handle.join(timeout)

    def shutdown(self, transport: Optional[Transport] = None, timeout: float = 5.0):
        """Interrompt le transport puis arrête les contextes encore vivants"""
        if transport is not None:
            transport.abort()
        self.join(timeout)
        if self.backend == 'process':
            for handle in self._handles:
                if handle.is_alive():
                    logger.warning(f"⚠️ Arrêt forcé de {handle.name}")
                    handle.terminate()
                    handle.join(timeout)

    def close(self, transport: Optional[Transport] = None):
        """Ferme transport et canaux une fois les contextes terminés"""
        if transport is not None:
            transport.close()
        if self.backend == 'process':
            for channel in self._channels:
                # Un contexte arrêté de force peut laisser des commandes non lues
                channel.cancel_join_thread()
                channel.close()
        self._channels.clear()
