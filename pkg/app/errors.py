# -*- coding: utf-8 -*-
"""
Exceptions du framework. Chaque classe porte le code de sortie CLI associé.
"""

from .constants import EXIT_CODES


class DcnnError(Exception):
    """Erreur de base"""
    exit_code = EXIT_CODES['CONFIG']


class DimensionError(DcnnError, ValueError):
    """Formes de tenseurs incompatibles"""


class EmptyOutputError(DcnnError, ValueError):
    """Le noyau produirait une sortie vide"""


class InternalConsistencyError(DcnnError, RuntimeError):
    """Etat interne incohérent (cache périmé, index hors bornes...)"""


class ValidationError(DcnnError, ValueError):
    """Entrée invalide"""


class PlacementError(DcnnError, RuntimeError):
    """Impossible de placer les motifs sans chevauchement"""


class GenerationError(DcnnError, RuntimeError):
    """Echec de la génération d'une séquence"""


class ParseError(DcnnError, ValueError):
    """Fichier FASTA ou PWM mal formé"""

    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"ligne {line_number}: {message}"
        super().__init__(message)


class EncodeError(DcnnError, ValueError):
    """Caractère inconnu lors de l'encodage one-hot"""

    def __init__(self, message, position):
        self.position = position
        super().__init__(f"position {position}: {message}")


class ConfigurationError(DcnnError, ValueError):
    """Configuration incohérente"""


class CheckpointError(DcnnError, ValueError):
    """Checkpoint illisible ; le message nomme le champ fautif"""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(message)


class ProtocolError(DcnnError, RuntimeError):
    """Violation du contrat synchrone des collectives"""


class TransportAborted(DcnnError, RuntimeError):
    """Le transport a été interrompu par un autre contexte"""


class WorkerError(DcnnError, RuntimeError):
    """Exception hors hiérarchie levée dans un contexte worker"""
    exit_code = EXIT_CODES['IO']


class TrainingDivergedError(DcnnError, ArithmeticError):
    """Perte ou gradient non fini"""
    exit_code = EXIT_CODES['DIVERGED']

    def __init__(self, message, last_good_epoch=None, report=None):
        self.last_good_epoch = last_good_epoch
        self.report = report
        super().__init__(message)
