import os
from dotenv import load_dotenv

load_dotenv()

class Config:
    # Logging
    LOG_LEVEL = os.getenv('DCNN_LOG_LEVEL', 'INFO')

    # Répertoire des artefacts (rapports, courbes, checkpoints)
    OUTPUT_DIR = os.getenv('DCNN_OUTPUT_DIR', 'runs')

    # Graine par défaut de toutes les sources aléatoires
    SEED = int(os.getenv('DCNN_SEED', '0'))

    # Contextes des workers : 'process' (multi-coeur) ou 'thread'
    BACKEND = os.getenv('DCNN_BACKEND', 'process')

    # Méthode de démarrage multiprocessing (vide = défaut de la plateforme)
    START_METHOD = os.getenv('DCNN_START_METHOD') or None

    # Délai max d'attente d'un message entre workers (secondes)
    RECV_TIMEOUT = float(os.getenv('DCNN_RECV_TIMEOUT', '300'))
