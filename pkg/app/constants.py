# -*- coding: utf-8 -*-
"""
Constantes pour le framework d'entraînement distribué
"""

# Alphabet ADN, ordre des colonnes du one-hot
DNA_ALPHABET = 'ACGT'

# Configuration de la simulation (jeu de données TAL1)
SIMULATION_DEFAULTS = {
    'SEQ_LENGTH': 1500,
    'N_POSITIVE': 10000,
    'N_NEGATIVE': 10000,
    'CLUSTER_MIN': 2,
    'CLUSTER_MAX': 5,
    'CLUSTER_REGION_FRACTION': 0.6,
    'NEGATIVE_RETRIES': 100,
    'FASTA_WIDTH': 80,
}

# Motif par défaut : boîte E de TAL1 (CAGATG) élargie à 10 pb
DEFAULT_PWM = {
    'NAME': 'TAL1_ebox',
    'CONSENSUS': 'AACAGATGGT',
    'CONSENSUS_PROBABILITY': 0.85,
    'BACKGROUND_PROBABILITY': 0.05,
}

# Découpage et pipeline
SPLIT_DEFAULTS = {
    'TRAIN': 0.70,
    'TEST': 0.10,
    'VALIDATION': 0.20,
}

PIPELINE_DEFAULTS = {
    'BUFFER_SIZE': 10000,
    'SHUFFLE_BUFFER_SIZE': 100,
    'BATCH_PER_REPLICA': 64,
}

# Architecture du CNN
MODEL_DEFAULTS = {
    'N_FILTERS': 15,
    'FILTER_WIDTH': 10,
    'POOL_WINDOW': 35,
    'POOL_STRIDE': 35,
}

ACTIVATION_CODES = {
    'relu': 0,
    'linear': 1,
}

# Hyperparamètres Adam
ADAM_DEFAULTS = {
    'LEARNING_RATE': 1e-3,
    'BETA1': 0.9,
    'BETA2': 0.999,
    'EPSILON': 1e-8,
}

# Bornes de la perte BCE
PROBABILITY_CLAMP = 1e-7

# Arrêt précoce
EARLY_STOP_DEFAULTS = {
    'PATIENCE': 5,
    'MIN_DELTA': 1e-4,
}

# Stratégies d'agrégation (valeurs utilisées par la CLI)
STRATEGIES = {
    'ALLREDUCE': 'allreduce',
    'PARAMETER_SERVER': 'ps',
    'GOSSIP': 'gossip',
}

# Raisons d'arrêt de l'entraînement
STOP_REASONS = {
    'CONVERGED': 'converged',
    'MAX_EPOCHS': 'max_epochs',
    'DIVERGED': 'diverged',
}

# Seuil de classification ; une égalité au seuil est classée négative
DECISION_THRESHOLD = 0.5

# Marqueur des métriques non définies (une seule classe présente)
UNDEFINED = 'undefined'

# Codes de sortie de la CLI
EXIT_CODES = {
    'OK': 0,
    'IO': 1,
    'CONFIG': 2,
    'DIVERGED': 3,
}

# Format de checkpoint
CHECKPOINT_MAGIC = b'DCNN'
CHECKPOINT_VERSION = 1
