# -*- coding: utf-8 -*-
"""
Commandes : generate, train, benchmark, evaluate.

Précédence de la configuration : défauts < environnement (Config) <
fichier JSON (--config) < options de la ligne de commande.
"""
import functools
import json
import logging
import os
from typing import Any, Dict, List, Optional

import click
from pydantic import ValidationError as PydanticValidationError

from .constants import EXIT_CODES, UNDEFINED
from .errors import ConfigurationError, DcnnError, TrainingDivergedError
from .modules.benchmark import benchmark
from .modules.cnn import read_checkpoint, save_checkpoint
from .modules.collective import StrategyKind
from .modules.evaluation import evaluate
from .modules.genome_sim import default_pwm, generate_dataset, read_fasta, read_pwm, write_fasta
from .modules.pipeline import DatasetSplits, split
from .modules.trainer import train
from .schemas import ModelConfig, RunConfig
from .utils.report_writer import write_benchmark, write_curves, write_metrics, write_report

logger = logging.getLogger(__name__)

DEFAULT_FILES = {
    'DATASET': 'dataset.fa',
    'CHECKPOINT': 'model.ckpt',
    'REPORT': 'report.json',
    'CURVES': 'curves.csv',
    'BENCHMARK': 'benchmark.csv',
    'METRICS': 'metrics.json',
}


# --- CONFIGURATION ---

def _merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict):
            merged[key] = _merge(merged.get(key) or {}, value)
        elif value is not None:
            merged[key] = value
    return merged


def load_run_config(config_path: Optional[str], overrides: Dict[str, Any]) -> RunConfig:
    data: Dict[str, Any] = {}
    if config_path:
        if not os.path.isfile(config_path):
            raise ConfigurationError(f"fichier de configuration introuvable: {config_path}")
        with open(config_path, 'r', encoding='utf-8') as handle:
            try:
                data = json.load(handle)
            except json.JSONDecodeError as e:
                raise ConfigurationError(f"{config_path}: JSON invalide ({e})")
        if not isinstance(data, dict):
            raise ConfigurationError(f"{config_path}: un objet JSON est attendu")
    return RunConfig.model_validate(_merge(data, overrides))


def _shared_overrides(seed, workers, strategy, epochs, precision, out) -> Dict[str, Any]:
    return {
        'sim': {'seed': seed},
        'split': {'seed': seed},
        'train': {'seed': seed, 'n_replicas': workers, 'strategy': strategy,
                  'epochs_max': epochs, 'precision': precision},
        'paths': {'out': out},
    }


def _require_file(path: Optional[str], field: str) -> str:
    if not path:
        raise ConfigurationError(f"{field}: chemin requis")
    if not os.path.isfile(path):
        raise ConfigurationError(f"{field}: fichier introuvable: {path}")
    return path


def _output_path(explicit: Optional[str], out: str, default_name: str) -> str:
    return explicit or os.path.join(out, default_name)


def _describe_validation(error: PydanticValidationError) -> str:
    return '; '.join(
        f"{'.'.join(str(part) for part in e['loc']) or 'config'}: {e['msg']}" for e in error.errors()
    )


def handled(command):
    """Traduit les exceptions en message + code de sortie"""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except PydanticValidationError as e:
            message, code = _describe_validation(e), EXIT_CODES['CONFIG']
        except DcnnError as e:
            message, code = str(e), e.exit_code
        except OSError as e:
            message, code = f"erreur d'entrée/sortie: {e}", EXIT_CODES['IO']
        logger.error(f"❌ {message}")
        click.echo(f"Erreur: {message}", err=True)
        raise click.exceptions.Exit(code)
    return wrapper


def shared_options(command):
    options = [
        click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
                     help='Fichier de configuration JSON (sections sim, split, pipeline, model, train, paths)'),
        click.option('--seed', type=click.IntRange(0, 2 ** 64 - 1), default=None, help='Graine (u64)'),
        click.option('--workers', type=click.IntRange(min=1), default=None, help='Nombre de réplicas N'),
        click.option('--strategy', type=str, default=None,
                     help="Stratégie d'agrégation: allreduce, ps ou gossip"),
        click.option('--epochs', type=click.IntRange(min=1), default=None, help="Nombre maximal d'époques"),
        click.option('--precision', type=click.Choice(['f32', 'f64']), default=None, help='Précision flottante'),
        click.option('--out', type=click.Path(file_okay=False), default=None, help='Répertoire des artefacts'),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def _parse_strategies(text: Optional[str]) -> Optional[List[str]]:
    if text is None:
        return None
    names = [part.strip() for part in text.split(',') if part.strip()]
    valid = [s.value for s in StrategyKind]
    for name in names:
        if name not in valid:
            raise ConfigurationError(f"train.strategy: '{name}' inconnue (attendu: {', '.join(valid)})")
    return names


def _single_strategy(text: Optional[str]) -> Optional[str]:
    names = _parse_strategies(text)
    if names is not None and len(names) != 1:
        raise ConfigurationError('train.strategy: une seule stratégie attendue pour cette commande')
    return names[0] if names else None


def _parse_workers_list(text: str) -> List[int]:
    try:
        counts = [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise ConfigurationError(f"--workers-list: liste d'entiers attendue, reçu '{text}'")
    if not counts or any(n < 1 for n in counts):
        raise ConfigurationError(f"--workers-list: entiers >= 1 attendus, reçu '{text}'")
    return counts


def _load_dataset(run: RunConfig, explicit: Optional[str]):
    path = _require_file(explicit or run.paths.dataset, 'paths.dataset')
    records = read_fasta(path)
    if not records:
        raise ConfigurationError(f"paths.dataset: aucune séquence dans {path}")
    lengths = {len(r) for r in records}
    if len(lengths) != 1:
        raise ConfigurationError(f"paths.dataset: longueurs hétérogènes {sorted(lengths)}")
    return path, records, lengths.pop()


def _model_for(run: RunConfig, seq_length: int) -> ModelConfig:
    return ModelConfig.model_validate({**run.model.model_dump(), 'seq_length': seq_length})


def _split(run: RunConfig, records) -> DatasetSplits:
    return split(records, run.split)


def _format_metric(value) -> str:
    return UNDEFINED if value is None else f"{value:.4f}"


# --- COMMANDES ---

@click.group()
@click.option('--log-level', default=None, help='Niveau de log (DEBUG, INFO, WARNING...)')
def cli(log_level):
    """Entraînement CNN data-parallèle pour la détection de clusters de motifs TAL1"""
    if log_level:
        logging.getLogger().setLevel(log_level.upper())


@cli.command()
@shared_options
@click.option('--n-positive', type=click.IntRange(min=0), default=None, help='Séquences positives')
@click.option('--n-negative', type=click.IntRange(min=0), default=None, help='Séquences négatives')
@click.option('--seq-length', type=click.IntRange(min=1), default=None, help='Longueur L des séquences')
@click.option('--pwm', type=str, default=None, help='Fichier PWM (défaut: motif TAL1 intégré)')
@click.option('--dataset', type=str, default=None, help='Fichier FASTA de sortie')
@handled
def generate(config_path, seed, workers, strategy, epochs, precision, out, n_positive, n_negative,
             seq_length, pwm, dataset):
    """Génère un jeu de séquences simulées au format FASTA"""
    overrides = _merge(_shared_overrides(seed, workers, _single_strategy(strategy), epochs, precision, out), {
        'sim': {'n_positive': n_positive, 'n_negative': n_negative, 'seq_length': seq_length},
        'paths': {'pwm': pwm, 'dataset': dataset},
    })
    run = load_run_config(config_path, overrides)
    if run.paths.pwm:
        motif = read_pwm(_require_file(run.paths.pwm, 'paths.pwm'))
    else:
        motif = default_pwm()
    records = generate_dataset(run.sim, motif)
    path = _output_path(run.paths.dataset, run.paths.out, DEFAULT_FILES['DATASET'])
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    write_fasta(records, path)
    positives = sum(r.label for r in records)
    click.echo(f"{len(records)} séquences écrites dans {path} "
               f"({positives} positives / {len(records) - positives} négatives)")


@cli.command(name='train')
@shared_options
@click.option('--dataset', type=str, default=None, help='Fichier FASTA d\'entrée')
@click.option('--batch-per-replica', type=click.IntRange(min=1), default=None, help='Taille de micro-batch par réplica')
@click.option('--global-batch', type=click.IntRange(min=1), default=None, help='Batch global (divisible par N)')
@click.option('--checkpoint', type=str, default=None, help='Fichier checkpoint de sortie')
@click.option('--backend', type=click.Choice(['process', 'thread']), default=None, help='Contextes des workers')
@click.option('--learning-rate', type=float, default=None, help="Pas d'apprentissage Adam")
@click.option('--patience', type=click.IntRange(min=0), default=None, help="Patience de l'arrêt précoce")
@click.option('--no-early-stop', is_flag=True, default=False, help="Désactive l'arrêt précoce")
@click.option('--aggregate-per-epoch', is_flag=True, default=False, help='Agrégation des paramètres par époque')
@click.option('--gossip-period', type=click.IntRange(min=1), default=None, help='Pas entre deux tours de gossip')
@handled
def train_command(config_path, seed, workers, strategy, epochs, precision, out, dataset, batch_per_replica,
                  global_batch, checkpoint, backend, learning_rate, patience, no_early_stop,
                  aggregate_per_epoch, gossip_period):
    """Entraîne le CNN, évalue sur le jeu de test et écrit rapport, courbes et checkpoint"""
    overrides = _merge(_shared_overrides(seed, workers, _single_strategy(strategy), epochs, precision, out), {
        'train': {
            'batch_per_replica': batch_per_replica,
            'global_batch': global_batch,
            'backend': backend,
            'learning_rate': learning_rate,
            'gossip_period': gossip_period,
            'aggregate_per_epoch': True if aggregate_per_epoch else None,
            'early_stop': {'patience': patience, 'enabled': False if no_early_stop else None},
        },
        'paths': {'dataset': dataset, 'checkpoint': checkpoint},
    })
    run = load_run_config(config_path, overrides)
    _, records, seq_length = _load_dataset(run, None)
    model_config = _model_for(run, seq_length)
    splits = _split(run, records)
    effective = run.echo()
    effective['model'] = model_config.model_dump(mode='json')

    out_dir = run.paths.out
    report_path = os.path.join(out_dir, DEFAULT_FILES['REPORT'])
    try:
        params, report = train(run.train, model_config, splits, run.pipeline)
    except TrainingDivergedError as e:
        if e.report is not None:
            write_report(e.report, report_path, effective)
            write_curves(e.report, os.path.join(out_dir, DEFAULT_FILES['CURVES']))
        raise

    if splits.test:
        report.test_metrics = evaluate(params, splits.test, model_config)
    checkpoint_path = _output_path(run.paths.checkpoint, out_dir, DEFAULT_FILES['CHECKPOINT'])
    os.makedirs(os.path.dirname(os.path.abspath(checkpoint_path)), exist_ok=True)
    save_checkpoint(params, checkpoint_path, model_config)
    write_report(report, report_path, effective)
    write_curves(report, os.path.join(out_dir, DEFAULT_FILES['CURVES']))

    final = report.final
    line = (f"époques={len(report.epochs)} arrêt={report.stop_reason} val_acc={final.val_accuracy:.4f} "
            f"val_auroc={_format_metric(final.val_auroc)} temps={report.train_seconds:.2f}s")
    if report.test_metrics is not None:
        line += (f" test_acc={report.test_metrics.accuracy:.4f} "
                 f"test_auroc={_format_metric(report.test_metrics.auroc)}")
    click.echo(line)


@cli.command(name='benchmark')
@shared_options
@click.option('--dataset', type=str, default=None, help='Fichier FASTA d\'entrée')
@click.option('--workers-list', type=str, default='1,2,4', show_default=True, help='Nombres de réplicas à mesurer')
@click.option('--batch-per-replica', type=click.IntRange(min=1), default=None, help='Taille de micro-batch par réplica')
@click.option('--global-batch', type=click.IntRange(min=1), default=None, help='Batch global fixe')
@click.option('--backend', type=click.Choice(['process', 'thread']), default=None, help='Contextes des workers')
@handled
def benchmark_command(config_path, seed, workers, strategy, epochs, precision, out, dataset, workers_list,
                      batch_per_replica, global_batch, backend):
    """Mesure le temps d'entraînement en fonction du nombre de réplicas"""
    strategies = _parse_strategies(strategy)
    counts = _parse_workers_list(workers_list)
    overrides = _merge(_shared_overrides(seed, workers, strategies[0] if strategies else None,
                                         epochs, precision, out), {
        'train': {'batch_per_replica': batch_per_replica, 'backend': backend},
        'paths': {'dataset': dataset},
    })
    run = load_run_config(config_path, overrides)
    _, records, seq_length = _load_dataset(run, None)
    model_config = _model_for(run, seq_length)
    splits = _split(run, records)
    base = run.train
    if global_batch is not None:
        # La divisibilité est vérifiée ligne par ligne
        base = base.model_copy(update={'global_batch': global_batch})

    rows = benchmark(base, counts, splits, model_config,
                     strategies=[StrategyKind(s) for s in strategies] if strategies else None,
                     pipeline_config=run.pipeline)
    path = write_benchmark(rows, os.path.join(run.paths.out, DEFAULT_FILES['BENCHMARK']))
    for row in rows:
        if row.error:
            click.echo(f"N={row.workers} {row.strategy}: erreur: {row.error}")
        else:
            click.echo(f"N={row.workers} {row.strategy}: {row.wall_s:.2f}s speedup={row.speedup:.2f} "
                       f"acc={row.final_acc:.4f} messages={row.messages}")
    click.echo(f"Table écrite: {path}")
    if not any(not row.error for row in rows):
        raise ConfigurationError('aucune configuration du benchmark n\'a abouti')


@cli.command(name='evaluate')
@shared_options
@click.option('--checkpoint', type=str, default=None, help='Checkpoint à évaluer')
@click.option('--dataset', type=str, default=None, help='Fichier FASTA à évaluer')
@click.option('--split', 'split_name', type=click.Choice(['all', 'train', 'test', 'validation']),
              default='all', show_default=True, help='Partie du jeu à évaluer')
@handled
def evaluate_command(config_path, seed, workers, strategy, epochs, precision, out, checkpoint, dataset,
                     split_name):
    """Evalue un checkpoint : exactitude, perte, auROC, auPRC"""
    overrides = _merge(_shared_overrides(seed, workers, _single_strategy(strategy), epochs, precision, out), {
        'paths': {'dataset': dataset, 'checkpoint': checkpoint},
    })
    run = load_run_config(config_path, overrides)
    checkpoint_path = _require_file(run.paths.checkpoint, 'paths.checkpoint')
    _, records, seq_length = _load_dataset(run, None)
    params, model_config = read_checkpoint(checkpoint_path)
    # Stocké en f32 ; --precision fixe la précision des calculs
    params = params.astype(run.train.precision.dtype)
    if model_config is None:
        model_config = ModelConfig.model_validate({
            **run.model.model_dump(),
            'n_filters': params.conv_filters.shape[0],
            'filter_width': params.conv_filters.shape[1],
            'seq_length': seq_length,
        })
    if model_config.seq_length != seq_length:
        raise ConfigurationError(
            f"longueur incompatible: le checkpoint attend L={model_config.seq_length}, "
            f"le jeu contient L={seq_length}"
        )
    if split_name != 'all':
        records = getattr(_split(run, records), split_name)
        if not records:
            raise ConfigurationError(f"la partie '{split_name}' du jeu est vide")

    result = evaluate(params, records, model_config)
    path = write_metrics(result, os.path.join(run.paths.out, DEFAULT_FILES['METRICS']),
                         {'checkpoint': checkpoint_path, 'split': split_name, 'precision': run.train.precision.value,
                          'effective_config': run.echo()})
    click.echo(f"loss={result.loss:.4f} accuracy={result.accuracy:.4f} auroc={_format_metric(result.auroc)} "
               f"auprc={_format_metric(result.auprc)} n={result.n_samples}")
    click.echo(f"Métriques écrites: {path}")
