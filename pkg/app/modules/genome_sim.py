# -*- coding: utf-8 -*-
"""
Simulation de séquences régulatrices (à la simDNA) : les positives portent
un cluster homotypique d'instances du motif TAL1 tirées d'une PWM dans un
fond aléatoire, les négatives sont du fond pur sans consensus.

Toutes les sources aléatoires sont des ``numpy.random.Generator`` adossés à
PCG64 (algorithme publié, reproductible d'une plateforme à l'autre).
"""
import logging
import re
from typing import Iterator, List, Sequence, Tuple

import numpy as np

from ..constants import DEFAULT_PWM, DNA_ALPHABET, SIMULATION_DEFAULTS
from ..errors import GenerationError, ParseError, PlacementError, ValidationError
from ..models import Pwm, SequenceRecord

logger = logging.getLogger(__name__)

_ALPHABET_BYTES = np.frombuffer(DNA_ALPHABET.encode('ascii'), dtype=np.uint8)
_HEADER_RE = re.compile(r'^>(\S+) label=([01]) motifs=(none|\d+(?:,\d+)*)$')
_PWM_HEADER_RE = re.compile(r'^#PWM (\S+) (\d+)$')


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def default_pwm() -> Pwm:
    """PWM 10 pb dominée par le consensus autour de la boîte E CAGATG"""
    high = DEFAULT_PWM['CONSENSUS_PROBABILITY']
    low = DEFAULT_PWM['BACKGROUND_PROBABILITY']
    matrix = np.full((len(DEFAULT_PWM['CONSENSUS']), 4), low)
    for row, base in enumerate(DEFAULT_PWM['CONSENSUS']):
        matrix[row, DNA_ALPHABET.index(base)] = high
    return Pwm(DEFAULT_PWM['NAME'], matrix)


def _indices_to_bases(indices: np.ndarray) -> str:
    return _ALPHABET_BYTES[indices].tobytes().decode('ascii')


# --- ECHANTILLONNAGE ---

def sample_background(length: int, background_freqs: Sequence[float], rng: np.random.Generator) -> str:
    """Bases i.i.d. tirées selon les fréquences (A, C, G, T)"""
    freqs = np.asarray(background_freqs, dtype=np.float64)
    if freqs.shape != (4,) or np.any(freqs < 0) or abs(freqs.sum() - 1.0) > 1e-6:
        raise ValidationError(f"fréquences de fond invalides: {list(background_freqs)}")
    if length == 0:
        return ''
    return _indices_to_bases(rng.choice(4, size=length, p=freqs / freqs.sum()))


def sample_motif_instance(pwm: Pwm, rng: np.random.Generator) -> str:
    """Une instance du motif : la base de la ligne r est tirée selon matrix[r]"""
    cdf = np.cumsum(pwm.matrix, axis=1)
    cdf[:, -1] = 1.0
    draws = rng.random(pwm.rows)
    return _indices_to_bases((draws[:, np.newaxis] < cdf).argmax(axis=1))


def embed_cluster(background: str, pwm: Pwm, count: int, region: Tuple[int, int],
                  rng: np.random.Generator) -> Tuple[str, List[int]]:
    """
    Ecrit ``count`` instances sans chevauchement dans la région [début, fin).
    Le placement est tiré uniformément parmi toutes les dispositions sans
    chevauchement : ``count`` emplacements parmi ``libre + count``, le i-ème
    décalé de ``i * (largeur - 1)``. Retourne la séquence et les positions triées.
    """
    if count == 0:
        return background, []
    width = pwm.rows
    start, end = region
    span = min(end, len(background)) - start
    free = span - count * width
    if free < 0:
        raise PlacementError(
            f"région {region} trop courte pour {count} motif(s) de {width} pb sans chevauchement"
        )

    slots = np.sort(rng.choice(free + count, size=count, replace=False))
    placed = [start + int(slot) + i * (width - 1) for i, slot in enumerate(slots)]
    sequence = bytearray(background.encode('ascii'))
    for position in placed:
        sequence[position:position + width] = sample_motif_instance(pwm, rng).encode('ascii')
    return sequence.decode('ascii'), placed


def generate_dataset(config, pwm: Pwm) -> List[SequenceRecord]:
    """
    ``n_positive`` séquences label 1 puis ``n_negative`` label 0 ; la sortie
    ne dépend que de (config, pwm).
    """
    config.check_motif(pwm.rows)
    rng = make_rng(config.seed)
    consensus = pwm.consensus
    region = config.region
    records: List[SequenceRecord] = []

    for _ in range(config.n_positive):
        background = sample_background(config.seq_length, config.background_freqs, rng)
        count = int(rng.integers(config.cluster_min, config.cluster_max + 1))
        bases, positions = embed_cluster(background, pwm, count, region, rng)
        records.append(SequenceRecord(_record_id(len(records)), bases, 1, tuple(positions)))

    rejected = 0
    retries = SIMULATION_DEFAULTS['NEGATIVE_RETRIES']
    for _ in range(config.n_negative):
        for _attempt in range(retries + 1):
            bases = sample_background(config.seq_length, config.background_freqs, rng)
            if consensus not in bases:
                break
            rejected += 1
        else:
            raise GenerationError(
                f"négative contenant le consensus {consensus} après {retries} tirages"
            )
        records.append(SequenceRecord(_record_id(len(records)), bases, 0, ()))

    logger.info(
        f"🧬 {len(records)} séquences générées ({config.n_positive} positives, "
        f"{config.n_negative} négatives, {rejected} négatives rejetées)"
    )
    return records


def _record_id(index: int) -> str:
    return f"seq_{index + 1:04d}"


def count_consensus_hits(records: Sequence[SequenceRecord], consensus: str) -> int:
    """Nombre de séquences contenant le consensus exact"""
    return sum(1 for r in records if consensus in r.bases)


# --- FICHIERS FASTA ---

def write_fasta(records: Sequence[SequenceRecord], path: str,
                width: int = SIMULATION_DEFAULTS['FASTA_WIDTH']) -> None:
    with open(path, 'w', encoding='ascii', newline='\n') as handle:
        for record in records:
            motifs = ','.join(str(p) for p in record.motif_positions) or 'none'
            handle.write(f">{record.id} label={record.label} motifs={motifs}\n")
            for offset in range(0, len(record.bases), width):
                handle.write(record.bases[offset:offset + width] + '\n')


def iter_fasta(path: str) -> Iterator[SequenceRecord]:
    header = None
    header_line = 0
    chunks: List[str] = []

    def build():
        record_id, label, motifs = header
        positions = () if motifs == 'none' else tuple(int(p) for p in motifs.split(','))
        try:
            return SequenceRecord(record_id, ''.join(chunks), int(label), positions)
        except ValidationError as e:
            raise ParseError(str(e), header_line) from e

    with open(path, 'r', encoding='ascii', errors='replace') as handle:
        for line_number, raw in enumerate(handle, start=1):
            line = raw.rstrip('\n')
            if line.startswith('>'):
                if header is not None:
                    yield build()
                match = _HEADER_RE.match(line)
                if not match:
                    raise ParseError(f"en-tête mal formé: {line!r}", line_number)
                header, header_line, chunks = match.groups(), line_number, []
            elif not line:
                continue
            else:
                if header is None:
                    raise ParseError('séquence avant le premier en-tête', line_number)
                bad = next((c for c in line if c not in DNA_ALPHABET), None)
                if bad is not None:
                    raise ParseError(f"caractère {bad!r} hors de {DNA_ALPHABET}", line_number)
                chunks.append(line)
    if header is not None:
        yield build()


def read_fasta(path: str) -> List[SequenceRecord]:
    records = list(iter_fasta(path))
    logger.info(f"📂 {len(records)} séquences lues depuis {path}")
    return records


# --- FICHIERS PWM ---

def write_pwm(pwm: Pwm, path: str) -> None:
    with open(path, 'w', encoding='utf-8', newline='\n') as handle:
        handle.write(f"#PWM {pwm.name} {pwm.rows}\n")
        for row in pwm.matrix:
            handle.write(' '.join(repr(float(p)) for p in row) + '\n')


def read_pwm(path: str) -> Pwm:
    with open(path, 'r', encoding='utf-8') as handle:
        lines = [line.strip() for line in handle]
    if not lines:
        raise ParseError('fichier PWM vide', 1)
    match = _PWM_HEADER_RE.match(lines[0])
    if not match:
        raise ParseError(f"en-tête PWM attendu '#PWM <nom> <lignes>', lu {lines[0]!r}", 1)
    name, rows = match.group(1), int(match.group(2))
    matrix = []
    for line_number in range(2, rows + 2):
        if line_number > len(lines):
            raise ParseError(f"{rows} lignes annoncées, {len(matrix)} lues", line_number)
        fields = lines[line_number - 1].split()
        try:
            values = [float(v) for v in fields]
        except ValueError:
            raise ParseError(f"probabilité non décimale: {lines[line_number - 1]!r}", line_number)
        if len(values) != 4:
            raise ParseError(f"4 probabilités attendues, {len(values)} lues", line_number)
        matrix.append(values)
    try:
        return Pwm(name, np.array(matrix))
    except ValidationError as e:
        raise ParseError(str(e), 1) from e
