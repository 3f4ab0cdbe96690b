"""
Bucle de entrenamiento del denoiser (pérdida simple y enmascarada).

Cada paso deriva su generador de ``(seed, step)`` y el orden de datos de
``(seed, época)``, de modo que reanudar desde un checkpoint reproduce la
ejecución sin interrumpir.
"""

import dataclasses
import logging
import math
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from tqdm import tqdm

from app import tensorlab as tl
from app.checkpoint import Checkpoint, save
from app.config import settings
from app.diffusion import NoiseSchedule, q_sample, schedule_from_config
from app.exceptions import ConfigMismatchError, CorpusError, NumericError, UsageError
from app.models.denoiser import Denoiser
from app.posenc import PETable, pe_table
from app.puzzlekit.corpus import build_instance, iter_puzzles, load_corpus, read_manifest
from app.puzzlekit.instances import PuzzleInstance, apply_mask, max_missing, normalize_pixels
from app.schemas.results import EVAL_CSV_HEADER, LOSS_CSV_HEADER
from app.schemas.training import ExperimentConfig, TrainConfig
from app.storage import CsvLog

logger = logging.getLogger(__name__)

TRAIN_EVAL_HEADER = ("step",) + EVAL_CSV_HEADER


@dataclass
class PuzzleBatch:
    """
    Lote de puzzles con el mismo número de piezas.

    Attributes:
        pieces: Contenido limpio normalizado ``B × N × P``.
        targets: Códigos verdaderos ``L0`` (``B × N × d``) en orden de presentación.
        missing: Máscara ``B × N`` de piezas retenidas.
        anchors: Máscara ``B × N`` de filas ancladas.
    """

    pieces: np.ndarray
    targets: np.ndarray
    missing: np.ndarray
    anchors: np.ndarray

    @property
    def size(self) -> int:
        return int(self.pieces.shape[0])


def make_batch(instances: Sequence[PuzzleInstance], table: PETable | None = None) -> PuzzleBatch:
    """
    Apila instancias en un lote de entrenamiento.

    Raises:
        ValueError: Si el lote está vacío o las instancias no son homogéneas.
    """
    if not instances:
        raise ValueError("Lote vacío")
    table = table or pe_table(instances[0].layout)
    shapes = {(inst.n, inst.piece_pixels) for inst in instances}
    if len(shapes) != 1:
        raise ValueError(f"Instancias heterogéneas en el lote: {sorted(shapes)}")
    anchors = np.zeros((len(instances), instances[0].n), dtype=bool)
    for b, inst in enumerate(instances):
        anchors[b, inst.anchor_rows] = True
    return PuzzleBatch(
        pieces=np.stack([normalize_pixels(inst.pieces.reshape(inst.n, -1)) for inst in instances]),
        targets=np.stack([inst.target_codes(table) for inst in instances]),
        missing=np.stack([inst.missing_mask for inst in instances]),
        anchors=anchors,
    )


# ---------------------------------------------------------------------------
# Pérdidas
# ---------------------------------------------------------------------------


def _masked_mse(pred: tl.Tensor, target: np.ndarray, rows: np.ndarray) -> tl.Tensor:
    """MSE sobre las filas marcadas (``rows`` es ``B × N``); cero si no hay ninguna."""
    weights = rows.astype(pred.dtype)[..., None]
    count = float(weights.sum()) * pred.shape[-1]
    diff = tl.sub(pred, tl.as_tensor(target.astype(pred.dtype, copy=False)))
    weighted = tl.mul(tl.square(diff), tl.as_tensor(weights))
    return tl.scale(tl.sum(weighted), 1.0 / count if count else 0.0)


def _draw(batch: PuzzleBatch, sched: NoiseSchedule, rng: np.random.Generator, t, eps):
    if batch.size == 0:
        raise ValueError("Lote vacío")
    if t is None:
        t = rng.integers(1, sched.T + 1, size=batch.size)
    t = np.asarray(t, dtype=np.int64).reshape(batch.size)
    if eps is None:
        eps = rng.standard_normal(batch.targets.shape)
    noisy = q_sample(batch.targets, t, eps, sched)
    # Las filas ancladas se mantienen limpias
    noisy[batch.anchors] = batch.targets[batch.anchors]
    return t, eps, noisy


def loss_plain(
    batch: PuzzleBatch,
    model,
    sched: NoiseSchedule,
    rng: np.random.Generator,
    *,
    t=None,
    eps: np.ndarray | None = None,
) -> tl.Tensor:
    """
    Pérdida de predicción de ruido sobre los códigos posicionales.

    Por cada puzzle se sortea ``t`` uniforme en ``[1, T]`` y ``ε`` normal; la
    pérdida es el MSE entre ``ε`` y la predicción, promediado sobre lote y
    elementos. Las filas ancladas no cuentan.

    Args:
        batch: Lote de puzzles.
        model: Denoiser (o cualquier objeto con ``forward``).
        sched: Calendario de ruido.
        rng: Generador del paso.
        t: Pasos fijos (opcional).
        eps: Ruido fijo (opcional).

    Returns:
        Tensor: Pérdida escalar.

    Raises:
        ValueError: Si el lote está vacío.
    """
    t, eps, noisy = _draw(batch, sched, rng, t, eps)
    out = model.forward(batch.pieces, noisy, t)
    return _masked_mse(out.positions, eps, ~batch.anchors)


def combine_masked(
    content: float | tl.Tensor,
    position: float | tl.Tensor,
    content_weight: float = 0.8,
    position_weight: float = 0.2,
):
    """Combinación ponderada de los términos de contenido y de posición."""
    if isinstance(content, tl.Tensor):
        return tl.add(tl.scale(content, content_weight), tl.scale(position, position_weight))
    return content_weight * content + position_weight * position


def loss_masked(
    batch: PuzzleBatch,
    model,
    sched: NoiseSchedule,
    rng: np.random.Generator,
    *,
    content_weight: float = 0.8,
    position_weight: float = 0.2,
    decoder_weight: float = 0.05,
    t=None,
    eps: np.ndarray | None = None,
    content_eps: np.ndarray | None = None,
) -> tl.Tensor:
    """
    Pérdida del modo enmascarado.

    ``content_weight · MSE(ruido de contenido, filas ausentes)``
    ``+ position_weight · MSE(ruido posicional, todas las filas)``
    ``+ decoder_weight · MSE(decoder(tokens limpios), píxeles)``.

    Los objetivos de contenido son los tokens limpios de ``patch_embed``
    desacoplados del grafo. Sin filas ausentes en el lote se usa solo el
    término posicional con peso 1 y se registra un aviso.

    Returns:
        Tensor: Pérdida escalar.

    Raises:
        ValueError: Si el lote está vacío.
    """
    if not np.any(batch.missing):
        logger.warning("Lote enmascarado sin piezas ausentes: solo término posicional")
        return loss_plain(batch, model, sched, rng, t=t, eps=eps)

    t, eps, noisy = _draw(batch, sched, rng, t, eps)
    tokens = model.patch_embed(batch.pieces)
    clean = tokens.detach().numpy()
    if content_eps is None:
        content_eps = rng.standard_normal(clean.shape)
    noisy_content = q_sample(clean, t, content_eps, sched)

    out = model.forward(
        batch.pieces, noisy, t, batch.missing, noisy_content, clean_tokens=tokens
    )
    position_term = _masked_mse(out.positions, eps, ~batch.anchors)
    content_term = _masked_mse(out.content, content_eps, batch.missing)
    total = combine_masked(content_term, position_term, content_weight, position_weight)

    decoder = getattr(model, "decoder", None)
    if decoder is not None and decoder_weight > 0:
        recon = model.decode_content(tokens)
        rows = np.ones(batch.missing.shape, dtype=bool)
        total = tl.add(total, tl.scale(_masked_mse(recon, batch.pieces, rows), decoder_weight))
    return total


# ---------------------------------------------------------------------------
# Entrenamiento
# ---------------------------------------------------------------------------


class Trainer:
    """
    Entrena un denoiser sobre la partición ``train`` de un corpus.

    Args:
        experiment: Configuración del experimento.
        corpus: Directorio del corpus o su ``manifest.json``.
        out_dir: Directorio de la ejecución (``loss.csv``, ``ckpt_*.bin``,
            ``eval.csv``); sin él no se escribe nada.
        resume: Checkpoint desde el que continuar.
    """

    def __init__(
        self,
        experiment: ExperimentConfig,
        corpus: str | os.PathLike,
        out_dir: str | os.PathLike | None = None,
        resume: Checkpoint | None = None,
    ) -> None:
        self.experiment = experiment
        self.corpus = Path(corpus)
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.train_config: TrainConfig = experiment.train_config()
        self.manifest = read_manifest(self.corpus)
        self.params = self.manifest.params
        if experiment.modality != self.params.mode:
            raise UsageError(
                f"El experimento es {experiment.modality} y el corpus "
                f"{self.corpus} es {self.params.mode}"
            )
        self.sources = [source.data for source in load_corpus(self.corpus, "train")]
        if not self.sources:
            raise CorpusError("El corpus no tiene muestras de entrenamiento", str(self.corpus))

        probe = build_instance(self.sources[0], self.params, np.random.default_rng(0))
        self.table = pe_table(probe.layout)
        config = experiment.denoiser_config(probe.piece_shape)
        if config.anchor is None:
            config = config.model_copy(update={"anchor": self.params.anchor})
        self.schedule_config = experiment.schedule_config()
        self.sched = schedule_from_config(self.schedule_config)

        if resume is not None:
            if resume.config != config:
                raise ConfigMismatchError(
                    "El checkpoint no corresponde a este experimento.\n"
                    f"  checkpoint: {resume.config.model_dump_json()}\n"
                    f"  esperada:   {config.model_dump_json()}"
                )
            self.model = resume.build_model()
            self.adam = resume.adam
            self.step = resume.step
        else:
            self.model = Denoiser(config, seed=self.train_config.seed)
            self.adam = tl.AdamState(lr=self.train_config.lr)
            self.step = 0
        self.last_checkpoint: Path | Checkpoint | None = None

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(len(self.sources) / self.train_config.batch_size)

    @property
    def total_steps(self) -> int:
        cfg = self.train_config
        if cfg.steps is not None:
            return cfg.steps
        return (cfg.epochs or 0) * self.steps_per_epoch

    def batch_indices(self, step: int) -> np.ndarray:
        """Índices de las muestras del paso ``step`` (permutación fija por época)."""
        epoch, offset = divmod(step, self.steps_per_epoch)
        order = np.random.default_rng([self.train_config.seed, epoch, 2]).permutation(
            len(self.sources)
        )
        size = self.train_config.batch_size
        return order[offset * size : (offset + 1) * size]

    def make_instances(self, indices: np.ndarray, rng: np.random.Generator) -> list[PuzzleInstance]:
        """Construye los puzzles del paso con recorte aleatorio, volteo y máscara."""
        cfg = self.train_config
        spatial = self.params.mode == "spatial"
        instances = []
        for index in indices:
            flip = bool(spatial and cfg.flip and rng.random() < 0.5)
            instance = build_instance(
                self.sources[int(index)],
                self.params,
                rng,
                crop="random" if spatial else "center",
                flip=flip,
            )
            if instance.anchor and not self.model.config.anchored:
                instance = dataclasses.replace(instance, anchor=False)
            if cfg.masked:
                k = int(rng.integers(0, max_missing(instance.n, cfg.mask_fraction_max) + 1))
                instance = apply_mask(instance, k, rng, allow_over=True)
            instances.append(instance)
        return instances

    def loss(self, batch: PuzzleBatch, rng: np.random.Generator) -> tl.Tensor:
        cfg = self.train_config
        if cfg.masked:
            return loss_masked(
                batch,
                self.model,
                self.sched,
                rng,
                content_weight=cfg.content_weight,
                position_weight=cfg.position_weight,
                decoder_weight=cfg.decoder_weight,
            )
        return loss_plain(batch, self.model, self.sched, rng)

    def train_step(self) -> float:
        """
        Ejecuta un paso de optimización.

        Raises:
            NumericError: Si la pérdida o algún gradiente no es finito.
        """
        rng = np.random.default_rng([self.train_config.seed, self.step])
        batch = make_batch(self.make_instances(self.batch_indices(self.step), rng), self.table)
        params = self.model.named_parameters()
        with tl.GradTape() as tape:
            loss = self.loss(batch, rng)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError(
                f"Pérdida no finita ({value}) en el paso {self.step + 1}",
                last_checkpoint=self.last_checkpoint,
            )
        grads = tl.backward(loss, params, tape)
        try:
            tl.adam_step(self.adam, params, grads)
        except NumericError as e:
            raise NumericError(
                f"{e.detail} en el paso {self.step + 1}", last_checkpoint=self.last_checkpoint
            ) from e
        self.step += 1
        return value

    def checkpoint(self) -> Checkpoint:
        ckpt = Checkpoint.capture(
            self.model,
            self.schedule_config,
            self.adam,
            self.step,
            self.train_config.seed,
            self.train_config,
        )
        self.last_checkpoint = ckpt
        if self.out_dir is not None:
            self.last_checkpoint = save(ckpt, self.out_dir / f"ckpt_{self.step:06d}.bin")
        return ckpt

    def evaluate(self) -> list[list[str]]:
        """Resuelve una muestra de la partición de test con los pesos actuales."""
        from app.solver import evaluate_sweep

        instances = []
        for _, instance in iter_puzzles(self.corpus, "test"):
            instances.append(instance)
            if len(instances) >= settings.eval_limit:
                break
        if not instances:
            logger.warning("Evaluación periódica omitida: el corpus no tiene partición de test")
            return []
        sweep = [0]
        if self.model.config.masked:
            sweep.append(max(1, max(len(inst.missing) for inst in instances)))
        try:
            result = evaluate_sweep(
                self.model,
                self.sched,
                instances,
                sweep,
                self.train_config.seed,
                stride=settings.eval_stride,
            )
        except ValueError as e:
            logger.warning(f"Evaluación periódica omitida: {e}")
            return []
        return [[str(self.step)] + row.as_csv_row() for row in result.rows]

    def run(self) -> Iterator[Checkpoint]:
        """
        Entrena hasta completar el presupuesto emitiendo checkpoints.

        Yields:
            Checkpoint: Estado periódico y el final. Con presupuesto cero se
            emite el estado inicial.

        Raises:
            NumericError: Si la pérdida diverge; el último checkpoint se
                conserva en ``last_checkpoint``.
        """
        cfg = self.train_config
        total = self.total_steps
        checkpoint_every = cfg.checkpoint_every or settings.checkpoint_every
        eval_every = cfg.eval_every or settings.eval_every
        loss_log = eval_log = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            loss_log = CsvLog(self.out_dir / "loss.csv", LOSS_CSV_HEADER)
            loss_log.truncate(lambda row: int(row[0]) <= self.step)
            if eval_every:
                eval_log = CsvLog(self.out_dir / "eval.csv", TRAIN_EVAL_HEADER)
                eval_log.truncate(lambda row: int(row[0]) <= self.step)

        logger.info(
            f"Entrenamiento {self.model.config.modality}: {len(self.sources)} muestras, "
            f"{self.model.num_parameters} parámetros, pasos {self.step} → {total}"
        )
        if self.step >= total:
            yield self.checkpoint()
            return

        started = time.perf_counter()
        progress = tqdm(
            range(self.step, total),
            initial=0,
            total=total - self.step,
            desc="train",
            disable=not sys.stderr.isatty(),
        )
        try:
            for _ in progress:
                try:
                    value = self.train_step()
                except NumericError as e:
                    # Los pesos no se tocaron: el estado actual es el último bueno
                    if self.out_dir is not None:
                        self.checkpoint()
                        e.last_checkpoint = self.last_checkpoint
                    logger.error(f"Entrenamiento detenido: {e.detail}")
                    raise
                if loss_log is not None:
                    loss_log.append(
                        [self.step, f"{value:.8g}", f"{self.adam.lr:.8g}",
                         f"{time.perf_counter() - started:.3f}"]
                    )
                progress.set_postfix(loss=f"{value:.4f}")
                if eval_log is not None and self.step % eval_every == 0:
                    for row in self.evaluate():
                        eval_log.append(row)
                    eval_log.flush()
                if self.step % checkpoint_every == 0 or self.step == total:
                    if loss_log is not None:
                        loss_log.flush()
                    yield self.checkpoint()
        finally:
            if loss_log is not None:
                loss_log.flush()
        logger.info(f"Entrenamiento terminado en el paso {self.step}")


def train(
    experiment: ExperimentConfig,
    corpus: str | os.PathLike,
    out_dir: str | os.PathLike | None = None,
    resume: Checkpoint | None = None,
) -> Iterator[Checkpoint]:
    """Atajo de ``Trainer(...).run()``."""
    return Trainer(experiment, corpus, out_dir, resume).run()
