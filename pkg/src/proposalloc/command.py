import json
import logging
import pprint
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

import proposalloc
from proposalloc import wsol_eval
from proposalloc.arguments import Arguments
from proposalloc.arguments import EvaluateArgs
from proposalloc.arguments import HarvestArgs
from proposalloc.arguments import OptimizeArgs
from proposalloc.arguments import RunArgs
from proposalloc.arguments import SynthArgs
from proposalloc.arguments import TrainScorerArgs
from proposalloc.config import Config
from proposalloc.exceptions import ConfigError
from proposalloc.exceptions import EmptyPool
from proposalloc.exceptions import InvalidData
from proposalloc.exceptions import MissingInput
from proposalloc.imaging import GrayMap
from proposalloc.imaging import Image
from proposalloc.imaging import read_gray_map
from proposalloc.imaging import resize_bilinear
from proposalloc.imaging import resize_image
from proposalloc.imaging import write_gray_map
from proposalloc.losses import LocalizationMap
from proposalloc.mapopt import OptTrace
from proposalloc.mapopt import optimize_map
from proposalloc.mapopt import save_trace
from proposalloc.model import Dataset
from proposalloc.model import Output
from proposalloc.model import Record
from proposalloc.proposals import ProposalPool
from proposalloc.proposals import harvest_proposals
from proposalloc.proposals import load_pools
from proposalloc.proposals import pool_to_json
from proposalloc.proposals import save_pools
from proposalloc.scorer import Scorer
from proposalloc.scorer import accuracy
from proposalloc.scorer import load_classifier
from proposalloc.scorer import load_score_cache
from proposalloc.scorer import predict_topk
from proposalloc.scorer import save_classifier
from proposalloc.scorer import train_tiny_classifier
from proposalloc.synth import SynthSpec
from proposalloc.synth import companion_settings
from proposalloc.synth import self_check
from proposalloc.synth import synth_generate
from proposalloc.utils import atomic_write
from proposalloc.utils import image_rng
from proposalloc.utils import ordered_map

logger = logging.getLogger(proposalloc.__title__)

CONFIG_FILE = "config.json"
MIN_SELF_CHECK = 0.95


def init(args: List[str]):
    """Execute the ``init`` command.

    :param args:
        The command-line arguments.
    """
    init_args: Arguments = Arguments.from_args(args)

    config = setup(init_args)

    logger.debug("Generating Output Structure")
    for directory in Output.LIST:
        (config.output_dir / directory).mkdir(parents=True, exist_ok=True)

    summarize("init", config=str(init_args.config), output=str(config.output_dir))


def synth(args: List[str]):
    """Execute the ``synth`` command.

    ``--out`` names the dataset root; a companion config is written there
    unless one exists.

    :param args:
        The command-line arguments.
    """
    synth_args: SynthArgs = SynthArgs.from_args(args)

    configure_logging(synth_args)

    return synth_impl(synth_args)


def train_scorer(args: List[str]):
    """Execute the ``train-scorer`` command.

    :param args:
        The command-line arguments.
    """
    train_args: TrainScorerArgs = TrainScorerArgs.from_args(args)

    config = setup(train_args)

    return train_scorer_impl(config)


def harvest(args: List[str]):
    """Execute the ``harvest`` command.

    :param args:
        The command-line arguments.
    """
    harvest_args: HarvestArgs = HarvestArgs.from_args(args)

    config = setup(harvest_args)

    return harvest_impl(config)


def optimize(args: List[str]):
    """Execute the ``optimize`` command.

    :param args:
        The command-line arguments.
    """
    optimize_args: OptimizeArgs = OptimizeArgs.from_args(args)

    config = setup(optimize_args)

    return optimize_impl(config, optimize_args.no_crf)


def evaluate(args: List[str]):
    """Execute the ``evaluate`` command.

    :param args:
        The command-line arguments.
    """
    evaluate_args: EvaluateArgs = EvaluateArgs.from_args(args)

    config = setup(evaluate_args)

    return evaluate_impl(config, evaluate_args.source)


def configure_logging(args: Arguments) -> None:
    if not logger.handlers:
        logger.addHandler(logging.StreamHandler(sys.stdout))
    logger.setLevel(logging.DEBUG if args.verbose else logging.INFO)

    logger.info(pprint.pformat(args))


def setup(args: Arguments) -> Config:
    configure_logging(args)

    config = Config.load(args.config)
    if isinstance(args, RunArgs):
        config = config.override(
            seed=args.seed,
            jobs=args.jobs,
            output=None if args.out is None else str(args.out),
        )
        if config.jobs < 1:
            raise ConfigError(f"--jobs must be at least 1, got {config.jobs}")

    config.output_dir.mkdir(parents=True, exist_ok=True)
    return config


def summarize(command: str, **values: Any) -> None:
    """Log the machine-readable summary line of a successful run."""
    line = {"command": command, "status": "ok", **values}
    logger.info(json.dumps(line, sort_keys=True))


def load_dataset(config: Config) -> Dataset:
    if not config.data_dir.is_dir():
        raise MissingInput(f"Dataset directory not found: '{config.data_dir}'")
    dataset = Dataset.load(config.data_dir)
    logger.info(f"Loaded {len(dataset.records)} records from '{config.data_dir}'")
    return dataset


def working_image(dataset: Dataset, record: Record, config: Config) -> Image:
    size = config.working_size
    return resize_image(dataset.read_image(record), size, size)


def synth_impl(args: SynthArgs):
    root = args.out if args.out is not None else Path("./data").resolve()
    try:
        spec = SynthSpec(
            num_images=args.num_images,
            num_classes=args.num_classes,
            image_size=args.image_size,
            distractors_per_image=args.distractors,
            attention_maps_per_image=args.maps,
            noise_level=args.noise,
            seed=args.seed or 0,
        )
    except InvalidData as e:
        raise ConfigError(str(e)) from e

    dataset = synth_generate(spec, root, jobs=args.jobs or 1)
    recovered = self_check(root)
    if recovered < MIN_SELF_CHECK:
        logger.warning(f"Only {recovered:.1%} of gt boxes recoverable from attention")

    config_file = root / CONFIG_FILE
    if not config_file.exists():
        Config.from_json(companion_settings(spec), root).write(config_file)
        logger.info(f"Wrote companion config '{config_file}'")

    summarize(
        "synth", images=len(dataset.records), root=str(root), self_check=recovered
    )


def train_scorer_impl(config: Config):
    dataset = load_dataset(config)
    num_classes = dataset.num_classes
    settings = config.scorer

    images = ordered_map(
        lambda record: working_image(dataset, record, config),
        dataset.records,
        config.jobs,
    )
    labeled = [(img, record.label) for img, record in zip(images, dataset.records)]

    order = np.random.default_rng(config.seed).permutation(len(labeled))
    held = min(int(round(settings.holdout_fraction * len(labeled))), len(labeled) - 1)
    holdout = [labeled[i] for i in sorted(order[:held])]
    train = [labeled[i] for i in sorted(order[held:])]
    logger.info(f"Training on {len(train)} images, holding out {len(holdout)}")

    classifier = train_tiny_classifier(
        train,
        settings.epochs,
        settings.learning_rate,
        config.seed,
        num_classes=num_classes,
        downsample=settings.downsample,
        batch_size=settings.batch_size,
    )
    save_classifier(config.output_dir / Output.CLASSIFIER, classifier)

    results: Dict[str, Any] = {
        "num_classes": num_classes,
        "num_train": len(train),
        "num_holdout": len(holdout),
        "train_accuracy": accuracy(classifier, train),
        "holdout_accuracy": accuracy(classifier, holdout) if holdout else None,
    }
    atomic_write(
        config.output_dir / Output.SCORER_REPORT,
        json.dumps(results, indent=2, sort_keys=True),
    )
    summarize("train-scorer", **results)


def load_scorer(config: Config) -> Scorer:
    cache = config.score_cache_path
    if cache is not None:
        logger.info(f"Scoring with cached posteriors from '{cache}'")
        return load_score_cache(cache)
    return load_classifier(config.output_dir / Output.CLASSIFIER)


def harvest_impl(config: Config):
    dataset = load_dataset(config)
    scorer = load_scorer(config)
    size = config.working_size

    def harvest_one(record: Record) -> Dict[str, Any]:
        img = working_image(dataset, record, config)
        stack = dataset.read_attention(record).resized(size, size)
        try:
            pool: Optional[ProposalPool] = harvest_proposals(
                img,
                record.label,
                stack,
                scorer,
                config.k,
                config.blur_sigma,
                min_area=config.min_component_area,
                image_id=record.image_id,
            )
        except EmptyPool:
            logger.warning(f"No proposal for '{record.image_id}'")
            pool = None
        return pool_to_json(record.image_id, record.label, pool)

    records = ordered_map(harvest_one, dataset.records, config.jobs)
    save_pools(config.output_dir / Output.PROPOSALS, records)

    summarize(
        "harvest",
        images=len(records),
        proposals=sum(len(r["proposals"]) for r in records),
        empty_pools=sum(not r["proposals"] for r in records),
    )


def pool_for(pools: Dict[str, ProposalPool], record: Record) -> ProposalPool:
    if record.image_id not in pools:
        raise MissingInput(f"No proposal record for '{record.image_id}'; rerun harvest")
    return pools[record.image_id]


def optimize_impl(config: Config, no_crf: bool = False):
    dataset = load_dataset(config)
    pools = load_pools(config.output_dir / Output.PROPOSALS)
    opt_config = config.opt_config(no_crf=no_crf)
    size = config.working_size
    if no_crf:
        logger.info("CRF term disabled")

    def optimize_one(record: Record) -> Optional[float]:
        pool = pool_for(pools, record)
        if len(pool) == 0:
            logger.warning(f"Empty pool for '{record.image_id}', writing a uniform map")
            S = LocalizationMap.from_foreground(np.full((size, size), 0.5))
            trace = OptTrace(())
        else:
            img = working_image(dataset, record, config)
            stack = dataset.read_attention(record).resized(size, size)
            rng = image_rng(config.seed, record.image_id)
            S, trace = optimize_map(img, stack, pool, opt_config, rng)
        write_gray_map(
            config.output_dir / Output.MAPS / f"{record.image_id}.raw",
            GrayMap(S.foreground),
        )
        save_trace(config.output_dir / Output.TRACES / f"{record.image_id}.json", trace)
        return float(trace.losses[-1]) if len(trace) else None

    final_losses = ordered_map(optimize_one, dataset.records, config.jobs)
    finished = [loss for loss in final_losses if loss is not None]

    summarize(
        "optimize",
        images=len(final_losses),
        uniform_maps=len(final_losses) - len(finished),
        mean_final_loss=float(np.mean(finished)) if finished else None,
        crf=not no_crf,
    )


def attention_baseline(dataset: Dataset, record: Record, pool: ProposalPool) -> GrayMap:
    """Source map of the top-1 proposal, or the stack mean without proposals."""
    stack = dataset.read_attention(record)
    if len(pool) == 0:
        return stack.mean().normalized()
    return stack.maps[pool[0].map_index].normalized()


def predictions_for(
    config: Config, dataset: Dataset, images: Sequence[Image]
) -> Optional[List[List[int]]]:
    path = config.output_dir / Output.CLASSIFIER
    if path.exists():
        scorer: Scorer = load_classifier(path)
        keys: List[Dict[str, Any]] = [{} for _ in images]
    elif config.score_cache_path is not None:
        scorer = load_score_cache(config.score_cache_path)
        keys = [{"image_id": record.image_id} for record in dataset.records]
    else:
        logger.warning("No classifier or score cache; Top-k Loc is not reported")
        return None
    k = min(5, scorer.num_classes)
    return [predict_topk(scorer, img, k, **key) for img, key in zip(images, keys)]


def evaluate_impl(config: Config, source: str = "maps"):
    dataset = load_dataset(config)
    size = config.working_size
    pools: Dict[str, ProposalPool] = {}
    if source == "attention":
        pools = load_pools(config.output_dir / Output.PROPOSALS)

    def load_one(record: Record):
        native = dataset.read_image(record)
        if source == "maps":
            path = config.output_dir / Output.MAPS / f"{record.image_id}.raw"
            gray = read_gray_map(path)
        else:
            gray = attention_baseline(dataset, record, pool_for(pools, record))
        gray = resize_bilinear(gray, native.width, native.height)
        working = resize_image(native, size, size)
        S = LocalizationMap.from_foreground(gray.values)
        return S, dataset.annotation(record), working

    loaded = ordered_map(load_one, dataset.records, config.jobs)
    maps = [item[0] for item in loaded]
    gts = [item[1] for item in loaded]
    predictions = predictions_for(config, dataset, [item[2] for item in loaded])

    report, box_accuracy = wsol_eval.evaluate(maps, gts, predictions, jobs=config.jobs)
    wsol_eval.save_report(config.output_dir / Output.report(source), report)
    atomic_write(config.output_dir / Output.curve(source), box_accuracy.to_csv())

    summarize("evaluate", source=source, **report.to_json())
