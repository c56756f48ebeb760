"""Command-line entry point.

Exit codes: 0 success, 1 unexpected failure, 2 usage error (argparse),
3 missing file, 4 invalid configuration, 5 dimension mismatch,
6 malformed data, 7 output directory locked.
"""

import argparse
import json
import os
import sys
from contextlib import contextmanager
from pathlib import Path

from . import __version__
from .bootstrap import run_cycles, run_independent
from .config import RunConfig, apply_flag_overrides, load_run_config
from .data import ingest_corpus, ingest_dataset, write_corpus, write_dataset
from .errors import BoterError, ConfigError, DataFormatError, DimensionMismatchError
from .evaluation import AblationGrid, evaluate, run_ablation
from .learner import load_checkpoint
from .retrieval import FlatIndex, build_query, encode, retrieve_top_k
from .selector import SelectorModel
from .synthetic import SyntheticSpec, generate_synthetic, split_dataset

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_MISSING_FILE = 3
EXIT_CONFIG = 4
EXIT_DIMENSION = 5
EXIT_DATA_FORMAT = 6
EXIT_LOCKED = 7

OUTPUT_DIR_ENV = "BOTER_OUTPUT_DIR"


class LockError(BoterError):
    pass


def _resolve_output_dir(config: RunConfig) -> Path:
    candidate = config.output_dir or os.environ.get(OUTPUT_DIR_ENV)
    if not candidate:
        raise ConfigError(
            f"no output directory: pass --output-dir, set output_dir in the config, "
            f"or set {OUTPUT_DIR_ENV}"
        )
    path = Path(candidate)
    path.mkdir(parents=True, exist_ok=True)
    return path


@contextmanager
def _locked(out_dir: Path):
    lock_path = out_dir / "run.lock"
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockError(f"output dir {out_dir} is locked (remove {lock_path} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock_path.unlink(missing_ok=True)


def _require_file(path: str | None, what: str) -> Path:
    if not path:
        raise ConfigError(f"missing required path: {what}")
    resolved = Path(path)
    if not resolved.exists():
        raise FileNotFoundError(f"no such file: {resolved} ({what})")
    return resolved


def _load_config(args) -> RunConfig:
    config = load_run_config(getattr(args, "config", None))
    return apply_flag_overrides(config, args)


def _require_seed(config: RunConfig) -> RunConfig:
    if config.seed is None:
        raise ConfigError("a seed is required: pass --seed or set 'seed' in the config")
    return config


def _channels(config: RunConfig):
    from .evaluation import parse_channel_tags

    return parse_channel_tags(config.channels)


def cmd_synth(args) -> int:
    config = _require_seed(_load_config(args))
    out_dir = _resolve_output_dir(config)
    spec = SyntheticSpec(
        rng_seed=config.seed,
        n_samples=args.n_train + args.n_test,
        corpus_size=args.corpus_size,
        planted_per_sample=args.planted,
        distractor_noise_rate=args.noise,
        answer_vocab_size=args.vocab_size,
    )
    with _locked(out_dir):
        samples, corpus, oracle = generate_synthetic(spec)
        train, test = split_dataset(samples, args.n_train)
        write_dataset(train, out_dir / "train.jsonl")
        write_dataset(test, out_dir / "test.jsonl")
        write_corpus(corpus, out_dir / "corpus.jsonl")
        with (out_dir / "oracle.jsonl").open("w", encoding="utf-8") as handle:
            for sample_id in sorted(oracle):
                handle.write(json.dumps(
                    {"sample_id": sample_id, "doc_ids": list(oracle[sample_id])},
                    sort_keys=True) + "\n")
    print(f"synth: wrote {len(train)} train, {len(test)} test, {len(corpus)} docs to {out_dir}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    config = _load_config(args)
    out_dir = _resolve_output_dir(config)
    summary = {}
    if config.train_path:
        samples = ingest_dataset(_require_file(config.train_path, "train dataset"))
        summary["train_samples"] = len(samples)
    if config.test_path:
        samples = ingest_dataset(_require_file(config.test_path, "test dataset"))
        summary["test_samples"] = len(samples)
    if config.corpus_path:
        corpus = ingest_corpus(_require_file(config.corpus_path, "corpus"))
        summary["corpus_documents"] = len(corpus)
    if not summary:
        raise ConfigError("nothing to ingest: provide --train, --test, or --corpus")
    with _locked(out_dir):
        with (out_dir / "ingest_summary.json").open("w", encoding="utf-8") as handle:
            json.dump(summary, handle, sort_keys=True, indent=2)
            handle.write("\n")
    print("ingest: " + ", ".join(f"{k}={v}" for k, v in sorted(summary.items())))
    return EXIT_OK


def cmd_index(args) -> int:
    config = _load_config(args)
    out_dir = _resolve_output_dir(config)
    corpus = ingest_corpus(_require_file(config.corpus_path, "corpus"))
    with _locked(out_dir):
        index = FlatIndex.build(corpus, config.encoder_dim)
        index.save(out_dir / "index.bin")
    print(f"index: {len(index)} documents, dimension {index.dimension} -> {out_dir / 'index.bin'}")
    return EXIT_OK


def cmd_retrieve(args) -> int:
    config = _load_config(args)
    index = FlatIndex.load(_require_file(config.index_path, "index"))
    query = encode(args.query, index.dimension)
    ranked = retrieve_top_k(index, query, args.k)
    for doc_id, score in ranked.entries:
        print(f"{doc_id}\t{score:.6f}")
    return EXIT_OK


def _load_training_data(config: RunConfig):
    train = ingest_dataset(_require_file(config.train_path, "train dataset"))
    test = ingest_dataset(_require_file(config.test_path, "test dataset"))
    corpus = ingest_corpus(_require_file(config.corpus_path, "corpus"))
    oracle = None
    if config.oracle_path:
        oracle = {}
        with _require_file(config.oracle_path, "oracle labels").open(encoding="utf-8") as handle:
            for line in handle:
                if line.strip():
                    record = json.loads(line)
                    oracle[record["sample_id"]] = tuple(record["doc_ids"])
    index = None
    if config.index_path:
        index = FlatIndex.load(_require_file(config.index_path, "index"))
    return train, test, corpus, oracle, index


def cmd_train(args) -> int:
    config = _require_seed(_load_config(args))
    out_dir = _resolve_output_dir(config)
    train, test, corpus, oracle, index = _load_training_data(config)
    with _locked(out_dir):
        if args.mode == "cycle":
            history = run_cycles(
                train, test, corpus, config.cycle, channels=_channels(config),
                feature_dim=config.feature_dim, encoder_dim=config.encoder_dim,
                index=index, oracle_labels=oracle, out_dir=out_dir,
            )
            final = history[-1]
        else:
            final = run_independent(
                train, test, corpus, config.cycle, channels=_channels(config),
                feature_dim=config.feature_dim, encoder_dim=config.encoder_dim,
                index=index, oracle_labels=oracle, out_dir=out_dir,
            )
            history = [final]
    for state in history:
        print(f"train[{state.metrics['mode']}] cycle={state.cycle_index} "
              f"accuracy={state.metrics['accuracy']:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _load_config(args)
    out_dir = _resolve_output_dir(config)
    checkpoint_dir = Path(args.checkpoints)
    selector_scorer, _ = load_checkpoint(_require_file(checkpoint_dir / "selector.bin", "selector checkpoint"))
    answerer_scorer, vocab = load_checkpoint(_require_file(checkpoint_dir / "answerer.bin", "answerer checkpoint"))
    if not vocab:
        raise DataFormatError(f"{checkpoint_dir / 'answerer.bin'}: checkpoint carries no vocabulary")
    from .answerer import AnswererModel
    from .bootstrap import _module_channels

    selector_channels, answerer_channels = _module_channels(_channels(config))
    selector = SelectorModel(scorer=selector_scorer, channels=selector_channels)
    answerer = AnswererModel(vocab=vocab, scorer=answerer_scorer, channels=answerer_channels)
    test = ingest_dataset(_require_file(config.test_path, "test dataset"))
    corpus = ingest_corpus(_require_file(config.corpus_path, "corpus"))
    if config.index_path:
        index = FlatIndex.load(_require_file(config.index_path, "index"))
    else:
        index = FlatIndex.build(corpus, config.encoder_dim)
    retrieved = {
        s.id: retrieve_top_k(index, encode(build_query(s), index.dimension),
                             config.cycle.k_candidate)
        for s in test
    }
    report = evaluate(
        test, retrieved, corpus, selector, answerer,
        k_test=config.cycle.k_test, selection_mode=config.cycle.selection_mode,
        answer_mode=config.cycle.answer_mode, rng_seed=config.cycle.rng_seed,
        fingerprint=config.cycle.fingerprint(),
    )
    with _locked(out_dir):
        with (out_dir / "eval_report.json").open("w", encoding="utf-8") as handle:
            json.dump(
                {"mean_accuracy": report.mean_accuracy,
                 "config_fingerprint": report.config_fingerprint,
                 "per_sample": [list(entry) for entry in report.per_sample]},
                handle, sort_keys=True, indent=2)
            handle.write("\n")
    print(f"eval: mean_accuracy={report.mean_accuracy:.4f} over {len(report.per_sample)} samples")
    return EXIT_OK


def _split_csv(raw: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in raw.split(",") if part.strip())


def _split_cells(raw: str) -> tuple[str, ...]:
    # Cell values may themselves be comma lists, so cells separate on ";".
    return tuple(part.strip() for part in raw.split(";") if part.strip())


def cmd_ablate(args) -> int:
    config = _require_seed(_load_config(args))
    out_dir = _resolve_output_dir(config)
    train, test, corpus, oracle, _ = _load_training_data(config)
    k_settings = []
    for item in _split_csv(args.k_settings):
        parts = item.split(":")
        if len(parts) != 3:
            raise ConfigError(f"bad --k-settings entry {item!r}; expected kc:ktrain:ktest")
        k_settings.append(tuple(int(p) for p in parts))
    grid = AblationGrid(
        selection_modes=tuple(_SELECTION_MAP[s] for s in _split_csv(args.selections)),
        answer_modes=tuple(_ANSWER_MAP[a] for a in _split_csv(args.answerings)),
        labeling_modes=tuple(_LABELING_MAP[l] for l in _split_csv(args.labelings)),
        k_settings=tuple(k_settings),
        channel_settings=_split_cells(args.channel_settings) or ("query-features",),
        training_methods=_split_csv(args.methods),
    )
    with _locked(out_dir):
        rows = run_ablation(
            grid, train, test, corpus, config.cycle,
            feature_dim=config.feature_dim, encoder_dim=config.encoder_dim,
            oracle_labels=oracle, out_dir=out_dir,
        )
    for row in rows:
        status = row["error"] or f"accuracy={row['accuracy']:.4f}"
        print(f"ablate[{row['training_method']}|{row['selection_mode']}|{row['answer_mode']}"
              f"|{row['labeling_mode']}|k={row['k_candidate']}:{row['k_train']}:{row['k_test']}] {status}")
    return EXIT_OK


_SELECTION_MAP = {"selector": "selector", "dpr": "dpr_order", "random": "random"}
_ANSWER_MAP = {"vote": "voting", "concat": "concatenating"}
_LABELING_MAP = {"conj": "predictions_and_weak", "pred-only": "predictions_only"}


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument("--seed", type=int, help="global random seed")
    parser.add_argument("--output-dir", dest="output_dir",
                        help=f"output directory (fallback: ${OUTPUT_DIR_ENV})")
    parser.add_argument("--encoder-dim", dest="encoder_dim", type=int,
                        help="retrieval embedding dimension (default 256)")
    parser.add_argument("--feature-dim", dest="feature_dim", type=int,
                        help="hashed feature dimension (default 4096)")
    parser.add_argument("--channels",
                        help="optional feature channels (default query-features); "
                             "recognized tags: query-features, context")


def _add_data_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--train", help="train dataset JSONL")
    parser.add_argument("--test", help="test dataset JSONL")
    parser.add_argument("--corpus", help="corpus JSONL")
    parser.add_argument("--oracle", help="planted-document oracle JSONL (synthetic data)")
    parser.add_argument("--index", help="prebuilt index file")


def _add_cycle_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--k-candidate", dest="k_candidate", type=int,
                        help="retrieved candidates per sample (default 30)")
    parser.add_argument("--k-train", dest="k_train", type=int,
                        help="documents selected for answerer training (default 5)")
    parser.add_argument("--k-test", dest="k_test", type=int,
                        help="documents selected at inference (default 5)")
    parser.add_argument("--cycles", type=int, help="number of training cycles (default 3)")
    parser.add_argument("--selection", choices=sorted(_SELECTION_MAP),
                        help="document selection strategy")
    parser.add_argument("--answering", choices=sorted(_ANSWER_MAP),
                        help="answer aggregation strategy")
    parser.add_argument("--labeling", choices=sorted(_LABELING_MAP),
                        help="pseudo-labeling rule")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boter",
        description="Bootstrapped document selection and question answering.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        _add_common_flags(p)
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "generate a synthetic benchmark with oracle labels")
    p.add_argument("--n-train", dest="n_train", type=int, default=40,
                   help="training samples (default 40)")
    p.add_argument("--n-test", dest="n_test", type=int, default=10,
                   help="test samples (default 10)")
    p.add_argument("--corpus-size", dest="corpus_size", type=int, default=260,
                   help="corpus documents (default 260)")
    p.add_argument("--planted", type=int, default=2,
                   help="planted documents per sample (default 2)")
    p.add_argument("--noise", type=float, default=0.5,
                   help="distractor misleading-answer rate (default 0.5)")
    p.add_argument("--vocab-size", dest="vocab_size", type=int, default=40,
                   help="answer vocabulary size (default 40)")

    p = add("ingest", cmd_ingest, "validate dataset and corpus files")
    _add_data_flags(p)

    p = add("index", cmd_index, "build and save the retrieval index")
    _add_data_flags(p)

    p = add("retrieve", cmd_retrieve, "print top-k documents for a query")
    _add_data_flags(p)
    p.add_argument("--query", required=True, help="query text")
    p.add_argument("--k", type=int, default=5, help="number of documents to print (default 5)")

    p = add("train", cmd_train, "run cycle or independent training")
    _add_data_flags(p)
    _add_cycle_flags(p)
    p.add_argument("--mode", choices=("cycle", "independent"), default="cycle",
                   help="training procedure (default cycle)")

    p = add("eval", cmd_eval, "evaluate saved checkpoints on a test split")
    _add_data_flags(p)
    _add_cycle_flags(p)
    p.add_argument("--checkpoints", required=True, help="cycle checkpoint directory")

    p = add("ablate", cmd_ablate, "run an ablation grid")
    _add_data_flags(p)
    _add_cycle_flags(p)
    p.add_argument("--selections", default="selector",
                   help="comma list: selector,dpr,random (default selector)")
    p.add_argument("--answerings", default="vote", help="comma list: vote,concat (default vote)")
    p.add_argument("--labelings", default="conj", help="comma list: conj,pred-only (default conj)")
    p.add_argument("--k-settings", dest="k_settings", default="30:5:5",
                   help="comma list of kc:ktrain:ktest triples (default 30:5:5)")
    p.add_argument("--channel-settings", dest="channel_settings", default="query-features",
                   help="semicolon list of channel-tag sets, e.g. "
                        "'query-features,context;context' (default query-features)")
    p.add_argument("--methods", default="cycle",
                   help="comma list: cycle,independent (default cycle)")
    return parser


def _fail(code: int, kind: str, exc: Exception) -> int:
    message = " ".join(str(exc).split())
    print(f'error kind={kind} message="{message}"', file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        return _fail(EXIT_MISSING_FILE, "missing_file", exc)
    except LockError as exc:
        return _fail(EXIT_LOCKED, "locked", exc)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except DimensionMismatchError as exc:
        return _fail(EXIT_DIMENSION, "dimension_mismatch", exc)
    except DataFormatError as exc:
        return _fail(EXIT_DATA_FORMAT, "data_format", exc)
    except BoterError as exc:
        return _fail(EXIT_FAILURE, "error", exc)


if __name__ == "__main__":
    raise SystemExit(main())
