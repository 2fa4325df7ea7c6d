"""
Command-line entry point.

    python bmp.py index    --input docs.jsonl --output idx.bmp --block-size 64 --bm-mode raw
    python bmp.py search   --index idx.bmp --queries queries.jsonl --k 10 --output run.txt
    python bmp.py bench    --index idx.bmp --queries queries.jsonl --alpha 0.6,0.85,1.0
    python bmp.py eval     --run run.txt --qrels qrels.txt --k 10
    python bmp.py compare  --index idx.bmp --queries queries.jsonl --k 10
    python bmp.py generate --docs docs.jsonl --queries queries.jsonl --seed 42

Exit codes: 0 success, 1 usage error, 2 data error.
"""
import argparse
import logging
import os
import sys
from typing import List, Optional

import config
from core import BMPError
from engine import BMPEngine
from evaluation import mean_reciprocal_rank, save_summary_csv
from file_utils import read_qrels, read_run, write_run
from logging_utils import print_bar, print_stage, setup_logging
from synthetic import generate_files

logger = logging.getLogger(__name__)


class BMPArgumentParser(argparse.ArgumentParser):
    """Reports usage problems with exit code 1 instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(config.EXIT_CODES['usage'], f"{self.prog}: error: {message}\n")


# ========================================================================================
# ARGUMENT TYPES
# ========================================================================================
def _unit_interval(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number")
    if not 0 < value <= 1:
        raise argparse.ArgumentTypeError(f"{value} is outside (0, 1]")
    return value


def _unit_interval_list(text: str) -> List[float]:
    return [_unit_interval(part) for part in text.split(',') if part.strip()]


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer")
    if value < 1:
        raise argparse.ArgumentTypeError(f"{value} must be >= 1")
    return value


def _non_negative_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer")
    if value < 0:
        raise argparse.ArgumentTypeError(f"{value} must be >= 0")
    return value


def _block_size(text: str) -> int:
    value = _positive_int(text)
    if value not in config.SUPPORTED_BLOCK_SIZES:
        raise argparse.ArgumentTypeError(
            f"unsupported block size {value}; expected one of {config.SUPPORTED_BLOCK_SIZES}"
        )
    return value


def _rank_list(text: str) -> List[int]:
    ranks = [_positive_int(part) for part in text.split(',') if part.strip()]
    if not ranks:
        raise argparse.ArgumentTypeError("at least one rank is required")
    return ranks


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number")
    if not value > 0:
        raise argparse.ArgumentTypeError(f"{value} must be > 0")
    return value


# ========================================================================================
# COMMANDS
# ========================================================================================
def _load_engine(args) -> BMPEngine:
    query_config = dict(config.QUERY_CONFIG)
    if getattr(args, 'scale', None) is not None:
        query_config['fixed_scale'] = args.scale
    return BMPEngine.load(args.index, query_config)


def cmd_index(args) -> int:
    index_config = dict(config.INDEX_CONFIG)
    index_config.update(block_size=args.block_size, bm_mode=args.bm_mode)
    if args.quantile_ranks:
        index_config['quantile_ranks'] = tuple(args.quantile_ranks)
    if args.workers is not None:
        index_config['build_workers'] = args.workers
        index_config['parallel_build'] = args.workers > 1

    print_stage('Index', f"Reading {args.input}")
    engine = BMPEngine(index_config).build(args.input, permutation=args.permutation)
    engine.save(args.output)
    report = engine.size_report()
    print_bar()
    for key, value in report.items():
        print(f"{key:>26}: {value}")
    print_bar()
    print_stage('Index', f"Wrote {args.output}")
    return config.EXIT_CODES['ok']


def cmd_search(args) -> int:
    engine = _load_engine(args)
    queries = engine.parse_queries(args.queries)
    params = engine.params(k=args.k, alpha=args.alpha, beta=args.beta, max_blocks=args.max_blocks)
    print_stage('Search', f"{len(queries)} queries, k={args.k}, alpha={args.alpha}, beta={args.beta}")
    outcomes = engine.search_many(queries, params, progress=not args.quiet)
    write_run(args.output, engine.to_run(outcomes), args.run_tag)
    evaluated = sum(o.stats.blocks_evaluated for o in outcomes)
    total = sum(o.stats.blocks_total for o in outcomes)
    print_stage('Search', f"Evaluated {evaluated} of {total} blocks; run written to {args.output}")
    return config.EXIT_CODES['ok']


def cmd_bench(args) -> int:
    engine = _load_engine(args)
    queries = engine.parse_queries(args.queries)
    qrels = read_qrels(args.qrels) if args.qrels else None
    print_stage('Bench', f"{len(queries)} queries, warmup={args.warmup}, runs={args.runs}")
    rows = engine.bench(queries, args.k, alphas=args.alpha, betas=args.beta,
                        warmup=args.warmup, runs=args.runs, qrels=qrels, progress=not args.quiet)
    path = save_summary_csv(rows, args.output)
    print_stage('Bench', f"Summary written to {path}")
    return config.EXIT_CODES['ok']


def cmd_eval(args) -> int:
    run = read_run(args.run)
    qrels = read_qrels(args.qrels)
    mrr = mean_reciprocal_rank(run, qrels, args.k)
    print_bar()
    print(f"MRR @{args.k}: {mrr:.4f}")
    print(f"QueriesRanked: {len(run)}")
    print_bar()
    return config.EXIT_CODES['ok']


def cmd_compare(args) -> int:
    engine = _load_engine(args)
    queries = engine.parse_queries(args.queries)
    mismatches = engine.compare(queries, args.k)
    if mismatches:
        print_stage('Compare', f"{len(mismatches)} of {len(queries)} queries differ from the oracle: "
                               f"{', '.join(mismatches[:10])}")
        return config.EXIT_CODES['data']
    print_stage('Compare', f"All {len(queries)} queries match the oracle at k={args.k}")
    return config.EXIT_CODES['ok']


def cmd_generate(args) -> int:
    overrides = {key: getattr(args, key) for key in ('n_docs', 'vocab_size', 'avg_terms', 'n_queries')
                 if getattr(args, key) is not None}
    docs, queries = generate_files(args.docs, args.queries, overrides, seed=args.seed)
    print_stage('Generate', f"Wrote {docs} documents to {args.docs} and {queries} queries to {args.queries}")
    return config.EXIT_CODES['ok']


# ========================================================================================
# PARSER
# ========================================================================================
def build_parser() -> argparse.ArgumentParser:
    parser = BMPArgumentParser(prog='bmp', description="Block-max pruning retrieval over learned sparse vectors")
    parser.add_argument('--log-level', default=config.LOGGING_CONFIG['level'],
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    parser.add_argument('--log-file', default=config.LOGGING_CONFIG['log_file'],
                        help='Log file name (placed under logs/ unless absolute)')
    commands = parser.add_subparsers(dest='command', required=True, parser_class=BMPArgumentParser)

    index = commands.add_parser('index', help='Build an index from a documents file')
    index.add_argument('--input', required=True)
    index.add_argument('--output', required=True)
    index.add_argument('--block-size', type=_block_size, default=config.INDEX_CONFIG['block_size'])
    index.add_argument('--bm-mode', choices=config.BM_MODES, default=config.INDEX_CONFIG['bm_mode'])
    index.add_argument('--permutation', help='One external document id per line, in DocId order')
    index.add_argument('--quantile-ranks', type=_rank_list, help='Comma-separated ranks, e.g. 10,100,1000')
    index.add_argument('--workers', type=_positive_int, help='Threads for the compressed block-max build')
    index.set_defaults(handler=cmd_index)

    def query_options(sub, multi: bool):
        sub.add_argument('--index', required=True)
        sub.add_argument('--queries', required=True)
        sub.add_argument('--k', type=_positive_int, default=config.SEARCH_CONFIG['k'])
        if multi:
            sub.add_argument('--alpha', type=_unit_interval_list, default=list(config.BENCH_CONFIG['alphas']),
                             help='Comma-separated alpha values')
            sub.add_argument('--beta', type=_unit_interval_list, default=list(config.BENCH_CONFIG['betas']),
                             help='Comma-separated beta values')
        else:
            sub.add_argument('--alpha', type=_unit_interval, default=config.SEARCH_CONFIG['alpha'])
            sub.add_argument('--beta', type=_unit_interval, default=config.SEARCH_CONFIG['beta'])
        sub.add_argument('--scale', type=_positive_float,
                         help='Query weight scale (default: 1 for integral queries, else '
                              f"{config.QUERY_CONFIG['scale']})")
        sub.add_argument('--quiet', action='store_true', help='Disable progress bars')

    search = commands.add_parser('search', help='Run queries and write a TREC run file')
    query_options(search, multi=False)
    search.add_argument('--max-blocks', type=_positive_int, default=config.SEARCH_CONFIG['max_blocks'])
    search.add_argument('--output', required=True)
    search.add_argument('--run-tag', default=config.RUN_TAG)
    search.set_defaults(handler=cmd_search)

    bench = commands.add_parser('bench', help='Time query processing and write a CSV summary')
    query_options(bench, multi=True)
    bench.add_argument('--warmup', type=_non_negative_int, default=config.BENCH_CONFIG['warmup'])
    bench.add_argument('--runs', type=_positive_int, default=config.BENCH_CONFIG['runs'])
    bench.add_argument('--qrels', help='TREC qrels for RR@k')
    bench.add_argument('--output', help='CSV path (default: results/bmp_bench_summary.csv)')
    bench.set_defaults(handler=cmd_bench)

    evaluate = commands.add_parser('eval', help='Mean RR@k of a run file')
    evaluate.add_argument('--run', required=True)
    evaluate.add_argument('--qrels', required=True)
    evaluate.add_argument('--k', type=_positive_int, default=config.SEARCH_CONFIG['k'])
    evaluate.set_defaults(handler=cmd_eval)

    compare = commands.add_parser('compare', help='Check safe-mode results against exhaustive scoring')
    compare.add_argument('--index', required=True)
    compare.add_argument('--queries', required=True)
    compare.add_argument('--k', type=_positive_int, default=config.SEARCH_CONFIG['k'])
    compare.add_argument('--scale', type=_positive_float)
    compare.set_defaults(handler=cmd_compare)

    generate = commands.add_parser('generate', help='Write a seeded synthetic collection and queries')
    generate.add_argument('--docs', default=os.path.join(config.DATA_DIR, 'synthetic_docs.jsonl'))
    generate.add_argument('--queries', default=os.path.join(config.DATA_DIR, 'synthetic_queries.jsonl'))
    generate.add_argument('--seed', type=int, default=config.SYNTHETIC_CONFIG['seed'])
    generate.add_argument('--n-docs', dest='n_docs', type=_positive_int)
    generate.add_argument('--vocab-size', dest='vocab_size', type=_positive_int)
    generate.add_argument('--avg-terms', dest='avg_terms', type=_positive_int)
    generate.add_argument('--n-queries', dest='n_queries', type=_non_negative_int)
    generate.set_defaults(handler=cmd_generate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else config.EXIT_CODES['usage']
    setup_logging(args.log_level, args.log_file)
    try:
        return args.handler(args)
    except FileNotFoundError as e:
        logger.error("file not found: %s", e.filename)
        print(f"bmp: error: file not found: {e.filename}", file=sys.stderr)
        return config.EXIT_CODES['data']
    except (BMPError, OSError) as e:
        logger.error("%s", e)
        print(f"bmp: error: {e}", file=sys.stderr)
        return config.EXIT_CODES['data']


if __name__ == '__main__':
    sys.exit(main())
