from settings import ROOT_DIR, DATA_DIR, LOG_DIR, RESULT_DIR

# ========================================================================================
# ★  INDEX CONFIGURATION: change here only, propagates everywhere  ★
# ========================================================================================
SUPPORTED_BLOCK_SIZES = (8, 16, 32, 64, 128, 256)
BM_MODES              = ('raw', 'compressed')
QUANTIZATION_LEVELS   = 255     # usable impact levels; 0 is reserved for "absent"

INDEX_CONFIG = {
    'block_size':     64,
    'bm_mode':        'raw',               # 'raw' | 'compressed'
    'quantile_ranks': (10, 100, 1000),
    'parallel_build': True,
    'build_workers':  4,
}

# ========================================================================================
# QUERY CONFIGURATION
# ========================================================================================
QUERY_CONFIG = {
    'scale':       100,    # float weights are multiplied by this before rounding
    'fixed_scale': None,   # when set, every query uses it, integral or not
}

# ========================================================================================
# SEARCH CONFIGURATION
# ========================================================================================
SEARCH_CONFIG = {
    'k':          10,
    'alpha':      1.0,   # 1.0 = safe termination
    'beta':       1.0,   # 1.0 = keep every query term
    'max_blocks': None,  # optional cap on evaluated blocks
}

# Counting sort falls back to a comparison sort beyond this many buckets
COUNTING_SORT_MAX_BUCKETS = 2 ** 20

# uint32 accumulators
ACCUMULATOR_LIMIT = 2 ** 32 - 1

# ========================================================================================
# BENCHMARK CONFIGURATION
# ========================================================================================
BENCH_CONFIG = {
    'warmup': 1,
    'runs':   3,
    'alphas': (1.0,),
    'betas':  (1.0,),
}

# ========================================================================================
# SYNTHETIC COLLECTION
# ========================================================================================
SYNTHETIC_CONFIG = {
    'n_docs':          20000,
    'vocab_size':      5000,
    'avg_terms':       40,
    'n_queries':       200,
    'min_query_terms': 2,
    'max_query_terms': 40,
    'zipf_exponent':   1.1,
    'max_weight':      5.0,
    # documents mix topic terms with Zipf background terms; DocIds are grouped
    # by topic so neighbouring documents share vocabulary
    'n_topics':          100,
    'topic_terms':       50,
    'topic_share':       0.7,
    'background_weight': 0.3,    # background weights are capped at this share of max_weight
    'query_weight_range': (0.1, 3.0),
    'seed':            42,
}

# ========================================================================================
# OUTPUT
# ========================================================================================
RUN_TAG = 'bmp'

EXIT_CODES = {
    'ok':    0,
    'usage': 1,
    'data':  2,
}

LOGGING_CONFIG = {
    'level':    'INFO',
    'format':   '%(asctime)s %(levelname)s [%(name)s] %(message)s',
    'log_file': None,   # e.g. 'bmp.log' (placed under LOG_DIR)
}
