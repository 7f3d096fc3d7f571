from ultralytics.utils import colorstr

# Reserved vocabulary. Special ids sit at the bottom, document identifiers at the top.
SEPARATOR_ID = 0
RANK_TRIGGER_ID = 1
INSTRUCTION_IDS = (2, 3, 4, 5)
NUM_SPECIAL_TOKENS = 6
DEFAULT_NUM_IDENTIFIERS = 20

# Layout roles
ROLE_INSTRUCTION = "instruction"
ROLE_QUERY = "query"
ROLE_DOCUMENT = "doc"

# Defaults
DEFAULT_RATES = (0.2, 0.4, 0.6, 0.8, 1.0)
DEFAULT_WINDOW = 20
DEFAULT_STEP = 10
DEFAULT_DEPTH = 100
PASSAGE_MAX_TOKENS = 128
DOCUMENT_MAX_TOKENS = 512
NDCG_CUTOFF = 10
SIGNIFICANCE_LEVEL = 0.05

# File formats
CHECKPOINT_MAGIC = b"LTCM"
CHECKPOINT_VERSION = 1
SWEEP_CSV_COLUMNS = ("target_layer", "rate", "ndcg_at_10", "p_value", "qps", "predicted_attn_ratio")
TOTAL_COST_COLUMN = "predicted_total_ratio"
DEFAULT_RUN_TAG = "ltc"

# Other
DEFAULT_PROJECT_NAME = "ltc-rerank"
DEFAULT_TRAIN_RUN_DESCRIPTION = ""
DEFAULT_SWEEP_RUN_DESCRIPTION = "Created with ltc-rerank sweep"

LTC_COLORSTR = colorstr("ltc: ")
TLC_REQUIRED_VERSION = "2.13.1"
