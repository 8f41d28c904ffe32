"""Multi-channel graph and hypergraph contrastive rating model on a small numpy autodiff core."""
from .config import TrainConfig
from .data import RatingDataset, load_prepared, load_tsv, split_table
from .harness import evaluate_completion, evaluate_recommendation, report_longtail, train

__version__ = "0.1.0"
