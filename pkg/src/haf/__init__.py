"""Hierarchy-aware feature learning: losses, CRM reranking and LCA metrics in numpy."""

from .crm import crm_rerank
from .data import Dataset, SyntheticConfig, generate
from .losses import LossBreakdown, build_soft_labels, jsd, total_loss
from .metrics import MetricsReport, evaluate, min_lca_histogram
from .model import ClassifierStack, backward, forward, init_stack, project_unit_norm
from .taxonomy import TaxonomyTree, build_lca_matrix, cifar100_taxonomy, parse_taxonomy
from .trainer import TrainConfig, sample_pairs, train

__version__ = "0.1.0"
