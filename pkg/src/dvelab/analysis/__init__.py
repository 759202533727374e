"""Oracle and verification suite for the lab."""

from .values import (ScenePolicyValues, exact_state_values, bellman_residual,
                     start_state_value, critic_state_values)
from .finetune import FinetuneResult, finetune_scene_critic
from .gmm import GmmModel, fit_gmm, aic, select_clusters
from .enumerate_mdp import (BaselineScan, EnumerationResult, enumerate_pool,
                            policy_gradient_enumerate, baseline_variance_scan,
                            variance_decomposition, VarianceReport,
                            WeightedQSample, stock_toy_pool)
from .metrics import navigation_efficiency
from .clusters import (CLUSTER_COLUMNS, export_cluster_assignments,
                       write_cluster_csv)

__all__ = [
    "ScenePolicyValues", "exact_state_values", "bellman_residual",
    "start_state_value", "critic_state_values",
    "FinetuneResult", "finetune_scene_critic",
    "GmmModel", "fit_gmm", "aic", "select_clusters",
    "BaselineScan", "EnumerationResult", "enumerate_pool",
    "policy_gradient_enumerate", "baseline_variance_scan",
    "variance_decomposition", "VarianceReport",
    "WeightedQSample", "stock_toy_pool",
    "navigation_efficiency",
    "CLUSTER_COLUMNS", "export_cluster_assignments", "write_cluster_csv",
]
