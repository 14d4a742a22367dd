"""Policy-targeted CATE estimation."""
from .datagen import Dataset, DGPSpec, SplitSpec, sample_dgp, split, true_cate, true_response
from .nuisance import NuisanceFitConfig, NuisanceSet, fit_all, oracle_nuisance
from .pseudo import PseudoDataset, PseudoOutcomeKind, build_pseudo_dataset, conditional_mean_check
from .retarget import PTConfig, PTModel, stochastic_policy, train_ptcate
from .evalkit import dr_policy_value, improvement_table, pehe, policy_loss

__version__ = "0.1.0"
