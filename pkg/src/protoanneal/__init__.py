"""Progressive annealed prototype learning.

A streaming library for clustering, classification and regression built on
a temperature-annealed codebook of prototypes: Gibbs soft assignments,
gradient-free stochastic-approximation updates, perturb/merge/prune growth
control, per-cell local models on a second timescale, and tree-structured /
multi-resolution extensions.
"""

from .classify import (
    ClassPriors,
    bayes_predict,
    class_conditional_step,
    class_conditional_volumes,
    class_density_at,
    fit_classifier,
    majority_vote_labels,
    nn_predict,
)
from .core import (
    AnnealerState,
    AnnealingConfig,
    Codevector,
    ConfigError,
    CorruptStateError,
    CurvePoint,
    EmptyStreamError,
    NumericError,
    Trainer,
    anneal_fit,
    average_distortion,
    converged_at_level,
    critical_lambda,
    density_at,
    estimate_cell_volumes,
    gibbs_memberships,
    maybe_insert_class,
    merge_effective,
    perturb_codebook,
    predict_region,
    predict_region_many,
    remove_idle,
    sa_step,
)
from .data import (
    DatasetFormatError,
    DatasetHeader,
    MixtureComponent,
    MixtureSpec,
    read_curves,
    read_dataset,
    sample_mixture,
    write_curves,
    write_dataset,
)
from .divergence import (
    DivergenceKind,
    DomainError,
    bregman_eval,
    phi_second_derivative,
    scaled_dissimilarity,
)
from .models import (
    AffineModel,
    LocalModelKind,
    TwoTimescaleStepsizes,
    constant_model_step,
    constant_value,
    fit_constant_regression,
    predict_value,
    sgd_model_step,
    two_timescale_fit,
)
from .multires import MultiResSample, ResolutionPyramid, build_pyramid, mr_predict, mr_update
from .persist import SnapshotError, load_model, save_model
from .tree import (
    SplitCriterion,
    Tree,
    TreeNode,
    route,
    same_class_prune,
    tree_cell_volumes,
    tree_density_at,
    tree_predict,
    update_leaf,
)

__version__ = "0.1.0"
