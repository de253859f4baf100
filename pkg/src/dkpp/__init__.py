"""Discrete kernel point processes: subset distributions P(A) ~ exp tr phi(L[A]).

A positive semidefinite kernel L scores pairwise similarity; a scalar
function phi, applied through the eigenvalues of principal submatrices,
turns those scores into a distribution over subsets.  The choice of phi
controls the dependence structure: log gives the determinantal
(repulsive) case, affine gives independent items, quadratic gives a
Boltzmann machine, and the Box-Cox family sweeps between them.
"""

__version__ = "0.1.0"

from .inference import (
    EstimateWithError,
    conditional_prob_between,
    conditional_prob_given_cardinality,
    elbo,
    importance_log_partition,
    marginal_gain,
    mean_field_fit,
    naive_marginal_between,
    rb_marginal_between,
    rb_marginal_cardinality,
)
from .kernel import (
    EigensolverError,
    KernelMatrix,
    SpectralFunction,
    Subset,
    affine_phi,
    box_cox,
    gaussian_kernel,
    load_kernel,
    log_phi,
    principal_submatrix,
    quadratic_phi,
    random_wishart_kernel,
    save_kernel,
    square_grid,
    trace_phi,
    trace_phi_many,
)
from .learning import (
    BasketDataset,
    FactorizedKernel,
    TrainConfig,
    flip,
    load_baskets,
    load_factor,
    ratio_matching_grad_l,
    ratio_matching_grad_v,
    ratio_matching_loss,
    save_baskets,
    save_factor,
    sgd_fit,
)
from .model import (
    BernoulliProduct,
    BoltzmannParams,
    Dkpp,
    check_log_submodular,
    check_log_supermodular,
    exact_log_partition,
    exact_prob,
    exact_probs,
    exact_sample,
    load_model,
    save_model,
    subset_log_weights,
    to_bernoulli,
    to_boltzmann,
    unnorm_logprob,
)
from .modeopt import (
    OptResult,
    double_greedy,
    exhaustive_mode,
    greedy_mode,
    random_greedy_cardinality,
)
from .sampling import (
    Chain,
    gibbs_step,
    inclusion_frequencies,
    load_chain,
    run_chain,
    save_chain,
)
