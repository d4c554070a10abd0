"""Individual treatment effects via causal-population mixture identification.

The population is modeled as a mixture of four exclusive response types
(responders, doomed, survivors, anti-responders).  A constrained EM loop
estimates the mixture while zeroing, for every individual, the two types
that are impossible given the observed treatment and outcome; the
individual effect then falls out of the posterior memberships.  The
package also ships logistic baselines, uplift/PEHE metrics, synthetic and
semi-synthetic data handling, and a reproducible benchmark CLI.
"""

__version__ = "0.1.0"

from .core import (
    CausalGroup,
    CausalPopError,
    Dataset,
    FitError,
    GaussianComponent,
    Individual,
    MixtureModel,
    Oracle,
    ValidationError,
    admissible_groups,
    group_from_outcomes,
    load_csv,
    potential_outcomes,
    save_csv,
    train_test_split,
    uniform_admissible,
    validate_responsibilities,
)
from .ecm import (
    EcmConfig,
    FitTrace,
    IteMode,
    c_step,
    e_step,
    elbo,
    estimate_ite,
    fit,
    gaussian_logpdf,
    load_model,
    log_likelihood,
    m_step,
    posterior_membership,
    predict_counterfactual,
    predict_counterfactuals,
    save_model,
)
from .baselines import (
    BaselineKind,
    BaselineModel,
    LogisticModel,
    baseline_ite,
    class_variable_transform,
    fit_baseline,
    fit_logistic,
    ite_lr1,
    ite_lr2,
    ite_lrz,
)
from .metrics import (
    TrialResults,
    UpliftCurve,
    auuc,
    pehe,
    uplift_curve,
    wilcoxon_signed_rank,
)
from .datagen import (
    SemiSyntheticRecord,
    SyntheticConfig,
    generate,
    load_config,
    load_ihdp,
    oracle_ite,
    oracle_model,
)
