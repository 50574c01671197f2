"""Survival prediction from high-dimensional expression data.

The package reduces an expression matrix to a handful of informative
features, either topic mixtures over discretized expression level counts or
screened principal components, then fits an individual survival model (Cox,
ridge Cox, or multi-task logistic regression) on those features plus
clinical covariates, and evaluates it by concordance and distribution
calibration.
"""

__version__ = "0.1.0"

from .basis_selection import DldaSelection, compute_basis_dlda, select_encoding_and_size
from .cox import CoxModel, cox_curve, cox_risk, fit_cox
from .curves import KmCurve, SurvivalCurve, kaplan_meier, risk_from_curve
from .data import (
    ClinicalColumn,
    ClinicalTable,
    Dataset,
    ExpressionMatrix,
    SplitSpec,
    SurvivalLabel,
    split,
)
from .discretize import DiscretizationStats, EncodingScheme, discretize, encode
from .errors import (
    ChecksumError,
    ConvergenceError,
    FormatVersionError,
    IngestError,
    InputError,
    NumericalError,
    PersistenceError,
    SchemaError,
    TopicsurvError,
)
from .evaluate import CalibrationTable, concordance, d_calibration
from .ingest import ingest, write_csvs
from .lda import TopicBasis, fit_lda, infer_mixture, infer_mixtures
from .mtlr import MtlrModel, fit_mtlr, mtlr_curve
from .persist import load_model, save_model
from .pipeline import (
    FittedPipeline,
    PipelineConfig,
    learn_survival_model,
    run_experiment_matrix,
    use_survival_model,
)
from .preprocess import PreprocessInfo
from .superpc import PcaBasis, fit_pca, screen_components, use_basis_pca
