"""Labour-based specialisation, complexity scoring, structural-change
decomposition, and panel regressions for country-industry employment data."""

__version__ = "0.1.0"

from .decomposition import (
    DecompositionRecord,
    IndustryEntropy,
    LabourShares,
    decompose,
    decompose_entropy,
    industry_entropy,
    labour_shares,
    lwf,
)
from .econometrics import (
    RegressionResult,
    RegressionSpec,
    cluster_covariance,
    fit_twoway_fe,
    leave_one_out,
    run_table,
    standard_specs,
)
from .efc import (
    DUMMY_CODE,
    ComplexityScores,
    RankTable,
    add_dummy_row,
    rank_fitness,
    run_efc,
)
from .null_model import (
    BiwcmSolution,
    SpecializationMatrix,
    WeightedMatrix,
    binarize_rca,
    build_ica_matrix,
    compute_rca,
    fit_biwcm,
    pvalues,
)
from .outcomes import assemble_panel, employment_growth, labour_share, wage_ratios
from .panels import (
    EmploymentPanel,
    MacroPanel,
    PanelError,
    WagePanel,
    load_employment_panel,
    load_macro_panel,
    load_wage_panel,
    restrict_sample,
)
from .pipeline import RunConfig, RunManifest, load_config, run_pipeline
from .reconstruct import (
    MaeReport,
    evaluate_strategies,
    mask_random,
    reconstruct_panel,
    reconstruct_series,
)

__all__ = [name for name in dir() if not name.startswith("_")]
