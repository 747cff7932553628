"""Discrete-choice-experiment toolkit.

Designs randomized choice tasks, simulates panel choices, estimates
multinomial and mixed logit utility models, and turns fits into
willingness-to-pay/accept tables and market-potential curves over
travel time.
"""

__version__ = "0.1.0"

from .data import (
    OPT_OUT,
    OUTLET_LABELS,
    Alternative,
    AttributeDef,
    ChoiceTask,
    DatasetSummary,
    PanelDataset,
    Predicate,
    Respondent,
    consumer_groups,
    consumer_schema,
    farmer_groups,
    farmer_schema,
    filter_subgroup,
    load_dataset,
    parse_predicate,
    save_dataset,
    summarize,
)
from .design import (
    Design,
    DesignConfig,
    default_design_config,
    design_balance_report,
    generate_design,
    load_design,
    save_design,
)
from .mixl import (
    MixedLogit,
    MixlSpec,
    fit_mixl,
    quasi_draws,
    simulated_loglik,
    simulated_loglik_grad,
)
from .mnl import (
    MultinomialLogit,
    fit_mnl,
    fit_stats,
    gradient,
    hessian,
    loglik,
    predict_proba,
)
from .modelspec import CompiledPanel, ModelSpec, compile_panel, consumer_spec, farmer_spec
from .potential import (
    AttributeMeans,
    BreakEven,
    CurveTable,
    PotentialLine,
    break_even_time,
    capg_line,
    cavg_line,
    curve_samples,
    delta_capg,
)
from .results import FitResult, load_fit, save_fit
from .simulate import (
    TrueParams,
    logit_probs,
    mixl_prob_oracle,
    panel_prob_quadrature,
    simulate_choices,
    utility,
)
from .welfare import (
    WelfareEntry,
    WelfareTable,
    outlet_ranking,
    welfare_table,
    wtp_bootstrap_se,
    wtp_ratio,
)

__all__ = [
    "__version__",
    "OPT_OUT",
    "OUTLET_LABELS",
    "Alternative",
    "AttributeDef",
    "AttributeMeans",
    "BreakEven",
    "ChoiceTask",
    "CompiledPanel",
    "CurveTable",
    "DatasetSummary",
    "Design",
    "DesignConfig",
    "FitResult",
    "MixedLogit",
    "MixlSpec",
    "ModelSpec",
    "MultinomialLogit",
    "PanelDataset",
    "PotentialLine",
    "Predicate",
    "Respondent",
    "TrueParams",
    "WelfareEntry",
    "WelfareTable",
    "break_even_time",
    "capg_line",
    "cavg_line",
    "compile_panel",
    "consumer_groups",
    "consumer_schema",
    "consumer_spec",
    "curve_samples",
    "default_design_config",
    "delta_capg",
    "design_balance_report",
    "farmer_groups",
    "farmer_schema",
    "farmer_spec",
    "filter_subgroup",
    "fit_mixl",
    "fit_mnl",
    "fit_stats",
    "generate_design",
    "gradient",
    "hessian",
    "load_dataset",
    "load_design",
    "load_fit",
    "loglik",
    "logit_probs",
    "mixl_prob_oracle",
    "outlet_ranking",
    "panel_prob_quadrature",
    "parse_predicate",
    "predict_proba",
    "quasi_draws",
    "save_dataset",
    "save_design",
    "save_fit",
    "simulate_choices",
    "simulated_loglik",
    "simulated_loglik_grad",
    "summarize",
    "utility",
    "welfare_table",
    "wtp_bootstrap_se",
    "wtp_ratio",
]
