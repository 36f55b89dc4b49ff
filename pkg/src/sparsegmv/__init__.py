"""Sparse and turnover-stable global minimum-variance portfolios.

The package builds global minimum-variance portfolios under an L1 budget
(lagrangian lasso penalty) and per-asset turnover caps, estimates the
return covariance with four interchangeable estimators, and evaluates the
resulting strategies in a daily rolling-window backtest with per-day
cross-validated penalty selection.
"""

from .market_data import (
    DataError,
    PricePanel,
    ReturnPanel,
    WindowSpec,
    prices_to_returns,
    read_price_csv,
    read_return_csv,
    rolling_window,
    synth_factor_returns,
    write_return_csv,
)
from .covariance import (
    CovEstimate,
    EstimatorError,
    get_estimator,
    lw_linear,
    lw_nonlinear,
    poet,
    sample_cov,
    select_poet_k,
    write_cov_csv,
)
from .qp import (
    INFEASIBLE,
    MAX_ITERATIONS,
    OPTIMAL,
    QpProblem,
    QpSolution,
    SolverError,
    solve_qp,
)
from .portfolio_models import (
    ModelSpec,
    PortfolioWeights,
    fit_model,
    gmv_lasso,
    gmv_lasso_turnover,
    gmv_standard,
)
from .backtest import (
    BacktestConfig,
    BacktestError,
    BacktestResult,
    ModelRun,
    cross_validate_lambda,
    cv_lambda_scores,
    drift_weights,
    load_config,
    run_backtest,
    save_results,
)
from .metrics_stats import (
    PerformanceReport,
    VarianceTestResult,
    avg_assets,
    avg_short_sales,
    avg_turnover,
    build_report,
    hac_bandwidth,
    hac_variance_test,
    oos_variance,
    parzen_kernel,
)

__version__ = "0.1.0"

__all__ = [
    "BacktestConfig",
    "BacktestError",
    "BacktestResult",
    "CovEstimate",
    "DataError",
    "EstimatorError",
    "INFEASIBLE",
    "MAX_ITERATIONS",
    "ModelRun",
    "ModelSpec",
    "OPTIMAL",
    "PerformanceReport",
    "PortfolioWeights",
    "PricePanel",
    "QpProblem",
    "QpSolution",
    "ReturnPanel",
    "SolverError",
    "VarianceTestResult",
    "WindowSpec",
    "avg_assets",
    "avg_short_sales",
    "avg_turnover",
    "build_report",
    "cross_validate_lambda",
    "cv_lambda_scores",
    "drift_weights",
    "fit_model",
    "get_estimator",
    "gmv_lasso",
    "gmv_lasso_turnover",
    "gmv_standard",
    "hac_bandwidth",
    "hac_variance_test",
    "load_config",
    "lw_linear",
    "lw_nonlinear",
    "oos_variance",
    "parzen_kernel",
    "poet",
    "prices_to_returns",
    "read_price_csv",
    "read_return_csv",
    "rolling_window",
    "run_backtest",
    "sample_cov",
    "save_results",
    "select_poet_k",
    "solve_qp",
    "synth_factor_returns",
    "write_cov_csv",
    "write_return_csv",
    "__version__",
]
