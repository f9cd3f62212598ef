"""Day-ahead renewable energy scenario generation with dynamic temporal
correlations: continuous quantile regression of the marginals, per-instance
Cholesky-factor correlation regression, Gaussian-copula sampling, a static
copula baseline, and a proper-scoring-rule evaluation harness."""

__version__ = "0.1.0"
