"""Numerical tolerances used across the package, collected in one place."""

# relative eigenvalue cutoff for pseudoinverses: |lambda| <= PINV_RTOL * max|lambda| is zero
PINV_RTOL = 1e-12

# absolute tolerance on the effect scale for exactness checks
EXACT_ATOL = 1e-10

# edge weights at or below this are treated as exhausted during flow extraction
EPS_FLOW = 1e-12

# a study coefficient vector must lie in its consistency subspace to this
# tolerance, relative to the vector's own scale
SUBSPACE_RTOL = 1e-8

# normalization identity violations beyond this raise DecompositionFailure
NORMALIZATION_FAIL = 1e-6

# most negative eigenvalue accepted when checking a study covariance for PSD
PSD_ATOL = 1e-10
