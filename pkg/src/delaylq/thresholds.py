"""Acceptance thresholds, in one auditable place.

Monte Carlo comparisons use k standard errors plus a discretization
allowance proportional to the step; cost-level quantities stack two
approximations and get the doubled allowance.
"""

INVERSE_IDENTITY_TOL = 1e-5  # max_t ||Sigma_i P_i - I|| at h = delta/20
MONOTONE_EIG_FLOOR = -1e-8  # min eig of consecutive scheme differences
NODELAY_RICCATI_TOL = 1e-6  # sup deviation from the classical oracle
COMPATIBILITY_TOL = 1e-8  # residual of the delay-compatibility identity
SE_MULT = 3.0  # standard-error multiplier for mean comparisons
PI_MEAN_SE_MULT = 4.0  # martingale-mean band
H_MULT = 5.0  # discretization allowance per unit step
COST_H_MULT = 10.0  # allowance for cost-level comparisons
EPS_RATIO_LO = 3.2  # quadratic-scaling band for the epsilon ladder
EPS_RATIO_HI = 4.8
SCALING_LO = 3.6  # input-doubling band for the energy estimate
SCALING_HI = 4.4
SYMMETRY_TOL = 1e-9  # relative symmetry defect of matrix trajectories
UNIQUENESS_TOL_MULT = 10.0  # two Picard initializations agree within 10 tol
PSD_EIG_FLOOR = -1e-8  # PSD checks on computed trajectories
GRID_REFINE_FACTOR = 3.0  # halving h shrinks oracle error at least this much
