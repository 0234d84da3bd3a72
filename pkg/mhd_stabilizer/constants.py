PSI_SAFETY_FACTOR = 1e-8 # safety term of the residual normalization, times max|x|
THETA_RANGE_GUARD = 1e-14 # global range below this (relative to max|x|) means theta = 0
NODE_MERGE_TOL = 1e-10 # periodic node matching, relative to the domain diameter
SCHLIEREN_ZETA = 5.0
CURL_NORM_FLOOR = 1e-14 # divergence error denominator guard
VISCOSITY_CAP_RTOL = 1e-12 # slack when asserting eps_rv <= eps_l
DMP_RTOL = 1e-12 # local maximum principle tolerance, times the data range
CONVEX_COEFF_TOL = 1e-12
STENCIL_RTOL = 1e-12
CSV_FLOAT_FORMAT = '.17g' # round-trips float64 exactly
SUPPORTED_DEGREES = (1, 2, 3)
FLAT_GROUP_RTOL = 1e-2 # groups with ||x - mean||_inf below this times ||x||_inf stay out of the residual max
VISCOUS_STEP_SAFETY = 0.8 # fraction of the scheme's real stability interval the frozen viscous operator may use
