# Thresholds shared by the solvers. Values stated in the module docs of each stage.

# Relative tolerance of the finite-difference self checks of analytic derivatives.
DERIVATIVE_CHECK_RTOL = 1e-6

# Relative finite-difference step, scaled by (1 + |x|).
FD_STEP = 1e-5

# Eigenvalues of J.Hess(C) below this magnitude classify a seed as degenerate.
DEGENERATE_EIGENVALUE = 1e-8

# |det(M - I)| below this is treated as a bifurcation of the compound orbit family.
BIFURCATION_DET = 1e-12

# Damping exponent eps(|t|+|t'|)/hbar above which an oscillatory term is dropped.
LONG_ORBIT_CUTOFF = 20.0

# Fraction of shell-adjacent samples in the boundary layer of the box that triggers a warning.
BOX_BOUNDARY_FRACTION = 0.01
