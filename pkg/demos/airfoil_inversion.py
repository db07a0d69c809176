"""Solving the airfoil equation H f = g on (-1, 1).

The finite Hilbert transform is not injective on L_p for 1 < p < 2: adding
c / sqrt(1 - x^2) does not change H f.  Asking f to stay bounded at the
trailing edge (the Kutta condition) picks one solution.  For p >= 2 only
right-hand sides orthogonal to the constants are reached.
"""

import numpy as np

from aeroplate import possio
from aeroplate.errors import RangeDeficient

g = possio.IntervalGrid(256)
x = g.nodes

# a Kutta-class pressure jump and its downwash
f = possio.PossioField(g, possio.weight_function("kutta", x) * (1 + 0.5 * x - x**2), weight="kutta")
w = possio.finite_hilbert(f)
back = possio.invert_finite_hilbert(w, 1.5)
err = possio.lp_norm(possio.PossioField(g, back.values - f.values), 1.5) / possio.lp_norm(f, 1.5)
print(f"Kutta-class roundtrip, relative L_1.5 error: {err:.2e}")

# the kernel: 1/sqrt(1 - x^2) maps to zero
k = possio.PossioField(g, possio.weight_function("inverse", x), weight="inverse")
print(f"max |H[1/sqrt(1-x^2)]| = {np.abs(possio.finite_hilbert(k).values).max():.2e}")

# constant downwash needs the p < 2 class
const = possio.finite_hilbert(possio.PossioField(g, np.ones(256)))
sol = possio.invert_finite_hilbert(const, 1.5)
print(f"H f = H[1]: recovered f near x = 0 is {np.interp(0.0, x, sol.values):.4f}")
try:
    possio.invert_finite_hilbert(possio.PossioField(g, np.ones(256)), 2.0)
except RangeDeficient as exc:
    print(f"p = 2 with a constant right-hand side: {exc}")
