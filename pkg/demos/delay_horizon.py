"""How long the flow remembers the plate.

The delay window t* is the longest time a characteristic ray, starting on the
plate and drifting with the flow, needs to leave the plate.  Subsonic flow
slows rays that point upstream, so t* grows as U approaches 1 from below;
supersonic flow sweeps every ray downstream and t* shrinks like L/(U - 1).
"""

import numpy as np

from aeroplate import delay
from aeroplate.grid import Domain

unit = Domain(1.0, 1.0, 16, 16)
wide = Domain(2.0, 1.0, 16, 16)

print(f"{'U':>6} {'t* unit square':>15} {'t* 2x1 plate':>13}")
for U in (0.0, 0.25, 0.5, 0.75, 0.9, 1.1, 1.5, 2.0, 4.0):
    print(f"{U:6.2f} {delay.compute_tstar(unit, U):15.4f} {delay.compute_tstar(wide, U):13.4f}")

# any convex point set works; a disk of diameter 1 has t* = 1 without flow
theta = np.linspace(0, 2 * np.pi, 400, endpoint=False)
disk = 0.5 * np.c_[np.cos(theta), np.sin(theta)]
print(f"\ndisk of diameter 1, U = 0: t* = {delay.compute_tstar_region(disk, 0.0):.4f}")
print(f"disk of diameter 1, U = 2: t* = {delay.compute_tstar_region(disk, 2.0):.4f}")

# static delay potential of a bump as the s-panel count grows
d = Domain(1.0, 1.0, 24, 24)
X, Y = d.mesh()
bump = d.field(np.sin(np.pi * X) ** 2 * np.sin(np.pi * Y) ** 2)
for n_s in (16, 32, 64, 128):
    spec = delay.DelaySpec.for_domain(d, 0.5, 32, n_s)
    q = delay.delay_operator(d, spec).static_array(bump.values)
    print(f"n_s = {n_s:4d}: max |q| for a static bump = {np.abs(q).max():.5f}")
