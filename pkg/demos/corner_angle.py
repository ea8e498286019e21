"""Corner angle of the self-similar filament.

The profile with curvature a and torsion x/2 straightens into two half-lines;
the angle theta between them is read off from Cesaro averages of the tangent.
The integration follows sin(theta/2) = exp(-pi a^2/2).  The form without the pi
is printed alongside, it is off by far more than the integration error.
"""
from nlsvortex import geometry

print(" a     sin(theta/2)   exp(-pi a^2/2)   exp(-a^2/2)")
for a in (0.25, 0.5, 1.0, 1.5, 2.0):
    curve = geometry.selfsimilar_profile(a, 1000.0)
    lim = geometry.tangent_limits(curve)
    print(f"{a:4.2f}   {lim.sin_half:.6f}       {geometry.corner_angle_law(a):.6f}         "
          f"{geometry.corner_angle_stated(a):.6f}")
