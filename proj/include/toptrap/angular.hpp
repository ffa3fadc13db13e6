#pragma once

/// Wigner 3j and 6j symbols and Clebsch-Gordan coefficients by the Racah
/// formulas. Every angular momentum is passed doubled (2j, 2m) so that
/// half-integer values stay exact.
namespace toptrap::angular {

/// (j1 j2 j3; m1 m2 m3); zero when selection rules fail.
double wigner3j(int tj1, int tj2, int tj3, int tm1, int tm2, int tm3);

/// {j1 j2 j3; j4 j5 j6}; zero when any triad violates the triangle rule.
double wigner6j(int tj1, int tj2, int tj3, int tj4, int tj5, int tj6);

/// <j1 m1; j2 m2 | J M> in the Condon-Shortley convention.
double clebsch_gordan(int tj1, int tm1, int tj2, int tm2, int tJ, int tM);

/// Triangle condition on doubled arguments (|j1 - j2| <= j3 <= j1 + j2, integer sum).
bool triangle(int tj1, int tj2, int tj3);

} // namespace toptrap::angular
