#include "toptrap/angular.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>

#include "toptrap/errors.hpp"

namespace toptrap::angular {
namespace {

constexpr int kMaxFactorial = 80;

const std::array<double, kMaxFactorial + 1> &factorials() {
    static const auto table = [] {
        std::array<double, kMaxFactorial + 1> t{};
        t[0] = 1.0;
        for (int i = 1; i <= kMaxFactorial; ++i) {
            t[i] = t[i - 1] * i;
        }
        return t;
    }();
    return table;
}

// n! for a doubled argument 2n (must be even and nonnegative).
double fact2(int two_n) {
    if (two_n < 0 || two_n % 2 != 0 || two_n / 2 > kMaxFactorial) {
        throw InputError("angular: factorial argument out of range");
    }
    return factorials()[two_n / 2];
}

double sign(int two_exponent) { return (std::abs(two_exponent / 2) % 2 == 0) ? 1.0 : -1.0; }

double triangle_coefficient(int a, int b, int c) {
    return fact2(a + b - c) * fact2(a - b + c) * fact2(-a + b + c) / fact2(a + b + c + 2);
}

bool valid_projection(int tj, int tm) { return std::abs(tm) <= tj && (tj + tm) % 2 == 0; }

} // namespace

bool triangle(int tj1, int tj2, int tj3) {
    return tj1 >= 0 && tj2 >= 0 && tj3 >= 0 && tj3 >= std::abs(tj1 - tj2) && tj3 <= tj1 + tj2 &&
           (tj1 + tj2 + tj3) % 2 == 0;
}

double wigner3j(int tj1, int tj2, int tj3, int tm1, int tm2, int tm3) {
    if (tm1 + tm2 + tm3 != 0 || !triangle(tj1, tj2, tj3) || !valid_projection(tj1, tm1) ||
        !valid_projection(tj2, tm2) || !valid_projection(tj3, tm3)) {
        return 0.0;
    }
    const int kmin = std::max({0, tj2 - tj3 - tm1, tj1 - tj3 + tm2});
    const int kmax = std::min({tj1 + tj2 - tj3, tj1 - tm1, tj2 + tm2});
    double sum = 0.0;
    for (int k = kmin; k <= kmax; k += 2) {
        const double denom = fact2(k) * fact2(tj3 - tj2 + k + tm1) * fact2(tj3 - tj1 + k - tm2) *
                             fact2(tj1 + tj2 - tj3 - k) * fact2(tj1 - k - tm1) *
                             fact2(tj2 - k + tm2);
        sum += sign(k) / denom;
    }
    const double norm = std::sqrt(triangle_coefficient(tj1, tj2, tj3) * fact2(tj1 + tm1) *
                                  fact2(tj1 - tm1) * fact2(tj2 + tm2) * fact2(tj2 - tm2) *
                                  fact2(tj3 + tm3) * fact2(tj3 - tm3));
    return sign(tj1 - tj2 - tm3) * norm * sum;
}

double wigner6j(int tj1, int tj2, int tj3, int tj4, int tj5, int tj6) {
    if (!triangle(tj1, tj2, tj3) || !triangle(tj1, tj5, tj6) || !triangle(tj4, tj2, tj6) ||
        !triangle(tj4, tj5, tj3)) {
        return 0.0;
    }
    const int a1 = tj1 + tj2 + tj3, a2 = tj1 + tj5 + tj6, a3 = tj4 + tj2 + tj6,
              a4 = tj4 + tj5 + tj3;
    const int b1 = tj1 + tj2 + tj4 + tj5, b2 = tj2 + tj3 + tj5 + tj6, b3 = tj3 + tj1 + tj6 + tj4;
    const int tmin = std::max({a1, a2, a3, a4});
    const int tmax = std::min({b1, b2, b3});
    double sum = 0.0;
    for (int t = tmin; t <= tmax; t += 2) {
        const double denom = fact2(t - a1) * fact2(t - a2) * fact2(t - a3) * fact2(t - a4) *
                             fact2(b1 - t) * fact2(b2 - t) * fact2(b3 - t);
        sum += sign(t) * fact2(t + 2) / denom;
    }
    const double norm =
        std::sqrt(triangle_coefficient(tj1, tj2, tj3) * triangle_coefficient(tj1, tj5, tj6) *
                  triangle_coefficient(tj4, tj2, tj6) * triangle_coefficient(tj4, tj5, tj3));
    return norm * sum;
}

double clebsch_gordan(int tj1, int tm1, int tj2, int tm2, int tJ, int tM) {
    return sign(tj1 - tj2 + tM) * std::sqrt(tJ + 1.0) * wigner3j(tj1, tj2, tJ, tm1, tm2, -tM);
}

} // namespace toptrap::angular
