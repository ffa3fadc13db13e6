#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <initializer_list>

#include "toptrap/angular.hpp"

using namespace toptrap::angular;

TEST_CASE("wigner3j tabulated values") {
    CHECK(wigner3j(2, 2, 0, 0, 0, 0) == doctest::Approx(-1.0 / std::sqrt(3.0)));
    CHECK(wigner3j(2, 2, 4, 0, 0, 0) == doctest::Approx(std::sqrt(2.0 / 15.0)));
    CHECK(wigner3j(1, 1, 2, 1, -1, 0) == doctest::Approx(1.0 / std::sqrt(6.0)));
    CHECK(wigner3j(2, 2, 2, 2, -2, 0) == doctest::Approx(1.0 / std::sqrt(6.0)));
    CHECK(wigner3j(2, 2, 2, 0, 0, 0) == 0.0);
    CHECK(wigner3j(4, 2, 4, 4, 0, -4) == doctest::Approx(-std::sqrt(2.0 / 15.0)));
    // selection rules
    CHECK(wigner3j(2, 2, 2, 2, 2, 0) == 0.0);
    CHECK(wigner3j(2, 2, 6, 0, 0, 0) == 0.0);
    CHECK(wigner3j(1, 1, 2, 3, -3, 0) == 0.0);
}

TEST_CASE("clebsch_gordan tabulated values") {
    CHECK(clebsch_gordan(1, 1, 1, -1, 2, 0) == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(clebsch_gordan(1, 1, 1, -1, 0, 0) == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(clebsch_gordan(1, -1, 1, 1, 0, 0) == doctest::Approx(-1.0 / std::sqrt(2.0)));
    CHECK(clebsch_gordan(2, 2, 2, -2, 0, 0) == doctest::Approx(1.0 / std::sqrt(3.0)));
    CHECK(clebsch_gordan(2, 0, 2, 0, 0, 0) == doctest::Approx(-1.0 / std::sqrt(3.0)));
    // <j m; 1 0 | j m> = m / sqrt(j (j + 1))
    for (int tm = -4; tm <= 4; tm += 2) {
        CHECK(clebsch_gordan(4, tm, 2, 0, 4, tm) ==
              doctest::Approx((tm / 2.0) / std::sqrt(6.0)).epsilon(1e-13));
    }
    // <j m; 1 +1 | j m+1> = -sqrt((j - m)(j + m + 1) / (2 j (j + 1)))
    for (int tm = -4; tm <= 2; tm += 2) {
        const double m = tm / 2.0, j = 2.0;
        CHECK(clebsch_gordan(4, tm, 2, 2, 4, tm + 2) ==
              doctest::Approx(-std::sqrt((j - m) * (j + m + 1) / (2 * j * (j + 1)))).epsilon(1e-13));
    }
}

TEST_CASE("clebsch_gordan orthonormality") {
    for (int tj1 : {1, 2, 3, 4}) {
        for (int tj2 : {1, 2}) {
            for (int tJ = std::abs(tj1 - tj2); tJ <= tj1 + tj2; tJ += 2) {
                for (int tJp = std::abs(tj1 - tj2); tJp <= tj1 + tj2; tJp += 2) {
                    for (int tM = -std::min(tJ, tJp); tM <= std::min(tJ, tJp); tM += 2) {
                        double s = 0.0;
                        for (int tm1 = -tj1; tm1 <= tj1; tm1 += 2) {
                            s += clebsch_gordan(tj1, tm1, tj2, tM - tm1, tJ, tM) *
                                 clebsch_gordan(tj1, tm1, tj2, tM - tm1, tJp, tM);
                        }
                        CHECK(s == doctest::Approx(tJ == tJp ? 1.0 : 0.0).epsilon(1e-12));
                    }
                }
            }
        }
    }
}

TEST_CASE("wigner6j tabulated values and orthogonality") {
    CHECK(wigner6j(2, 2, 2, 2, 2, 2) == doctest::Approx(1.0 / 6.0));
    CHECK(wigner6j(1, 1, 2, 1, 1, 0) == doctest::Approx(0.5));
    CHECK(wigner6j(2, 2, 0, 2, 2, 0) == doctest::Approx(1.0 / 3.0));
    CHECK(wigner6j(2, 2, 2, 2, 2, 6) == 0.0);
    // {a b c; b a 0} = (-1)^(a+b+c) / sqrt((2a+1)(2b+1))
    CHECK(wigner6j(4, 2, 4, 2, 4, 0) == doctest::Approx(-1.0 / std::sqrt(15.0)));

    // sum_x (2x+1)(2c+1) {a b x; d e c}{a b x; d e c'} = delta_cc'
    const int ta = 1, tb = 4, td = 3, te = 2;
    for (int tc = 1; tc <= 5; tc += 2) {
        for (int tcp = 1; tcp <= 5; tcp += 2) {
            double s = 0.0;
            for (int tx = 0; tx <= 10; ++tx) {
                s += (tx + 1.0) * (tc + 1.0) * wigner6j(ta, tb, tx, td, te, tc) *
                     wigner6j(ta, tb, tx, td, te, tcp);
            }
            const bool allowed = triangle(ta, te, tc) && triangle(td, tb, tc);
            CHECK(s == doctest::Approx(tc == tcp && allowed ? 1.0 : 0.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("hyperfine branching of the F'=2 level of a J=1/2 -> J'=1/2 line with I=3/2") {
    // (2F+1)(2J'+1){J J' 1; F' F I}^2 summed over F is 1, split equally for F'=2.
    double total = 0.0;
    double parts[2] = {};
    for (int tF : {2, 4}) {
        const double w6 = wigner6j(1, 1, 2, 4, tF, 3);
        parts[tF / 2 - 1] = (tF + 1.0) * 2.0 * w6 * w6;
        total += parts[tF / 2 - 1];
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(parts[0] == doctest::Approx(0.5).epsilon(1e-13));
    CHECK(parts[1] == doctest::Approx(0.5).epsilon(1e-13));
}

namespace {
struct Reference {
    int a, b, c, d, e, f;
    double value;
};

// Exact values from an independent computer-algebra evaluation (doubled arguments).
const Reference k3jReference[] = {
    {3, 3, 6, -1, 3, -2, -0.1690308509457033},
    {2, 4, 2, 2, 0, -2, 0.18257418583505536},
    {4, 3, 1, 2, -1, -1, 0.3872983346207417},
    {4, 4, 6, 2, 0, -2, -0.1690308509457033},
    {2, 0, 2, 2, 0, -2, 0.57735026918962573},
    {0, 4, 4, 0, 2, -2, -0.44721359549995793},
    {4, 4, 6, 0, 0, 0, 0},
    {3, 4, 3, -1, 2, -1, 0},
    {3, 3, 6, -3, 3, 0, 0.084515425472851652},
    {3, 2, 5, -3, -2, 5, 0.40824829046386302},
    {4, 4, 6, 0, 2, -2, 0.1690308509457033},
    {4, 4, 6, 2, 4, -6, 0.2672612419124244},
    {4, 3, 5, 2, -1, -1, -0.2439750182371333},
    {2, 4, 6, 0, 0, 0, -0.29277002188455997},
    {3, 3, 6, -3, -1, 4, 0.2672612419124244},
    {2, 4, 6, 0, 2, -2, 0.27602622373694169},
    {4, 3, 5, -2, 1, 1, -0.2439750182371333},
    {1, 0, 1, -1, 0, 1, 0.70710678118654757},
    {2, 0, 2, -2, 0, 2, 0.57735026918962573},
    {3, 0, 3, -1, 0, 1, -0.5},
    {1, 3, 4, 1, -3, 2, 0.22360679774997896},
    {3, 4, 7, 3, -2, -1, 0.11952286093343936},
    {1, 2, 3, 1, 0, -1, 0.40824829046386302},
    {3, 4, 5, -3, 0, 3, -0.29277002188455997},
    {4, 4, 6, 2, -2, 0, 0.23904572186687872},
    {4, 3, 5, -4, 3, 1, -0.1690308509457033},
    {4, 4, 2, -4, 2, 2, 0.25819888974716115},
    {4, 3, 5, 0, 3, -3, -0.29277002188455997},
    {4, 4, 4, -2, 2, 0, 0.11952286093343936},
    {2, 4, 4, -2, 4, -2, -0.25819888974716115},
    {4, 3, 1, -2, 3, -1, 0.22360679774997896},
    {2, 3, 1, 0, -1, 1, 0.40824829046386302},
    {1, 3, 2, 1, -3, 2, 0.5},
    {2, 4, 4, 0, -2, 2, 0.18257418583505536},
    {4, 4, 8, 0, 4, -4, 0.15430334996209191},
    {3, 3, 4, -3, -1, 4, -0.31622776601683794},
    {3, 4, 3, -1, 0, 1, 0.22360679774997896},
    {4, 4, 2, 2, -2, 0, -0.18257418583505536},
    {4, 3, 7, 4, 3, -7, 0.35355339059327379},
    {4, 3, 5, -4, 1, 3, 0.27602622373694169},
};
const Reference k6jReference[] = {
    {3, 2, 3, 3, 2, 3, -0.18333333333333332},
    {4, 4, 2, 2, 4, 4, 0.15275252316519466},
    {3, 4, 1, 2, 3, 2, 0.091287092917527679},
    {2, 3, 1, 3, 4, 2, 0.091287092917527679},
    {3, 2, 1, 3, 4, 3, -0.22360679774997896},
    {0, 3, 3, 3, 2, 2, 0.28867513459481287},
    {2, 4, 4, 3, 3, 3, 0.1414213562373095},
    {2, 1, 3, 1, 2, 2, -0.16666666666666666},
    {3, 2, 1, 1, 2, 1, -0.33333333333333331},
    {4, 4, 2, 4, 4, 4, -0.10000000000000001},
    {1, 3, 2, 2, 4, 3, 0.091287092917527679},
    {2, 2, 4, 2, 4, 4, -0.10000000000000001},
    {2, 4, 2, 4, 2, 2, -0.22360679774997896},
    {2, 4, 4, 4, 4, 2, 0.15275252316519466},
    {1, 3, 4, 4, 4, 3, 0.18708286933869708},
    {1, 1, 2, 2, 2, 3, -0.16666666666666666},
    {4, 2, 4, 3, 3, 3, 0.1414213562373095},
    {4, 2, 4, 4, 2, 2, -0.10000000000000001},
    {1, 2, 3, 2, 3, 2, 0.26352313834736496},
    {3, 2, 3, 2, 1, 2, 0.26352313834736496},
    {1, 1, 2, 3, 3, 4, 0.15811388300841897},
    {3, 4, 1, 3, 2, 3, -0.22360679774997896},
    {2, 1, 1, 1, 2, 0, 0.40824829046386302},
    {0, 2, 2, 3, 3, 3, 0.28867513459481287},
    {3, 0, 3, 3, 4, 3, -0.25},
    {3, 4, 3, 3, 4, 3, 0.14999999999999999},
    {3, 4, 1, 4, 3, 4, 0.18708286933869708},
    {1, 3, 4, 3, 1, 2, 0.15811388300841897},
    {1, 0, 1, 2, 1, 2, 0.40824829046386302},
    {1, 0, 1, 2, 3, 2, -0.40824829046386302},
};
} // namespace

TEST_CASE("wigner3j and wigner6j against a computer-algebra reference table") {
    for (const auto &r : k3jReference) {
        CHECK(wigner3j(r.a, r.b, r.c, r.d, r.e, r.f) == doctest::Approx(r.value).epsilon(1e-13));
    }
    for (const auto &r : k6jReference) {
        CHECK(wigner6j(r.a, r.b, r.c, r.d, r.e, r.f) == doctest::Approx(r.value).epsilon(1e-13));
    }
}
