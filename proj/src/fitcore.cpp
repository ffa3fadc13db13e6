#include "toptrap/fitcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace toptrap::fit {
namespace {

struct Linearization {
    Vector residual; // weighted: (y - f) / sigma
    Matrix jacobian; // d f/d p, weighted by 1/sigma
};

Vector weighted_residual(const ScalarModel &model, std::span<const DataPoint> data,
                         const Vector &p) {
    Vector r(static_cast<Eigen::Index>(data.size()));
    for (std::size_t i = 0; i < data.size(); ++i) {
        r(static_cast<Eigen::Index>(i)) = (data[i].y - model(p, data[i].x)) / data[i].sigma;
    }
    return r;
}

Linearization linearize(const ScalarModel &model, std::span<const DataPoint> data,
                        const Vector &p, double rel_step) {
    const auto n = static_cast<Eigen::Index>(data.size());
    Linearization lin{weighted_residual(model, data, p), Matrix(n, p.size())};
    for (Eigen::Index j = 0; j < p.size(); ++j) {
        const double h = rel_step * std::max(std::abs(p(j)), 1e-3);
        Vector hi = p, lo = p;
        hi(j) += h;
        lo(j) -= h;
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto &d = data[static_cast<std::size_t>(i)];
            lin.jacobian(i, j) = (model(hi, d.x) - model(lo, d.x)) / (2.0 * h * d.sigma);
        }
    }
    return lin;
}

// Largest |cos| between the residual and any Jacobian column.
double gradient_cosine(const Linearization &lin) {
    const double rnorm = lin.residual.norm();
    if (rnorm == 0.0) {
        return 0.0;
    }
    double worst = 0.0;
    for (Eigen::Index j = 0; j < lin.jacobian.cols(); ++j) {
        const double cnorm = lin.jacobian.col(j).norm();
        if (cnorm > 0.0) {
            worst = std::max(worst, std::abs(lin.jacobian.col(j).dot(lin.residual)) /
                                        (cnorm * rnorm));
        }
    }
    return worst;
}

Matrix invert_normal(const Matrix &normal) {
    Eigen::LDLT<Matrix> ldlt(normal);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        ldlt.vectorD().minCoeff() <= normal.diagonal().maxCoeff() * 1e-15) {
        throw SingularNormalMatrix("normal matrix is singular at the solution");
    }
    Matrix cov = ldlt.solve(Matrix::Identity(normal.rows(), normal.cols()));
    return 0.5 * (cov + cov.transpose());
}

} // namespace

FitResult nonlinear_least_squares(const ScalarModel &model, std::span<const DataPoint> data,
                                  const Vector &initial, const LmOptions &options) {
    const auto n = static_cast<Eigen::Index>(data.size());
    const auto m = initial.size();
    if (n < m) {
        throw InputError("nonlinear_least_squares: fewer data points than parameters");
    }
    for (const auto &d : data) {
        if (!(d.sigma > 0.0) || !std::isfinite(d.x) || !std::isfinite(d.y)) {
            throw InputError("nonlinear_least_squares: sigmas must be positive and data finite");
        }
    }

    Vector p = initial;
    Linearization lin = linearize(model, data, p, options.jacobian_step);
    double chi2 = lin.residual.squaredNorm();
    if (!std::isfinite(chi2)) {
        throw DidNotConverge("nonlinear_least_squares: model is not finite at the initial guess");
    }
    double lambda = options.initial_lambda;
    FitResult result;

    // Residuals at the rounding floor of the data count as an exact fit.
    double data_norm = 0.0;
    for (const auto &d : data) {
        data_norm += (d.y / d.sigma) * (d.y / d.sigma);
    }
    const double floor_norm = 1e-12 * std::sqrt(data_norm);
    auto at_optimum = [&](const Linearization &l) {
        return l.residual.norm() <= floor_norm || gradient_cosine(l) <= options.gradient_tol;
    };

    int iter = 0;
    bool converged = at_optimum(lin);
    while (!converged && iter < options.max_iterations) {
        ++iter;
        const Matrix normal = lin.jacobian.transpose() * lin.jacobian;
        const Vector gradient = lin.jacobian.transpose() * lin.residual;
        bool improved = false;
        while (lambda <= 1e16) {
            Matrix damped = normal;
            for (Eigen::Index j = 0; j < m; ++j) {
                damped(j, j) += lambda * std::max(normal(j, j), 1e-300);
            }
            const Vector trial = p + damped.ldlt().solve(gradient);
            const double trial_chi2 = weighted_residual(model, data, trial).squaredNorm();
            if (std::isfinite(trial_chi2) && trial_chi2 < chi2) {
                p = trial;
                chi2 = trial_chi2;
                lambda = std::max(lambda * 0.1, 1e-12);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        lin = linearize(model, data, p, options.jacobian_step);
        converged = at_optimum(lin);
        if (!improved) {
            // No damped step lowers chi2: we sit on the numerical floor of the
            // objective. Accept only if the gradient is nearly orthogonal.
            converged = converged || gradient_cosine(lin) <= std::sqrt(options.gradient_tol);
            break;
        }
    }
    if (!converged) {
        throw DidNotConverge("nonlinear_least_squares: no convergence after " +
                             std::to_string(iter) + " iterations");
    }

    result.params = p;
    result.chi2 = chi2;
    result.residual_norm = std::sqrt(chi2);
    result.dof = static_cast<int>(n - m);
    result.n_iterations = iter;
    result.converged = true;
    result.covariance = invert_normal(lin.jacobian.transpose() * lin.jacobian);
    if (options.scale_covariance && result.dof > 0) {
        result.covariance *= result.reduced_chi2();
    }
    return result;
}

double weighted_condition_number(const Matrix &design, const Vector &sigma) {
    Matrix a = design;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        a.row(i) /= sigma(i);
    }
    Eigen::JacobiSVD<Matrix> svd(a);
    const auto &s = svd.singularValues();
    if (s.size() == 0 || s(s.size() - 1) == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return s(0) / s(s.size() - 1);
}

FitResult weighted_linear_least_squares(const Matrix &design, const Vector &y,
                                        const Vector &sigma, double condition_limit) {
    if (design.rows() != y.size() || y.size() != sigma.size()) {
        throw InputError("weighted_linear_least_squares: dimension mismatch");
    }
    if (design.rows() < design.cols()) {
        throw IllConditioned("weighted_linear_least_squares: fewer rows than columns");
    }
    if ((sigma.array() <= 0.0).any()) {
        throw InputError("weighted_linear_least_squares: sigmas must be positive");
    }
    Matrix a = design;
    Vector b = y;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        a.row(i) /= sigma(i);
        b(i) /= sigma(i);
    }
    Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector s = svd.singularValues();
    const double cond = s(s.size() - 1) > 0.0 ? s(0) / s(s.size() - 1)
                                               : std::numeric_limits<double>::infinity();
    if (!(cond <= condition_limit)) {
        throw IllConditioned("weighted_linear_least_squares: condition number " +
                             std::to_string(cond) + " exceeds limit");
    }

    FitResult result;
    result.params = svd.solve(b);
    const Matrix v = svd.matrixV();
    result.covariance = v * s.array().square().inverse().matrix().asDiagonal() * v.transpose();
    const Vector r = b - a * result.params;
    result.chi2 = r.squaredNorm();
    result.residual_norm = r.norm();
    result.dof = static_cast<int>(a.rows() - a.cols());
    result.n_iterations = 1;
    result.converged = true;
    return result;
}

// ---------------------------------------------------------------------------

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                 b6 = 11.0 / 84;
// b - b_hat (error weights)
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

double error_norm(const Vector &err, const Vector &y0, const Vector &y1, double rtol,
                  double atol) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < err.size(); ++i) {
        const double scale = atol + rtol * std::max(std::abs(y0(i)), std::abs(y1(i)));
        const double e = err(i) / scale;
        acc += e * e;
    }
    return std::sqrt(acc / static_cast<double>(std::max<Eigen::Index>(err.size(), 1)));
}

} // namespace

OdeResult ode_integrate(const OdeDerivative &derivative, const Vector &state0,
                        std::pair<double, double> t_span, const OdeOptions &options,
                        std::span<const double> checkpoint_times, const OdeObserver &observer) {
    if (!(options.rel_tol > 0.0) || !(options.abs_tol > 0.0)) {
        throw InputError("ode_integrate: tolerances must be positive");
    }
    const auto [t0, t1] = t_span;
    if (!(t1 >= t0)) {
        throw InputError("ode_integrate: t_span must be nondecreasing");
    }
    std::vector<double> stops(checkpoint_times.begin(), checkpoint_times.end());
    std::sort(stops.begin(), stops.end());
    stops.erase(std::remove_if(stops.begin(), stops.end(),
                               [&](double t) { return t < t0 || t > t1; }),
                stops.end());

    OdeResult out;
    out.state = state0;
    const auto n = state0.size();
    if (t1 == t0 || n == 0) {
        for (double t : stops) {
            out.checkpoints.emplace_back(t, state0);
        }
        return out;
    }

    Vector y = state0, k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), tmp(n), ynew(n), err(n);
    double t = t0;
    derivative(t, y, k1);

    double h = options.initial_step;
    if (h <= 0.0) {
        // Hairer-Wanner starting-step heuristic.
        Vector scale = (options.abs_tol + options.rel_tol * y.array().abs()).matrix();
        const double d0 = (y.array() / scale.array()).matrix().norm() / std::sqrt(double(n));
        const double d1 = (k1.array() / scale.array()).matrix().norm() / std::sqrt(double(n));
        h = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 * (t1 - t0) : 0.01 * d0 / d1;
        h = std::min(h, t1 - t0);
    }

    std::size_t next_stop = 0;
    while (next_stop < stops.size() && stops[next_stop] <= t0) {
        out.checkpoints.emplace_back(stops[next_stop], y);
        ++next_stop;
    }

    constexpr double safety = 0.9, min_factor = 0.2, max_factor = 5.0;
    const bool per_unit_step = options.control == ErrorControl::PerUnitStep;
    // err ~ h^5; per unit step the controlled quantity scales as h^4.
    const double exponent = per_unit_step ? -0.25 : -0.2;
    while (t < t1) {
        if (out.n_steps + out.n_rejected >= options.max_steps) {
            throw StepUnderflow("ode_integrate: step budget exhausted");
        }
        const double target = next_stop < stops.size() ? stops[next_stop] : t1;
        bool lands = false;
        if (t + h >= target) {
            h = target - t;
            lands = true;
        }
        const double floor =
            std::max(options.min_step, 16.0 * std::numeric_limits<double>::epsilon() *
                                           std::max(std::abs(t), std::abs(t1 - t0)));
        if (h < floor && !lands) {
            throw StepUnderflow("ode_integrate: step size underflow at t=" + std::to_string(t));
        }

        tmp = y + h * a21 * k1;
        derivative(t + c2 * h, tmp, k2);
        tmp = y + h * (a31 * k1 + a32 * k2);
        derivative(t + c3 * h, tmp, k3);
        tmp = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
        derivative(t + c4 * h, tmp, k4);
        tmp = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
        derivative(t + c5 * h, tmp, k5);
        tmp = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
        derivative(t + h, tmp, k6);
        ynew = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
        derivative(t + h, ynew, k7);
        err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

        double enorm = error_norm(err, y, ynew, options.rel_tol, options.abs_tol);
        if (per_unit_step) {
            enorm *= (t1 - t0) / h;
        }
        if (!std::isfinite(enorm)) {
            ++out.n_rejected;
            h *= min_factor;
            continue;
        }
        if (enorm <= 1.0) {
            t = lands ? target : t + h;
            y = ynew;
            k1 = k7;
            ++out.n_steps;
            if (observer) {
                observer(t, y);
            }
            while (next_stop < stops.size() && stops[next_stop] <= t) {
                out.checkpoints.emplace_back(stops[next_stop], y);
                ++next_stop;
            }
            const double factor =
                enorm == 0.0 ? max_factor
                             : std::clamp(safety * std::pow(enorm, exponent), min_factor, max_factor);
            h *= factor;
        } else {
            ++out.n_rejected;
            h *= std::max(min_factor, safety * std::pow(enorm, exponent));
        }
    }
    out.state = y;
    return out;
}

NoiseSource NoiseSource::fork(std::uint64_t stream) const {
    // SplitMix64 finalizer to decorrelate neighbouring seeds.
    std::uint64_t z = seed_ + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return NoiseSource(z ^ (z >> 31));
}

} // namespace toptrap::fit
