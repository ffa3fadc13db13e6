#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "toptrap/errors.hpp"

/// Small numerical substrate shared by the calibration and Bloch layers:
/// least squares (linear and Levenberg-Marquardt), an adaptive Dormand-Prince
/// integrator and a seeded noise source for Monte-Carlo round trips.
namespace toptrap::fit {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct FitResult {
    Vector params;
    Matrix covariance;
    double residual_norm = 0.0; // sqrt of the weighted sum of squares
    double chi2 = 0.0;
    int dof = 0;
    int n_iterations = 0;
    bool converged = false;

    double sigma(Eigen::Index i) const { return std::sqrt(covariance(i, i)); }
    double reduced_chi2() const { return dof > 0 ? chi2 / dof : 0.0; }
};

struct DataPoint {
    double x = 0.0;
    double y = 0.0;
    double sigma = 1.0;
};

using ScalarModel = std::function<double(const Vector &params, double x)>;

struct LmOptions {
    int max_iterations = 200;
    // Convergence: largest cosine between the weighted residual vector and any
    // Jacobian column (MINPACK gtol) must fall below this.
    double gradient_tol = 1e-8;
    double initial_lambda = 1e-3;
    // Relative finite-difference step for the numerical Jacobian.
    double jacobian_step = 1e-6;
    // Multiply the covariance by chi2/dof (use when sigmas are unknown).
    bool scale_covariance = false;
};

/// Damped Gauss-Newton fit of `model` to (x, y, sigma) triples.
/// Throws DidNotConverge or SingularNormalMatrix.
FitResult nonlinear_least_squares(const ScalarModel &model,
                                  std::span<const DataPoint> data,
                                  const Vector &initial,
                                  const LmOptions &options = {});

inline constexpr double kDefaultConditionLimit = 1e10;

/// Closed-form weighted least squares with covariance (A^T W A)^-1.
/// Throws IllConditioned when cond(W^1/2 A) exceeds `condition_limit`.
FitResult weighted_linear_least_squares(const Matrix &design, const Vector &y,
                                        const Vector &sigma,
                                        double condition_limit = kDefaultConditionLimit);

/// Condition number of the sigma-weighted design matrix.
double weighted_condition_number(const Matrix &design, const Vector &sigma);

// ---------------------------------------------------------------------------
// ODE integration

using OdeDerivative =
    std::function<void(double t, const Vector &state, Vector &derivative)>;
using OdeObserver = std::function<void(double t, const Vector &state)>;

enum class ErrorControl {
    // Local error of each step scaled by h / (t1 - t0): the accumulated error
    // over the whole span stays at the tolerance level.
    PerUnitStep,
    // Classic per-step control.
    PerStep,
};

struct OdeOptions {
    ErrorControl control = ErrorControl::PerUnitStep;
    double rel_tol = 1e-8;
    double abs_tol = 1e-12;
    double initial_step = 0.0; // 0 selects a step automatically
    double min_step = 0.0;     // 0 means "relative to machine precision"
    long max_steps = 5'000'000;
};

struct OdeResult {
    Vector state;
    long n_steps = 0;
    long n_rejected = 0;
    std::vector<std::pair<double, Vector>> checkpoints;
};

/// Adaptive Dormand-Prince 5(4) integration from t_span.first to t_span.second.
/// The stepper lands exactly on every time in `checkpoint_times` and records
/// the state there. `observer` (optional) sees every accepted step.
OdeResult ode_integrate(const OdeDerivative &derivative, const Vector &state0,
                        std::pair<double, double> t_span,
                        const OdeOptions &options = {},
                        std::span<const double> checkpoint_times = {},
                        const OdeObserver &observer = {});

// ---------------------------------------------------------------------------
// Noise injection

/// Seeded pseudo-random source (64-bit Mersenne twister). Pass by value;
/// never share one instance between threads.
class NoiseSource {
  public:
    explicit NoiseSource(std::uint64_t seed) : engine_(seed), seed_(seed) {}

    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }
    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }
    /// Independent stream derived from this source's seed and `stream`.
    NoiseSource fork(std::uint64_t stream) const;

    std::uint64_t seed() const { return seed_; }

  private:
    std::mt19937_64 engine_;
    std::uint64_t seed_;
};

} // namespace toptrap::fit
