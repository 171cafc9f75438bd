#pragma once

#include <Eigen/Core>

namespace imocap {

/// Geman-McClure penalty rho(r) = sigma^2 |r|^2 / (|r|^2 + sigma^2).
/// Quadratic near zero, saturates at sigma^2.
inline double geman_mcclure(const Eigen::Vector2d& residual, double sigma)
{
    const double r2 = residual.squaredNorm();
    const double s2 = sigma * sigma;
    return s2 * r2 / (r2 + s2);
}

/// d rho / d(|r|^2). The gradient with respect to r is 2 * this * r; it also
/// serves as the IRLS weight in Gauss-Newton steps.
inline double geman_mcclure_weight(double r2, double sigma)
{
    const double s2 = sigma * sigma;
    const double d = r2 + s2;
    return s2 * s2 / (d * d);
}

} // namespace imocap
