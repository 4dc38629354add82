#pragma once

#include <cmath>
#include <stdexcept>

namespace slam {

// Normalize an angle to the half-open interval (-pi, pi].
inline double normalize_angle(double t) {
    if (!std::isfinite(t)) {
        throw std::invalid_argument("normalize_angle: non-finite input");
    }
    const double two_pi = 2.0 * M_PI;
    double r = std::fmod(t, two_pi);
    if (r <= -M_PI) {
        r += two_pi;
    } else if (r > M_PI) {
        r -= two_pi;
    }
    return r;
}

// SE(2) element (x, y, theta); theta is kept in (-pi, pi].
struct Pose2 {
    double x = 0.0;
    double y = 0.0;
    double theta = 0.0;

    Pose2() = default;
    Pose2(double x_, double y_, double theta_) : x(x_), y(y_), theta(normalize_angle(theta_)) {}

    static Pose2 identity() { return Pose2(); }
};

// Group composition a * b: rotate b's translation into a's frame, add angles.
inline Pose2 compose(const Pose2& a, const Pose2& b) {
    const double c = std::cos(a.theta);
    const double s = std::sin(a.theta);
    return Pose2(a.x + c * b.x - s * b.y,
                 a.y + s * b.x + c * b.y,
                 a.theta + b.theta);
}

inline Pose2 inverse(const Pose2& a) {
    const double c = std::cos(a.theta);
    const double s = std::sin(a.theta);
    return Pose2(-(c * a.x + s * a.y),
                 -(-s * a.x + c * a.y),
                 -a.theta);
}

// Relative pose a^{-1} * b, so that compose(a, between(a, b)) == b.
inline Pose2 between(const Pose2& a, const Pose2& b) {
    return compose(inverse(a), b);
}

}  // namespace slam
