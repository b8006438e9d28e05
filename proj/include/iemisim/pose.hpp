#pragma once

#include <cmath>

#include "iemisim/common.hpp"

namespace iemisim {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

inline double distance(const Vec2& a, const Vec2& b) {
    return std::hypot(a.x - b.x, a.y - b.y);
}

/// Rigid transform from antenna coordinates to screen coordinates:
/// rotation by theta followed by translation (x_t, y_t).
struct ScreenPose {
    double theta_rad = 0.0;
    double x_t_m = 0.0;
    double y_t_m = 0.0;

    Vec2 to_screen(const Vec2& antenna) const {
        const double c = std::cos(theta_rad), s = std::sin(theta_rad);
        return {c * antenna.x - s * antenna.y + x_t_m,
                s * antenna.x + c * antenna.y + y_t_m};
    }

    Vec2 to_antenna(const Vec2& screen) const {
        const double c = std::cos(theta_rad), s = std::sin(theta_rad);
        const double dx = screen.x - x_t_m, dy = screen.y - y_t_m;
        return {c * dx + s * dy, -s * dx + c * dy};
    }
};

}  // namespace iemisim
