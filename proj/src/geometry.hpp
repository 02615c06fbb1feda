#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <vector>

#include "errors.hpp"

namespace ct {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec9 = Eigen::Matrix<double, 9, 1>;
using LocalCoords = Vec6;

inline constexpr double cube_edge = 0.4;

// Vertex order: v1, v2, v3 (the tracked triple), v0 (their common neighbor),
// v12, v13, v23 (opposite corners of the faces through v0), v7 (far corner).
struct Cube {
    std::array<Vec3, 8> v;

    Vec3 center() const { return 0.5 * (v[3] + v[7]); }

    Vec9 target9() const {
        Vec9 t;
        for (int i = 0; i < 3; ++i) t.segment<3>(3 * i) = v[i];
        return t;
    }
};

struct PoseParams {
    Vec3 d = Vec3::Zero();
    double phi = 0.0;
    double rho = 0.0;
    double theta = 0.0;

    Vec3 axis() const {
        const double s = std::sqrt(std::max(0.0, 1.0 - rho * rho));
        return Vec3(s * std::cos(theta), s * std::sin(theta), rho);
    }
};

Cube canonical_cube();

// Low-discrepancy points x_n = frac(seed_offset + n * alpha), n = 1..count,
// alpha_i = phi_d^{-i} with phi_d the real root of x^{d+1} = x + 1.
// Returns count*dim values, point-major.
std::vector<double> korobov_points(long long count, int dim, double seed_offset);

// Maps one unit-cube sample to the documented pose ranges.
PoseParams sample_to_params(const double* x6);

Cube params_to_cube(const PoseParams& p);

Cube reconstruct_full_cube(const Vec9& first_three);

// v -> R_z(nu3) R_y(nu2) R_x(nu1) (v - d) + d + (nu4, nu5, nu6), d = center.
Cube apply_local_transform(const Cube& c, const LocalCoords& nu);

Vec9 cube_first_derivative(const Cube& c, int i);

Vec9 cube_second_derivative(const Cube& c, int i, int j);

// Lexicographic index of the unordered pair (i, j), 1 <= i <= j <= 6 -> 0..20.
inline int pair_index(int i, int j) {
    return (i - 1) * (14 - i) / 2 + (j - i);
}

// Same index for a zero-based, possibly unordered pair.
inline int sym_pair(int a, int b) {
    return pair_index(std::min(a, b) + 1, std::max(a, b) + 1);
}

Mat3 so3_generator(int axis);

Mat3 rotation_about_axis(const Vec3& unit_axis, double angle);

}  // namespace ct
