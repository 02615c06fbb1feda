#include "geometry.hpp"

#include <cmath>
#include <numbers>

namespace ct {

namespace {

constexpr double pi = std::numbers::pi;

double frac(double x) { return x - std::floor(x); }

// Real root of x^{d+1} = x + 1 (golden ratio for d = 1, plastic number for d = 2).
double harmonious_root(int d) {
    double x = 2.0;
    for (int it = 0; it < 128; ++it) {
        const double f = std::pow(x, d + 1) - x - 1.0;
        const double df = (d + 1) * std::pow(x, d) - 1.0;
        const double next = x - f / df;
        if (std::abs(next - x) < 1e-15) {
            x = next;
            break;
        }
        x = next;
    }
    return x;
}

Mat3 rotation_delta(const LocalCoords& nu) {
    // R_z R_y R_x - I assembled from the per-axis deltas so the result is an
    // exact zero matrix at nu = 0 and free of 1-cos cancellation for tiny angles.
    std::array<Mat3, 3> delta;
    for (int axis = 1; axis <= 3; ++axis) {
        const double a = nu[axis - 1];
        const Mat3 j = so3_generator(axis);
        const double s = std::sin(a);
        const double h = std::sin(0.5 * a);
        delta[axis - 1] = s * j + (2.0 * h * h) * (j * j);
    }
    const Mat3& dx = delta[0];
    const Mat3& dy = delta[1];
    const Mat3& dz = delta[2];
    return dz + dy + dx + dz * dy + dz * dx + dy * dx + dz * dy * dx;
}

}  // namespace

Cube canonical_cube() {
    const double a = cube_edge;
    Cube c;
    c.v[0] = a * Vec3(-1.0 / std::sqrt(6.0), -1.0 / std::sqrt(2.0), -1.0 / (2.0 * std::sqrt(3.0)));
    c.v[1] = a * Vec3(0.0, 0.0, std::sqrt(3.0) / 2.0);
    c.v[2] = a * Vec3(-1.0 / std::sqrt(6.0), 1.0 / std::sqrt(2.0), -1.0 / (2.0 * std::sqrt(3.0)));
    c.v[3] = c.v[0] + c.v[1] + c.v[2];
    c.v[4] = c.v[0] + c.v[1] - c.v[3];
    c.v[5] = c.v[0] + c.v[2] - c.v[3];
    c.v[6] = c.v[1] + c.v[2] - c.v[3];
    c.v[7] = -c.v[3];
    return c;
}

std::vector<double> korobov_points(long long count, int dim, double seed_offset) {
    if (count < 1 || dim < 1) throw InvalidArgumentError("korobov_points: count and dim must be >= 1");
    const double root = harmonious_root(dim);
    std::vector<double> alpha(dim);
    double p = 1.0;
    for (int i = 0; i < dim; ++i) {
        p /= root;
        alpha[i] = p;
    }
    std::vector<double> out(static_cast<size_t>(count) * dim);
    for (long long n = 1; n <= count; ++n) {
        for (int i = 0; i < dim; ++i) {
            out[static_cast<size_t>(n - 1) * dim + i] = frac(seed_offset + static_cast<double>(n) * alpha[i]);
        }
    }
    return out;
}

PoseParams sample_to_params(const double* x6) {
    PoseParams p;
    p.d = Vec3(-0.52 + 1.04 * x6[0], -0.52 + 1.04 * x6[1], -0.52 + 1.04 * x6[2]);
    p.phi = -pi / 8.0 + (pi / 4.0) * x6[3];
    p.rho = -1.0 + 2.0 * x6[4];
    p.theta = pi * x6[5];
    return p;
}

Cube params_to_cube(const PoseParams& p) {
    const Mat3 r = rotation_about_axis(p.axis(), p.phi);
    const Cube c0 = canonical_cube();
    Cube c;
    for (int k = 0; k < 8; ++k) c.v[k] = r * c0.v[k] + p.d;
    return c;
}

Cube reconstruct_full_cube(const Vec9& first_three) {
    const double diag = cube_edge * std::sqrt(2.0);
    std::array<Vec3, 3> w;
    for (int i = 0; i < 3; ++i) w[i] = first_three.segment<3>(3 * i);
    for (int i = 0; i < 3; ++i) {
        const double d = (w[i] - w[(i + 1) % 3]).norm();
        if (std::abs(d - diag) > 1e-6) {
            throw GeometryError("reconstruct_full_cube: pairwise distance " + std::to_string(d) +
                                " violates the face-diagonal relation");
        }
    }
    const Vec3 m = (w[0] + w[1] + w[2]) / 3.0;
    Vec3 n = (w[1] - w[0]).cross(w[2] - w[0]);
    const double nn = n.norm();
    if (nn < 1e-12) throw GeometryError("reconstruct_full_cube: degenerate triangle");
    n /= nn;
    const double h = cube_edge / std::sqrt(3.0);
    Cube c;
    for (const double sign : {1.0, -1.0}) {
        const Vec3 v0 = m + sign * h * n;
        Mat3 frame;
        for (int i = 0; i < 3; ++i) frame.col(i) = w[i] - v0;
        if (frame.determinant() < 0.0) {
            c.v[0] = w[0];
            c.v[1] = w[1];
            c.v[2] = w[2];
            c.v[3] = v0;
            c.v[4] = w[0] + w[1] - v0;
            c.v[5] = w[0] + w[2] - v0;
            c.v[6] = w[1] + w[2] - v0;
            c.v[7] = w[0] + w[1] + w[2] - 2.0 * v0;
            return c;
        }
    }
    throw GeometryError("reconstruct_full_cube: no orientation-consistent apex");
}

Cube apply_local_transform(const Cube& c, const LocalCoords& nu) {
    const Vec3 d = c.center();
    const Vec3 t(nu[3], nu[4], nu[5]);
    const Mat3 delta = rotation_delta(nu);
    Cube out;
    for (int k = 0; k < 8; ++k) out.v[k] = c.v[k] + delta * (c.v[k] - d) + t;
    return out;
}

Vec9 cube_first_derivative(const Cube& c, int i) {
    if (i < 1 || i > 6) throw InvalidArgumentError("cube_first_derivative: i must be in 1..6");
    Vec9 out;
    if (i >= 4) {
        out.setZero();
        for (int k = 0; k < 3; ++k) out[3 * k + (i - 4)] = 1.0;
        return out;
    }
    const Vec3 d = c.center();
    const Mat3 j = so3_generator(i);
    for (int k = 0; k < 3; ++k) out.segment<3>(3 * k) = j * (c.v[k] - d);
    return out;
}

Vec9 cube_second_derivative(const Cube& c, int i, int j) {
    if (i < 1 || i > 6 || j < 1 || j > 6) {
        throw InvalidArgumentError("cube_second_derivative: indices must be in 1..6");
    }
    if (i > j) throw OrderError("cube_second_derivative: requires i <= j");
    Vec9 out;
    if (j > 3) {
        out.setZero();
        return out;
    }
    const Vec3 d = c.center();
    const Mat3 op = so3_generator(j) * so3_generator(i);
    for (int k = 0; k < 3; ++k) out.segment<3>(3 * k) = op * (c.v[k] - d);
    return out;
}

Mat3 so3_generator(int axis) {
    Mat3 j = Mat3::Zero();
    switch (axis) {
        case 1:
            j(1, 2) = -1.0;
            j(2, 1) = 1.0;
            break;
        case 2:
            j(0, 2) = 1.0;
            j(2, 0) = -1.0;
            break;
        case 3:
            j(0, 1) = -1.0;
            j(1, 0) = 1.0;
            break;
        default:
            throw InvalidArgumentError("so3_generator: axis must be 1, 2, or 3");
    }
    return j;
}

Mat3 rotation_about_axis(const Vec3& unit_axis, double angle) {
    Mat3 k = Mat3::Zero();
    k(0, 1) = -unit_axis.z();
    k(0, 2) = unit_axis.y();
    k(1, 0) = unit_axis.z();
    k(1, 2) = -unit_axis.x();
    k(2, 0) = -unit_axis.y();
    k(2, 1) = unit_axis.x();
    const double s = std::sin(angle);
    const double h = std::sin(0.5 * angle);
    return Mat3::Identity() + s * k + (2.0 * h * h) * (k * k);
}

}  // namespace ct
