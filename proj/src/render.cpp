#include "render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace ct {

namespace {

constexpr double pi = std::numbers::pi;

// Face corner tables in cube-vertex indices, counterclockwise seen from
// outside, paired with the face color. The canonical pose shows the first
// three faces to the camera.
struct FaceDef {
    std::array<int, 4> idx;
    double color;
};

constexpr std::array<FaceDef, 6> face_defs = {{
    {{3, 1, 6, 2}, 1.0},
    {{1, 4, 7, 6}, 2.0 / 3.0},
    {{3, 0, 4, 1}, 1.0 / 6.0},
    {{0, 5, 7, 4}, 1.0 / 3.0},
    {{3, 2, 5, 0}, 1.0 / 2.0},
    {{2, 6, 7, 5}, 5.0 / 6.0},
}};

struct EdgeIntegrand {
    double u, v, sigma;
    Eigen::Vector2d p1, d;  // edge point = p1 + t * d

    double operator()(double t) const {
        const double up = p1.x() + t * d.x();
        const double vp = p1.y() + t * d.y();
        const double g = std::exp(-0.5 * (u - up) * (u - up) / (sigma * sigma));
        const double e = std::erf((vp - v) / (sigma * std::numbers::sqrt2));
        return -d.x() * g * e * std::sqrt(pi / 2.0) * sigma / (2.0 * pi * sigma * sigma);
    }
};

double simpson_recurse(const EdgeIntegrand& f, double a, double b, double fa, double fm, double fb,
                       double whole, double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m);
    const double rm = 0.5 * (m + b);
    const double flm = f(lm);
    const double frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const double err = (left + right - whole) / 15.0;
    if (depth <= 0 || std::abs(err) <= tol) return left + right + err;
    return simpson_recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           simpson_recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

double adaptive_simpson(const EdgeIntegrand& f, double a, double b, double tol) {
    const double fa = f(a);
    const double m = 0.5 * (a + b);
    const double fm = f(m);
    const double fb = f(b);
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return simpson_recurse(f, a, b, fa, fm, fb, whole, tol, 40);
}

double edge_flux_simpson(double u, double v, const Eigen::Vector2d& p1, const Eigen::Vector2d& p2,
                         double sigma, double tol) {
    const Eigen::Vector2d d = p2 - p1;
    if (d.x() == 0.0) return 0.0;
    const double ulo = std::min(p1.x(), p2.x());
    const double uhi = std::max(p1.x(), p2.x());
    if (u < ulo - 9.0 * sigma || u > uhi + 9.0 * sigma) return 0.0;
    const EdgeIntegrand f{u, v, sigma, p1, d};
    // Split where the Gaussian peaks so narrow kernels sit at interval ends.
    const double tstar = (u - p1.x()) / d.x();
    if (tstar > 1e-12 && tstar < 1.0 - 1e-12) {
        return adaptive_simpson(f, 0.0, tstar, 0.5 * tol) + adaptive_simpson(f, tstar, 1.0, 0.5 * tol);
    }
    return adaptive_simpson(f, 0.0, 1.0, tol);
}

// 12-point Gauss-Legendre nodes (positive half) and weights on [-1, 1].
constexpr std::array<double, 6> gl12_x = {0.1252334085114689, 0.3678314989981802,
                                          0.5873179542866175, 0.7699026741943047,
                                          0.9041172563704749, 0.9815606342467192};
constexpr std::array<double, 6> gl12_w = {0.2491470458134028, 0.2334925365383548,
                                          0.2031674267230659, 0.1600783285433462,
                                          0.1069393259953184, 0.0471753363865118};

double edge_flux_gl(double u, double v, const Eigen::Vector2d& p1, const Eigen::Vector2d& p2,
                    double sigma) {
    const Eigen::Vector2d d = p2 - p1;
    if (d.x() == 0.0) return 0.0;
    const double ulo = std::min(p1.x(), p2.x());
    const double uhi = std::max(p1.x(), p2.x());
    if (u < ulo - 9.0 * sigma || u > uhi + 9.0 * sigma) return 0.0;
    const EdgeIntegrand f{u, v, sigma, p1, d};
    // Segments no wider than 3 sigma in either image axis keep the Gaussian
    // and the erf transition well inside the resolving power of 12 nodes.
    const double span = std::max(std::abs(d.x()), std::abs(d.y()));
    const int nseg = std::max(1, static_cast<int>(std::ceil(span / (3.0 * sigma))));
    const double dt = 1.0 / nseg;
    double total = 0.0;
    for (int s = 0; s < nseg; ++s) {
        const double t0 = s * dt;
        const double ua = p1.x() + t0 * d.x();
        const double ub = ua + dt * d.x();
        if (u < std::min(ua, ub) - 8.5 * sigma || u > std::max(ua, ub) + 8.5 * sigma) continue;
        const double mid = t0 + 0.5 * dt;
        const double half = 0.5 * dt;
        double acc = 0.0;
        for (int k = 0; k < 6; ++k) {
            acc += gl12_w[k] * (f(mid - half * gl12_x[k]) + f(mid + half * gl12_x[k]));
        }
        total += acc * half;
    }
    return total;
}

// -1: pixel beyond kernel reach, +1: deep inside (mass saturates at 1),
// 0: boundary region that needs the edge integrals.
int classify_pixel(const FaceQuad& q, double u, double v, double sigma) {
    double ulo = q.corners[0].x(), uhi = ulo, vlo = q.corners[0].y(), vhi = vlo;
    for (int k = 1; k < 4; ++k) {
        ulo = std::min(ulo, q.corners[k].x());
        uhi = std::max(uhi, q.corners[k].x());
        vlo = std::min(vlo, q.corners[k].y());
        vhi = std::max(vhi, q.corners[k].y());
    }
    const double reach = 9.0 * sigma;
    if (u < ulo - reach || u > uhi + reach || v < vlo - reach || v > vhi + reach) return -1;

    for (int k = 0; k < 4; ++k) {
        const Eigen::Vector2d& p1 = q.corners[k];
        const Eigen::Vector2d& p2 = q.corners[(k + 1) % 4];
        const Eigen::Vector2d d = p2 - p1;
        const double len = d.norm();
        if (len < 1e-15) continue;
        const double signed_dist = (d.x() * (v - p1.y()) - d.y() * (u - p1.x())) / len;
        if (signed_dist < 8.0 * sigma) return 0;
    }
    return 1;
}

}  // namespace

Eigen::Vector2d project_vertex(const Camera& cam, const Vec3& p) {
    const Vec3 q = cam.r * p + cam.t;
    if (std::abs(q.z()) < 1e-9) throw ProjectionError("project_vertex: homogeneous divisor is singular");
    return Eigen::Vector2d(cam.f * q.x() / q.z() + cam.c.x(), cam.f * q.y() / q.z() + cam.c.y());
}

std::vector<FaceQuad> visible_faces(const Camera& cam, const Cube& c) {
    const Vec3 eye = cam.center();
    std::vector<FaceQuad> out;
    for (const auto& fd : face_defs) {
        const Vec3 a = c.v[fd.idx[0]];
        const Vec3 b = c.v[fd.idx[1]];
        const Vec3 d = c.v[fd.idx[2]];
        Vec3 normal = ((b - a).cross(d - b)).normalized();
        const Vec3 centroid = 0.25 * (c.v[fd.idx[0]] + c.v[fd.idx[1]] + c.v[fd.idx[2]] + c.v[fd.idx[3]]);
        // The corner tables assume the canonical vertex handedness; orienting
        // against the cube center keeps mirrored labelings working too.
        if (normal.dot(centroid - c.center()) < 0.0) normal = -normal;
        const double facing = normal.dot((centroid - eye).normalized());
        if (facing >= -1e-12) continue;
        FaceQuad q;
        q.color = fd.color;
        for (int k = 0; k < 4; ++k) {
            q.vertex_ids[k] = fd.idx[k];
            q.corners[k] = project_vertex(cam, c.v[fd.idx[k]]);
        }
        double area2 = 0.0;
        for (int k = 0; k < 4; ++k) {
            const auto& p1 = q.corners[k];
            const auto& p2 = q.corners[(k + 1) % 4];
            area2 += p1.x() * p2.y() - p2.x() * p1.y();
        }
        if (area2 < 0.0) {
            std::swap(q.corners[1], q.corners[3]);
            std::swap(q.vertex_ids[1], q.vertex_ids[3]);
        }
        out.push_back(q);
    }
    return out;
}

double quad_mass(const FaceQuad& q, double u, double v, double sigma, double edge_tol) {
    const int cls = classify_pixel(q, u, v, sigma);
    if (cls != 0) return cls > 0 ? 1.0 : 0.0;
    double total = 0.0;
    for (int k = 0; k < 4; ++k) {
        total += edge_flux_simpson(u, v, q.corners[k], q.corners[(k + 1) % 4], sigma, edge_tol);
    }
    return total;
}

double quad_mass_fixed(const FaceQuad& q, double u, double v, double sigma) {
    const int cls = classify_pixel(q, u, v, sigma);
    if (cls != 0) return cls > 0 ? 1.0 : 0.0;
    double total = 0.0;
    for (int k = 0; k < 4; ++k) {
        total += edge_flux_gl(u, v, q.corners[k], q.corners[(k + 1) % 4], sigma);
    }
    return total;
}

Image rasterize_quads(const std::vector<FaceQuad>& quads, double sigma, int grid, double pixel_tol) {
    if (sigma <= 0.0) throw InvalidArgumentError("rasterize_quads: sigma must be positive");
    Image img(grid);
    const double edge_tol = pixel_tol / 16.0;
    for (int iv = 0; iv < grid; ++iv) {
        const double v = img.coord(iv);
        for (int iu = 0; iu < grid; ++iu) {
            const double u = img.coord(iu);
            double val = 0.0;
            for (const auto& q : quads) val += q.color * quad_mass(q, u, v, sigma, edge_tol);
            img.at(iu, iv) = val;
        }
    }
    return img;
}

Image rasterize(const Camera& cam, const Cube& c, double sigma, int grid, double pixel_tol) {
    return rasterize_quads(visible_faces(cam, c), sigma, grid, pixel_tol);
}

Image rasterize_fixed(const Camera& cam, const Cube& c, double sigma, int grid) {
    if (sigma <= 0.0) throw InvalidArgumentError("rasterize_fixed: sigma must be positive");
    const std::vector<FaceQuad> quads = visible_faces(cam, c);
    Image img(grid);
    for (int iv = 0; iv < grid; ++iv) {
        const double v = img.coord(iv);
        for (int iu = 0; iu < grid; ++iu) {
            const double u = img.coord(iu);
            double val = 0.0;
            for (const auto& q : quads) val += q.color * quad_mass_fixed(q, u, v, sigma);
            img.at(iu, iv) = val;
        }
    }
    return img;
}

std::vector<FaceQuad> stripe_quads(int lines) {
    std::vector<FaceQuad> quads;
    const double w = 2.0 / lines;
    for (int k = 0; k < lines; k += 2) {
        const double u0 = -1.0 + k * w;
        const double u1 = u0 + w;
        FaceQuad q;
        q.color = 1.0;
        q.corners = {Eigen::Vector2d(u0, -1.0), Eigen::Vector2d(u1, -1.0), Eigen::Vector2d(u1, 1.0),
                     Eigen::Vector2d(u0, 1.0)};
        quads.push_back(q);
    }
    return quads;
}

double stripe_contrast(double sigma, int lines) {
    if (lines < 1) throw InvalidArgumentError("stripe_contrast: lines must be >= 1");
    const Image img = rasterize_quads(stripe_quads(lines), sigma);
    const double step = img.step();
    const int margin = std::max(2, static_cast<int>(std::ceil(8.0 * sigma / step)));
    double lo = 1e300;
    double hi = -1e300;
    for (int iv = margin; iv < img.grid - margin; ++iv) {
        for (int iu = margin; iu < img.grid - margin; ++iu) {
            lo = std::min(lo, img.at(iu, iv));
            hi = std::max(hi, img.at(iu, iv));
        }
    }
    return (hi - lo) / (hi + lo);
}

void write_pgm(const Image& img, const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("write_pgm: cannot open " + path);
    std::fprintf(fp, "P5\n%d %d\n65535\n", img.grid, img.grid);
    for (int iv = img.grid - 1; iv >= 0; --iv) {
        for (int iu = 0; iu < img.grid; ++iu) {
            const double clamped = std::clamp(img.at(iu, iv), 0.0, 1.0);
            const auto value = static_cast<unsigned>(std::lround(clamped * 65535.0));
            const unsigned char bytes[2] = {static_cast<unsigned char>(value >> 8),
                                            static_cast<unsigned char>(value & 0xff)};
            if (std::fwrite(bytes, 1, 2, fp) != 2) {
                std::fclose(fp);
                throw IoError("write_pgm: short write to " + path);
            }
        }
    }
    std::fclose(fp);
}

}  // namespace ct
