#pragma once

#include <array>
#include <string>
#include <vector>

#include "geometry.hpp"

namespace ct {

struct Camera {
    double f = 5.0;
    Vec3 t = Vec3(0.0, 0.0, -5.0);
    Eigen::Vector2d c = Eigen::Vector2d::Zero();
    Mat3 r = Mat3::Identity();

    Vec3 center() const { return -r.transpose() * t; }
};

inline constexpr int default_grid = 41;

struct Image {
    int grid = default_grid;
    std::vector<double> p;

    Image() : p(static_cast<size_t>(default_grid) * default_grid, 0.0) {}
    explicit Image(int g) : grid(g), p(static_cast<size_t>(g) * g, 0.0) {}

    double step() const { return 2.0 / (grid - 1); }
    double coord(int idx) const { return -1.0 + step() * idx; }
    double& at(int iu, int iv) { return p[static_cast<size_t>(iv) * grid + iu]; }
    double at(int iu, int iv) const { return p[static_cast<size_t>(iv) * grid + iu]; }
    int size() const { return grid * grid; }
};

struct FaceQuad {
    std::array<Eigen::Vector2d, 4> corners;  // counterclockwise in the image plane
    double color = 0.0;
    std::array<int, 4> vertex_ids{};  // cube vertex index per corner
};

Eigen::Vector2d project_vertex(const Camera& cam, const Vec3& p);

std::vector<FaceQuad> visible_faces(const Camera& cam, const Cube& c);

// Gaussian-kernel mass of one counterclockwise quad seen from one pixel,
// evaluated as a boundary integral with adaptive Simpson per edge.
double quad_mass(const FaceQuad& q, double u, double v, double sigma, double edge_tol);

// Fixed-rule variant: segmented Gauss-Legendre per edge. Near machine
// accuracy for kernel widths around the dataset sigma, and smooth in the
// pose, unlike the adaptive path whose refinement pattern shifts with it.
double quad_mass_fixed(const FaceQuad& q, double u, double v, double sigma);

Image rasterize_fixed(const Camera& cam, const Cube& c, double sigma, int grid = default_grid);

Image rasterize_quads(const std::vector<FaceQuad>& quads, double sigma, int grid = default_grid,
                      double pixel_tol = 1e-9);

Image rasterize(const Camera& cam, const Cube& c, double sigma, int grid = default_grid,
                double pixel_tol = 1e-9);

double stripe_contrast(double sigma, int lines);

std::vector<FaceQuad> stripe_quads(int lines);

void write_pgm(const Image& img, const std::string& path);

}  // namespace ct
