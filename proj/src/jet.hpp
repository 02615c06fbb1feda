#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "render.hpp"

namespace ct {

struct ImageJet {
    Image base;
    std::vector<Image> d1;  // 6 entries
    std::vector<Image> d2;  // 21 entries when order == 2, else empty
    Vec9 target = Vec9::Zero();
    std::array<Vec9, 6> cube_d1;
    std::array<Vec9, 21> cube_d2;
    Cube cube;
    int order = 1;
};

// (du, dv) of a projected point whose world position moves with velocity pdot.
Eigen::Vector2d projection_velocity(const Camera& cam, const Vec3& p, const Vec3& pdot);

// Kernel flux through one directed edge whose endpoints move with the given
// velocities: closed-form d/deps of the quad mass seen from the pixel.
double edge_flux(const Eigen::Vector2d& p1, const Eigen::Vector2d& p2, const Eigen::Vector2d& vel1,
                 const Eigen::Vector2d& vel2, double u, double v, double sigma);

Image image_first_derivative(const Camera& cam, const Cube& c, int i, double sigma,
                             int grid = default_grid);

Image image_second_derivative(const Camera& cam, const Cube& c, int i, int j, double sigma,
                              double eps = 5e-6, int grid = default_grid);

ImageJet build_jet(const Camera& cam, const Cube& c, double sigma, int order,
                   int grid = default_grid, double base_tol = 1e-9);

double image_dot(const Image& a, const Image& b);

// Cache layout: "CJET" magic, u32 version, u32 grid, u32 order, u64 count,
// then per sample little-endian f32: base, d1, d2 (order 2 only), target9,
// cube_d1 (54), cube_d2 (189, order 2 only).
class JetCacheWriter {
public:
    JetCacheWriter(const std::string& path, int grid, int order);
    ~JetCacheWriter();
    JetCacheWriter(const JetCacheWriter&) = delete;
    JetCacheWriter& operator=(const JetCacheWriter&) = delete;

    void append(const ImageJet& jet);
    void finalize();

private:
    void* fp_ = nullptr;
    int grid_;
    int order_;
    std::uint64_t count_ = 0;
    bool finalized_ = false;
};

class JetCacheReader {
public:
    explicit JetCacheReader(const std::string& path);
    ~JetCacheReader();
    JetCacheReader(const JetCacheReader&) = delete;
    JetCacheReader& operator=(const JetCacheReader&) = delete;

    int grid() const { return grid_; }
    int order() const { return order_; }
    std::uint64_t count() const { return count_; }

    // Reads sample idx; want_d2 requires an order-2 cache.
    ImageJet read(std::uint64_t idx, bool want_d2);

private:
    void* fp_ = nullptr;
    int grid_ = 0;
    int order_ = 0;
    std::uint64_t count_ = 0;
    std::uint64_t record_floats_ = 0;
};

}  // namespace ct
