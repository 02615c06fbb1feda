#include "jet.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <numbers>

namespace ct {

namespace {

constexpr double pi = std::numbers::pi;

// erf(s1) - erf(s0) for s1 >= s0 without cancellation in the far tails.
double erf_diff(double s0, double s1) {
    if (s0 >= 0.0) return std::erfc(s0) - std::erfc(s1);
    if (s1 <= 0.0) return std::erfc(-s1) - std::erfc(-s0);
    return std::erf(s1) - std::erf(s0);
}

struct EdgeGeom {
    Eigen::Vector2d p1;
    Eigen::Vector2d delta;
    double len = 0.0;
    double a = 0.0;  // vel1 . n
    double b = 0.0;  // (vel2 - vel1) . n
    double ulo = 0.0, uhi = 0.0, vlo = 0.0, vhi = 0.0;
};

EdgeGeom make_edge(const Eigen::Vector2d& p1, const Eigen::Vector2d& p2, const Eigen::Vector2d& vel1,
                   const Eigen::Vector2d& vel2) {
    EdgeGeom e;
    e.p1 = p1;
    e.delta = p2 - p1;
    e.len = e.delta.norm();
    if (e.len < 1e-12) throw DegenerateEdgeError("edge_flux: edge length below 1e-12");
    const Eigen::Vector2d n(e.delta.y() / e.len, -e.delta.x() / e.len);
    e.a = vel1.dot(n);
    e.b = (vel2 - vel1).dot(n);
    e.ulo = std::min(p1.x(), p2.x());
    e.uhi = std::max(p1.x(), p2.x());
    e.vlo = std::min(p1.y(), p2.y());
    e.vhi = std::max(p1.y(), p2.y());
    return e;
}

double edge_flux_at(const EdgeGeom& e, double u, double v, double sigma) {
    const Eigen::Vector2d e0 = e.p1 - Eigen::Vector2d(u, v);
    const double s2 = sigma * sigma;
    const double alpha = e.len * e.len / (2.0 * s2);
    const double beta = e0.dot(e.delta) / s2;
    const double gamma = e0.squaredNorm() / (2.0 * s2);
    const double ra = std::sqrt(alpha);
    const double s0 = beta / (2.0 * ra);
    const double s1 = ra + s0;
    const double c = std::max(0.0, gamma - s0 * s0);
    const double big_a = e.a - e.b * beta / (2.0 * alpha);
    const double big_b = e.b / ra;
    const double ec = std::exp(-c);
    const double bracket = big_a * (std::sqrt(pi) / 2.0) * erf_diff(s0, s1) +
                           0.5 * big_b * (std::exp(-s0 * s0) - std::exp(-s1 * s1));
    return e.len / (2.0 * pi * s2) * (ec / ra) * bracket;
}

std::array<Vec3, 8> vertex_velocities(const Cube& c, int i) {
    std::array<Vec3, 8> vel;
    if (i >= 4) {
        Vec3 t = Vec3::Zero();
        t[i - 4] = 1.0;
        vel.fill(t);
        return vel;
    }
    const Mat3 j = so3_generator(i);
    const Vec3 d = c.center();
    for (int k = 0; k < 8; ++k) vel[k] = j * (c.v[k] - d);
    return vel;
}

}  // namespace

Eigen::Vector2d projection_velocity(const Camera& cam, const Vec3& p, const Vec3& pdot) {
    const Vec3 q = cam.r * p + cam.t;
    if (std::abs(q.z()) < 1e-9) throw ProjectionError("projection_velocity: homogeneous divisor is singular");
    const Vec3 qdot = cam.r * pdot;
    const double inv = 1.0 / q.z();
    return Eigen::Vector2d(cam.f * (qdot.x() * inv - q.x() * qdot.z() * inv * inv),
                           cam.f * (qdot.y() * inv - q.y() * qdot.z() * inv * inv));
}

double edge_flux(const Eigen::Vector2d& p1, const Eigen::Vector2d& p2, const Eigen::Vector2d& vel1,
                 const Eigen::Vector2d& vel2, double u, double v, double sigma) {
    return edge_flux_at(make_edge(p1, p2, vel1, vel2), u, v, sigma);
}

Image image_first_derivative(const Camera& cam, const Cube& c, int i, double sigma, int grid) {
    if (i < 1 || i > 6) throw InvalidArgumentError("image_first_derivative: i must be in 1..6");
    const auto faces = visible_faces(cam, c);
    const auto world_vel = vertex_velocities(c, i);

    struct ColoredEdge {
        EdgeGeom geom;
        double color;
    };
    std::vector<ColoredEdge> edges;
    for (const auto& f : faces) {
        std::array<Eigen::Vector2d, 4> vel;
        for (int k = 0; k < 4; ++k) {
            vel[k] = projection_velocity(cam, c.v[f.vertex_ids[k]], world_vel[f.vertex_ids[k]]);
        }
        for (int k = 0; k < 4; ++k) {
            const int k2 = (k + 1) % 4;
            edges.push_back({make_edge(f.corners[k], f.corners[k2], vel[k], vel[k2]), f.color});
        }
    }

    Image img(grid);
    const double reach = 9.0 * sigma;
    for (int iv = 0; iv < grid; ++iv) {
        const double v = img.coord(iv);
        for (int iu = 0; iu < grid; ++iu) {
            const double u = img.coord(iu);
            double val = 0.0;
            for (const auto& e : edges) {
                if (u < e.geom.ulo - reach || u > e.geom.uhi + reach || v < e.geom.vlo - reach ||
                    v > e.geom.vhi + reach) {
                    continue;
                }
                val += e.color * edge_flux_at(e.geom, u, v, sigma);
            }
            img.at(iu, iv) = val;
        }
    }
    return img;
}

Image image_second_derivative(const Camera& cam, const Cube& c, int i, int j, double sigma, double eps,
                              int grid) {
    if (i > j) throw OrderError("image_second_derivative: requires i <= j");
    if (eps < 1e-7 || eps > 1e-4) {
        throw InvalidArgumentError("image_second_derivative: eps must lie in [1e-7, 1e-4]");
    }
    LocalCoords plus = LocalCoords::Zero();
    plus[i - 1] = eps;
    LocalCoords minus = LocalCoords::Zero();
    minus[i - 1] = -eps;
    const Image dp = image_first_derivative(cam, apply_local_transform(c, plus), j, sigma, grid);
    const Image dm = image_first_derivative(cam, apply_local_transform(c, minus), j, sigma, grid);
    Image out(grid);
    for (int k = 0; k < out.size(); ++k) out.p[k] = (dp.p[k] - dm.p[k]) / (2.0 * eps);
    return out;
}

ImageJet build_jet(const Camera& cam, const Cube& c, double sigma, int order, int grid, double base_tol) {
    if (order != 1 && order != 2) throw InvalidArgumentError("build_jet: order must be 1 or 2");
    ImageJet jet;
    jet.order = order;
    jet.cube = c;
    jet.target = c.target9();
    jet.base = rasterize(cam, c, sigma, grid, base_tol);
    jet.d1.reserve(6);
    for (int i = 1; i <= 6; ++i) jet.d1.push_back(image_first_derivative(cam, c, i, sigma, grid));
    if (order == 2) {
        jet.d2.reserve(21);
        for (int i = 1; i <= 6; ++i) {
            for (int j = i; j <= 6; ++j) {
                jet.d2.push_back(image_second_derivative(cam, c, i, j, sigma, 5e-6, grid));
            }
        }
    }
    for (int i = 1; i <= 6; ++i) jet.cube_d1[i - 1] = cube_first_derivative(c, i);
    for (int i = 1; i <= 6; ++i) {
        for (int j = i; j <= 6; ++j) {
            jet.cube_d2[pair_index(i, j)] = cube_second_derivative(c, i, j);
        }
    }
    return jet;
}

double image_dot(const Image& a, const Image& b) {
    double acc = 0.0;
    const size_t n = a.p.size();
    for (size_t k = 0; k < n; ++k) acc += a.p[k] * b.p[k];
    return acc;
}

namespace {

constexpr char jet_magic[4] = {'C', 'J', 'E', 'T'};
constexpr std::uint32_t jet_version = 1;

std::uint64_t record_float_count(int grid, int order) {
    const std::uint64_t n2 = static_cast<std::uint64_t>(grid) * grid;
    std::uint64_t floats = n2 + 6 * n2 + 9 + 54;
    if (order == 2) floats += 21 * n2 + 189;
    return floats;
}

void write_f32(std::FILE* fp, const double* src, size_t n, const char* what) {
    std::vector<float> buf(n);
    for (size_t i = 0; i < n; ++i) buf[i] = static_cast<float>(src[i]);
    if (std::fwrite(buf.data(), sizeof(float), n, fp) != n) {
        throw IoError(std::string("jet cache: short write of ") + what);
    }
}

void read_f32(std::FILE* fp, double* dst, size_t n, const char* what) {
    std::vector<float> buf(n);
    if (std::fread(buf.data(), sizeof(float), n, fp) != n) {
        throw IoError(std::string("jet cache: short read of ") + what);
    }
    for (size_t i = 0; i < n; ++i) dst[i] = static_cast<double>(buf[i]);
}

}  // namespace

JetCacheWriter::JetCacheWriter(const std::string& path, int grid, int order) : grid_(grid), order_(order) {
    if (order != 1 && order != 2) throw InvalidArgumentError("jet cache: order must be 1 or 2");
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("jet cache: cannot open " + path + " for writing");
    fp_ = fp;
    const std::uint32_t g = static_cast<std::uint32_t>(grid);
    const std::uint32_t o = static_cast<std::uint32_t>(order);
    const std::uint64_t count = 0;
    if (std::fwrite(jet_magic, 1, 4, fp) != 4 || std::fwrite(&jet_version, 4, 1, fp) != 1 ||
        std::fwrite(&g, 4, 1, fp) != 1 || std::fwrite(&o, 4, 1, fp) != 1 ||
        std::fwrite(&count, 8, 1, fp) != 1) {
        std::fclose(fp);
        fp_ = nullptr;
        throw IoError("jet cache: header write failed");
    }
}

JetCacheWriter::~JetCacheWriter() {
    if (fp_) {
        if (!finalized_) {
            // Best effort: leave a consistent count even on abnormal exits.
            try {
                finalize();
                return;
            } catch (...) {
            }
        }
        std::fclose(static_cast<std::FILE*>(fp_));
        fp_ = nullptr;
    }
}

void JetCacheWriter::append(const ImageJet& jet) {
    if (finalized_) throw IoError("jet cache: append after finalize");
    if (jet.base.grid != grid_) throw ShapeError("jet cache: grid mismatch");
    if (order_ == 2 && jet.d2.size() != 21) throw MissingJetError("jet cache: order-2 cache needs d2");
    std::FILE* fp = static_cast<std::FILE*>(fp_);
    const size_t n2 = static_cast<size_t>(grid_) * grid_;
    write_f32(fp, jet.base.p.data(), n2, "base");
    for (const auto& img : jet.d1) write_f32(fp, img.p.data(), n2, "d1");
    if (order_ == 2) {
        for (const auto& img : jet.d2) write_f32(fp, img.p.data(), n2, "d2");
    }
    write_f32(fp, jet.target.data(), 9, "target");
    for (const auto& v : jet.cube_d1) write_f32(fp, v.data(), 9, "cube_d1");
    if (order_ == 2) {
        for (const auto& v : jet.cube_d2) write_f32(fp, v.data(), 9, "cube_d2");
    }
    ++count_;
}

void JetCacheWriter::finalize() {
    if (finalized_) return;
    std::FILE* fp = static_cast<std::FILE*>(fp_);
    if (std::fseek(fp, 16, SEEK_SET) != 0 || std::fwrite(&count_, 8, 1, fp) != 1) {
        throw IoError("jet cache: count backpatch failed");
    }
    std::fclose(fp);
    fp_ = nullptr;
    finalized_ = true;
}

JetCacheReader::JetCacheReader(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("jet cache: cannot open " + path);
    fp_ = fp;
    char magic[4];
    std::uint32_t version = 0, g = 0, o = 0;
    if (std::fread(magic, 1, 4, fp) != 4 || std::memcmp(magic, jet_magic, 4) != 0) {
        throw IoError("jet cache: bad magic in " + path);
    }
    if (std::fread(&version, 4, 1, fp) != 1 || version != jet_version) {
        throw IoError("jet cache: unsupported version in " + path);
    }
    if (std::fread(&g, 4, 1, fp) != 1 || std::fread(&o, 4, 1, fp) != 1 ||
        std::fread(&count_, 8, 1, fp) != 1) {
        throw IoError("jet cache: truncated header in " + path);
    }
    grid_ = static_cast<int>(g);
    order_ = static_cast<int>(o);
    record_floats_ = record_float_count(grid_, order_);
}

JetCacheReader::~JetCacheReader() {
    if (fp_) std::fclose(static_cast<std::FILE*>(fp_));
}

ImageJet JetCacheReader::read(std::uint64_t idx, bool want_d2) {
    if (idx >= count_) throw InvalidArgumentError("jet cache: sample index out of range");
    if (want_d2 && order_ != 2) throw MissingJetError("jet cache: second derivatives not stored");
    std::FILE* fp = static_cast<std::FILE*>(fp_);
    const std::uint64_t offset = 24 + idx * record_floats_ * 4;
    if (std::fseek(fp, static_cast<long>(offset), SEEK_SET) != 0) {
        throw IoError("jet cache: seek failed");
    }
    const size_t n2 = static_cast<size_t>(grid_) * grid_;
    ImageJet jet;
    jet.order = want_d2 ? 2 : 1;
    jet.base = Image(grid_);
    read_f32(fp, jet.base.p.data(), n2, "base");
    jet.d1.assign(6, Image(grid_));
    for (auto& img : jet.d1) read_f32(fp, img.p.data(), n2, "d1");
    if (order_ == 2) {
        if (want_d2) {
            jet.d2.assign(21, Image(grid_));
            for (auto& img : jet.d2) read_f32(fp, img.p.data(), n2, "d2");
        } else if (std::fseek(fp, static_cast<long>(21 * n2 * 4), SEEK_CUR) != 0) {
            throw IoError("jet cache: seek past d2 failed");
        }
    }
    read_f32(fp, jet.target.data(), 9, "target");
    for (auto& v : jet.cube_d1) read_f32(fp, v.data(), 9, "cube_d1");
    jet.cube = reconstruct_full_cube(jet.target);
    if (order_ == 2) {
        for (auto& v : jet.cube_d2) read_f32(fp, v.data(), 9, "cube_d2");
    } else {
        for (int i = 1; i <= 6; ++i) {
            for (int j = i; j <= 6; ++j) {
                jet.cube_d2[pair_index(i, j)] = cube_second_derivative(jet.cube, i, j);
            }
        }
    }
    return jet;
}

}  // namespace ct
