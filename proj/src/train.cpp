#include "train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <optional>
#include <utility>

namespace ct {

namespace {

template <typename T>
using Mat = typename NetworkT<T>::Mat;

Eigen::Map<const Eigen::VectorXd> image_vec(const Image& img) {
    return {img.p.data(), static_cast<Eigen::Index>(img.p.size())};
}

void push_sample(Dataset& ds, long col, const ImageJet& jet) {
    ds.x.col(col) = image_vec(jet.base).cast<float>();
    for (int i = 0; i < 6; ++i) ds.d1[i].col(col) = image_vec(jet.d1[i]).cast<float>();
    ds.target.col(col) = jet.target.cast<float>();
    for (int i = 0; i < 6; ++i) ds.cube_d1[i].col(col) = jet.cube_d1[i].cast<float>();
    if (ds.order == 2) {
        for (int q = 0; q < 21; ++q) {
            ds.d2[q].col(col) = image_vec(jet.d2[q]).cast<float>();
            ds.cube_d2[q].col(col) = jet.cube_d2[q].cast<float>();
        }
    }
}

Dataset alloc_dataset(int grid, int order, long count, double sigma, long first) {
    Dataset ds;
    ds.order = order;
    ds.grid = grid;
    ds.sigma = sigma;
    ds.first = first;
    const long px = static_cast<long>(grid) * grid;
    ds.x.resize(px, count);
    for (auto& m : ds.d1) m.resize(px, count);
    ds.target.resize(9, count);
    for (auto& m : ds.cube_d1) m.resize(9, count);
    if (order == 2) {
        ds.d2.assign(21, Eigen::MatrixXf(px, count));
        ds.cube_d2.assign(21, Eigen::MatrixXf(9, count));
    }
    return ds;
}

// Column-by-column dot products of two equally shaped matrices.
Eigen::RowVectorXf column_dots(const Eigen::MatrixXf& a, const Eigen::MatrixXf& b) {
    return (a.array() * b.array()).colwise().sum().matrix();
}

template <typename T>
Mat<T> cast_block(const Eigen::MatrixXf& src, int lo, int m) {
    if constexpr (std::is_same_v<T, float>) {
        return src.middleCols(lo, m);
    } else {
        return src.middleCols(lo, m).template cast<T>();
    }
}

// Where each logical channel sits in the jet batch under a flag set.
struct ChannelMap {
    bool tangent = false;
    std::array<int, 3> fam{-1, -1, -1};
    int jac = -1;
    int count = 0;
    bool tangent_pairs = false;
    std::array<int, 3> fam_pair{-1, -1, -1};
    int pair_count = 0;
};

ChannelMap channel_map(const CostFlags& flags) {
    ChannelMap map;
    if (flags.needs_tangent_channels()) {
        map.tangent = true;
        map.count = 6;
    }
    for (int k = 0; k < 3; ++k) {
        if (flags.r1[k] || flags.r2[k]) map.fam[k] = map.count++;
    }
    if (flags.jacobian_c2 > 0.0) map.jac = map.count++;
    if (flags.e2) {
        map.tangent_pairs = true;
        map.pair_count = 21;
    }
    for (int k = 0; k < 3; ++k) {
        if (flags.r2[k]) map.fam_pair[k] = map.pair_count++;
    }
    return map;
}

Image smoothed_noise(int r, Rng& rng, int grid) {
    Image img(grid);
    if (r == 0) {
        for (auto& v : img.p) v = rng.gaussian();
    } else {
        const int ext = grid + 2 * r;
        const int width = 2 * r + 1;
        Eigen::VectorXd g(width);
        for (int a = 0; a < width; ++a) {
            const double d = a - r;
            g[a] = std::exp(-2.0 * d * d / (static_cast<double>(r) * r));
        }
        g /= g.sum();
        Eigen::MatrixXd noise(ext, ext);
        for (Eigen::Index k = 0; k < noise.size(); ++k) noise.data()[k] = rng.gaussian();
        // The kernel is a product of two one-dimensional profiles, so the
        // convolution runs as a horizontal pass followed by a vertical one.
        Eigen::MatrixXd rows = Eigen::MatrixXd::Zero(grid, ext);
        for (int a = 0; a < width; ++a) rows += g[a] * noise.block(a, 0, grid, ext);
        Eigen::MatrixXd out = Eigen::MatrixXd::Zero(grid, grid);
        for (int b = 0; b < width; ++b) out += g[b] * rows.block(0, b, grid, grid);
        Eigen::Map<Eigen::MatrixXd>(img.p.data(), grid, grid) = out;
    }
    const double norm = std::sqrt(image_dot(img, img));
    if (!(norm > 0.0)) throw DegenerateError("smoothed_noise: zero noise draw");
    for (auto& v : img.p) v /= norm;
    return img;
}

std::vector<std::pair<int, int>> batch_slices(int n, int batches) {
    std::vector<std::pair<int, int>> slices;
    slices.reserve(static_cast<size_t>(batches));
    const int base = n / batches;
    const int rem = n % batches;
    int lo = 0;
    for (int b = 0; b < batches; ++b) {
        const int m = base + (b < rem ? 1 : 0);
        slices.emplace_back(lo, m);
        lo += m;
    }
    return slices;
}

// Pool assignment for an epoch: sample s takes pool column (s + shift) % n.
Eigen::MatrixXf shifted_columns(const Eigen::MatrixXf& pool, int shift) {
    const int n = static_cast<int>(pool.cols());
    const int k = shift % n;
    if (k == 0) return pool;
    Eigen::MatrixXf out(pool.rows(), n);
    out.leftCols(n - k) = pool.rightCols(n - k);
    out.rightCols(k) = pool.leftCols(k);
    return out;
}

double percentile_range(std::vector<double>& v) {
    std::sort(v.begin(), v.end());
    const auto rank = [&](double q) {
        const auto idx = static_cast<size_t>(std::llround(q * static_cast<double>(v.size() - 1)));
        return v[idx];
    };
    return rank(0.95) - rank(0.05);
}

FamilyNormalizers family_normalizers(const Eigen::MatrixXf& target) {
    const int n = static_cast<int>(target.cols());
    FamilyNormalizers fam;
    std::vector<double> vals(static_cast<size_t>(n));
    for (int i = 0; i < 9; ++i) {
        for (int s = 0; s < n; ++s) vals[static_cast<size_t>(s)] = target(i, s);
        const double range = percentile_range(vals);
        if (!(range > 0.0)) throw DegenerateError("family_normalizers: flat oracle response");
        fam.range[static_cast<size_t>(i)] = range;
    }
    double c = 0.0;
    for (int s = 0; s < n; ++s) {
        double sq = 0.0;
        for (int i = 0; i < 9; ++i) {
            const double scaled = target(i, s) / fam.range[static_cast<size_t>(i)];
            sq += scaled * scaled;
        }
        c += std::sqrt(sq);
    }
    fam.c = c / n;
    return fam;
}

double mean_column_norm(const Eigen::MatrixXf& m) {
    double acc = 0.0;
    for (Eigen::Index s = 0; s < m.cols(); ++s) acc += m.col(s).norm();
    return acc / static_cast<double>(m.cols());
}

}  // namespace

double lattice_phase(std::uint64_t data_seed) {
    if (data_seed == 0) return 0.5;
    return std::ldexp(static_cast<double>(mix64(data_seed)), -64);
}

Dataset build_dataset(const Camera& cam, double sigma, long first, long count, int order,
                      const std::string& cache_path, std::uint64_t data_seed) {
    if (order != 1 && order != 2) throw InvalidArgumentError("build_dataset: order must be 1 or 2");
    if (first < 0 || count <= 0) throw InvalidArgumentError("build_dataset: bad sample range");
    Dataset ds = alloc_dataset(default_grid, order, count, sigma, first);
    const std::vector<double> pts = korobov_points(first + count, 6, lattice_phase(data_seed));
    std::unique_ptr<JetCacheWriter> writer;
    if (!cache_path.empty()) {
        writer = std::make_unique<JetCacheWriter>(cache_path, default_grid, order);
    }
    for (long s = 0; s < count; ++s) {
        const Cube cube = params_to_cube(sample_to_params(&pts[static_cast<size_t>(first + s) * 6]));
        const ImageJet jet = build_jet(cam, cube, sigma, order);
        push_sample(ds, s, jet);
        if (writer) writer->append(jet);
    }
    if (writer) writer->finalize();
    return ds;
}

Dataset load_dataset(const std::string& cache_path, double sigma, long first) {
    JetCacheReader reader(cache_path);
    Dataset ds = alloc_dataset(reader.grid(), reader.order(), static_cast<long>(reader.count()),
                               sigma, first);
    for (std::uint64_t s = 0; s < reader.count(); ++s) {
        push_sample(ds, static_cast<long>(s), reader.read(s, reader.order() == 2));
    }
    return ds;
}

Image make_direction(DirectionKind kind, Rng& rng) {
    const int grid = default_grid;
    if (kind == DirectionKind::high) return smoothed_noise(0, rng, grid);
    Image acc(grid);
    const auto add = [&](int r, double weight) {
        const Image u = smoothed_noise(r, rng, grid);
        for (size_t i = 0; i < acc.p.size(); ++i) acc.p[i] += weight * u.p[i];
    };
    if (kind == DirectionKind::mid) {
        add(2, 1.0);
        add(1, 1.0);
    } else {
        add(15, 1.0);
        add(8, 1.0);
        add(2, 0.4);
        add(1, 0.2);
    }
    const double norm = std::sqrt(image_dot(acc, acc));
    for (auto& v : acc.p) v /= norm;
    return acc;
}

DirectionPool make_direction_pool(DirectionKind kind, int count, std::uint64_t seed) {
    if (count <= 0) throw InvalidArgumentError("make_direction_pool: count must be positive");
    DirectionPool pool;
    pool.kind = kind;
    pool.dirs.resize(static_cast<long>(default_grid) * default_grid, count);
    Rng rng(seed);
    for (int c = 0; c < count; ++c) {
        const Image dir = make_direction(kind, rng);
        pool.dirs.col(c) = image_vec(dir).cast<float>();
    }
    return pool;
}

TangentSolver::TangentSolver(const Dataset& ds) {
    const int n = ds.samples();
    if (n == 0) throw InvalidArgumentError("TangentSolver: empty dataset");
    inv_.resize(static_cast<size_t>(n));
    Eigen::Matrix<double, Eigen::Dynamic, 6> d1s(ds.x.rows(), 6);
    for (int s = 0; s < n; ++s) {
        for (int p = 0; p < 6; ++p) d1s.col(p) = ds.d1[static_cast<size_t>(p)].col(s).cast<double>();
        const Eigen::Matrix<double, 6, 6> gamma = d1s.transpose() * d1s;
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 6, 6>> es(gamma);
        const auto& ev = es.eigenvalues();
        if (ev.maxCoeff() <= 0.0 || ev.minCoeff() <= 1e-12 * ev.maxCoeff()) {
            throw SingularGramError("TangentSolver: tangent images are linearly dependent");
        }
        inv_[static_cast<size_t>(s)] =
            es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
    }
    if (ds.order == 2) {
        hd_.assign(static_cast<size_t>(n), Eigen::Matrix<double, 21, 6>::Zero());
        for (int q = 0; q < 21; ++q) {
            for (int p = 0; p < 6; ++p) {
                const Eigen::RowVectorXf dots =
                    column_dots(ds.d2[static_cast<size_t>(q)], ds.d1[static_cast<size_t>(p)]);
                for (int s = 0; s < n; ++s) hd_[static_cast<size_t>(s)](q, p) = dots[s];
            }
        }
    }
}

Eigen::MatrixXd TangentSolver::first_nu(const Dataset& ds, const Eigen::MatrixXf& dirs) const {
    const int n = ds.samples();
    if (dirs.rows() != ds.x.rows() || dirs.cols() != n) {
        throw ShapeError("first_nu: directions do not match the dataset");
    }
    Eigen::MatrixXd rhs(6, n);
    for (int p = 0; p < 6; ++p) {
        rhs.row(p) = column_dots(ds.d1[static_cast<size_t>(p)], dirs).cast<double>();
    }
    Eigen::MatrixXd nu(6, n);
    for (int s = 0; s < n; ++s) nu.col(s) = inv_[static_cast<size_t>(s)] * rhs.col(s);
    return nu;
}

Eigen::MatrixXf TangentSolver::oracle_d1(const Dataset& ds, const Eigen::MatrixXd& nu) const {
    const int n = ds.samples();
    if (nu.rows() != 6 || nu.cols() != n) throw ShapeError("oracle_d1: bad tangent coordinates");
    Eigen::MatrixXf out = Eigen::MatrixXf::Zero(9, n);
    for (int p = 0; p < 6; ++p) {
        out.array() += ds.cube_d1[static_cast<size_t>(p)].array().rowwise() *
                       nu.row(p).cast<float>().array();
    }
    return out;
}

Eigen::MatrixXf TangentSolver::oracle_d2(const Dataset& ds, const Eigen::MatrixXf& dirs,
                                         const Eigen::MatrixXd& nu) const {
    if (ds.order != 2 || hd_.empty()) {
        throw MissingJetError("oracle_d2: dataset carries no second derivatives");
    }
    const int n = ds.samples();
    if (dirs.cols() != n || nu.cols() != n) throw ShapeError("oracle_d2: bad inputs");
    Eigen::Matrix<double, 21, Eigen::Dynamic> dh(21, n);
    for (int q = 0; q < 21; ++q) {
        dh.row(q) = column_dots(ds.d2[static_cast<size_t>(q)], dirs).cast<double>();
    }
    Eigen::MatrixXf out(9, n);
    for (int s = 0; s < n; ++s) {
        const Vec6 w = nu.col(s);
        const auto& hd = hd_[static_cast<size_t>(s)];
        Vec6 rhs;
        for (int m = 0; m < 6; ++m) {
            double t1 = 0.0, t2 = 0.0, t3 = 0.0;
            for (int k = 0; k < 6; ++k) {
                t1 += dh(sym_pair(m, k), s) * w[k];
                for (int p = 0; p < 6; ++p) {
                    t2 += hd(sym_pair(k, m), p) * w[p] * w[k];
                    t3 += hd(sym_pair(k, p), m) * w[p] * w[k];
                }
            }
            rhs[m] = 2.0 * t1 - 2.0 * t2 - t3;
        }
        const Vec6 dnu2 = inv_[static_cast<size_t>(s)] * rhs;
        Vec9 acc = Vec9::Zero();
        for (int i = 0; i < 6; ++i) {
            acc += ds.cube_d1[static_cast<size_t>(i)].col(s).cast<double>() * dnu2[i];
        }
        for (int i = 0; i < 6; ++i) {
            for (int j = 0; j < 6; ++j) {
                acc += ds.cube_d2[static_cast<size_t>(sym_pair(i, j))].col(s).cast<double>() *
                       (w[i] * w[j]);
            }
        }
        out.col(s) = acc.cast<float>();
    }
    return out;
}

CostNormalizers compute_normalizers(const Dataset& train, const CostFlags& flags,
                                    const std::array<DirectionPool, 3>& pools,
                                    const TangentSolver* solver) {
    CostNormalizers norms;
    norms.n = mean_column_norm(train.target);
    for (int i = 0; i < 6; ++i) {
        norms.n1[static_cast<size_t>(i)] = mean_column_norm(train.cube_d1[static_cast<size_t>(i)]);
    }
    if (flags.e2) {
        if (train.order != 2) throw ConfigError("compute_normalizers: E2 needs an order-2 dataset");
        double rot_img = 0.0;
        for (int i = 1; i <= 3; ++i) {
            for (int j = i; j <= 3; ++j) {
                rot_img += mean_column_norm(train.d2[static_cast<size_t>(pair_index(i, j))]);
            }
        }
        norms.rot_pair_image_scale = rot_img / 6.0;
        for (int i = 1; i <= 6; ++i) {
            for (int j = i; j <= 6; ++j) {
                const auto q = static_cast<size_t>(pair_index(i, j));
                if (j <= 3) {
                    norms.n2[q] = mean_column_norm(train.cube_d2[q]);
                } else {
                    // The oracle response vanishes for pairs involving
                    // translations, so the scale is borrowed from the image
                    // side: the printed constant is the measured average of
                    // the rotation-pair image derivatives.
                    norms.n2[q] = 40.0 / mean_column_norm(train.d2[q]);
                }
            }
        }
    }
    for (int k = 0; k < 3; ++k) {
        if (!flags.r1[static_cast<size_t>(k)] && !flags.r2[static_cast<size_t>(k)]) continue;
        if (solver == nullptr) {
            throw InvalidArgumentError("compute_normalizers: robust terms need a tangent solver");
        }
        const auto& pool = pools[static_cast<size_t>(k)];
        if (pool.size() != train.samples()) {
            throw ShapeError("compute_normalizers: pool size does not match the dataset");
        }
        const Eigen::MatrixXd nu = solver->first_nu(train, pool.dirs);
        if (flags.r1[static_cast<size_t>(k)]) {
            norms.r1[static_cast<size_t>(k)] = family_normalizers(solver->oracle_d1(train, nu));
        }
        if (flags.r2[static_cast<size_t>(k)]) {
            norms.r2[static_cast<size_t>(k)] =
                family_normalizers(solver->oracle_d2(train, pool.dirs, nu));
        }
    }
    return norms;
}

template <typename T>
JetBatchT<T> assemble_batch(const Dataset& ds, int lo, int m, const CostFlags& flags,
                            const EpochData& epoch) {
    if (lo < 0 || m <= 0 || lo + m > ds.samples()) {
        throw InvalidArgumentError("assemble_batch: bad sample range");
    }
    const ChannelMap map = channel_map(flags);
    const Eigen::MatrixXf& values = epoch.values != nullptr ? *epoch.values : ds.x;
    if (values.rows() != ds.x.rows() || values.cols() != ds.x.cols()) {
        throw ShapeError("assemble_batch: replacement values do not match the dataset");
    }
    JetBatchT<T> batch;
    batch.values = cast_block<T>(values, lo, m);
    batch.d1.resize(static_cast<size_t>(map.count));
    if (map.tangent) {
        for (int i = 0; i < 6; ++i) {
            batch.d1[static_cast<size_t>(i)] = cast_block<T>(ds.d1[static_cast<size_t>(i)], lo, m);
        }
    }
    for (int k = 0; k < 3; ++k) {
        if (map.fam[static_cast<size_t>(k)] < 0) continue;
        batch.d1[static_cast<size_t>(map.fam[static_cast<size_t>(k)])] =
            cast_block<T>(epoch.dirs[static_cast<size_t>(k)], lo, m);
    }
    if (map.jac >= 0) batch.d1[static_cast<size_t>(map.jac)] = cast_block<T>(epoch.jac_dirs, lo, m);
    if (map.tangent_pairs) {
        if (ds.order != 2) throw MissingJetError("assemble_batch: E2 needs an order-2 dataset");
        for (int i = 0; i < 6; ++i) {
            for (int j = i; j < 6; ++j) {
                batch.d2_pairs.emplace_back(i, j);
                batch.d2.push_back(cast_block<T>(ds.d2[static_cast<size_t>(sym_pair(i, j))], lo, m));
            }
        }
    }
    for (int k = 0; k < 3; ++k) {
        if (map.fam_pair[static_cast<size_t>(k)] < 0) continue;
        const int ch = map.fam[static_cast<size_t>(k)];
        batch.d2_pairs.emplace_back(ch, ch);
        batch.d2.emplace_back();
    }
    return batch;
}

template <typename T>
double weighted_error_term(const Mat<T>& out, const Mat<T>& target, const Eigen::VectorXd& row_w,
                           Mat<T>& adjoint) {
    if (row_w.size() != out.rows()) throw ShapeError("weighted_error_term: weight size mismatch");
    if (target.size() != 0 && (target.rows() != out.rows() || target.cols() != out.cols())) {
        throw ShapeError("weighted_error_term: target shape mismatch");
    }
    const auto m = static_cast<double>(out.cols());
    Mat<T> diff = target.size() != 0 ? (out - target).eval() : out;
    double cost = 0.0;
    for (Eigen::Index i = 0; i < diff.rows(); ++i) {
        cost += row_w[i] * static_cast<double>(diff.row(i).squaredNorm());
    }
    const Eigen::Matrix<T, Eigen::Dynamic, 1> scale = (2.0 / m * row_w).template cast<T>();
    adjoint = (diff.array().colwise() * scale.array()).matrix();
    return cost / m;
}

template <typename T>
std::pair<CostTerms, GradT<T>> cost_and_gradient(const NetworkT<T>& net, const Dataset& ds, int lo,
                                                 int m, const CostFlags& flags,
                                                 const CostNormalizers& norms,
                                                 const EpochData& epoch) {
    const JetBatchT<T> batch = assemble_batch<T>(ds, lo, m, flags, epoch);
    const JetTapeT<T> tape = forward_jet(net, batch);
    const ChannelMap map = channel_map(flags);

    CostTerms terms;
    Mat<T> g_out;
    std::vector<Mat<T>> g_d1(static_cast<size_t>(map.count));
    std::vector<Mat<T>> g_d2(static_cast<size_t>(map.pair_count));
    const Eigen::Index rows = net.sizes.back();

    if (flags.e0) {
        const Eigen::VectorXd w = Eigen::VectorXd::Constant(rows, 1.0 / (norms.n * norms.n));
        terms.e0 = weighted_error_term<T>(tape.out(), cast_block<T>(ds.target, lo, m), w, g_out);
    }
    if (flags.e1) {
        for (int i = 0; i < 6; ++i) {
            const double ni = norms.n1[static_cast<size_t>(i)];
            const Eigen::VectorXd w = Eigen::VectorXd::Constant(rows, 1.0 / (ni * ni));
            terms.e1 += weighted_error_term<T>(tape.out_d1(i),
                                               cast_block<T>(ds.cube_d1[static_cast<size_t>(i)], lo, m),
                                               w, g_d1[static_cast<size_t>(i)]);
        }
    }
    if (flags.e2) {
        for (int q = 0; q < 21; ++q) {
            const double nq = norms.n2[static_cast<size_t>(q)];
            const Eigen::VectorXd w = Eigen::VectorXd::Constant(rows, 1.0 / (nq * nq));
            terms.e2 += weighted_error_term<T>(tape.out_d2(q),
                                               cast_block<T>(ds.cube_d2[static_cast<size_t>(q)], lo, m),
                                               w, g_d2[static_cast<size_t>(q)]);
        }
    }
    for (int k = 0; k < 3; ++k) {
        if (flags.r1[static_cast<size_t>(k)]) {
            const auto& fam = norms.r1[static_cast<size_t>(k)];
            Eigen::VectorXd w(rows);
            for (Eigen::Index i = 0; i < rows; ++i) {
                const double ni = fam.range[static_cast<size_t>(i)];
                w[i] = 1.0 / (fam.c * fam.c * ni * ni);
            }
            const int ch = map.fam[static_cast<size_t>(k)];
            terms.r1[static_cast<size_t>(k)] = weighted_error_term<T>(
                tape.out_d1(ch), cast_block<T>(epoch.r1_target[static_cast<size_t>(k)], lo, m), w,
                g_d1[static_cast<size_t>(ch)]);
        }
        if (flags.r2[static_cast<size_t>(k)]) {
            const auto& fam = norms.r2[static_cast<size_t>(k)];
            Eigen::VectorXd w(rows);
            for (Eigen::Index i = 0; i < rows; ++i) {
                const double ni = fam.range[static_cast<size_t>(i)];
                w[i] = 1.0 / (fam.c * fam.c * ni * ni);
            }
            const int p = map.fam_pair[static_cast<size_t>(k)];
            terms.r2[static_cast<size_t>(k)] = weighted_error_term<T>(
                tape.out_d2(p), cast_block<T>(epoch.r2_target[static_cast<size_t>(k)], lo, m), w,
                g_d2[static_cast<size_t>(p)]);
        }
    }
    if (flags.jacobian_c2 > 0.0) {
        const Eigen::VectorXd w = Eigen::VectorXd::Constant(rows, flags.jacobian_c2);
        terms.jac = weighted_error_term<T>(tape.out_d1(map.jac), Mat<T>(), w,
                                           g_d1[static_cast<size_t>(map.jac)]);
    }

    GradT<T> grad = backprop_jet(net, batch, tape, g_out, g_d1, g_d2);
    return {terms, std::move(grad)};
}

double metric_e(const Network& net, const Dataset& ds) {
    if (net.sizes.front() != ds.x.rows() || net.sizes.back() != ds.target.rows()) {
        throw ShapeError("metric_e: network does not match the dataset");
    }
    const Eigen::MatrixXf out = forward_values(net, ds.x);
    const auto n = static_cast<double>(ds.samples());
    double acc = 0.0;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const double rms =
            std::sqrt((out.row(i) - ds.target.row(i)).cast<double>().squaredNorm() / n);
        const double mean = ds.target.row(i).cast<double>().mean();
        const double var =
            (ds.target.row(i).cast<double>().array() - mean).square().sum() / n;
        if (!(var > 0.0)) throw DegenerateError("metric_e: constant target component");
        acc += rms / std::sqrt(var);
    }
    return 100.0 * acc / static_cast<double>(out.rows());
}

void gaussian_augment(Eigen::MatrixXf& values, double sigma, Rng& rng) {
    if (sigma == 0.0) return;
    if (sigma < 0.0) throw InvalidArgumentError("gaussian_augment: negative sigma");
    for (Eigen::Index k = 0; k < values.size(); ++k) {
        values.data()[k] += static_cast<float>(sigma * rng.gaussian());
    }
}

namespace {

void accumulate(CostTerms& sum, const CostTerms& t, double weight) {
    sum.e0 += weight * t.e0;
    sum.e1 += weight * t.e1;
    sum.e2 += weight * t.e2;
    sum.jac += weight * t.jac;
    for (int k = 0; k < 3; ++k) {
        sum.r1[static_cast<size_t>(k)] += weight * t.r1[static_cast<size_t>(k)];
        sum.r2[static_cast<size_t>(k)] += weight * t.r2[static_cast<size_t>(k)];
    }
}

void write_csv_row(std::ofstream& csv, const LogRow& row) {
    csv << row.epoch << ',' << row.lr << ',' << row.terms.e0 << ',' << row.terms.e1 << ','
        << row.terms.e2 << ',' << row.terms.r1[0] << ',' << row.terms.r1[1] << ','
        << row.terms.r1[2] << ',' << row.terms.r2[0] << ',' << row.terms.r2[1] << ','
        << row.terms.r2[2] << ',' << row.terms.jac << ',' << row.terms.total() << ','
        << row.e_train << ',' << row.e_test << '\n';
}

}  // namespace

namespace {

TrainResult run_epochs(const TrainConfig& cfg, const Dataset& train, const Dataset& test,
                       Network net, AdamStateT<float> adam, int start_epoch) {
    const int n = train.samples();
    if (cfg.layers.size() < 2) throw ConfigError("train_run: need at least two layers");
    if (cfg.layers.front() != train.x.rows() || cfg.layers.back() != train.target.rows()) {
        throw ConfigError("train_run: layer sizes do not match the dataset");
    }
    if (test.x.rows() != train.x.rows()) throw ShapeError("train_run: test dataset mismatch");
    if (cfg.epochs < 1) throw ConfigError("train_run: epochs must be positive");
    if (cfg.batches < 1 || cfg.batches > n) throw ConfigError("train_run: bad batch count");
    if (cfg.low_lr_epochs < 0 || cfg.low_lr_epochs > cfg.epochs) {
        throw ConfigError("train_run: bad low-rate epoch count");
    }
    if (cfg.exclusion_schedule) {
        if (!cfg.flags.e2) throw ConfigError("train_run: the exclusion schedule drops E2");
        if (cfg.epochs <= 50) throw ConfigError("train_run: exclusion schedule needs > 50 epochs");
    }
    const bool wants_d2 = cfg.flags.e2 || cfg.flags.r2[0] || cfg.flags.r2[1] || cfg.flags.r2[2];
    if (wants_d2 && train.order != 2) {
        throw ConfigError("train_run: second-order cost needs an order-2 dataset");
    }

    TrainResult res;
    res.net = std::move(net);

    std::array<DirectionPool, 3> pools;
    for (int k = 0; k < 3; ++k) {
        if (cfg.flags.r1[static_cast<size_t>(k)] || cfg.flags.r2[static_cast<size_t>(k)]) {
            pools[static_cast<size_t>(k)] = make_direction_pool(
                static_cast<DirectionKind>(k), n,
                mix_seed(cfg.dir_seed, static_cast<std::uint64_t>(k)));
        }
    }
    DirectionPool jac_pool;
    if (cfg.flags.jacobian_c2 > 0.0) {
        jac_pool = make_direction_pool(DirectionKind::high, n, mix_seed(cfg.dir_seed, 3));
    }

    std::optional<TangentSolver> solver;
    if (cfg.flags.any_r()) solver.emplace(train);
    res.norms = compute_normalizers(train, cfg.flags, pools, solver ? &*solver : nullptr);

    std::ofstream csv;
    if (!cfg.metrics_csv.empty()) {
        csv.open(cfg.metrics_csv);
        if (!csv) throw IoError("train_run: cannot open " + cfg.metrics_csv);
        csv.precision(8);
        csv << "epoch,lr,e0,e1,e2,r1_low,r1_mid,r1_high,r2_low,r2_mid,r2_high,jac,total,"
               "e_train,e_test\n";
    }

    const auto slices = batch_slices(n, cfg.batches);
    const int main_epochs = cfg.exclusion_schedule ? cfg.epochs - 50 : 0;
    const int total = cfg.epochs + (cfg.tradeoff_epoch ? 1 : 0);
    if (start_epoch < 0 || start_epoch >= total) {
        throw ConfigError("train_run: resume epoch outside the schedule");
    }

    for (int e = start_epoch; e < total; ++e) {
        const bool tradeoff = e >= cfg.epochs;
        double lr;
        CostFlags fl = cfg.flags;
        if (cfg.exclusion_schedule) {
            if (e < main_epochs) {
                lr = cfg.lr;
            } else if (e < main_epochs + 25) {
                lr = cfg.lr / 10.0;
            } else {
                lr = cfg.lr / 100.0;
                fl.e2 = false;
            }
        } else {
            lr = e >= cfg.epochs - cfg.low_lr_epochs ? cfg.lr / 10.0 : cfg.lr;
        }
        if (tradeoff) {
            lr = cfg.exclusion_schedule ? cfg.lr / 100.0
                                        : (cfg.low_lr_epochs > 0 ? cfg.lr / 10.0 : cfg.lr);
            fl = CostFlags{};
            fl.e0 = true;
            fl.e1 = true;
        }

        EpochData epoch;
        for (int k = 0; k < 3; ++k) {
            if (!fl.r1[static_cast<size_t>(k)] && !fl.r2[static_cast<size_t>(k)]) continue;
            epoch.dirs[static_cast<size_t>(k)] =
                shifted_columns(pools[static_cast<size_t>(k)].dirs, e);
            const Eigen::MatrixXd nu = solver->first_nu(train, epoch.dirs[static_cast<size_t>(k)]);
            if (fl.r1[static_cast<size_t>(k)]) {
                epoch.r1_target[static_cast<size_t>(k)] = solver->oracle_d1(train, nu);
            }
            if (fl.r2[static_cast<size_t>(k)]) {
                epoch.r2_target[static_cast<size_t>(k)] =
                    solver->oracle_d2(train, epoch.dirs[static_cast<size_t>(k)], nu);
            }
        }
        if (fl.jacobian_c2 > 0.0) epoch.jac_dirs = shifted_columns(jac_pool.dirs, e);
        Eigen::MatrixXf noisy;
        if (fl.gauss_sigma > 0.0) {
            // The per-epoch stream is derived rather than carried so a resumed
            // run draws the same noise the uninterrupted run would have.
            Rng noise_rng(mix_seed(cfg.noise_seed, static_cast<std::uint64_t>(e)));
            noisy = train.x;
            gaussian_augment(noisy, fl.gauss_sigma, noise_rng);
            epoch.values = &noisy;
        }

        CostTerms sum;
        for (const auto& [lo, m] : slices) {
            auto [terms, grad] = cost_and_gradient<float>(res.net, train, lo, m, fl, res.norms, epoch);
            adam_step(adam, res.net, grad, lr);
            accumulate(sum, terms, static_cast<double>(m) / n);
        }

        if (e % cfg.log_every == 0 || e == total - 1 || tradeoff) {
            LogRow row;
            row.epoch = e;
            row.lr = lr;
            row.terms = sum;
            row.e_train = metric_e(res.net, train);
            row.e_test = metric_e(res.net, test);
            res.log.push_back(row);
            if (csv.is_open()) write_csv_row(csv, row);
        }
    }
    res.adam = std::move(adam);
    return res;
}

}  // namespace

TrainResult train_run(const TrainConfig& cfg, const Dataset& train, const Dataset& test) {
    if (cfg.layers.size() < 2) throw ConfigError("train_run: need at least two layers");
    Network net = init_network<float>(cfg.layers, cfg.init_seed);
    AdamStateT<float> adam = make_adam_state(net);
    return run_epochs(cfg, train, test, std::move(net), std::move(adam), 0);
}

TrainResult resume_run(const TrainConfig& cfg, const Dataset& train, const Dataset& test,
                       const Checkpoint& ck, int start_epoch) {
    if (!ck.adam) throw ConfigError("resume_run: checkpoint lacks the optimizer state");
    if (ck.sizes != cfg.layers) {
        throw ConfigError("resume_run: checkpoint layers do not match the config");
    }
    Network net;
    AdamStateT<float> adam;
    from_checkpoint(ck, net, &adam);
    return run_epochs(cfg, train, test, std::move(net), std::move(adam), start_epoch);
}

#define CT_INSTANTIATE_TRAIN(T)                                                                    \
    template JetBatchT<T> assemble_batch<T>(const Dataset&, int, int, const CostFlags&,            \
                                            const EpochData&);                                     \
    template double weighted_error_term<T>(const Mat<T>&, const Mat<T>&, const Eigen::VectorXd&,   \
                                           Mat<T>&);                                               \
    template std::pair<CostTerms, GradT<T>> cost_and_gradient<T>(                                  \
        const NetworkT<T>&, const Dataset&, int, int, const CostFlags&, const CostNormalizers&,    \
        const EpochData&)

CT_INSTANTIATE_TRAIN(float);
CT_INSTANTIATE_TRAIN(double);

#undef CT_INSTANTIATE_TRAIN

}  // namespace ct
