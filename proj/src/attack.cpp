#include "attack.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>

#include "errors.hpp"
#include "rng.hpp"

namespace ct {

namespace {

Eigen::Map<const Eigen::VectorXd> image_vec(const Image& img) {
    return {img.p.data(), static_cast<Eigen::Index>(img.p.size())};
}

Eigen::VectorXf float_input(const Image& img) { return image_vec(img).cast<float>(); }

void check_pair(const GradientPair& grads) {
    if (grads.net.rows() == 0 || grads.net.rows() != grads.oracle.rows() ||
        grads.net.cols() != 9 || grads.oracle.cols() != 9) {
        throw ShapeError("attack: gradient pair must hold nine pixel columns per side");
    }
}

Eigen::MatrixXd oracle_gradients(const ImageJet& jet) {
    Eigen::MatrixXd cols(static_cast<Eigen::Index>(jet.base.p.size()), 9);
    for (int i = 0; i < 9; ++i) cols.col(i) = image_vec(oracle_gradient(jet, i + 1));
    return cols;
}

// Same accuracy measure as the training metric: per-component rms deviation
// over the target spread, averaged and in percent.
double nine_metric(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
    const auto n = static_cast<double>(pred.cols());
    double acc = 0.0;
    for (Eigen::Index i = 0; i < pred.rows(); ++i) {
        const double rms = std::sqrt((pred.row(i) - target.row(i)).squaredNorm() / n);
        const double mean = target.row(i).mean();
        const double var = (target.row(i).array() - mean).square().sum() / n;
        if (!(var > 0.0)) throw DegenerateError("noise_sweep: constant target component");
        acc += rms / std::sqrt(var);
    }
    return 100.0 * acc / static_cast<double>(pred.rows());
}

}  // namespace

GradientPair gradient_pair(const Network& net, const ImageJet& jet) {
    const auto pixels = static_cast<Eigen::Index>(jet.base.p.size());
    if (net.sizes.empty() || net.sizes.front() != pixels || net.sizes.back() != 9) {
        throw ShapeError("gradient_pair: network shape does not match the jet");
    }
    GradientPair grads;
    grads.net = input_jacobian(net, float_input(jet.base)).transpose().cast<double>();
    grads.oracle = oracle_gradients(jet);
    return grads;
}

BlockGram block_gram(const GradientPair& grads) {
    check_pair(grads);
    BlockGram bg;
    bg.g11 = grads.oracle.transpose() * grads.oracle;
    bg.g12 = grads.oracle.transpose() * grads.net;
    bg.g21 = bg.g12.transpose();
    bg.g22 = grads.net.transpose() * grads.net;
    bg.g11 = (0.5 * (bg.g11 + bg.g11.transpose())).eval();
    bg.g22 = (0.5 * (bg.g22 + bg.g22.transpose())).eval();
    return bg;
}

double vulnerability_percent(double value) {
    return 100.0 * std::sqrt(std::max(value, 0.0)) / (0.3 * 9.0);
}

SimpleDirections simple_directions(const GradientPair& grads, int out_idx) {
    check_pair(grads);
    if (out_idx < 1 || out_idx > 9) {
        throw InvalidArgumentError("simple_directions: out_idx must be 1..9");
    }
    const Eigen::VectorXd gn = grads.net.col(out_idx - 1);
    const Eigen::VectorXd go = grads.oracle.col(out_idx - 1);
    const double nn = gn.squaredNorm();
    const double oo = go.squaredNorm();
    if (!(nn > 0.0) || !(oo > 0.0)) {
        throw ZeroGradientError("simple_directions: zero gradient");
    }
    const double dot = gn.dot(go);
    SimpleDirections out;
    out.d_inv = go - (dot / nn) * gn;
    out.d_sen = gn - (dot / oo) * go;
    return out;
}

AttackSolution solve_optimal(const GradientPair& grads) {
    check_pair(grads);
    AttackSolution s;
    s.kind = AttackKind::optimal;
    s.direction = Eigen::VectorXd::Zero(grads.net.rows());
    s.coeffs = Eigen::VectorXd::Zero(9);

    const Eigen::MatrixXd diff = grads.net - grads.oracle;
    Matrix9d g = diff.transpose() * diff;
    g = (0.5 * (g + g.transpose())).eval();
    Eigen::SelfAdjointEigenSolver<Matrix9d> es(g);
    if (es.info() != Eigen::Success) {
        throw ConvergenceError("optimal_attack: eigen solve failed");
    }
    const double lmax = es.eigenvalues()(8);
    if (!(lmax > 0.0)) return s;  // aligned network: no growth direction

    const Eigen::VectorXd mu = es.eigenvectors().col(8) / std::sqrt(lmax);
    s.coeffs = mu;
    s.direction = diff * mu;
    s.value = lmax;
    s.v = vulnerability_percent(lmax);
    return s;
}

AttackSolution solve_constrained(const GradientPair& grads, AttackKind kind) {
    check_pair(grads);
    if (kind == AttackKind::optimal) {
        throw InvalidArgumentError("solve_constrained: kind must be sensitivity or invariance");
    }
    const bool sen = kind == AttackKind::sensitivity;
    const BlockGram bg = block_gram(grads);

    // Frame of the pinned side: the six leading eigenvectors receiving the
    // orthogonality projections.
    const Matrix9d& frame = sen ? bg.g22 : bg.g11;
    Eigen::SelfAdjointEigenSolver<Matrix9d> fes(frame);
    if (fes.info() != Eigen::Success) {
        throw ConvergenceError("constrained_attack: frame eigen solve failed");
    }
    const Vec9 fv = fes.eigenvalues();
    const double top = fv(8);
    if (!(top > 0.0) || fv(3) <= 1e-10 * top) {
        throw RankError("constrained_attack: fewer than six usable frame eigenvalues");
    }
    if (fv(3) - fv(2) < 1e-8 * top) {
        throw RankError("constrained_attack: projection frame eigenvalues not separated");
    }
    const Eigen::Matrix<double, 9, 6> a = fes.eigenvectors().rightCols<6>();

    // Whiten the unit-step constraint, the Gram form of the stacked oracle
    // and network gradient weights.
    Eigen::Matrix<double, 18, 18> b;
    b << bg.g11, bg.g12, bg.g21, bg.g22;
    b = (0.5 * (b + b.transpose())).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 18, 18>> bes(b);
    if (bes.info() != Eigen::Success) {
        throw ConvergenceError("constrained_attack: step form eigen solve failed");
    }
    const double bmax = bes.eigenvalues()(17);
    if (!(bmax > 0.0)) throw DegenerateError("constrained_attack: zero gradients");
    int kept = 0;
    for (int i = 0; i < 18; ++i) kept += bes.eigenvalues()(i) > 1e-10 * bmax ? 1 : 0;
    Eigen::MatrixXd t(18, kept);
    for (int i = 0, c = 0; i < 18; ++i) {
        if (bes.eigenvalues()(i) > 1e-10 * bmax) {
            t.col(c++) = bes.eigenvectors().col(i) / std::sqrt(bes.eigenvalues()(i));
        }
    }

    Eigen::Matrix<double, 18, 9> m;
    m.topRows<9>() = sen ? bg.g12 : bg.g11;
    m.bottomRows<9>() = sen ? bg.g22 : bg.g21;
    Eigen::Matrix<double, 18, 6> cons;
    cons.topRows<9>() = (sen ? bg.g11 : bg.g12) * a;
    cons.bottomRows<9>() = (sen ? bg.g21 : bg.g22) * a;

    // Orthonormal basis of the whitened constraint null space.
    const Eigen::MatrixXd projected = (t.transpose() * cons).transpose();  // 6 x kept
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(projected, Eigen::ComputeFullV);
    const Eigen::VectorXd sv = svd.singularValues();
    int rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i) rank += sv(i) > 1e-10 * sv(0) ? 1 : 0;
    AttackSolution s;
    s.kind = kind;
    s.direction = Eigen::VectorXd::Zero(grads.net.rows());
    s.coeffs = Eigen::VectorXd::Zero(18);

    // For a perfectly aligned network the constraints use up every whitened
    // dimension: no unit step is admissible and the vulnerability is zero.
    const int null_dim = kept - rank;
    if (null_dim <= 0) return s;
    const Eigen::MatrixXd z = svd.matrixV().rightCols(null_dim);

    const Eigen::MatrixXd mz = z.transpose() * (t.transpose() * m);
    Eigen::MatrixXd qhat = mz * mz.transpose();
    qhat = (0.5 * (qhat + qhat.transpose())).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> qes(qhat);
    if (qes.info() != Eigen::Success) {
        throw ConvergenceError("constrained_attack: reduced eigen solve failed");
    }
    const double lmax = qes.eigenvalues()(null_dim - 1);
    if (!(lmax > 0.0)) return s;  // free side already pinned: no response left

    const Eigen::VectorXd x = t * (z * qes.eigenvectors().col(null_dim - 1));
    s.coeffs = x;
    s.direction = grads.oracle * x.head<9>() + grads.net * x.tail<9>();
    s.value = lmax;
    s.v = vulnerability_percent(lmax);
    return s;
}

AttackSolution optimal_attack(const Network& net, const ImageJet& jet) {
    return solve_optimal(gradient_pair(net, jet));
}

AttackSolution constrained_attack(const Network& net, const ImageJet& jet, AttackKind kind) {
    return solve_constrained(gradient_pair(net, jet), kind);
}

VulnerabilitySummary evaluate_vulnerabilities(const Network& net, const JetSource& jets,
                                              int count) {
    if (count < 1) throw InvalidArgumentError("evaluate_vulnerabilities: empty sample set");
    VulnerabilitySummary out;
    out.rows.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const ImageJet jet = jets(i);
        const GradientPair grads = gradient_pair(net, jet);
        const AttackSolution best = solve_optimal(grads);
        const AttackSolution sen = solve_constrained(grads, AttackKind::sensitivity);
        const AttackSolution inv = solve_constrained(grads, AttackKind::invariance);
        out.rows.push_back({best.v, sen.v, inv.v, best.value});
        out.v_max_mean += best.v;
        out.v_sen_mean += sen.v;
        out.v_inv_mean += inv.v;
    }
    out.v_max_mean /= count;
    out.v_sen_mean /= count;
    out.v_inv_mean /= count;
    return out;
}

double mean_gradient_alignment(const Network& net, const JetSource& jets, int count) {
    if (count < 1) throw InvalidArgumentError("mean_gradient_alignment: empty sample set");
    double acc = 0.0;
    for (int i = 0; i < count; ++i) {
        const ImageJet jet = jets(i);
        const auto pixels = static_cast<Eigen::Index>(jet.base.p.size());
        if (net.sizes.empty() || net.sizes.front() != pixels) {
            throw ShapeError("mean_gradient_alignment: network shape does not match the jet");
        }
        const Eigen::VectorXd gn = input_gradient(net, float_input(jet.base), 1).cast<double>();
        const Image go_img = oracle_gradient(jet, 1);
        const Eigen::Map<const Eigen::VectorXd> go = image_vec(go_img);
        const double denom = gn.norm() * go.norm();
        if (!(denom > 0.0)) throw ZeroGradientError("mean_gradient_alignment: zero gradient");
        acc += gn.dot(go) / denom;
    }
    return acc / count;
}

double mean_pairwise_gradient_cosine(const Network& net, const Eigen::MatrixXf& values) {
    const auto n = values.cols();
    if (n < 2) throw InvalidArgumentError("mean_pairwise_gradient_cosine: need two samples");
    if (net.sizes.empty() || net.sizes.front() != values.rows()) {
        throw ShapeError("mean_pairwise_gradient_cosine: network shape does not match inputs");
    }
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(values.rows());
    for (Eigen::Index s = 0; s < n; ++s) {
        const Eigen::VectorXd g = input_gradient(net, values.col(s), 1).cast<double>();
        const double norm = g.norm();
        if (!(norm > 0.0)) throw ZeroGradientError("mean_pairwise_gradient_cosine: zero gradient");
        sum += g / norm;
    }
    const auto nd = static_cast<double>(n);
    return (sum.squaredNorm() - nd) / (nd * (nd - 1.0));
}

std::vector<SweepPoint> noise_sweep(const Network& net, const Camera& cam, double render_sigma,
                                    const JetSource& jets, int count,
                                    const std::vector<double>& sigmas, std::uint64_t seed) {
    if (count < 2) throw InvalidArgumentError("noise_sweep: need at least two samples");
    if (sigmas.empty()) throw InvalidArgumentError("noise_sweep: no noise levels");
    for (const double s : sigmas) {
        // The Taylor-corrected targets lose validity beyond this noise level.
        if (!(s >= 0.0) || s > 0.25) {
            throw InvalidArgumentError("noise_sweep: noise level outside [0, 0.25]");
        }
    }
    if (net.sizes.empty() || net.sizes.back() != 9) {
        throw ShapeError("noise_sweep: network must produce the nine tracked coordinates");
    }

    std::vector<SweepPoint> points;
    points.reserve(sigmas.size());
    for (std::size_t si = 0; si < sigmas.size(); ++si) {
        const double sigma = sigmas[si];
        Rng rng(mix_seed(seed, si));
        Eigen::MatrixXd pred(9, count);
        Eigen::MatrixXd adjusted_targets(9, count);
        Eigen::MatrixXd clean_targets(9, count);
        SweepPoint pt;
        pt.sigma = sigma;
        for (int s = 0; s < count; ++s) {
            const ImageJet jet = jets(s);
            const auto pixels = static_cast<Eigen::Index>(jet.base.p.size());
            if (net.sizes.front() != pixels) {
                throw ShapeError("noise_sweep: network shape does not match the jets");
            }
            Image noise(jet.base.grid);
            if (sigma > 0.0) {
                for (double& v : noise.p) v = sigma * rng.gaussian();
            }
            const OracleExpansion taylor = second_directional(jet, noise);
            adjusted_targets.col(s) = jet.target + taylor.dO1 + 0.5 * taylor.dO2;
            clean_targets.col(s) = jet.target;
            const Eigen::MatrixXf input = (image_vec(jet.base) + image_vec(noise)).cast<float>();
            pred.col(s) = forward_values(net, input).col(0).cast<double>();

            // The adjusted pose comes from the local-coordinate displacement:
            // unlike the nine adjusted coordinates themselves, it is a rigid
            // cube for any noise amplitude.
            const Cube adjusted_cube =
                apply_local_transform(jet.cube, taylor.dnu1 + 0.5 * taylor.dnu2);
            const ImageJet local = build_jet(cam, adjusted_cube, render_sigma, 1, jet.base.grid);
            GradientPair grads;
            grads.net = input_jacobian(net, input.col(0)).transpose().cast<double>();
            grads.oracle = oracle_gradients(local);
            pt.v_max_mean += solve_optimal(grads).v;
            pt.v_sen_mean += solve_constrained(grads, AttackKind::sensitivity).v;
            pt.v_inv_mean += solve_constrained(grads, AttackKind::invariance).v;
        }
        pt.v_max_mean /= count;
        pt.v_sen_mean /= count;
        pt.v_inv_mean /= count;
        pt.e_corrected = nine_metric(pred, adjusted_targets);
        pt.e_uncorrected = nine_metric(pred, clean_targets);
        points.push_back(pt);
    }
    return points;
}

}  // namespace ct
