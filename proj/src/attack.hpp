#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "network.hpp"
#include "oracle.hpp"

namespace ct {

using Matrix9d = Eigen::Matrix<double, 9, 9>;

// Pixel-space gradients of the nine network outputs and of the nine oracle
// outputs at one sample, as columns.
struct GradientPair {
    Eigen::MatrixXd net;
    Eigen::MatrixXd oracle;
};

GradientPair gradient_pair(const Network& net, const ImageJet& jet);

// Inner products of the two gradient families in blocks: g11 oracle-oracle,
// g12 oracle-net, g22 net-net. The oracle block has rank at most six because
// its gradients lie in the tangent span.
struct BlockGram {
    Matrix9d g11 = Matrix9d::Zero();
    Matrix9d g12 = Matrix9d::Zero();
    Matrix9d g21 = Matrix9d::Zero();
    Matrix9d g22 = Matrix9d::Zero();
};

BlockGram block_gram(const GradientPair& grads);

enum class AttackKind { optimal = 0, sensitivity = 1, invariance = 2 };

// direction is a unit pixel vector except for an aligned network, where no
// growth direction exists and the zero solution is returned. coeffs holds the
// gradient weights: nine for the optimal kind, otherwise nine oracle weights
// followed by nine network weights.
struct AttackSolution {
    AttackKind kind = AttackKind::optimal;
    Eigen::VectorXd direction;
    Eigen::VectorXd coeffs;
    double value = 0.0;
    double v = 0.0;
};

// Growth of the relative output error per unit input step, in percent; the
// nine tracked coordinates share an output deviation scale of 0.3.
double vulnerability_percent(double value);

// Projections of each misalignment side onto the orthogonal complement of the
// other, for tracked coordinate out_idx (1-based): d_inv moves the oracle
// while freezing the network to first order, d_sen the reverse.
struct SimpleDirections {
    Eigen::VectorXd d_inv;
    Eigen::VectorXd d_sen;
};

SimpleDirections simple_directions(const GradientPair& grads, int out_idx);

// Unit perturbation maximizing the first-order growth of the squared
// network-oracle deviation, via the top eigenpair of the difference-gradient
// Gram matrix.
AttackSolution solve_optimal(const GradientPair& grads);

// Maximizes the response of one side while the other side's response,
// projected onto its six-dimensional frame, is pinned to zero. The
// perturbation is parameterized by gradient weights, the unit-step constraint
// is whitened away, and the residual problem is a plain eigenvalue one.
AttackSolution solve_constrained(const GradientPair& grads, AttackKind kind);

AttackSolution optimal_attack(const Network& net, const ImageJet& jet);
AttackSolution constrained_attack(const Network& net, const ImageJet& jet, AttackKind kind);

struct VulnerabilityRow {
    double v_max = 0.0;
    double v_sen = 0.0;
    double v_inv = 0.0;
    double lambda_max = 0.0;
};

struct VulnerabilitySummary {
    std::vector<VulnerabilityRow> rows;
    double v_max_mean = 0.0;
    double v_sen_mean = 0.0;
    double v_inv_mean = 0.0;
};

// Streams jets one at a time so callers can read from a cache without holding
// the whole set in memory.
using JetSource = std::function<ImageJet(int)>;

VulnerabilitySummary evaluate_vulnerabilities(const Network& net, const JetSource& jets,
                                              int count);

// Mean over samples of the cosine between the network and oracle gradients of
// the first tracked coordinate; the alignment robust training drives up.
double mean_gradient_alignment(const Network& net, const JetSource& jets, int count);

// Mean pairwise cosine between input gradients of the first output across the
// columns of values.
double mean_pairwise_gradient_cosine(const Network& net, const Eigen::MatrixXf& values);

struct SweepPoint {
    double sigma = 0.0;
    double e_corrected = 0.0;
    double e_uncorrected = 0.0;
    double v_max_mean = 0.0;
    double v_sen_mean = 0.0;
    double v_inv_mean = 0.0;
};

// For each noise level: draws per-sample Gaussian pixel noise, re-targets the
// oracle by its Taylor response to that noise, and reports accuracy against
// both target sets plus vulnerabilities taken at the adjusted cube's pose
// with the network linearized at the noisy input. Jets must be order 2; the
// camera and render sigma rebuild the tangent images at the adjusted pose.
std::vector<SweepPoint> noise_sweep(const Network& net, const Camera& cam, double render_sigma,
                                    const JetSource& jets, int count,
                                    const std::vector<double>& sigmas, std::uint64_t seed);

}  // namespace ct
