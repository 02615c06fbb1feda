#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "jet.hpp"
#include "network.hpp"
#include "oracle.hpp"

namespace ct {

// Column-major float32 assembly of a jet-cached sample range: each column is
// one sample. Image second derivatives and their cube-space targets are kept
// in pair_index order and present only at order 2.
struct Dataset {
    int order = 1;
    int grid = default_grid;
    double sigma = 0.0;
    long first = 0;  // index of the first quasi-random sample

    Eigen::MatrixXf x;
    std::array<Eigen::MatrixXf, 6> d1;
    std::vector<Eigen::MatrixXf> d2;
    Eigen::MatrixXf target;
    std::array<Eigen::MatrixXf, 6> cube_d1;
    std::vector<Eigen::MatrixXf> cube_d2;

    int samples() const { return static_cast<int>(x.cols()); }
};

// Korobov lattice phase for a data seed; seed 0 keeps the canonical 0.5.
double lattice_phase(std::uint64_t data_seed);

// Renders and differentiates samples [first, first + count) of the pose
// sequence; writes a jet cache alongside when a path is given.
Dataset build_dataset(const Camera& cam, double sigma, long first, long count, int order,
                      const std::string& cache_path = "", std::uint64_t data_seed = 0);

Dataset load_dataset(const std::string& cache_path, double sigma = 0.0, long first = 0);

enum class DirectionKind { low = 0, mid = 1, high = 2 };

// Unit-norm 41x41 direction built from white noise smoothed at the family's
// radii; high is raw white noise.
Image make_direction(DirectionKind kind, Rng& rng);

struct DirectionPool {
    DirectionKind kind = DirectionKind::low;
    Eigen::MatrixXf dirs;  // 1681 x pool size, unit columns

    int size() const { return static_cast<int>(dirs.cols()); }
};

DirectionPool make_direction_pool(DirectionKind kind, int count, std::uint64_t seed);

// Per-sample tangent-space solves against the float32 dataset: batched
// versions of the oracle directional expansions, used for robust targets.
class TangentSolver {
public:
    explicit TangentSolver(const Dataset& ds);

    // dirs column s is this sample's direction; returns the 6 x n tangent
    // coordinates of the projections.
    Eigen::MatrixXd first_nu(const Dataset& ds, const Eigen::MatrixXf& dirs) const;
    Eigen::MatrixXf oracle_d1(const Dataset& ds, const Eigen::MatrixXd& nu) const;
    // Second directional derivative of the oracle along straight image lines;
    // requires an order-2 dataset.
    Eigen::MatrixXf oracle_d2(const Dataset& ds, const Eigen::MatrixXf& dirs,
                              const Eigen::MatrixXd& nu) const;

private:
    std::vector<Eigen::Matrix<double, 6, 6>> inv_;
    std::vector<Eigen::Matrix<double, 21, 6>> hd_;
};

struct CostFlags {
    bool e0 = true;
    bool e1 = false;
    bool e2 = false;
    std::array<bool, 3> r1{};  // indexed by DirectionKind
    std::array<bool, 3> r2{};
    double gauss_sigma = 0.0;
    double jacobian_c2 = 0.0;

    bool any_r() const { return r1[0] || r1[1] || r1[2] || r2[0] || r2[1] || r2[2]; }
    bool needs_tangent_channels() const { return e1 || e2; }
};

struct FamilyNormalizers {
    std::array<double, 9> range{};  // 95th minus 5th percentile per output
    double c = 1.0;
};

struct CostNormalizers {
    double n = 1.0;
    std::array<double, 6> n1{};
    std::array<double, 21> n2{};
    std::array<FamilyNormalizers, 3> r1{}, r2{};
    // Measured counterpart of the printed scale constant used for the
    // translation-pair second-derivative normalizers; kept for reporting.
    double rot_pair_image_scale = 0.0;
};

// Averages over the training set; robust ranges use the pools at their
// first-epoch assignment and stay frozen afterwards.
CostNormalizers compute_normalizers(const Dataset& train, const CostFlags& flags,
                                    const std::array<DirectionPool, 3>& pools,
                                    const TangentSolver* solver);

struct CostTerms {
    double e0 = 0.0, e1 = 0.0, e2 = 0.0, jac = 0.0;
    std::array<double, 3> r1{}, r2{};

    double total() const {
        return e0 + e1 + e2 + jac + r1[0] + r1[1] + r1[2] + r2[0] + r2[1] + r2[2];
    }
};

// Per-epoch data a training step reads besides the dataset: the direction
// assigned to each sample for every active family, the matching oracle
// responses, and optionally noise-augmented input values.
struct EpochData {
    std::array<Eigen::MatrixXf, 3> dirs;
    std::array<Eigen::MatrixXf, 3> r1_target;  // 9 x samples
    std::array<Eigen::MatrixXf, 3> r2_target;
    Eigen::MatrixXf jac_dirs;
    const Eigen::MatrixXf* values = nullptr;  // replaces the dataset inputs when set
};

// Jet inputs for samples [lo, lo + m): tangent channels first when first or
// second pose derivatives are trained, then one channel per active direction
// family, then the regularizer direction. Second-derivative pairs list the 21
// tangent pairs followed by the family diagonals.
template <typename T>
JetBatchT<T> assemble_batch(const Dataset& ds, int lo, int m, const CostFlags& flags,
                            const EpochData& epoch);

// Mean over columns of the row-weighted squared difference, with the matching
// adjoint (2/m · diag(w) · diff) written to `adjoint`. An empty target means
// zero.
template <typename T>
double weighted_error_term(const typename NetworkT<T>::Mat& out,
                           const typename NetworkT<T>::Mat& target, const Eigen::VectorXd& row_w,
                           typename NetworkT<T>::Mat& adjoint);

// One training step's evaluation on a batch: every enabled cost term and the
// exact parameter gradient of their sum.
template <typename T>
std::pair<CostTerms, GradT<T>> cost_and_gradient(const NetworkT<T>& net, const Dataset& ds, int lo,
                                                 int m, const CostFlags& flags,
                                                 const CostNormalizers& norms,
                                                 const EpochData& epoch);

// Normalized rms error averaged over output components, in percent; the
// per-component scale is the standard deviation of the targets.
double metric_e(const Network& net, const Dataset& ds);

void gaussian_augment(Eigen::MatrixXf& values, double sigma, Rng& rng);

struct TrainConfig {
    std::vector<int> layers;
    int epochs = 2000;
    int batches = 42;
    double lr = 1e-3;
    int low_lr_epochs = 50;  // trailing epochs at lr / 10
    // Second-order runs: the trailing low-rate window splits into 25 epochs
    // at lr / 10 and 25 at lr / 100 with the second-derivative term dropped.
    bool exclusion_schedule = false;
    bool tradeoff_epoch = false;  // one extra epoch at E0 + E1
    CostFlags flags;
    std::uint64_t init_seed = 1, dir_seed = 2, noise_seed = 3;
    std::string metrics_csv;
    int log_every = 10;
};

struct LogRow {
    int epoch = 0;
    double lr = 0.0;
    CostTerms terms;
    double e_train = 0.0, e_test = 0.0;
};

struct TrainResult {
    Network net;
    AdamStateT<float> adam;  // optimizer state at the last step, for resuming
    CostNormalizers norms;
    std::vector<LogRow> log;
};

TrainResult train_run(const TrainConfig& cfg, const Dataset& train, const Dataset& test);

// Continuation of an interrupted run: the checkpoint provides the parameters
// and optimizer state reached after start_epoch epochs, and the remaining
// epochs replay exactly what the uninterrupted run would have done.
TrainResult resume_run(const TrainConfig& cfg, const Dataset& train, const Dataset& test,
                       const Checkpoint& ck, int start_epoch);

}  // namespace ct
