#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace ct {

// Fully connected net with logistic hidden layers and a linear output layer.
// The scalar type is a template parameter: float carries the long trainings,
// double backs the finite-difference gradient checks.
template <typename T>
struct NetworkT {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
    using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

    std::vector<int> sizes;
    std::vector<Mat> w;  // w[l] maps layer l to l+1: sizes[l+1] x sizes[l]
    std::vector<Vec> b;

    int depth() const { return static_cast<int>(w.size()); }
    long param_count() const;
};

template <typename T>
NetworkT<T> init_network(const std::vector<int>& sizes, std::uint64_t seed);

template <typename From, typename To>
NetworkT<To> convert_network(const NetworkT<From>& net);

// Inputs for a jet forward pass: a batch of values (columns are samples) with
// optional first-derivative channels and second-derivative channels. Each
// second channel names the pair of first channels it differentiates and may
// carry an input-curvature seed (empty means the input path is straight).
template <typename T>
struct JetBatchT {
    using Mat = typename NetworkT<T>::Mat;

    Mat values;
    std::vector<Mat> d1;
    std::vector<std::pair<int, int>> d2_pairs;
    std::vector<Mat> d2;  // aligned with d2_pairs; an empty matrix seeds zero

    int samples() const { return static_cast<int>(values.cols()); }
};

// Everything the backward pass needs: activations per layer plus the
// pre-activation derivative channels z' and z'' and their activations.
template <typename T>
struct JetTapeT {
    using Mat = typename NetworkT<T>::Mat;

    std::vector<Mat> a;                    // depth+1 entries, a[0] = input
    std::vector<std::vector<Mat>> zd1;     // [layer 1..depth][channel]
    std::vector<std::vector<Mat>> ad1;     // [layer 0..depth][channel]
    std::vector<std::vector<Mat>> zd2;
    std::vector<std::vector<Mat>> ad2;

    const Mat& out() const { return a.back(); }
    const Mat& out_d1(int k) const { return ad1.back()[static_cast<size_t>(k)]; }
    const Mat& out_d2(int p) const { return ad2.back()[static_cast<size_t>(p)]; }
};

template <typename T>
struct GradT {
    std::vector<typename NetworkT<T>::Mat> w;
    std::vector<typename NetworkT<T>::Vec> b;
};

template <typename T>
typename NetworkT<T>::Mat forward_values(const NetworkT<T>& net,
                                         const typename NetworkT<T>::Mat& inputs);

template <typename T>
JetTapeT<T> forward_jet(const NetworkT<T>& net, const JetBatchT<T>& batch);

// Adjoint of the jet recurrences: given the cost derivatives with respect to
// the network outputs and their derivative channels, produces the exact cost
// gradient for every weight and threshold. Adjoint lists may be shorter than
// the channel lists; missing entries mean zero.
template <typename T>
GradT<T> backprop_jet(const NetworkT<T>& net, const JetBatchT<T>& batch, const JetTapeT<T>& tape,
                      const typename NetworkT<T>::Mat& g_out,
                      const std::vector<typename NetworkT<T>::Mat>& g_d1,
                      const std::vector<typename NetworkT<T>::Mat>& g_d2);

// Reverse-mode Jacobian of the outputs with respect to one input sample:
// rows are output components, columns are input pixels.
template <typename T>
typename NetworkT<T>::Mat input_jacobian(const NetworkT<T>& net,
                                         const typename NetworkT<T>::Vec& input);

template <typename T>
typename NetworkT<T>::Vec input_gradient(const NetworkT<T>& net,
                                         const typename NetworkT<T>::Vec& input, int out_idx);

template <typename T>
struct AdamStateT {
    std::vector<typename NetworkT<T>::Mat> mw, vw;
    std::vector<typename NetworkT<T>::Vec> mb, vb;
    long step = 0;
};

template <typename T>
AdamStateT<T> make_adam_state(const NetworkT<T>& net);

template <typename T>
void adam_step(AdamStateT<T>& state, NetworkT<T>& net, const GradT<T>& grad, double lr);

// Checkpoint: "CNET" magic, version, layer sizes, all parameters as 64-bit
// little-endian floats (weights column-major then thresholds, per layer),
// then an optional ADAM state in the same layout.
struct Checkpoint {
    std::vector<int> sizes;
    std::vector<Eigen::MatrixXd> w;
    std::vector<Eigen::VectorXd> b;
    std::optional<AdamStateT<double>> adam;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

template <typename T>
Checkpoint to_checkpoint(const NetworkT<T>& net, const AdamStateT<T>* adam = nullptr);

template <typename T>
void from_checkpoint(const Checkpoint& ck, NetworkT<T>& net, AdamStateT<T>* adam = nullptr);

using Network = NetworkT<float>;

}  // namespace ct
