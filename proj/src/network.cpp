#include "network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace ct {

namespace {

template <typename T>
using Mat = typename NetworkT<T>::Mat;
template <typename T>
using Vec = typename NetworkT<T>::Vec;

template <typename T>
Mat<T> logistic(const Mat<T>& z) {
    return (T(1) / (T(1) + (-z.array()).exp())).matrix();
}

template <typename T>
const Mat<T>* nonempty(const std::vector<Mat<T>>& v, size_t i) {
    if (i >= v.size() || v[i].size() == 0) return nullptr;
    return &v[i];
}

void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

void write_f64(std::ostream& os, const double* p, std::streamsize n) {
    os.write(reinterpret_cast<const char*>(p), n * 8);
}

void read_f64(std::istream& is, double* p, std::streamsize n) {
    is.read(reinterpret_cast<char*>(p), n * 8);
}

}  // namespace

template <typename T>
long NetworkT<T>::param_count() const {
    long n = 0;
    for (int l = 0; l < depth(); ++l) n += w[l].size() + b[l].size();
    return n;
}

template <typename T>
NetworkT<T> init_network(const std::vector<int>& sizes, std::uint64_t seed) {
    if (sizes.size() < 2) throw InvalidArgumentError("network needs at least two layers");
    for (int s : sizes) {
        if (s < 1) throw InvalidArgumentError("layer sizes must be at least 1");
    }
    NetworkT<T> net;
    net.sizes = sizes;
    Rng rng(seed);
    const int depth = static_cast<int>(sizes.size()) - 1;
    for (int l = 0; l < depth; ++l) {
        const int fan_in = sizes[l];
        // The first matrix sees raw images whose pixels are mostly far from
        // unit scale; the widened range compensates for that distribution.
        const double bound = (l == 0) ? 10.0 / std::sqrt(static_cast<double>(fan_in))
                                      : 2.0 / std::sqrt(static_cast<double>(fan_in));
        typename NetworkT<T>::Mat w(sizes[l + 1], fan_in);
        for (Eigen::Index k = 0; k < w.size(); ++k) {
            w.data()[k] = static_cast<T>(rng.uniform(-bound, bound));
        }
        typename NetworkT<T>::Vec b(sizes[l + 1]);
        for (Eigen::Index k = 0; k < b.size(); ++k) {
            b[k] = static_cast<T>(rng.uniform(-0.1, 0.1));
        }
        net.w.push_back(std::move(w));
        net.b.push_back(std::move(b));
    }
    return net;
}

template <typename From, typename To>
NetworkT<To> convert_network(const NetworkT<From>& net) {
    NetworkT<To> out;
    out.sizes = net.sizes;
    for (int l = 0; l < net.depth(); ++l) {
        out.w.push_back(net.w[l].template cast<To>());
        out.b.push_back(net.b[l].template cast<To>());
    }
    return out;
}

template <typename T>
Mat<T> forward_values(const NetworkT<T>& net, const Mat<T>& inputs) {
    if (inputs.rows() != net.sizes[0]) throw ShapeError("input rows do not match the first layer");
    Mat<T> a = inputs;
    for (int l = 0; l < net.depth(); ++l) {
        Mat<T> z = (net.w[l] * a).colwise() + net.b[l];
        a = (l + 1 < net.depth()) ? logistic<T>(z) : std::move(z);
    }
    return a;
}

template <typename T>
JetTapeT<T> forward_jet(const NetworkT<T>& net, const JetBatchT<T>& batch) {
    const int depth = net.depth();
    const int nd1 = static_cast<int>(batch.d1.size());
    const int nd2 = static_cast<int>(batch.d2_pairs.size());
    if (batch.values.rows() != net.sizes[0]) {
        throw ShapeError("input rows do not match the first layer");
    }
    for (const auto& d : batch.d1) {
        if (d.rows() != batch.values.rows() || d.cols() != batch.values.cols()) {
            throw ShapeError("derivative channel shape mismatch");
        }
    }
    if (batch.d2.size() != batch.d2_pairs.size()) {
        throw ShapeError("second-derivative channels must align with their pair list");
    }
    for (int p = 0; p < nd2; ++p) {
        const auto& [i, j] = batch.d2_pairs[static_cast<size_t>(p)];
        if (i < 0 || j < 0 || i >= nd1 || j >= nd1) {
            throw ShapeError("second-derivative pair indexes a missing first channel");
        }
        if (batch.d2[static_cast<size_t>(p)].size() != 0 &&
            (batch.d2[static_cast<size_t>(p)].rows() != batch.values.rows() ||
             batch.d2[static_cast<size_t>(p)].cols() != batch.values.cols())) {
            throw ShapeError("input-curvature channel shape mismatch");
        }
    }

    JetTapeT<T> tape;
    tape.a.resize(static_cast<size_t>(depth) + 1);
    tape.zd1.resize(static_cast<size_t>(depth) + 1);
    tape.ad1.resize(static_cast<size_t>(depth) + 1);
    tape.zd2.resize(static_cast<size_t>(depth) + 1);
    tape.ad2.resize(static_cast<size_t>(depth) + 1);
    tape.a[0] = batch.values;

    for (int l = 1; l <= depth; ++l) {
        const auto& w = net.w[static_cast<size_t>(l - 1)];
        const bool hidden = l < depth;
        Mat<T> z = (w * tape.a[static_cast<size_t>(l - 1)]).colwise() + net.b[static_cast<size_t>(l - 1)];
        const Mat<T> a = hidden ? logistic<T>(z) : z;
        tape.a[static_cast<size_t>(l)] = a;
        const auto fp = (a.array() * (T(1) - a.array())).eval();

        auto& zd1 = tape.zd1[static_cast<size_t>(l)];
        auto& ad1 = tape.ad1[static_cast<size_t>(l)];
        zd1.reserve(static_cast<size_t>(nd1));
        ad1.reserve(static_cast<size_t>(nd1));
        for (int k = 0; k < nd1; ++k) {
            const Mat<T>& prev = (l == 1) ? batch.d1[static_cast<size_t>(k)]
                                          : tape.ad1[static_cast<size_t>(l - 1)][static_cast<size_t>(k)];
            Mat<T> zp = w * prev;
            if (hidden) {
                ad1.push_back((fp * zp.array()).matrix());
            } else {
                ad1.push_back(zp);
            }
            zd1.push_back(std::move(zp));
        }

        auto& zd2 = tape.zd2[static_cast<size_t>(l)];
        auto& ad2 = tape.ad2[static_cast<size_t>(l)];
        zd2.reserve(static_cast<size_t>(nd2));
        ad2.reserve(static_cast<size_t>(nd2));
        const auto fpp = (fp * (T(1) - T(2) * a.array())).eval();
        for (int p = 0; p < nd2; ++p) {
            const auto& [i, j] = batch.d2_pairs[static_cast<size_t>(p)];
            Mat<T> zpp;
            const Mat<T>* prev = (l == 1) ? nonempty<T>(batch.d2, static_cast<size_t>(p))
                                          : &tape.ad2[static_cast<size_t>(l - 1)][static_cast<size_t>(p)];
            if (prev != nullptr) {
                zpp = w * (*prev);
            } else {
                zpp = Mat<T>::Zero(a.rows(), a.cols());
            }
            if (hidden) {
                ad2.push_back((fpp * zd1[static_cast<size_t>(i)].array() *
                                   zd1[static_cast<size_t>(j)].array() +
                               fp * zpp.array())
                                  .matrix());
            } else {
                ad2.push_back(zpp);
            }
            zd2.push_back(std::move(zpp));
        }
    }
    return tape;
}

template <typename T>
GradT<T> backprop_jet(const NetworkT<T>& net, const JetBatchT<T>& batch, const JetTapeT<T>& tape,
                      const Mat<T>& g_out, const std::vector<Mat<T>>& g_d1,
                      const std::vector<Mat<T>>& g_d2) {
    const int depth = net.depth();
    const int nd1 = static_cast<int>(batch.d1.size());
    const int nd2 = static_cast<int>(batch.d2_pairs.size());
    const int m = batch.samples();
    if (g_out.size() != 0 && (g_out.rows() != net.sizes.back() || g_out.cols() != m)) {
        throw ShapeError("output adjoint shape mismatch");
    }
    if (static_cast<int>(g_d1.size()) > nd1 || static_cast<int>(g_d2.size()) > nd2) {
        throw ShapeError("more adjoints than derivative channels");
    }

    GradT<T> grad;
    grad.w.resize(static_cast<size_t>(depth));
    grad.b.resize(static_cast<size_t>(depth));

    // Cost derivatives with respect to the current layer's activations and
    // activation-derivative channels; start from the supplied output adjoints.
    Mat<T> ga = g_out.size() != 0 ? g_out : Mat<T>::Zero(net.sizes.back(), m);
    std::vector<Mat<T>> gad1(static_cast<size_t>(nd1));
    std::vector<Mat<T>> gad2(static_cast<size_t>(nd2));
    for (int k = 0; k < nd1; ++k) {
        const Mat<T>* g = nonempty<T>(g_d1, static_cast<size_t>(k));
        gad1[static_cast<size_t>(k)] =
            g != nullptr ? *g : Mat<T>::Zero(net.sizes.back(), m);
    }
    for (int p = 0; p < nd2; ++p) {
        const Mat<T>* g = nonempty<T>(g_d2, static_cast<size_t>(p));
        gad2[static_cast<size_t>(p)] =
            g != nullptr ? *g : Mat<T>::Zero(net.sizes.back(), m);
    }

    for (int l = depth; l >= 1; --l) {
        const auto& w = net.w[static_cast<size_t>(l - 1)];
        const bool hidden = l < depth;
        const auto& a = tape.a[static_cast<size_t>(l)];
        const auto& zd1 = tape.zd1[static_cast<size_t>(l)];
        const auto& zd2 = tape.zd2[static_cast<size_t>(l)];

        Mat<T> gz;
        std::vector<Mat<T>> gzd1(static_cast<size_t>(nd1));
        std::vector<Mat<T>> gzd2(static_cast<size_t>(nd2));
        if (!hidden) {
            gz = std::move(ga);
            for (int k = 0; k < nd1; ++k) {
                gzd1[static_cast<size_t>(k)] = std::move(gad1[static_cast<size_t>(k)]);
            }
            for (int p = 0; p < nd2; ++p) {
                gzd2[static_cast<size_t>(p)] = std::move(gad2[static_cast<size_t>(p)]);
            }
        } else {
            const auto fp = (a.array() * (T(1) - a.array())).eval();
            const auto fpp = (fp * (T(1) - T(2) * a.array())).eval();
            // d/dz of f'' in terms of the activation value.
            const auto fppp =
                (fp * (T(1) - T(6) * a.array() + T(6) * a.array().square())).eval();

            auto gz_arr = (fp * ga.array()).eval();
            for (int k = 0; k < nd1; ++k) {
                gzd1[static_cast<size_t>(k)] =
                    (fp * gad1[static_cast<size_t>(k)].array()).matrix();
                gz_arr += fpp * zd1[static_cast<size_t>(k)].array() *
                          gad1[static_cast<size_t>(k)].array();
            }
            for (int p = 0; p < nd2; ++p) {
                const auto& [i, j] = batch.d2_pairs[static_cast<size_t>(p)];
                const auto& gpp = gad2[static_cast<size_t>(p)];
                gzd2[static_cast<size_t>(p)] = (fp * gpp.array()).matrix();
                gzd1[static_cast<size_t>(i)].array() +=
                    fpp * zd1[static_cast<size_t>(j)].array() * gpp.array();
                gzd1[static_cast<size_t>(j)].array() +=
                    fpp * zd1[static_cast<size_t>(i)].array() * gpp.array();
                gz_arr += (fppp * zd1[static_cast<size_t>(i)].array() *
                               zd1[static_cast<size_t>(j)].array() +
                           fpp * zd2[static_cast<size_t>(p)].array()) *
                          gpp.array();
            }
            gz = gz_arr.matrix();
        }

        auto& gw = grad.w[static_cast<size_t>(l - 1)];
        gw.noalias() = gz * tape.a[static_cast<size_t>(l - 1)].transpose();
        for (int k = 0; k < nd1; ++k) {
            const Mat<T>& prev = (l == 1) ? batch.d1[static_cast<size_t>(k)]
                                          : tape.ad1[static_cast<size_t>(l - 1)][static_cast<size_t>(k)];
            gw.noalias() += gzd1[static_cast<size_t>(k)] * prev.transpose();
        }
        for (int p = 0; p < nd2; ++p) {
            const Mat<T>* prev = (l == 1) ? nonempty<T>(batch.d2, static_cast<size_t>(p))
                                          : &tape.ad2[static_cast<size_t>(l - 1)][static_cast<size_t>(p)];
            if (prev != nullptr) {
                gw.noalias() += gzd2[static_cast<size_t>(p)] * prev->transpose();
            }
        }
        grad.b[static_cast<size_t>(l - 1)] = gz.rowwise().sum();

        if (l > 1) {
            ga.noalias() = w.transpose() * gz;
            for (int k = 0; k < nd1; ++k) {
                gad1[static_cast<size_t>(k)].noalias() =
                    w.transpose() * gzd1[static_cast<size_t>(k)];
            }
            for (int p = 0; p < nd2; ++p) {
                gad2[static_cast<size_t>(p)].noalias() =
                    w.transpose() * gzd2[static_cast<size_t>(p)];
            }
        }
    }
    return grad;
}

template <typename T>
Mat<T> input_jacobian(const NetworkT<T>& net, const Vec<T>& input) {
    if (input.size() != net.sizes[0]) throw ShapeError("input size does not match the first layer");
    const int depth = net.depth();
    std::vector<Vec<T>> acts(static_cast<size_t>(depth));
    Vec<T> a = input;
    for (int l = 0; l < depth; ++l) {
        Vec<T> z = net.w[static_cast<size_t>(l)] * a + net.b[static_cast<size_t>(l)];
        if (l + 1 < depth) {
            a = (T(1) / (T(1) + (-z.array()).exp())).matrix();
            acts[static_cast<size_t>(l)] = a;
        } else {
            a = std::move(z);
        }
    }
    const int nout = net.sizes.back();
    Mat<T> gz = Mat<T>::Identity(nout, nout);
    for (int l = depth - 1; l >= 1; --l) {
        Mat<T> ga = net.w[static_cast<size_t>(l)].transpose() * gz;
        const auto& al = acts[static_cast<size_t>(l - 1)];
        gz = (ga.array().colwise() * (al.array() * (T(1) - al.array()))).matrix();
    }
    return (net.w[0].transpose() * gz).transpose();
}

template <typename T>
Vec<T> input_gradient(const NetworkT<T>& net, const Vec<T>& input, int out_idx) {
    if (out_idx < 1 || out_idx > net.sizes.back()) {
        throw InvalidArgumentError("output index out of range");
    }
    return input_jacobian(net, input).row(out_idx - 1).transpose();
}

template <typename T>
AdamStateT<T> make_adam_state(const NetworkT<T>& net) {
    AdamStateT<T> s;
    for (int l = 0; l < net.depth(); ++l) {
        s.mw.push_back(Mat<T>::Zero(net.w[static_cast<size_t>(l)].rows(),
                                    net.w[static_cast<size_t>(l)].cols()));
        s.vw.push_back(Mat<T>::Zero(net.w[static_cast<size_t>(l)].rows(),
                                    net.w[static_cast<size_t>(l)].cols()));
        s.mb.push_back(Vec<T>::Zero(net.b[static_cast<size_t>(l)].size()));
        s.vb.push_back(Vec<T>::Zero(net.b[static_cast<size_t>(l)].size()));
    }
    return s;
}

template <typename T>
void adam_step(AdamStateT<T>& state, NetworkT<T>& net, const GradT<T>& grad, double lr) {
    if (state.mw.size() != net.w.size() || grad.w.size() != net.w.size()) {
        throw ShapeError("optimizer state does not match the network");
    }
    const T b1 = T(0.9), b2 = T(0.999), eps = T(1e-8);
    state.step += 1;
    const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(0.9, static_cast<double>(state.step))));
    const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(0.999, static_cast<double>(state.step))));
    const T rate = static_cast<T>(lr);
    for (size_t l = 0; l < net.w.size(); ++l) {
        state.mw[l] = b1 * state.mw[l] + (T(1) - b1) * grad.w[l];
        state.vw[l] = (b2 * state.vw[l].array() + (T(1) - b2) * grad.w[l].array().square()).matrix();
        net.w[l].array() -=
            rate * (state.mw[l].array() * c1) / ((state.vw[l].array() * c2).sqrt() + eps);
        state.mb[l] = b1 * state.mb[l] + (T(1) - b1) * grad.b[l];
        state.vb[l] = (b2 * state.vb[l].array() + (T(1) - b2) * grad.b[l].array().square()).matrix();
        net.b[l].array() -=
            rate * (state.mb[l].array() * c1) / ((state.vb[l].array() * c2).sqrt() + eps);
    }
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os.write("CNET", 4);
    write_u32(os, 1);
    write_u32(os, static_cast<std::uint32_t>(ck.sizes.size()));
    for (int s : ck.sizes) write_u32(os, static_cast<std::uint32_t>(s));
    const std::uint32_t has_adam = ck.adam.has_value() ? 1 : 0;
    write_u32(os, has_adam);
    for (size_t l = 0; l + 1 < ck.sizes.size(); ++l) {
        write_f64(os, ck.w[l].data(), ck.w[l].size());
        write_f64(os, ck.b[l].data(), ck.b[l].size());
    }
    if (ck.adam) {
        const auto& ad = *ck.adam;
        const std::uint64_t step = static_cast<std::uint64_t>(ad.step);
        os.write(reinterpret_cast<const char*>(&step), 8);
        for (size_t l = 0; l + 1 < ck.sizes.size(); ++l) {
            write_f64(os, ad.mw[l].data(), ad.mw[l].size());
            write_f64(os, ad.vw[l].data(), ad.vw[l].size());
            write_f64(os, ad.mb[l].data(), ad.mb[l].size());
            write_f64(os, ad.vb[l].data(), ad.vb[l].size());
        }
    }
    if (!os) throw IoError("short write on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    char magic[4] = {};
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "CNET", 4) != 0) {
        throw IoError("not a checkpoint file: " + path);
    }
    const std::uint32_t version = read_u32(is);
    if (version != 1) throw IoError("unsupported checkpoint version");
    const std::uint32_t n_sizes = read_u32(is);
    if (!is || n_sizes < 2 || n_sizes > 64) throw IoError("corrupt checkpoint header");
    Checkpoint ck;
    for (std::uint32_t i = 0; i < n_sizes; ++i) {
        const std::uint32_t s = read_u32(is);
        if (s < 1 || s > 1u << 24) throw IoError("corrupt layer size");
        ck.sizes.push_back(static_cast<int>(s));
    }
    const std::uint32_t has_adam = read_u32(is);
    for (size_t l = 0; l + 1 < ck.sizes.size(); ++l) {
        Eigen::MatrixXd w(ck.sizes[l + 1], ck.sizes[l]);
        read_f64(is, w.data(), w.size());
        Eigen::VectorXd b(ck.sizes[l + 1]);
        read_f64(is, b.data(), b.size());
        ck.w.push_back(std::move(w));
        ck.b.push_back(std::move(b));
    }
    if (has_adam == 1) {
        AdamStateT<double> ad;
        std::uint64_t step = 0;
        is.read(reinterpret_cast<char*>(&step), 8);
        ad.step = static_cast<long>(step);
        for (size_t l = 0; l + 1 < ck.sizes.size(); ++l) {
            Eigen::MatrixXd mw(ck.sizes[l + 1], ck.sizes[l]), vw(ck.sizes[l + 1], ck.sizes[l]);
            Eigen::VectorXd mb(ck.sizes[l + 1]), vb(ck.sizes[l + 1]);
            read_f64(is, mw.data(), mw.size());
            read_f64(is, vw.data(), vw.size());
            read_f64(is, mb.data(), mb.size());
            read_f64(is, vb.data(), vb.size());
            ad.mw.push_back(std::move(mw));
            ad.vw.push_back(std::move(vw));
            ad.mb.push_back(std::move(mb));
            ad.vb.push_back(std::move(vb));
        }
        ck.adam = std::move(ad);
    } else if (has_adam != 0) {
        throw IoError("corrupt checkpoint trailer");
    }
    if (!is) throw IoError("truncated checkpoint: " + path);
    return ck;
}

template <typename T>
Checkpoint to_checkpoint(const NetworkT<T>& net, const AdamStateT<T>* adam) {
    Checkpoint ck;
    ck.sizes = net.sizes;
    for (int l = 0; l < net.depth(); ++l) {
        ck.w.push_back(net.w[static_cast<size_t>(l)].template cast<double>());
        ck.b.push_back(net.b[static_cast<size_t>(l)].template cast<double>());
    }
    if (adam != nullptr) {
        AdamStateT<double> ad;
        ad.step = adam->step;
        for (size_t l = 0; l < adam->mw.size(); ++l) {
            ad.mw.push_back(adam->mw[l].template cast<double>());
            ad.vw.push_back(adam->vw[l].template cast<double>());
            ad.mb.push_back(adam->mb[l].template cast<double>());
            ad.vb.push_back(adam->vb[l].template cast<double>());
        }
        ck.adam = std::move(ad);
    }
    return ck;
}

template <typename T>
void from_checkpoint(const Checkpoint& ck, NetworkT<T>& net, AdamStateT<T>* adam) {
    net.sizes = ck.sizes;
    net.w.clear();
    net.b.clear();
    for (size_t l = 0; l + 1 < ck.sizes.size(); ++l) {
        net.w.push_back(ck.w[l].cast<T>());
        net.b.push_back(ck.b[l].cast<T>());
    }
    if (adam != nullptr) {
        *adam = make_adam_state(net);
        if (ck.adam) {
            adam->step = ck.adam->step;
            for (size_t l = 0; l < ck.adam->mw.size(); ++l) {
                adam->mw[l] = ck.adam->mw[l].cast<T>();
                adam->vw[l] = ck.adam->vw[l].cast<T>();
                adam->mb[l] = ck.adam->mb[l].cast<T>();
                adam->vb[l] = ck.adam->vb[l].cast<T>();
            }
        }
    }
}

#define CT_INSTANTIATE_NET(T)                                                                     \
    template struct NetworkT<T>;                                                                  \
    template NetworkT<T> init_network<T>(const std::vector<int>&, std::uint64_t);                 \
    template Mat<T> forward_values<T>(const NetworkT<T>&, const Mat<T>&);                         \
    template JetTapeT<T> forward_jet<T>(const NetworkT<T>&, const JetBatchT<T>&);                 \
    template GradT<T> backprop_jet<T>(const NetworkT<T>&, const JetBatchT<T>&,                    \
                                      const JetTapeT<T>&, const Mat<T>&,                          \
                                      const std::vector<Mat<T>>&, const std::vector<Mat<T>>&);    \
    template Mat<T> input_jacobian<T>(const NetworkT<T>&, const Vec<T>&);                         \
    template Vec<T> input_gradient<T>(const NetworkT<T>&, const Vec<T>&, int);                    \
    template AdamStateT<T> make_adam_state<T>(const NetworkT<T>&);                                \
    template void adam_step<T>(AdamStateT<T>&, NetworkT<T>&, const GradT<T>&, double);            \
    template Checkpoint to_checkpoint<T>(const NetworkT<T>&, const AdamStateT<T>*);               \
    template void from_checkpoint<T>(const Checkpoint&, NetworkT<T>&, AdamStateT<T>*)

CT_INSTANTIATE_NET(float);
CT_INSTANTIATE_NET(double);

template NetworkT<double> convert_network<float, double>(const NetworkT<float>&);
template NetworkT<float> convert_network<double, float>(const NetworkT<double>&);

#undef CT_INSTANTIATE_NET

}  // namespace ct
