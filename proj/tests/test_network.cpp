#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "network.hpp"
#include "render.hpp"
#include "rng.hpp"

using namespace ct;

namespace {

using Net = NetworkT<double>;
using Mat = Net::Mat;
using Vec = Net::Vec;

Mat random_mat(int r, int c, Rng& rng) {
    Mat m(r, c);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.gaussian();
    return m;
}

// Quadratic composite cost over all jet channels, used to exercise the
// backward pass: sum of squared deviations from fixed random targets with
// per-channel weights.
struct JetCost {
    Mat t0;
    std::vector<Mat> t1, t2;
    std::vector<double> w1, w2;

    double value(const JetTapeT<double>& tape) const {
        double e = (tape.out() - t0).squaredNorm();
        for (size_t k = 0; k < t1.size(); ++k) {
            e += w1[k] * (tape.out_d1(static_cast<int>(k)) - t1[k]).squaredNorm();
        }
        for (size_t p = 0; p < t2.size(); ++p) {
            e += w2[p] * (tape.out_d2(static_cast<int>(p)) - t2[p]).squaredNorm();
        }
        return e;
    }

    GradT<double> gradient(const Net& net, const JetBatchT<double>& batch,
                           const JetTapeT<double>& tape) const {
        Mat g0 = 2.0 * (tape.out() - t0);
        std::vector<Mat> g1, g2;
        for (size_t k = 0; k < t1.size(); ++k) {
            g1.push_back(2.0 * w1[k] * (tape.out_d1(static_cast<int>(k)) - t1[k]));
        }
        for (size_t p = 0; p < t2.size(); ++p) {
            g2.push_back(2.0 * w2[p] * (tape.out_d2(static_cast<int>(p)) - t2[p]));
        }
        return backprop_jet(net, batch, tape, g0, g1, g2);
    }
};

}  // namespace

TEST_CASE("init_network draws the documented ranges deterministically") {
    const std::vector<int> sizes = {1681, 64, 32, 9};
    const Net net = init_network<double>(sizes, 42);
    REQUIRE(net.depth() == 3);
    CHECK(net.param_count() == 1681 * 64 + 64 + 64 * 32 + 32 + 32 * 9 + 9);

    const double first_bound = 10.0 / 41.0;
    CHECK(net.w[0].cwiseAbs().maxCoeff() <= first_bound);
    CHECK(net.w[0].cwiseAbs().maxCoeff() > 0.98 * first_bound);
    CHECK(net.w[1].cwiseAbs().maxCoeff() <= 2.0 / 8.0);
    CHECK(net.w[1].cwiseAbs().maxCoeff() > 0.95 * 2.0 / 8.0);
    for (int l = 0; l < 3; ++l) CHECK(net.b[l].cwiseAbs().maxCoeff() <= 0.1);

    const Net again = init_network<double>(sizes, 42);
    const Net other = init_network<double>(sizes, 43);
    CHECK((net.w[0] - again.w[0]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((net.b[2] - again.b[2]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((net.w[0] - other.w[0]).cwiseAbs().maxCoeff() > 0.0);

    CHECK_THROWS_AS(init_network<double>({5}, 1), InvalidArgumentError);
    CHECK_THROWS_AS(init_network<double>({5, 0, 3}, 1), InvalidArgumentError);
}

TEST_CASE("single linear layer propagates values and derivatives exactly") {
    Rng rng(1);
    Net net;
    net.sizes = {5, 3};
    net.w.push_back(random_mat(3, 5, rng));
    net.b.push_back(random_mat(3, 1, rng));

    JetBatchT<double> batch;
    batch.values = random_mat(5, 4, rng);
    batch.d1.push_back(random_mat(5, 4, rng));
    const JetTapeT<double> tape = forward_jet(net, batch);
    CHECK((tape.out() - ((net.w[0] * batch.values).colwise() + net.b[0])).norm() == 0.0);
    CHECK((tape.out_d1(0) - net.w[0] * batch.d1[0]).norm() == 0.0);

    const Mat jac = input_jacobian(net, Vec(batch.values.col(0)));
    CHECK((jac - net.w[0]).norm() == 0.0);
    CHECK((input_gradient(net, Vec(batch.values.col(0)), 2) - net.w[0].row(1).transpose()).norm() ==
          0.0);
}

TEST_CASE("jet derivatives match finite differences of the plain forward pass") {
    Rng rng(2);
    const Net net = init_network<double>({25, 8, 8, 3}, 7);
    JetBatchT<double> batch;
    batch.values = random_mat(25, 3, rng);
    batch.d1.push_back(random_mat(25, 3, rng));
    batch.d1.push_back(random_mat(25, 3, rng));
    batch.d2_pairs = {{0, 0}, {0, 1}, {1, 1}};
    batch.d2.resize(3);
    const JetTapeT<double> tape = forward_jet(net, batch);

    const double h = 1e-4;
    for (int k = 0; k < 2; ++k) {
        const Mat np = forward_values(net, batch.values + h * batch.d1[static_cast<size_t>(k)]);
        const Mat nm = forward_values(net, batch.values - h * batch.d1[static_cast<size_t>(k)]);
        const Mat fd = (np - nm) / (2.0 * h);
        CHECK((fd - tape.out_d1(k)).cwiseAbs().maxCoeff() <=
              1e-6 * tape.out_d1(k).cwiseAbs().maxCoeff());
    }

    const double h2 = 1e-3;
    const Mat base = forward_values(net, batch.values);
    {
        const Mat np = forward_values(net, batch.values + h2 * batch.d1[0]);
        const Mat nm = forward_values(net, batch.values - h2 * batch.d1[0]);
        const Mat fd = (np - 2.0 * base + nm) / (h2 * h2);
        CHECK((fd - tape.out_d2(0)).cwiseAbs().maxCoeff() <=
              1e-4 * tape.out_d2(0).cwiseAbs().maxCoeff());
    }
    {
        const Mat pp = forward_values(net, batch.values + h2 * batch.d1[0] + h2 * batch.d1[1]);
        const Mat pm = forward_values(net, batch.values + h2 * batch.d1[0] - h2 * batch.d1[1]);
        const Mat mp = forward_values(net, batch.values - h2 * batch.d1[0] + h2 * batch.d1[1]);
        const Mat mm = forward_values(net, batch.values - h2 * batch.d1[0] - h2 * batch.d1[1]);
        const Mat fd = (pp - pm - mp + mm) / (4.0 * h2 * h2);
        CHECK((fd - tape.out_d2(1)).cwiseAbs().maxCoeff() <=
              1e-4 * tape.out_d2(1).cwiseAbs().maxCoeff());
    }
}

TEST_CASE("input-curvature seeds feed the second-order channel") {
    Rng rng(3);
    const Net net = init_network<double>({10, 6, 2}, 11);
    JetBatchT<double> batch;
    batch.values = random_mat(10, 2, rng);
    batch.d1.push_back(random_mat(10, 2, rng));
    batch.d2_pairs = {{0, 0}};
    batch.d2.push_back(random_mat(10, 2, rng));
    const JetTapeT<double> tape = forward_jet(net, batch);

    // Second derivative of t -> N(x + t D + t^2/2 E) at t = 0.
    const double h = 1e-3;
    const Mat xp = batch.values + h * batch.d1[0] + 0.5 * h * h * batch.d2[0];
    const Mat xm = batch.values - h * batch.d1[0] + 0.5 * h * h * batch.d2[0];
    const Mat fd =
        (forward_values(net, xp) - 2.0 * forward_values(net, batch.values) + forward_values(net, xm)) /
        (h * h);
    CHECK((fd - tape.out_d2(0)).cwiseAbs().maxCoeff() <=
          1e-4 * tape.out_d2(0).cwiseAbs().maxCoeff());
}

TEST_CASE("jet and reverse-mode derivatives agree and second order is symmetric") {
    Rng rng(4);
    const Net net = init_network<double>({25, 8, 8, 3}, 13);
    JetBatchT<double> batch;
    batch.values = random_mat(25, 1, rng);
    batch.d1.push_back(random_mat(25, 1, rng));
    batch.d1.push_back(random_mat(25, 1, rng));
    batch.d2_pairs = {{0, 1}, {1, 0}};
    batch.d2.resize(2);
    const JetTapeT<double> tape = forward_jet(net, batch);

    const Mat jac = input_jacobian(net, Vec(batch.values.col(0)));
    for (int out = 1; out <= 3; ++out) {
        const Vec grad = input_gradient(net, Vec(batch.values.col(0)), out);
        CHECK((grad.transpose() - jac.row(out - 1)).norm() == 0.0);
        for (int k = 0; k < 2; ++k) {
            const double via_grad = grad.dot(batch.d1[static_cast<size_t>(k)].col(0));
            CHECK(via_grad ==
                  doctest::Approx(tape.out_d1(k)(out - 1, 0)).epsilon(1e-10).scale(1.0));
        }
    }
    CHECK((tape.out_d2(0) - tape.out_d2(1)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK_THROWS_AS(input_gradient(net, Vec(batch.values.col(0)), 0), InvalidArgumentError);
}

TEST_CASE("backprop_jet matches finite differences over every parameter") {
    Rng rng(5);
    Net net = init_network<double>({25, 8, 8, 3}, 17);
    JetBatchT<double> batch;
    batch.values = random_mat(25, 3, rng);
    batch.d1.push_back(random_mat(25, 3, rng));
    batch.d1.push_back(random_mat(25, 3, rng));
    batch.d2_pairs = {{0, 0}, {0, 1}, {1, 1}};
    batch.d2.resize(3);
    batch.d2[1] = random_mat(25, 3, rng);

    JetCost cost;
    cost.t0 = random_mat(3, 3, rng);
    for (int k = 0; k < 2; ++k) {
        cost.t1.push_back(random_mat(3, 3, rng));
        cost.w1.push_back(0.5 + rng.uniform());
    }
    for (int p = 0; p < 3; ++p) {
        cost.t2.push_back(random_mat(3, 3, rng));
        cost.w2.push_back(0.5 + rng.uniform());
    }

    const GradT<double> grad = cost.gradient(net, batch, forward_jet(net, batch));

    const double h = 1e-5;
    double max_abs = 0.0;
    for (int l = 0; l < net.depth(); ++l) {
        max_abs = std::max(max_abs, grad.w[static_cast<size_t>(l)].cwiseAbs().maxCoeff());
        max_abs = std::max(max_abs, grad.b[static_cast<size_t>(l)].cwiseAbs().maxCoeff());
    }
    double worst = 0.0;
    auto probe = [&](double& param, double analytic) {
        const double save = param;
        param = save + h;
        const double ep = cost.value(forward_jet(net, batch));
        param = save - h;
        const double em = cost.value(forward_jet(net, batch));
        param = save;
        worst = std::max(worst, std::abs((ep - em) / (2.0 * h) - analytic));
    };
    for (int l = 0; l < net.depth(); ++l) {
        auto& w = net.w[static_cast<size_t>(l)];
        for (Eigen::Index k = 0; k < w.size(); ++k) {
            probe(w.data()[k], grad.w[static_cast<size_t>(l)].data()[k]);
        }
        auto& b = net.b[static_cast<size_t>(l)];
        for (Eigen::Index k = 0; k < b.size(); ++k) {
            probe(b[k], grad.b[static_cast<size_t>(l)][k]);
        }
    }
    MESSAGE("worst parameter-gradient deviation: ", worst, " (scale ", max_abs, ")");
    CHECK(worst <= 1e-8 * max_abs);
}

TEST_CASE("adam_step follows the standard update") {
    Net net;
    net.sizes = {1, 2};
    net.w.push_back(Mat::Zero(2, 1));
    net.b.push_back(Vec::Zero(2));
    AdamStateT<double> state = make_adam_state(net);

    GradT<double> zero;
    zero.w.push_back(Mat::Zero(2, 1));
    zero.b.push_back(Vec::Zero(2));
    adam_step(state, net, zero, 1e-3);
    CHECK(net.w[0].norm() == 0.0);
    CHECK(net.b[0].norm() == 0.0);

    GradT<double> g = zero;
    g.w[0](0, 0) = 0.3;
    g.w[0](1, 0) = -4.0;
    state = make_adam_state(net);
    adam_step(state, net, g, 1e-3);
    // After a first step with gradient g the bias-corrected update is
    // -lr * g / (|g| + eps'), i.e. minus the learning rate times sign(g).
    CHECK(net.w[0](0, 0) == doctest::Approx(-1e-3).epsilon(1e-6));
    CHECK(net.w[0](1, 0) == doctest::Approx(1e-3).epsilon(1e-6));

    Net quad;
    quad.sizes = {1, 2};
    quad.w.push_back(Mat::Zero(2, 1));
    quad.b.push_back(Vec::Zero(2));
    AdamStateT<double> qs = make_adam_state(quad);
    const double a0 = 1.7, a1 = -0.4;
    for (int t = 0; t < 5000; ++t) {
        GradT<double> gq;
        gq.w.push_back(Mat::Zero(2, 1));
        gq.b.push_back(Vec::Zero(2));
        gq.w[0](0, 0) = quad.w[0](0, 0) - a0;
        gq.w[0](1, 0) = 4.0 * (quad.w[0](1, 0) - a1);
        adam_step(qs, quad, gq, 1e-2);
    }
    CHECK(std::abs(quad.w[0](0, 0) - a0) <= 1e-6);
    CHECK(std::abs(quad.w[0](1, 0) - a1) <= 1e-6);
}

TEST_CASE("training a small regression strictly reduces the value cost") {
    Rng rng(6);
    Net net = init_network<double>({25, 16, 3}, 23);
    const int m = 100;
    Mat x = random_mat(25, m, rng);
    Mat c(3, m);
    for (int s = 0; s < m; ++s) {
        c(0, s) = std::sin(x.col(s).head(5).sum());
        c(1, s) = x.col(s).squaredNorm() / 25.0 - 1.0;
        c(2, s) = x(0, s) * x(1, s);
    }
    AdamStateT<double> state = make_adam_state(net);
    const int nb = 10, bs = m / nb;
    double first = 0.0, last = 0.0;
    for (int epoch = 0; epoch < 50; ++epoch) {
        JetBatchT<double> full;
        full.values = x;
        const double e0 = (forward_jet(net, full).out() - c).squaredNorm() / m;
        if (epoch == 0) first = e0;
        last = e0;
        for (int bi = 0; bi < nb; ++bi) {
            JetBatchT<double> batch;
            batch.values = x.middleCols(bi * bs, bs);
            const JetTapeT<double> tape = forward_jet(net, batch);
            const Mat g = 2.0 / bs * (tape.out() - c.middleCols(bi * bs, bs));
            const GradT<double> grad = backprop_jet(net, batch, tape, g, {}, {});
            adam_step(state, net, grad, 1e-2);
        }
    }
    MESSAGE("E0 first ", first, " last ", last);
    CHECK(last * 10.0 <= first);
}

TEST_CASE("untrained network input gradients on a rendered image have order-one norm") {
    const Camera cam;
    auto pts = korobov_points(4, 6, 0.5);
    const Cube c = params_to_cube(sample_to_params(&pts[18]));
    const Image img = rasterize(cam, c, 0.03);
    const Net net = init_network<double>({1681, 64, 9}, 3);
    Vec x(1681);
    for (int k = 0; k < 1681; ++k) x[k] = img.p[static_cast<size_t>(k)];
    const double norm = input_gradient(net, x, 1).norm();
    MESSAGE("untrained gradient norm: ", norm);
    CHECK(norm > 1e-2);
    CHECK(norm < 1e2);
}

TEST_CASE("checkpoints round-trip parameters and optimizer state") {
    Rng rng(8);
    Net net = init_network<double>({25, 8, 3}, 29);
    AdamStateT<double> state = make_adam_state(net);
    JetBatchT<double> batch;
    batch.values = random_mat(25, 4, rng);
    const JetTapeT<double> tape = forward_jet(net, batch);
    const GradT<double> grad =
        backprop_jet(net, batch, tape, Mat::Ones(3, 4), {}, {});
    adam_step(state, net, grad, 1e-3);

    const std::string path = "ck_roundtrip.bin";
    save_checkpoint(path, to_checkpoint(net, &state));
    const Checkpoint ck = load_checkpoint(path);
    Net back;
    AdamStateT<double> back_state;
    from_checkpoint(ck, back, &back_state);
    REQUIRE(back.sizes == net.sizes);
    for (int l = 0; l < net.depth(); ++l) {
        CHECK((back.w[static_cast<size_t>(l)] - net.w[static_cast<size_t>(l)]).norm() == 0.0);
        CHECK((back.b[static_cast<size_t>(l)] - net.b[static_cast<size_t>(l)]).norm() == 0.0);
        CHECK((back_state.vw[static_cast<size_t>(l)] - state.vw[static_cast<size_t>(l)]).norm() ==
              0.0);
    }
    CHECK(back_state.step == state.step);

    // Float nets lose at most one rounding step through the 64-bit file.
    const NetworkT<float> fnet = convert_network<double, float>(net);
    save_checkpoint(path, to_checkpoint(fnet));
    NetworkT<float> fback;
    from_checkpoint<float>(load_checkpoint(path), fback, nullptr);
    CHECK((fback.w[0] - fnet.w[0]).norm() == 0.0);

    std::FILE* f = std::fopen("ck_bad.bin", "wb");
    std::fputs("NOTACNET", f);
    std::fclose(f);
    CHECK_THROWS_AS(load_checkpoint("ck_bad.bin"), IoError);
    CHECK_THROWS_AS(load_checkpoint("ck_missing.bin"), IoError);
    std::remove(path.c_str());
    std::remove("ck_bad.bin");
}
