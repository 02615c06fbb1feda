#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "geometry.hpp"
#include "rng.hpp"

using namespace ct;

namespace {

Vec9 fd_first(const Cube& c, int i, double h) {
    LocalCoords p = LocalCoords::Zero();
    LocalCoords m = LocalCoords::Zero();
    p[i - 1] = h;
    m[i - 1] = -h;
    return (apply_local_transform(c, p).target9() - apply_local_transform(c, m).target9()) / (2.0 * h);
}

Vec9 fd_second(const Cube& c, int i, int j, double h) {
    auto t9 = [&](double a, double b) {
        LocalCoords nu = LocalCoords::Zero();
        nu[i - 1] += a;
        nu[j - 1] += b;
        return apply_local_transform(c, nu).target9();
    };
    if (i == j) {
        LocalCoords nu = LocalCoords::Zero();
        return (t9(h, 0.0) - 2.0 * apply_local_transform(c, nu).target9() + t9(-h, 0.0)) / (h * h);
    }
    return (t9(h, h) - t9(h, -h) - t9(-h, h) + t9(-h, -h)) / (4.0 * h * h);
}

Cube sample_cube(int n) {
    auto pts = korobov_points(n + 1, 6, 0.5);
    return params_to_cube(sample_to_params(&pts[static_cast<size_t>(n) * 6]));
}

}  // namespace

TEST_CASE("korobov first point matches the golden-ratio recurrence") {
    auto pts = korobov_points(1, 1, 0.5);
    const double golden = (1.0 + std::sqrt(5.0)) / 2.0;
    const double expected = 0.5 + 1.0 / golden - 1.0;
    CHECK(pts.size() == 1);
    CHECK(pts[0] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("korobov points stay in the unit cube") {
    auto pts = korobov_points(5000, 6, 0.5);
    for (double x : pts) {
        CHECK(x >= 0.0);
        CHECK(x < 1.0);
    }
}

TEST_CASE("korobov beats pseudo-random sampling on box discrepancy") {
    const long long n = 97020;
    const int dim = 6;
    auto kor = korobov_points(n, dim, 0.5);
    std::vector<double> rnd(kor.size());
    Rng rng(1234);
    for (double& x : rnd) x = rng.uniform();

    Rng boxes(99);
    double kor_err = 0.0;
    double rnd_err = 0.0;
    const int trials = 100;
    for (int b = 0; b < trials; ++b) {
        double hi[6];
        double vol = 1.0;
        for (int i = 0; i < dim; ++i) {
            hi[i] = boxes.uniform(0.2, 1.0);
            vol *= hi[i];
        }
        auto frac_inside = [&](const std::vector<double>& pts) {
            long long cnt = 0;
            for (long long s = 0; s < n; ++s) {
                bool inside = true;
                for (int i = 0; i < dim; ++i) {
                    if (pts[static_cast<size_t>(s) * dim + i] >= hi[i]) {
                        inside = false;
                        break;
                    }
                }
                cnt += inside;
            }
            return static_cast<double>(cnt) / static_cast<double>(n);
        };
        kor_err += std::abs(frac_inside(kor) - vol);
        rnd_err += std::abs(frac_inside(rnd) - vol);
    }
    CHECK(kor_err / trials < rnd_err / trials);
}

TEST_CASE("canonical cube has the documented first vertex and edge lengths") {
    const Cube c = canonical_cube();
    CHECK(c.v[0].x() == doctest::Approx(0.4 * (-1.0 / std::sqrt(6.0))).epsilon(1e-14));
    CHECK(c.v[0].y() == doctest::Approx(0.4 * (-1.0 / std::sqrt(2.0))).epsilon(1e-14));
    CHECK(c.v[0].z() == doctest::Approx(0.4 * (-1.0 / (2.0 * std::sqrt(3.0)))).epsilon(1e-14));
    CHECK(c.center().norm() < 1e-15);

    const int edges[12][2] = {{3, 0}, {3, 1}, {3, 2}, {0, 4}, {0, 5}, {1, 4},
                              {1, 6}, {2, 5}, {2, 6}, {4, 7}, {5, 7}, {6, 7}};
    for (auto& e : edges) {
        CHECK((c.v[e[0]] - c.v[e[1]]).norm() == doctest::Approx(0.4).epsilon(1e-12));
    }
}

TEST_CASE("params_to_cube applies a rigid motion") {
    PoseParams p;
    p.d = Vec3(0.1, 0.0, 0.0);
    const Cube c0 = canonical_cube();
    const Cube c = params_to_cube(p);
    for (int k = 0; k < 8; ++k) {
        CHECK((c.v[k] - (c0.v[k] + p.d)).norm() < 1e-15);
    }

    auto pts = korobov_points(64, 6, 0.5);
    for (int s = 0; s < 64; ++s) {
        const Cube cs = params_to_cube(sample_to_params(&pts[static_cast<size_t>(s) * 6]));
        CHECK((cs.v[3] - (cs.v[0] + cs.v[1] + cs.v[2] - 2.0 * cs.center())).norm() < 1e-12);
        for (int k = 0; k < 3; ++k) {
            CHECK((cs.v[k] - cs.v[3]).norm() == doctest::Approx(0.4).epsilon(1e-12));
        }
    }
}

TEST_CASE("reconstruct_full_cube reproduces sampled cubes") {
    for (int s = 0; s < 200; ++s) {
        const Cube c = sample_cube(s);
        const Cube r = reconstruct_full_cube(c.target9());
        for (int k = 0; k < 8; ++k) {
            CHECK((r.v[k] - c.v[k]).norm() < 1e-12);
        }
    }
}

TEST_CASE("reconstruct_full_cube is translation-equivariant") {
    const Cube c = canonical_cube();
    const Vec3 t(0.3, -0.2, 0.07);
    Vec9 shifted = c.target9();
    for (int i = 0; i < 3; ++i) shifted.segment<3>(3 * i) += t;
    const Cube r = reconstruct_full_cube(shifted);
    for (int k = 0; k < 8; ++k) {
        CHECK((r.v[k] - (c.v[k] + t)).norm() < 1e-12);
    }
}

TEST_CASE("reconstruct_full_cube rejects degenerate input") {
    Vec9 bad;
    bad << 0, 0, 0, 0.1, 0, 0, 0.2, 0, 0;
    CHECK_THROWS_AS(reconstruct_full_cube(bad), GeometryError);
}

TEST_CASE("apply_local_transform identity is bit-exact") {
    const Cube c = sample_cube(7);
    const Cube r = apply_local_transform(c, LocalCoords::Zero());
    for (int k = 0; k < 8; ++k) {
        CHECK(r.v[k].x() == c.v[k].x());
        CHECK(r.v[k].y() == c.v[k].y());
        CHECK(r.v[k].z() == c.v[k].z());
    }
}

TEST_CASE("apply_local_transform pure translation") {
    const Cube c = sample_cube(3);
    LocalCoords nu = LocalCoords::Zero();
    nu[3] = 0.2;
    nu[4] = -0.1;
    nu[5] = 0.05;
    const Cube r = apply_local_transform(c, nu);
    for (int k = 0; k < 8; ++k) {
        CHECK((r.v[k] - (c.v[k] + Vec3(0.2, -0.1, 0.05))).norm() < 1e-15);
    }
}

TEST_CASE("apply_local_transform quarter turn about x maps the vertex set to itself") {
    const double a = 0.4;
    Cube canon;
    canon.v[3] = 0.5 * a * Vec3(-1, -1, -1);
    canon.v[0] = 0.5 * a * Vec3(1, -1, -1);
    canon.v[1] = 0.5 * a * Vec3(-1, 1, -1);
    canon.v[2] = 0.5 * a * Vec3(-1, -1, 1);
    canon.v[4] = canon.v[0] + canon.v[1] - canon.v[3];
    canon.v[5] = canon.v[0] + canon.v[2] - canon.v[3];
    canon.v[6] = canon.v[1] + canon.v[2] - canon.v[3];
    canon.v[7] = canon.v[0] + canon.v[1] + canon.v[2] - 2.0 * canon.v[3];

    LocalCoords nu = LocalCoords::Zero();
    nu[0] = std::numbers::pi / 2.0;
    const Cube r = apply_local_transform(canon, nu);
    for (int i = 0; i < 8; ++i) {
        double best = 1e9;
        for (int j = 0; j < 8; ++j) best = std::min(best, (r.v[i] - canon.v[j]).norm());
        CHECK(best < 1e-14);
    }
}

TEST_CASE("cube_first_derivative matches central differences") {
    for (int s : {0, 11, 40}) {
        const Cube c = sample_cube(s);
        for (int i = 1; i <= 6; ++i) {
            const Vec9 an = cube_first_derivative(c, i);
            const Vec9 fd = fd_first(c, i, 1e-6);
            CHECK((an - fd).norm() <= 1e-8 * std::max(1.0, an.norm()));
        }
    }
}

TEST_CASE("cube_first_derivative translation pattern") {
    const Cube c = sample_cube(5);
    const Vec9 dx = cube_first_derivative(c, 4);
    Vec9 expected;
    expected << 1, 0, 0, 1, 0, 0, 1, 0, 0;
    CHECK((dx - expected).norm() == 0.0);
}

TEST_CASE("rotation derivatives keep the center fixed") {
    const Cube c = sample_cube(9);
    for (int i = 1; i <= 3; ++i) {
        const Mat3 j = so3_generator(i);
        Vec3 dc = Vec3::Zero();
        for (int k = 0; k < 8; ++k) dc += j * (c.v[k] - c.center());
        CHECK(dc.norm() < 1e-13);
    }
}

TEST_CASE("cube_second_derivative zero and error cases") {
    const Cube c = sample_cube(2);
    CHECK(cube_second_derivative(c, 4, 5).norm() == 0.0);
    CHECK(cube_second_derivative(c, 1, 4).norm() == 0.0);
    CHECK(cube_second_derivative(c, 6, 6).norm() == 0.0);
    CHECK_THROWS_AS(cube_second_derivative(c, 2, 1), OrderError);
}

TEST_CASE("cube_second_derivative x-x at an axis-aligned cube") {
    Cube canon;
    const double a = 0.4;
    canon.v[3] = 0.5 * a * Vec3(-1, -1, -1) + Vec3(0.05, 0.0, 0.0);
    canon.v[0] = canon.v[3] + a * Vec3(1, 0, 0);
    canon.v[1] = canon.v[3] + a * Vec3(0, 1, 0);
    canon.v[2] = canon.v[3] + a * Vec3(0, 0, 1);
    canon.v[4] = canon.v[0] + canon.v[1] - canon.v[3];
    canon.v[5] = canon.v[0] + canon.v[2] - canon.v[3];
    canon.v[6] = canon.v[1] + canon.v[2] - canon.v[3];
    canon.v[7] = canon.v[0] + canon.v[1] + canon.v[2] - 2.0 * canon.v[3];

    const Vec9 d2 = cube_second_derivative(canon, 1, 1);
    const Vec3 d = canon.center();
    for (int k = 0; k < 3; ++k) {
        const Vec3 rel = canon.v[k] - d;
        CHECK(d2[3 * k + 0] == doctest::Approx(0.0).epsilon(1e-14));
        CHECK(d2[3 * k + 1] == doctest::Approx(-rel.y()).epsilon(1e-12));
        CHECK(d2[3 * k + 2] == doctest::Approx(-rel.z()).epsilon(1e-12));
    }
}

TEST_CASE("cube_second_derivative matches finite differences") {
    for (int s : {1, 23}) {
        const Cube c = sample_cube(s);
        for (int i = 1; i <= 3; ++i) {
            for (int j = i; j <= 3; ++j) {
                const Vec9 an = cube_second_derivative(c, i, j);
                const Vec9 fd = fd_second(c, i, j, 1e-4);
                CHECK((an - fd).norm() <= 1e-6 * std::max(1.0, an.norm()));
            }
        }
    }
}

TEST_CASE("local transform is a second-order group action") {
    const Cube c = sample_cube(17);
    const int cases[5][2] = {{1, 2}, {2, 3}, {1, 1}, {1, 4}, {4, 5}};
    for (auto& ij : cases) {
        const int i = ij[0];
        const int j = ij[1];
        const Vec9 base = c.target9();
        const Vec9 d1 = cube_first_derivative(c, i) + cube_first_derivative(c, j);
        const Vec9 d2 = cube_second_derivative(c, std::min(i, j), std::max(i, j));
        const Vec9 dii = cube_second_derivative(c, i, i);
        const Vec9 djj = cube_second_derivative(c, j, j);
        auto residual = [&](double eps) {
            LocalCoords inner = LocalCoords::Zero();
            inner[i - 1] = eps;
            LocalCoords outer = LocalCoords::Zero();
            outer[j - 1] = eps;
            const Vec9 f = apply_local_transform(apply_local_transform(c, inner), outer).target9();
            Vec9 model;
            if (i == j) {
                model = base + eps * d1 + 2.0 * eps * eps * dii;
            } else {
                model = base + eps * d1 + 0.5 * eps * eps * (dii + djj) + eps * eps * d2;
            }
            return (f - model).norm();
        };
        const double r1 = residual(1e-2);
        const double r2 = residual(5e-3);
        if (r1 > 1e-12) {
            CHECK(r1 / r2 > 5.0);
            CHECK(r1 / r2 < 11.0);
        }
    }
}

TEST_CASE("all-vertex velocity matrix has rank 6") {
    for (int s : {0, 31, 77}) {
        const Cube c = sample_cube(s);
        Eigen::MatrixXd m(24, 6);
        const Vec3 d = c.center();
        for (int i = 1; i <= 6; ++i) {
            for (int k = 0; k < 8; ++k) {
                Vec3 vel;
                if (i <= 3) {
                    vel = so3_generator(i) * (c.v[k] - d);
                } else {
                    vel = Vec3::Zero();
                    vel[i - 4] = 1.0;
                }
                m.block<3, 1>(3 * k, i - 1) = vel;
            }
        }
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
        CHECK(svd.singularValues()(5) > 1e-8);
    }
}

TEST_CASE("pair_index enumerates the 21 ordered pairs lexicographically") {
    int expected = 0;
    for (int i = 1; i <= 6; ++i) {
        for (int j = i; j <= 6; ++j) {
            CHECK(pair_index(i, j) == expected);
            ++expected;
        }
    }
    CHECK(expected == 21);
}
