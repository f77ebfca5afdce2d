#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

#include "confshare/lowrank.hpp"
#include "confshare/sharing.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace confshare;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

Tensor dense_product(const Tensor& u, const Tensor& v) {
    Tensor w({u.rows(), v.rows()}, 0.0);
    for (int64_t i = 0; i < u.rows(); ++i)
        for (int64_t j = 0; j < v.rows(); ++j)
            for (int64_t r = 0; r < u.cols(); ++r) w.at(i, j) += u.at(i, r) * v.at(j, r);
    return w;
}

double frobenius(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

Eigen::MatrixXd to_eigen(const Tensor& t) {
    Eigen::MatrixXd m(t.rows(), t.cols());
    for (int64_t i = 0; i < t.rows(); ++i)
        for (int64_t j = 0; j < t.cols(); ++j) m(i, j) = t.at(i, j);
    return m;
}

double column_orthonormality_error(const Tensor& q) {
    double worst = 0.0;
    for (int64_t a = 0; a < q.cols(); ++a)
        for (int64_t b = 0; b < q.cols(); ++b) {
            double dot = 0.0;
            for (int64_t i = 0; i < q.rows(); ++i) dot += q.at(i, a) * q.at(i, b);
            worst = std::max(worst, std::abs(dot - (a == b ? 1.0 : 0.0)));
        }
    return worst;
}

Tensor identity(int64_t n) {
    Tensor t({n, n}, 0.0);
    for (int64_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

}  // namespace

TEST_CASE("lowrank_forward examples") {
    Rng rng(3);
    SUBCASE("zero input yields the bias") {
        Tape tape;
        const Tensor b = random_tensor({5}, rng);
        LowRankLinearParams p{tape.leaf(random_tensor({4, 2}, rng), true), tape.leaf(random_tensor({5, 2}, rng), true),
                              tape.leaf(b, true)};
        Var y = lowrank_forward(tape.constant(Tensor({3, 4}, 0.0)), p);
        for (int64_t t = 0; t < 3; ++t)
            for (int64_t j = 0; j < 5; ++j) CHECK(y.value().at(t, j) == b[j]);
    }
    SUBCASE("full rank with V = I equals the dense layer") {
        Tape tape;
        const Tensor m = random_tensor({4, 4}, rng), b = random_tensor({4}, rng), x = random_tensor({3, 4}, rng);
        LowRankLinearParams p{tape.leaf(m, true), tape.leaf(identity(4), true), tape.leaf(b, true)};
        Var y = lowrank_forward(tape.constant(x), p);
        Var dense = add_bias(matmul(tape.constant(x), tape.constant(m)), tape.constant(b));
        CHECK(max_abs_diff(y.value(), dense.value()) <= 1e-12);
    }
    SUBCASE("matches the dense UVᵀ oracle") {
        Tape tape;
        const Tensor u = random_tensor({12, 3}, rng), v = random_tensor({7, 3}, rng), b = random_tensor({7}, rng);
        const Tensor x = random_tensor({5, 12}, rng);
        Var y = lowrank_forward(tape.constant(x), {tape.leaf(u, true), tape.leaf(v, true), tape.leaf(b, true)});
        const Tensor w = dense_product(u, v);
        double worst = 0.0;
        for (int64_t t = 0; t < 5; ++t)
            for (int64_t j = 0; j < 7; ++j) {
                double acc = b[j];
                for (int64_t i = 0; i < 12; ++i) acc += x.at(t, i) * w.at(i, j);
                worst = std::max(worst, std::abs(acc - y.value().at(t, j)));
            }
        CHECK(worst <= 1e-12);
    }
}

TEST_CASE("lowrank_forward never materializes the m×n product") {
    Rng rng(4);
    const int64_t m = 64, n = 64, k = 2, frames = 3;
    Tape tape;
    Var x = tape.constant(random_tensor({frames, m}, rng));
    LowRankLinearParams p{tape.leaf(random_tensor({m, k}, rng), true), tape.leaf(random_tensor({n, k}, rng), true),
                          tape.leaf(random_tensor({n}, rng), true)};
    const int64_t before = tape.elements_recorded();
    Var y = lowrank_forward(x, p);
    CHECK(y.shape() == Shape{frames, n});
    CHECK(tape.elements_recorded() - before == frames * k + 2 * frames * n);
    CHECK(tape.largest_node() < m * n);
}

TEST_CASE("lowrank_forward gradients") {
    Rng rng(5);
    const std::vector<Tensor> inputs = {random_tensor({4, 6}, rng), random_tensor({6, 2}, rng),
                                        random_tensor({5, 2}, rng), random_tensor({5}, rng)};
    const double err = testutil::op_gradcheck(
        [](std::vector<Var>& in) { return lowrank_forward(in[0], {in[1], in[2], in[3]}); }, inputs, 9);
    CHECK(err <= 1e-6);
}

TEST_CASE("lowrank shape checks") {
    CHECK_THROWS_AS(check_lowrank_shapes(Tensor({4, 2}), Tensor({5, 3}), Tensor({5})), ShapeError);
    CHECK_THROWS_AS(check_lowrank_shapes(Tensor({4, 5}), Tensor({5, 5}), Tensor({5})), ShapeError);
    CHECK_THROWS_AS(check_lowrank_shapes(Tensor({4, 2}), Tensor({5, 2}), Tensor({4})), ShapeError);
    CHECK_NOTHROW(check_lowrank_shapes(Tensor({4, 2}), Tensor({5, 2}), Tensor({5})));
}

TEST_CASE("parameter counts") {
    CHECK(lowrank_param_count(100, 100, 10, true) == 2100);
    CHECK(dense_param_count(100, 100, true) == 10100);
    CHECK(lowrank_param_count(144, 576, 50, false) == 36000);
    CHECK(lowrank_param_count(144, 576, 50, true) == 36000 + 576);
    CHECK(dense_param_count(144, 576, true) == 83520);

    SUBCASE("a non-reducing rank is rejected") {
        CHECK(lowrank_param_count(100, 100, 100, false) >= dense_param_count(100, 100, false));
        CHECK_FALSE(lowrank_reduces(100, 100, 100));
        CHECK_THROWS_AS(check_factor_rank(100, 100, 100), std::invalid_argument);
        CHECK_THROWS_AS(check_factor_rank(100, 100, 0), std::invalid_argument);
        CHECK_THROWS_AS(check_factor_rank(10, 20, 11), std::invalid_argument);
        CHECK_NOTHROW(check_factor_rank(100, 100, 49));
        CHECK_THROWS_AS(check_factor_rank(100, 100, 50), std::invalid_argument);
    }
    SUBCASE("binding refuses a rank that does not shrink the linears") {
        ModelConfig c;
        c.d = 8;
        c.heads = 2;
        c.ff_expansion = 2.0;
        c.kernel = 3;
        c.input_dim = 4;
        c.num_classes = 3;
        c.t_max = 16;
        SharingPlan plan = repeat_plan(1, 1);
        plan.lowrank = LowRankSpec{8};
        CHECK_THROWS_AS(bind_parameters(c, plan, 1), std::invalid_argument);
        plan.lowrank = LowRankSpec{2};
        CHECK_NOTHROW(bind_parameters(c, plan, 1));
    }
}

TEST_CASE("svd_truncate examples") {
    SUBCASE("rank-one matrix is recovered exactly") {
        const Tensor a({3, 1}, {1.0, 2.0, 2.0}), b({4, 1}, {1.0, 0.0, -1.0, 2.0});
        const Tensor m = dense_product(a, b);
        const SvdResult r = svd_truncate(m, 1);
        CHECK(r.sigma[0] == doctest::Approx(3.0 * std::sqrt(6.0)).epsilon(1e-12));
        CHECK(max_abs_diff(svd_reconstruct(r), m) <= 1e-12);
    }
    SUBCASE("diagonal input") {
        const Tensor m = Tensor::matrix({{2.0, 0.0, 0.0}, {0.0, 3.0, 0.0}, {0.0, 0.0, 1.0}});
        const SvdResult r = svd_truncate(m, 3);
        CHECK(r.sigma[0] == doctest::Approx(3.0));
        CHECK(r.sigma[1] == doctest::Approx(2.0));
        CHECK(r.sigma[2] == doctest::Approx(1.0));
        const SvdResult r2 = svd_truncate(m, 2);
        const Tensor rec = svd_reconstruct(r2);
        CHECK(rec.at(2, 2) == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(frobenius(rec, m) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("rejects bad ranks and extents") {
        CHECK_THROWS_AS(svd_truncate(Tensor({3, 2}, 1.0), 3), std::invalid_argument);
        CHECK_THROWS_AS(svd_truncate(Tensor({3, 2}, 1.0), 0), std::invalid_argument);
        CHECK_THROWS_AS(svd_truncate(Tensor({kSvdMaxExtent + 1, 2}, 1.0), 1), ShapeError);
    }
}

TEST_CASE("svd_truncate agrees with an eigen-decomposition oracle") {
    Rng rng(11);
    for (const auto& [m, n] : std::vector<std::pair<int64_t, int64_t>>{{8, 5}, {5, 8}, {12, 12}}) {
        const Tensor a = random_tensor({m, n}, rng);
        const int64_t full = std::min(m, n);
        const SvdResult r = svd_truncate(a, full);

        const Eigen::MatrixXd e = to_eigen(a);
        const Eigen::MatrixXd gram = m >= n ? Eigen::MatrixXd(e.transpose() * e) : Eigen::MatrixXd(e * e.transpose());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
        std::vector<double> expected;
        for (int64_t i = 0; i < full; ++i) expected.push_back(std::sqrt(std::max(0.0, solver.eigenvalues()(i))));
        std::sort(expected.rbegin(), expected.rend());

        for (int64_t i = 0; i < full; ++i) CHECK(r.sigma[i] == doctest::Approx(expected[static_cast<size_t>(i)]).epsilon(1e-9));
        for (int64_t i = 0; i + 1 < full; ++i) CHECK(r.sigma[i] >= r.sigma[i + 1]);
        CHECK(max_abs_diff(svd_reconstruct(r), a) <= 1e-10);
        CHECK(column_orthonormality_error(r.u) <= 1e-8);
        CHECK(column_orthonormality_error(r.v) <= 1e-8);

        // Eckart–Young: the truncation error is the tail of the spectrum.
        for (int64_t k = 1; k < full; ++k) {
            double tail = 0.0;
            for (int64_t i = k; i < full; ++i) tail += expected[static_cast<size_t>(i)] * expected[static_cast<size_t>(i)];
            CHECK(frobenius(svd_reconstruct(svd_truncate(a, k)), a) == doctest::Approx(std::sqrt(tail)).epsilon(1e-8));
        }
    }
}

TEST_CASE("truncation error is non-increasing in k") {
    Rng rng(12);
    const Tensor a = random_tensor({9, 7}, rng);
    double prev = INFINITY;
    for (int64_t k = 1; k <= 7; ++k) {
        const double err = frobenius(svd_reconstruct(svd_truncate(a, k)), a);
        CHECK(err <= prev + 1e-12);
        prev = err;
    }
    CHECK(prev <= 1e-10);
}

TEST_CASE("no random rank-k factorization beats the truncated SVD") {
    Rng rng(13);
    const Tensor a = random_tensor({6, 6}, rng);
    const int64_t k = 2;
    const double best = frobenius(svd_reconstruct(svd_truncate(a, k)), a);
    for (int trial = 0; trial < 1000; ++trial) {
        const Tensor u = random_tensor({6, k}, rng), v = random_tensor({6, k}, rng);
        CHECK(frobenius(dense_product(u, v), a) >= best - 1e-12);
    }
}

TEST_CASE("fold_sigma") {
    Rng rng(14);
    SUBCASE("identity") {
        const SvdResult r = svd_truncate(identity(3), 3);
        const auto [u, v] = fold_sigma(r);
        CHECK(max_abs_diff(dense_product(u, v), identity(3)) <= 1e-12);
    }
    SUBCASE("rank one splits the singular value evenly") {
        const Tensor m = dense_product(Tensor({2, 1}, {3.0, 4.0}), Tensor({2, 1}, {0.0, 2.0}));
        const auto [u, v] = fold_sigma(svd_truncate(m, 1));
        const double nu = std::hypot(u[0], u[1]), nv = std::hypot(v[0], v[1]);
        CHECK(nu == doctest::Approx(std::sqrt(10.0)));
        CHECK(nv == doctest::Approx(std::sqrt(10.0)));
        CHECK(max_abs_diff(dense_product(u, v), m) <= 1e-12);
    }
    SUBCASE("folded factors reproduce the truncation") {
        const Tensor m = random_tensor({6, 4}, rng);
        const SvdResult r = svd_truncate(m, 2);
        const auto [u, v] = fold_sigma(r);
        CHECK(u.shape() == Shape{6, 2});
        CHECK(v.shape() == Shape{4, 2});
        CHECK(max_abs_diff(dense_product(u, v), svd_reconstruct(r)) <= 1e-12);
    }
}
