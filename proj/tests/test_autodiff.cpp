#include <catch2/catch_amalgamated.hpp>

#include "seafield/autodiff.hpp"
#include "seafield/nn.hpp"
#include "support/oracles.hpp"
#include "support/test_utils.hpp"

using namespace seafield;
using ad::Var;
using testutil::random_tensor;

namespace {

// Reduce an arbitrary tensor to a scalar with fixed pseudo-random weights
// so gradients are not uniform.
ad::Var weighted_sum(const ad::Var& x, std::uint64_t seed = 77) {
    Tensor w = random_tensor(x->value.shape(), seed, 0.2, 1.7);
    return ad::sum_all(ad::mul(x, ad::constant(std::move(w))));
}

// Build parameters from init tensors, run the graph builder, and compare
// analytic gradients of every parameter scalar against central
// differences.
void check_grads(const std::function<ad::Var(std::vector<ad::Var>&)>& build,
                 std::vector<Tensor> inits, double tol = 1e-6) {
    std::vector<ad::Var> params;
    for (auto& t : inits) params.push_back(ad::parameter(std::move(t)));

    ad::zero_grad(params);
    ad::Var loss = build(params);
    REQUIRE(loss->value.size() == 1);
    ad::backward(loss);

    std::vector<double*> slots;
    std::vector<double> analytic;
    for (auto& p : params)
        for (std::int64_t i = 0; i < p->value.size(); ++i) {
            slots.push_back(&p->value[i]);
            analytic.push_back(p->grad[i]);
        }
    auto eval = [&]() { return build(params)->value[0]; };
    auto report = oracles::fd_gradcheck(eval, slots, analytic, 1e-5);
    INFO("worst index " << report.worst_index);
    REQUIRE(report.max_rel_err < tol);
}

} // namespace

TEST_CASE("elementwise op gradients") {
    check_grads(
        [](std::vector<Var>& p) {
            auto a = ad::sigmoid(p[0]);
            auto b = ad::tanh_op(p[1]);
            auto c = ad::sin_op(ad::mul(a, b));
            return weighted_sum(ad::add(c, ad::mul_scalar(ad::sub(a, b), 0.3)));
        },
        {random_tensor({3, 4}, 1), random_tensor({3, 4}, 2)});
}

TEST_CASE("relu and abs gradients away from the kink") {
    check_grads(
        [](std::vector<Var>& p) {
            return weighted_sum(ad::add(ad::relu(p[0]), ad::abs_op(p[1])));
        },
        {random_tensor({4, 4}, 3, 0.2, 1.0), random_tensor({4, 4}, 4, -1.0, -0.2)});
}

TEST_CASE("relu zeroes negative inputs") {
    auto x = ad::constant(Tensor({4}, {-2.0, -0.5, 0.5, 2.0}));
    auto y = ad::relu(x);
    REQUIRE(y->value[0] == 0.0);
    REQUIRE(y->value[1] == 0.0);
    REQUIRE(y->value[2] == 0.5);
    REQUIRE(y->value[3] == 2.0);
}

TEST_CASE("matmul and bias gradients") {
    check_grads(
        [](std::vector<Var>& p) {
            auto y = ad::add_rowvec(ad::matmul(p[0], p[1], /*transpose_b=*/true), p[2]);
            auto z = ad::matmul(p[3], y);
            return weighted_sum(z);
        },
        {random_tensor({5, 3}, 5), random_tensor({4, 3}, 6), random_tensor({4}, 7),
         random_tensor({2, 5}, 8)});
}

TEST_CASE("transpose2d gradient and value") {
    auto x = ad::parameter(random_tensor({3, 2}, 9));
    auto t = ad::transpose2d(x);
    REQUIRE(t->value.at(1, 2) == x->value.at(2, 1));
    check_grads([](std::vector<Var>& p) { return weighted_sum(ad::transpose2d(p[0])); },
                {random_tensor({3, 2}, 10)});
}

TEST_CASE("shape op gradients") {
    check_grads(
        [](std::vector<Var>& p) {
            auto c = ad::concat({p[0], p[1]}, 1);          // {2,5,2,3}
            auto s = ad::slice(c, 3, 1, 2);                // {2,5,2,2}
            auto m = ad::permute(s, {1, 0, 3, 2});         // {5,2,2,2}
            auto r = ad::reshape(m, {5, 8});
            return weighted_sum(ad::pad_last_left(r, 2));
        },
        {random_tensor({2, 2, 2, 3}, 11), random_tensor({2, 3, 2, 3}, 12)});
}

TEST_CASE("gather_rows gradient accumulates over repeats") {
    check_grads(
        [](std::vector<Var>& p) {
            return weighted_sum(ad::gather_rows(p[0], {0, 2, 2, 1, 0}));
        },
        {random_tensor({3, 4}, 13)});
}

TEST_CASE("conv_temporal matches a direct loop") {
    const std::int64_t b = 2, cin = 3, nn = 2, l = 9, cout = 4, k = 3, dil = 2;
    Tensor x = random_tensor({b, cin, nn, l}, 14);
    Tensor w = random_tensor({cout, cin, k}, 15);
    Tensor bias = random_tensor({cout}, 16);
    auto y = ad::conv_temporal(ad::constant(x), ad::constant(w), ad::constant(bias), dil);

    const std::int64_t lo = l - (k - 1) * dil;
    REQUIRE(y->value.shape() == std::vector<std::int64_t>{b, cout, nn, lo});
    for (std::int64_t bb = 0; bb < b; ++bb)
        for (std::int64_t co = 0; co < cout; ++co)
            for (std::int64_t n = 0; n < nn; ++n)
                for (std::int64_t o = 0; o < lo; ++o) {
                    double acc = bias[co];
                    for (std::int64_t ci = 0; ci < cin; ++ci)
                        for (std::int64_t kk = 0; kk < k; ++kk)
                            acc += w.at(co, ci, kk) * x.at(bb, ci, n, o + kk * dil);
                    REQUIRE(y->value.at(bb, co, n, o) == Catch::Approx(acc).epsilon(1e-12));
                }
}

TEST_CASE("conv_temporal gradients") {
    check_grads(
        [](std::vector<Var>& p) {
            auto y = ad::conv_temporal(p[0], p[1], p[2], 2);
            return weighted_sum(y);
        },
        {random_tensor({2, 3, 2, 9}, 17), random_tensor({4, 3, 3}, 18), random_tensor({4}, 19)},
        1e-5);
}

TEST_CASE("conv_temporal rejects short windows") {
    auto x = ad::constant(random_tensor({1, 1, 1, 4}, 20));
    auto w = ad::constant(random_tensor({1, 1, 7}, 21));
    REQUIRE_THROWS_AS(ad::conv_temporal(x, w, nullptr), Error);
}

TEST_CASE("node_mix matches the loop and differentiates") {
    const std::int64_t b = 2, c = 2, n = 3, l = 4;
    Tensor h = random_tensor({b, c, n, l}, 22);
    Tensor a = random_tensor({n, n}, 23, 0.0, 1.0);
    auto y = ad::node_mix(ad::constant(h), ad::constant(a));
    for (std::int64_t bb = 0; bb < b; ++bb)
        for (std::int64_t cc = 0; cc < c; ++cc)
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t t = 0; t < l; ++t) {
                    double acc = 0.0;
                    for (std::int64_t j = 0; j < n; ++j) acc += a.at(i, j) * h.at(bb, cc, j, t);
                    REQUIRE(y->value.at(bb, cc, i, t) == Catch::Approx(acc).epsilon(1e-12));
                }

    check_grads(
        [](std::vector<Var>& p) { return weighted_sum(ad::node_mix(p[0], p[1])); },
        {random_tensor({2, 2, 3, 4}, 24), random_tensor({3, 3}, 25, 0.0, 1.0)});
}

TEST_CASE("row_normalize_self_loops rows sum to one and differentiate") {
    Tensor a = random_tensor({4, 4}, 26, 0.0, 2.0);
    auto norm = ad::row_normalize_self_loops(ad::constant(a));
    for (std::int64_t i = 0; i < 4; ++i) {
        double s = 0.0;
        for (std::int64_t j = 0; j < 4; ++j) s += norm->value.at(i, j);
        REQUIRE(s == Catch::Approx(1.0).epsilon(1e-12));
    }
    check_grads(
        [](std::vector<Var>& p) {
            return weighted_sum(ad::row_normalize_self_loops(ad::relu(p[0])));
        },
        {random_tensor({4, 4}, 27, 0.1, 2.0)});
}

TEST_CASE("batchnorm training mode") {
    ad::BatchNormState state;
    state.running_mean = Tensor::zeros({3});
    state.running_var = Tensor::full({3}, 1.0);

    SECTION("normalizes to zero mean unit variance") {
        auto x = ad::constant(random_tensor({4, 3, 2, 5}, 28, -3.0, 5.0));
        auto g = ad::constant(Tensor::full({3}, 1.0));
        auto be = ad::constant(Tensor::zeros({3}));
        auto y = ad::batchnorm(x, g, be, state, /*training=*/true);
        for (std::int64_t c = 0; c < 3; ++c) {
            double sum = 0.0, sq = 0.0;
            for (std::int64_t b = 0; b < 4; ++b)
                for (std::int64_t n = 0; n < 2; ++n)
                    for (std::int64_t l = 0; l < 5; ++l) {
                        double v = y->value.at(b, c, n, l);
                        sum += v;
                        sq += v * v;
                    }
            REQUIRE(sum / 40.0 == Catch::Approx(0.0).margin(1e-10));
            REQUIRE(sq / 40.0 == Catch::Approx(1.0).epsilon(1e-3)); // eps shifts variance slightly
        }
        // Running stats moved toward the batch stats.
        REQUIRE(state.running_mean[0] != 0.0);
    }

    SECTION("gradients in training mode") {
        ad::BatchNormState st2;
        st2.running_mean = Tensor::zeros({2});
        st2.running_var = Tensor::full({2}, 1.0);
        check_grads(
            [&st2](std::vector<Var>& p) {
                auto y = ad::batchnorm(p[0], p[1], p[2], st2, true);
                return weighted_sum(y);
            },
            {random_tensor({2, 2, 2, 3}, 29), random_tensor({2}, 30, 0.5, 1.5),
             random_tensor({2}, 31)},
            1e-5);
    }

    SECTION("gradients in eval mode") {
        ad::BatchNormState st3;
        st3.running_mean = random_tensor({2}, 32);
        st3.running_var = random_tensor({2}, 33, 0.5, 2.0);
        check_grads(
            [&st3](std::vector<Var>& p) {
                auto y = ad::batchnorm(p[0], p[1], p[2], st3, false);
                return weighted_sum(y);
            },
            {random_tensor({2, 2, 2, 3}, 34), random_tensor({2}, 35, 0.5, 1.5),
             random_tensor({2}, 36)});
    }
}

TEST_CASE("masked_mae value and gradient") {
    Tensor target({2, 3}, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
    Tensor mask({2, 3}, {1.0, 0.0, 1.0, 1.0, 0.0, 1.0});
    Tensor pred({2, 3}, {2.0, 100.0, 2.0, 5.0, -100.0, 8.0});
    auto loss = ad::masked_mae(ad::constant(pred), target, mask);
    REQUIRE(loss->value[0] == Catch::Approx((1.0 + 1.0 + 1.0 + 2.0) / 4.0));

    check_grads(
        [&](std::vector<Var>& p) { return ad::masked_mae(p[0], target, mask); },
        {random_tensor({2, 3}, 37, 6.5, 9.5)});

    Tensor empty_mask({2, 3});
    REQUIRE_THROWS_AS(ad::masked_mae(ad::constant(pred), target, empty_mask),
                      DegenerateInputError);
}

TEST_CASE("shared subexpression accumulates gradient") {
    auto x = ad::parameter(Tensor::scalar(3.0));
    ad::zero_grad({x});
    auto y = ad::add(ad::mul(x, x), x); // x^2 + x
    ad::backward(y);
    REQUIRE(x->grad[0] == Catch::Approx(7.0)); // 2x + 1
}

TEST_CASE("affine_scalar and mean_all") {
    check_grads(
        [](std::vector<Var>& p) { return ad::mean_all(ad::affine_scalar(p[0], 2.5, -1.0)); },
        {random_tensor({3, 3}, 38)});
}

TEST_CASE("no-grad mode builds no graph") {
    auto x = ad::parameter(random_tensor({2, 2}, 39));
    ad::NoGradGuard guard;
    auto y = ad::mul(x, x);
    REQUIRE_FALSE(y->requires_grad);
    REQUIRE(y->parents.empty());
}

TEST_CASE("topk_row_mask matches the brute-force oracle") {
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a = random_tensor({5, 5}, 100 + static_cast<std::uint64_t>(trial), 0.0, 1.0);
        for (std::int64_t k = 1; k <= 5; ++k) {
            Tensor fast = ad::topk_row_mask(a, k);
            Tensor brute = oracles::brute_topk_mask(a, k);
            for (std::int64_t i = 0; i < a.size(); ++i) REQUIRE(fast[i] == brute[i]);
        }
    }
}
