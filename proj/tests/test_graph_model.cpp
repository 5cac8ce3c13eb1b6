#include <catch2/catch_amalgamated.hpp>

#include "seafield/models.hpp"
#include "support/oracles.hpp"
#include "support/test_utils.hpp"

using namespace seafield;
using namespace seafield::models;
using testutil::random_tensor;

namespace {

ModelConfig graph_config(ModelKind kind) {
    ModelConfig cfg;
    cfg.kind = kind;
    cfg.hidden = 8;
    cfg.modules = 2;
    cfg.skip_channels = 8;
    cfg.end_channels = 16;
    cfg.graph_dim = 6;
    cfg.graph_topk = 4;
    cfg.cnf.m_time = 4;
    cfg.cnf.m_node = 2;
    cfg.cnf.layers = 2;
    cfg.cnf.hidden = 8;
    return cfg;
}

} // namespace

TEST_CASE("graph learner") {
    SECTION("identical embeddings give the zero graph") {
        Rng rng(1);
        GraphLearner learner(5, 4, 3.0, 2, rng);
        learner.embeddings2()->value = learner.embeddings1()->value;
        auto a = learner.adjacency();
        for (std::int64_t i = 0; i < a->value.size(); ++i) REQUIRE(a->value[i] == 0.0);
    }
    SECTION("k equal to N keeps the dense activation") {
        Rng rng(2);
        GraphLearner learner(4, 3, 3.0, 4, rng);
        auto a = learner.adjacency();
        // Recompute the dense activation by hand.
        const Tensor& m1 = learner.embeddings1()->value;
        const Tensor& m2 = learner.embeddings2()->value;
        for (std::int64_t i = 0; i < 4; ++i)
            for (std::int64_t j = 0; j < 4; ++j) {
                double d = 0.0;
                for (std::int64_t kk = 0; kk < 3; ++kk)
                    d += m1.at(i, kk) * m2.at(j, kk) - m2.at(i, kk) * m1.at(j, kk);
                const double dense = std::max(0.0, std::tanh(3.0 * d));
                REQUIRE(a->value.at(i, j) == Catch::Approx(dense).margin(1e-12));
            }
    }
    SECTION("top-k retention matches the brute force oracle") {
        for (int trial = 0; trial < 50; ++trial) {
            Rng rng(100 + static_cast<std::uint64_t>(trial));
            GraphLearner learner(4, 5, 3.0, 2, rng);
            auto a = learner.adjacency();
            // Dense activation without pruning:
            Rng rng2(100 + static_cast<std::uint64_t>(trial));
            GraphLearner dense_learner(4, 5, 3.0, 4, rng2);
            auto dense = dense_learner.adjacency();
            Tensor keep = oracles::brute_topk_mask(dense->value, 2);
            for (std::int64_t i = 0; i < a->value.size(); ++i)
                REQUIRE(a->value[i] == dense->value[i] * keep[i]);
            for (std::int64_t i = 0; i < 4; ++i) {
                int nonzeros = 0;
                for (std::int64_t j = 0; j < 4; ++j)
                    if (a->value.at(i, j) != 0.0) ++nonzeros;
                REQUIRE(nonzeros <= 2);
            }
        }
    }
    SECTION("k out of range is rejected") {
        Rng rng(3);
        REQUIRE_THROWS_AS(GraphLearner(4, 3, 3.0, 5, rng), Error);
        REQUIRE_THROWS_AS(GraphLearner(4, 3, 3.0, 0, rng), Error);
    }
    SECTION("learned rows normalize to one") {
        Rng rng(4);
        GraphLearner learner(6, 4, 3.0, 3, rng);
        auto norm = ad::row_normalize_self_loops(learner.adjacency());
        for (std::int64_t i = 0; i < 6; ++i) {
            double s = 0.0;
            for (std::int64_t j = 0; j < 6; ++j) s += norm->value.at(i, j);
            REQUIRE(s == Catch::Approx(1.0).margin(1e-9));
        }
    }
}

TEST_CASE("mix-hop propagation") {
    SECTION("beta one suppresses propagation") {
        Rng rng(5);
        MixHopLayer layer(3, 2, 2, 1.0, rng);
        Tensor h = random_tensor({2, 3, 4, 5}, 6);
        Tensor a = random_tensor({4, 4}, 7, 0.0, 1.0);
        auto out = layer.forward(ad::constant(h),
                                 ad::row_normalize_self_loops(ad::constant(a)));
        // Every hop equals H, so the output is H * sum_k W^(k).
        const Tensor& w = layer.selection().weight()->value; // {2, 9, 1}
        for (std::int64_t b = 0; b < 2; ++b)
            for (std::int64_t o = 0; o < 2; ++o)
                for (std::int64_t n = 0; n < 4; ++n)
                    for (std::int64_t l = 0; l < 5; ++l) {
                        double acc = 0.0;
                        for (std::int64_t k = 0; k < 3; ++k)
                            for (std::int64_t ci = 0; ci < 3; ++ci)
                                acc += w.at(o, k * 3 + ci, 0) * h.at(b, ci, n, l);
                        REQUIRE(out->value.at(b, o, n, l) == Catch::Approx(acc).margin(1e-12));
                    }
    }
    SECTION("isolated nodes reduce to self-loops") {
        Rng rng(8);
        MixHopLayer layer(2, 2, 3, 0.3, rng);
        Tensor h = random_tensor({1, 2, 3, 4}, 9);
        Tensor zeros({3, 3});
        auto out_zero = layer.forward(ad::constant(h),
                                      ad::row_normalize_self_loops(ad::constant(zeros)));
        // With A = 0 the normalized graph is the identity, so every hop is
        // again H and the same collapsed form applies.
        const Tensor& w = layer.selection().weight()->value;
        for (std::int64_t o = 0; o < 2; ++o)
            for (std::int64_t n = 0; n < 3; ++n)
                for (std::int64_t l = 0; l < 4; ++l) {
                    double acc = 0.0;
                    for (std::int64_t k = 0; k < 4; ++k)
                        for (std::int64_t ci = 0; ci < 2; ++ci)
                            acc += w.at(o, k * 2 + ci, 0) * h.at(0, ci, n, l);
                    REQUIRE(out_zero->value.at(0, o, n, l) == Catch::Approx(acc).margin(1e-12));
                }
    }
    SECTION("hand instance matches the loop oracle") {
        Rng rng(10);
        MixHopLayer layer(2, 2, 2, 0.05, rng);
        Tensor h = random_tensor({1, 2, 3, 4}, 11);
        Tensor a({3, 3}, {0.0, 2.0, 0.0, 1.0, 0.0, 0.5, 0.0, 0.0, 0.0});
        auto out = layer.forward(ad::constant(h),
                                 ad::row_normalize_self_loops(ad::constant(a)));

        auto states = oracles::loop_mixhop(a, h, 2, 0.05);
        const Tensor& w = layer.selection().weight()->value;
        for (std::int64_t o = 0; o < 2; ++o)
            for (std::int64_t n = 0; n < 3; ++n)
                for (std::int64_t l = 0; l < 4; ++l) {
                    double acc = 0.0;
                    for (std::size_t k = 0; k < states.size(); ++k)
                        for (std::int64_t ci = 0; ci < 2; ++ci)
                            acc += w.at(o, static_cast<std::int64_t>(k) * 2 + ci, 0) *
                                   states[k].at(0, ci, n, l);
                    REQUIRE(out->value.at(0, o, n, l) == Catch::Approx(acc).margin(1e-10));
                }
    }
    SECTION("linear in the input for a fixed graph") {
        Rng rng(12);
        MixHopLayer layer(2, 3, 2, 0.05, rng);
        Tensor x = random_tensor({1, 2, 3, 4}, 13);
        Tensor y = random_tensor({1, 2, 3, 4}, 14);
        auto adj = ad::row_normalize_self_loops(ad::constant(random_tensor({3, 3}, 15, 0.0, 1.0)));
        const double ca = 1.7, cb = -0.6;
        Tensor mix(x.shape());
        for (std::int64_t i = 0; i < x.size(); ++i) mix[i] = ca * x[i] + cb * y[i];
        auto fx = layer.forward(ad::constant(x), adj);
        auto fy = layer.forward(ad::constant(y), adj);
        auto fmix = layer.forward(ad::constant(mix), adj);
        for (std::int64_t i = 0; i < fmix->value.size(); ++i)
            REQUIRE(fmix->value[i] ==
                    Catch::Approx(ca * fx->value[i] + cb * fy->value[i]).margin(1e-8));
    }
}

TEST_CASE("dilated inception") {
    SECTION("receptive field arithmetic") {
        Rng rng(16);
        DilatedInception layer(4, 4, {2, 3, 6, 7}, 1, rng);
        auto y = layer.forward(ad::constant(random_tensor({1, 4, 2, 12}, 17)));
        REQUIRE(y->value.dim(3) == 6);
        REQUIRE(layer.shrink() == 6);

        DilatedInception dil2(4, 4, {2, 3, 6, 7}, 2, rng);
        REQUIRE(dil2.shrink() == 12);
        REQUIRE_THROWS_AS(dil2.forward(ad::constant(random_tensor({1, 4, 2, 6}, 18))), Error);
        REQUIRE(oracles::receptive_field(7, {2}) == 13);
    }
    SECTION("saturated gate passes the filter branch") {
        Rng rng(19);
        DilatedInception filter(2, 4, {2, 3, 6, 7}, 1, rng);
        DilatedInception gate(2, 4, {2, 3, 6, 7}, 1, rng);
        for (auto& br : gate.branches()) {
            br.weight()->value.fill(0.0);
            br.bias()->value.fill(30.0);
        }
        auto x = ad::constant(random_tensor({1, 2, 2, 10}, 20));
        auto f = ad::tanh_op(filter.forward(x));
        auto g = ad::sigmoid(gate.forward(x));
        auto t = ad::mul(f, g);
        for (std::int64_t i = 0; i < t->value.size(); ++i)
            REQUIRE(t->value[i] == Catch::Approx(f->value[i]).margin(1e-9));
    }
    SECTION("zero input and biases give zero output") {
        Rng rng(21);
        DilatedInception layer(2, 4, {2, 3, 6, 7}, 1, rng);
        for (auto& br : layer.branches()) br.bias()->value.fill(0.0);
        auto y = layer.forward(ad::constant(Tensor::zeros({1, 2, 2, 9})));
        for (std::int64_t i = 0; i < y->value.size(); ++i) REQUIRE(y->value[i] == 0.0);
    }
}

TEST_CASE("graph forecaster forward contract") {
    auto ds = data::synthesize_seasonal(10, 14, 60, 0.1, 22);
    auto cfg = graph_config(ModelKind::Seagnn);
    Rng rng(23);
    GraphForecaster model(cfg, ds.nodes(), std::nullopt, rng);

    REQUIRE(model.receptive_field() == oracles::receptive_field(7, {1, 1}));
    REQUIRE(model.required_pad() == model.receptive_field() - cfg.t_h);

    auto in = make_batch(ds, {0, 8}, cfg.t_h, model.required_pad());
    auto y = model.forward(in, false);
    REQUIRE(y->value.shape() == std::vector<std::int64_t>{2, 12, 10, 1});
}

TEST_CASE("seagnn with saturated local gates equals the mtgnn replica") {
    auto ds = data::synthesize_seasonal(8, 14, 60, 0.1, 24);
    auto sea_cfg = graph_config(ModelKind::Seagnn);
    auto base_cfg = graph_config(ModelKind::Mtgnn);

    Rng r1(25), r2(26);
    GraphForecaster sea(sea_cfg, ds.nodes(), std::nullopt, r1);
    GraphForecaster base(base_cfg, ds.nodes(), std::nullopt, r2);

    for (auto& mod : sea.modules()) mod.fuse.gate().saturate(-20.0);

    // Copy every replica parameter from its seagnn counterpart.
    nn::ParamMap src, dst;
    sea.collect(src);
    base.collect(dst);
    auto suffix = [](const std::string& n) { return n.substr(n.find('.')); };
    for (auto& [dname, dvar] : dst.items) {
        bool found = false;
        for (auto& [sname, svar] : src.items)
            if (suffix(sname) == suffix(dname)) {
                dvar->value = svar->value;
                found = true;
                break;
            }
        REQUIRE(found);
    }

    Rng starts_rng(27);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<std::int64_t> starts;
        for (int i = 0; i < 2; ++i)
            starts.push_back(static_cast<std::int64_t>(
                starts_rng.index(static_cast<std::uint64_t>(ds.length() - 24))));
        auto in = make_batch(ds, starts, sea_cfg.t_h, sea.required_pad());
        auto ys = sea.forward(in, true);
        auto yb = base.forward(in, true);
        double max_abs = 0.0;
        for (std::int64_t i = 0; i < ys->value.size(); ++i)
            max_abs = std::max(max_abs, std::abs(ys->value[i] - yb->value[i]));
        REQUIRE(max_abs < 1e-5);
    }
}

TEST_CASE("prior zero graph isolates the nodes") {
    auto ds = data::synthesize_seasonal(4, 14, 60, 0.0, 28);
    ModelConfig cfg = graph_config(ModelKind::Mtgnn);
    cfg.use_prior_graph = true;
    Rng rng(29);
    GraphForecaster model(cfg, ds.nodes(), Tensor::zeros({4, 4}), rng);

    auto in = make_batch(ds, {3}, cfg.t_h, model.required_pad());
    auto y1 = model.forward(in, false);

    BatchInput tampered = in;
    for (std::int64_t l = 0; l < cfg.t_h; ++l) tampered.history.at(0, 0, 1, l) += 2.0;
    auto y2 = model.forward(tampered, false);

    // Node 1 changed; node 0 predictions must not move in eval mode.
    for (std::int64_t h = 0; h < cfg.t_f; ++h)
        REQUIRE(y1->value.at(0, h, 0, 0) == Catch::Approx(y2->value.at(0, h, 0, 0)).margin(1e-12));
    bool moved = false;
    for (std::int64_t h = 0; h < cfg.t_f; ++h)
        moved = moved || std::abs(y1->value.at(0, h, 1, 0) - y2->value.at(0, h, 1, 0)) > 1e-9;
    REQUIRE(moved);
}

TEST_CASE("micro seagnn end-to-end gradient check") {
    auto ds = data::synthesize_seasonal(3, 14, 120, 0.05, 30);
    ModelConfig cfg;
    cfg.kind = ModelKind::Seagnn;
    cfg.hidden = 4;
    cfg.modules = 1;
    cfg.skip_channels = 4;
    cfg.end_channels = 4;
    cfg.graph_dim = 3;
    cfg.graph_topk = 2;
    cfg.graph_alpha = 1.0; // unsaturated tanh keeps embedding gradients resolvable
    cfg.cnf.m_time = 2;
    cfg.cnf.m_node = 1;
    cfg.cnf.layers = 2;
    cfg.cnf.hidden = 4;
    Rng rng(31);
    GraphForecaster model(cfg, ds.nodes(), std::nullopt, rng);

    auto in = make_batch(ds, {0, 6}, cfg.t_h, model.required_pad());
    auto [target, mask] = make_batch_targets(ds, {0, 6}, cfg.t_h, cfg.t_f);

    nn::ParamMap pm;
    model.collect(pm);
    auto eval_loss = [&]() {
        auto pred = ad::reshape(model.forward(in, true), {2, cfg.t_f, ds.nodes()});
        return ad::masked_mae(pred, target, mask);
    };
    ad::zero_grad(pm.vars());
    ad::backward(eval_loss());

    std::vector<std::pair<std::size_t, std::int64_t>> subset;
    Rng pick(32);
    for (int i = 0; i < 50; ++i) {
        const std::size_t pi = static_cast<std::size_t>(pick.index(pm.items.size()));
        const std::int64_t ei = static_cast<std::int64_t>(
            pick.index(static_cast<std::uint64_t>(pm.items[pi].second->value.size())));
        subset.emplace_back(pi, ei);
    }
    auto slots = testutil::collect_slots(pm, &subset);
    auto eval = [&]() { return eval_loss()->value[0]; };
    auto report = oracles::fd_gradcheck(eval, slots.slots, slots.analytic, 1e-5);
    INFO("worst param " << report.worst_index);
    REQUIRE(report.max_rel_err < 1e-3);
}
