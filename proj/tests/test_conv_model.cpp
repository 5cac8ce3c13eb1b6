#include <catch2/catch_amalgamated.hpp>

#include "seafield/models.hpp"
#include "support/oracles.hpp"
#include "support/test_utils.hpp"

using namespace seafield;
using namespace seafield::models;
using testutil::random_tensor;

namespace {

ModelConfig small_config(ModelKind kind) {
    ModelConfig cfg;
    cfg.kind = kind;
    cfg.hidden = 8;
    cfg.modules = 2;
    cfg.end_channels = 16;
    cfg.cnf.m_time = 4;
    cfg.cnf.m_node = 2;
    cfg.cnf.layers = 2;
    cfg.cnf.hidden = 8;
    return cfg;
}

BatchInput batch_from_dataset(const data::TimeSeriesDataset& ds,
                              const std::vector<std::int64_t>& starts, const ModelConfig& cfg,
                              std::int64_t pad) {
    return make_batch(ds, starts, cfg.t_h, pad);
}

void zero_biases(ForecastModel& model) {
    nn::ParamMap pm;
    model.collect(pm);
    for (auto& [name, var] : pm.items) {
        if (name.ends_with(".b") || name.ends_with(".beta")) var->value.fill(0.0);
    }
}

// Copy every baseline parameter from the matching time-aware model
// parameter (names match after the leading model prefix).
void copy_shared_weights(ForecastModel& from, ForecastModel& to) {
    nn::ParamMap src, dst;
    from.collect(src);
    to.collect(dst);
    auto suffix = [](const std::string& name) { return name.substr(name.find('.')); };
    for (auto& [dname, dvar] : dst.items) {
        bool found = false;
        for (auto& [sname, svar] : src.items) {
            if (suffix(sname) == suffix(dname)) {
                REQUIRE(svar->value.same_shape(dvar->value));
                dvar->value = svar->value;
                found = true;
                break;
            }
        }
        REQUIRE(found);
    }
}

} // namespace

TEST_CASE("valid inception module shrinks by the largest kernel") {
    Rng rng(1);
    InceptionModule mod(8, {2, 3, 6, 7}, /*padded=*/false, rng);
    auto x = ad::constant(random_tensor({2, 8, 3, 12}, 2));
    auto y = mod.forward(x, /*training=*/true);
    const std::int64_t expected = 12 - (oracles::receptive_field(7, {1}) - 1);
    REQUIRE(y->value.dim(3) == expected); // 6
    REQUIRE(y->value.dim(1) == 8);
}

TEST_CASE("zero branches with identity batchnorm reduce to the cropped residual") {
    Rng rng(3);
    InceptionModule mod(4, {2, 3, 6, 7}, /*padded=*/false, rng);
    for (auto& br : mod.branches()) {
        br.weight()->value.fill(0.0);
        br.bias()->value.fill(0.0);
    }
    Tensor xin = random_tensor({1, 4, 2, 12}, 4);
    auto y = mod.forward(ad::constant(xin), /*training=*/true);
    // Branches output zero; BN of all-zero is zero; what remains is the
    // right-aligned crop of the input.
    REQUIRE(y->value.dim(3) == 6);
    for (std::int64_t c = 0; c < 4; ++c)
        for (std::int64_t n = 0; n < 2; ++n)
            for (std::int64_t l = 0; l < 6; ++l)
                REQUIRE(y->value.at(0, c, n, l) ==
                        Catch::Approx(xin.at(0, c, n, 6 + l)).margin(1e-12));
}

TEST_CASE("padded inception module preserves the time length") {
    Rng rng(5);
    InceptionModule mod(8, {2, 3, 6, 7}, /*padded=*/true, rng);
    auto y = mod.forward(ad::constant(random_tensor({2, 8, 3, 12}, 6)), true);
    REQUIRE(y->value.dim(3) == 12);
}

TEST_CASE("inception module parameter count matches the closed form") {
    Rng rng(7);
    const std::int64_t c = 32;
    InceptionModule mod(c, {2, 3, 6, 7}, true, rng);
    nn::ParamMap pm;
    mod.collect("m", pm);
    std::int64_t expected = 0;
    for (std::int64_t k : {2, 3, 6, 7}) expected += c * (c / 4) * k + (c / 4);
    expected += 2 * c; // batch norm gamma/beta
    REQUIRE(pm.count() == expected);
}

TEST_CASE("inception module rejects too-short windows") {
    Rng rng(8);
    InceptionModule mod(4, {2, 3, 6, 7}, false, rng);
    REQUIRE_THROWS_AS(mod.forward(ad::constant(random_tensor({1, 4, 2, 5}, 9)), true), Error);
}

TEST_CASE("baseline forward contract") {
    auto ds = data::synthesize_seasonal(20, 14, 60, 0.1, 11);
    auto cfg = small_config(ModelKind::Inception);
    Rng rng(12);
    auto model = make_model(cfg, ds.nodes(), rng);

    SECTION("output shape is batch x T_f x N x 1") {
        auto in = batch_from_dataset(ds, {0, 5, 9, 20}, cfg, 0);
        auto y = model->forward(in, false);
        REQUIRE(y->value.shape() == std::vector<std::int64_t>{4, 12, 20, 1});
    }
    SECTION("zero input with zero biases gives zero predictions") {
        zero_biases(*model);
        BatchInput in = batch_from_dataset(ds, {3}, cfg, 0);
        in.history.fill(0.0);
        auto y = model->forward(in, false);
        for (std::int64_t i = 0; i < y->value.size(); ++i)
            REQUIRE(y->value[i] == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("history shorter than the largest kernel is rejected") {
        ModelConfig bad = cfg;
        bad.t_h = 6;
        Rng r2(1);
        REQUIRE_THROWS_AS(make_model(bad, ds.nodes(), r2), Error);
    }
}

TEST_CASE("seacnn with saturated local gates equals the baseline") {
    auto ds = data::synthesize_seasonal(12, 14, 60, 0.1, 13);
    auto sea_cfg = small_config(ModelKind::Seacnn);
    auto base_cfg = small_config(ModelKind::Inception);

    Rng rng(21);
    ConvForecaster sea(sea_cfg, ds.nodes(), rng);
    Rng rng2(22);
    ConvForecaster base(base_cfg, ds.nodes(), rng2);

    for (auto& site : sea.fusion_sites()) site.gate().saturate(-20.0);
    copy_shared_weights(sea, base);

    Rng starts_rng(33);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<std::int64_t> starts;
        for (int i = 0; i < 3; ++i)
            starts.push_back(static_cast<std::int64_t>(starts_rng.index(
                static_cast<std::uint64_t>(ds.length() - sea_cfg.t_h - sea_cfg.t_f))));
        auto in = batch_from_dataset(ds, starts, sea_cfg, 0);
        auto ys = sea.forward(in, true);
        auto yb = base.forward(in, true);
        double max_abs = 0.0;
        for (std::int64_t i = 0; i < ys->value.size(); ++i)
            max_abs = std::max(max_abs, std::abs(ys->value[i] - yb->value[i]));
        REQUIRE(max_abs < 1e-5);
    }
}

TEST_CASE("seacnn with saturated global gates ignores the value history") {
    auto ds = data::synthesize_seasonal(6, 14, 60, 0.1, 14);
    auto cfg = small_config(ModelKind::Seacnn);
    Rng rng(31);
    ConvForecaster sea(cfg, ds.nodes(), rng);
    for (auto& site : sea.fusion_sites()) site.gate().saturate(20.0);

    auto in = batch_from_dataset(ds, {2, 7}, cfg, 0);
    auto y1 = sea.forward(in, false);

    BatchInput tampered = in;
    for (std::int64_t bi = 0; bi < tampered.history.dim(0); ++bi)
        for (std::int64_t j = 0; j < tampered.history.dim(2); ++j)
            for (std::int64_t l = 0; l < tampered.history.dim(3); ++l)
                tampered.history.at(bi, 0, j, l) += 3.5; // value channel only
    auto y2 = sea.forward(tampered, false);
    for (std::int64_t i = 0; i < y1->value.size(); ++i)
        REQUIRE(y1->value[i] == Catch::Approx(y2->value[i]).margin(1e-6));
}

TEST_CASE("seacnn parameter count decomposes into baseline plus time parts") {
    auto sea_cfg = small_config(ModelKind::Seacnn);
    auto base_cfg = small_config(ModelKind::Inception);
    Rng r1(41), r2(42), r3(43);
    ConvForecaster sea(sea_cfg, 10, r1);
    ConvForecaster base(base_cfg, 10, r2);

    nn::ParamMap sea_pm, base_pm;
    sea.collect(sea_pm);
    base.collect(base_pm);

    nf::CnfConfig cnf_cfg = sea_cfg.cnf;
    cnf_cfg.out_dim = sea_cfg.hidden;
    nf::ConditionalNeuralField cnf(cnf_cfg, 10, r3);
    nn::ParamMap cnf_pm;
    cnf.collect("cnf", cnf_pm);

    const std::int64_t c = sea_cfg.hidden;
    const std::int64_t adapter = c * c + c;          // 1x1 conv with bias
    const std::int64_t gate = c * 2 * c + c;         // gated fusion W and b
    const std::int64_t per_layer = adapter + gate;
    REQUIRE(sea_pm.count() ==
            base_pm.count() + cnf_pm.count() + sea_cfg.modules * per_layer);
}

TEST_CASE("conv forecaster gradients flow end to end") {
    auto ds = data::synthesize_seasonal(3, 14, 120, 0.1, 15);
    ModelConfig cfg = small_config(ModelKind::Seacnn);
    cfg.hidden = 4;
    cfg.modules = 1;
    cfg.end_channels = 4;
    cfg.cnf.m_time = 2;
    cfg.cnf.m_node = 1;
    cfg.cnf.hidden = 4;
    Rng rng(51);
    ConvForecaster model(cfg, ds.nodes(), rng);

    auto in = batch_from_dataset(ds, {0, 4}, cfg, 0);
    auto [target, mask] = make_batch_targets(ds, {0, 4}, cfg.t_h, cfg.t_f);

    nn::ParamMap pm;
    model.collect(pm);
    auto eval_loss = [&]() {
        auto pred = ad::reshape(model.forward(in, true), {2, cfg.t_f, ds.nodes()});
        return ad::masked_mae(pred, target, mask);
    };
    ad::zero_grad(pm.vars());
    ad::backward(eval_loss());

    // Sample 40 parameters across the map.
    std::vector<std::pair<std::size_t, std::int64_t>> subset;
    Rng pick(52);
    for (int i = 0; i < 40; ++i) {
        const std::size_t pi = static_cast<std::size_t>(pick.index(pm.items.size()));
        const std::int64_t ei =
            static_cast<std::int64_t>(pick.index(static_cast<std::uint64_t>(
                pm.items[pi].second->value.size())));
        subset.emplace_back(pi, ei);
    }
    auto slots = testutil::collect_slots(pm, &subset);
    auto eval = [&]() { return eval_loss()->value[0]; };
    auto report = oracles::fd_gradcheck(eval, slots.slots, slots.analytic, 1e-5);
    REQUIRE(report.max_rel_err < 1e-3);
}
