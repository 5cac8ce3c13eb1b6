#include <catch2/catch_amalgamated.hpp>

#include "seafield/evaluation.hpp"
#include "seafield/training.hpp"
#include "support/oracles.hpp"
#include "support/test_utils.hpp"

using namespace seafield;
using namespace seafield::train;
using testutil::random_tensor;

namespace {

models::ModelConfig tiny_model(models::ModelKind kind) {
    models::ModelConfig cfg;
    cfg.kind = kind;
    cfg.hidden = 8;
    cfg.modules = 1;
    cfg.skip_channels = 8;
    cfg.end_channels = 8;
    cfg.graph_dim = 4;
    cfg.graph_topk = 4;
    cfg.cnf.m_time = 4;
    cfg.cnf.m_node = 2;
    cfg.cnf.layers = 2;
    cfg.cnf.hidden = 8;
    return cfg;
}

struct Pipeline {
    data::TimeSeriesDataset train_split, val_split, test_split;
    data::NormStats stats;
};

Pipeline make_pipeline(std::uint64_t seed, std::int64_t nodes = 6, std::int64_t days = 14,
                       std::int64_t granularity = 60) {
    auto ds = data::synthesize_seasonal(nodes, days, granularity, 0.1, seed);
    auto parts = data::split(ds, data::SplitSpec{0.7, 0.15, 0.15}, 24);
    auto [train_norm, stats] = data::normalize(parts[0]);
    auto val_norm = data::normalize(parts[1], stats).first;
    auto test_norm = data::normalize(parts[2], stats).first;
    return {std::move(train_norm), std::move(val_norm), std::move(test_norm), stats};
}

} // namespace

TEST_CASE("curriculum horizon schedule") {
    CurriculumSchedule sched;
    REQUIRE(sched.horizon_at(0) == 1);
    REQUIRE(sched.horizon_at(2499) == 1);
    REQUIRE(sched.horizon_at(2500) == 2);
    REQUIRE(sched.horizon_at(27499) == 11);
    REQUIRE(sched.horizon_at(27500) == 12);
    REQUIRE(sched.horizon_at(1000000) == 12);
    REQUIRE_THROWS_AS(sched.horizon_at(-1), Error);

    // Monotone over a sweep.
    std::int64_t prev = 0;
    for (std::int64_t it = 0; it < 40000; it += 137) {
        const std::int64_t p = sched.horizon_at(it);
        REQUIRE(p >= prev);
        prev = p;
    }
}

TEST_CASE("masked mae loss") {
    data::NormStats unit{0.0, 1.0};

    SECTION("perfect prediction gives zero") {
        Tensor target = random_tensor({2, 3, 2}, 1);
        Tensor mask = Tensor::full({2, 3, 2}, 1.0);
        auto loss = masked_mae_loss(ad::constant(target), target, mask, 3, unit);
        REQUIRE(loss->value[0] == 0.0);
    }
    SECTION("masked sentinel never contributes") {
        // pred - target = {1, -1, masked 100} within horizon p.
        Tensor pred({1, 1, 3}, {2.0, 1.0, 100.0});
        Tensor target({1, 1, 3}, {1.0, 2.0, 0.0});
        Tensor mask({1, 1, 3}, {1.0, 1.0, 0.0});
        auto loss = masked_mae_loss(ad::constant(pred), target, mask, 1, unit);
        REQUIRE(loss->value[0] == 1.0);
    }
    SECTION("random instance matches a triple loop at p=2") {
        data::NormStats stats{2.5, 1.7};
        Tensor pred = random_tensor({2, 3, 2}, 2);
        Tensor target = random_tensor({2, 3, 2}, 3);
        Tensor mask({2, 3, 2});
        Rng mrng(4);
        for (std::int64_t i = 0; i < mask.size(); ++i) mask[i] = mrng.uniform() < 0.7 ? 1.0 : 0.0;
        const std::int64_t p = 2;

        double acc = 0.0, count = 0.0;
        for (std::int64_t b = 0; b < 2; ++b)
            for (std::int64_t h = 0; h < p; ++h)
                for (std::int64_t n = 0; n < 2; ++n)
                    if (mask.at(b, h, n) != 0.0) {
                        const double yh = pred.at(b, h, n) * stats.std + stats.mean;
                        const double y = target.at(b, h, n) * stats.std + stats.mean;
                        acc += std::abs(yh - y);
                        count += 1.0;
                    }
        auto loss = masked_mae_loss(ad::constant(pred), target, mask, p, stats);
        REQUIRE(loss->value[0] == Catch::Approx(acc / count).margin(1e-12));
    }
    SECTION("no observed cells raises") {
        Tensor pred = random_tensor({1, 2, 2}, 5);
        Tensor target = random_tensor({1, 2, 2}, 6);
        Tensor mask({1, 2, 2});
        REQUIRE_THROWS_AS(masked_mae_loss(ad::constant(pred), target, mask, 2, unit),
                          DegenerateInputError);
        REQUIRE(observed_within_horizon(mask, 2) == 0.0);
    }
    SECTION("loss is non-negative and zero only for exact agreement") {
        for (int trial = 0; trial < 20; ++trial) {
            Tensor pred = random_tensor({1, 2, 3}, 100 + static_cast<std::uint64_t>(trial));
            Tensor target = random_tensor({1, 2, 3}, 200 + static_cast<std::uint64_t>(trial));
            Tensor mask = Tensor::full({1, 2, 3}, 1.0);
            auto loss = masked_mae_loss(ad::constant(pred), target, mask, 2, unit);
            REQUIRE(loss->value[0] >= 0.0);
            REQUIRE((loss->value[0] == 0.0) == false);
        }
    }
}

TEST_CASE("train config validation") {
    TrainConfig bad;
    bad.epochs = 0;
    REQUIRE_THROWS_AS(bad.validate(), Error);
    TrainConfig bad2;
    bad2.lr = -1;
    REQUIRE_THROWS_AS(bad2.validate(), Error);
}

TEST_CASE("training runs and records history") {
    auto pipe = make_pipeline(31);
    auto cfg = tiny_model(models::ModelKind::Inception);
    TrainConfig tcfg;
    tcfg.epochs = 2;
    tcfg.batch_size = 32;
    tcfg.seed = 7;

    Rng rng(tcfg.seed);
    auto model = models::make_model(cfg, pipe.train_split.nodes(), rng);
    auto result = seafield::train::train(*model, pipe.train_split, pipe.val_split, pipe.stats, tcfg);

    REQUIRE(result.val_mae.size() == 2);
    REQUIRE(result.train_loss.size() == 2);
    REQUIRE(result.best_epoch >= 0);
    REQUIRE(result.best_val_mae ==
            *std::min_element(result.val_mae.begin(), result.val_mae.end()));

    // The model holds the best-validation parameters afterwards.
    const double revalidated = validation_mae(*model, pipe.val_split, pipe.stats, 32);
    REQUIRE(revalidated == Catch::Approx(result.best_val_mae).margin(1e-12));
}

TEST_CASE("identical seeds reproduce identical histories") {
    auto pipe = make_pipeline(32);
    auto cfg = tiny_model(models::ModelKind::Seacnn);
    TrainConfig tcfg;
    tcfg.epochs = 2;
    tcfg.batch_size = 32;
    tcfg.seed = 11;

    std::vector<double> h1, h2;
    {
        Rng rng(tcfg.seed);
        auto model = models::make_model(cfg, pipe.train_split.nodes(), rng);
        h1 = seafield::train::train(*model, pipe.train_split, pipe.val_split, pipe.stats, tcfg).val_mae;
    }
    {
        Rng rng(tcfg.seed);
        auto model = models::make_model(cfg, pipe.train_split.nodes(), rng);
        h2 = seafield::train::train(*model, pipe.train_split, pipe.val_split, pipe.stats, tcfg).val_mae;
    }
    REQUIRE(h1.size() == h2.size());
    for (std::size_t i = 0; i < h1.size(); ++i)
        REQUIRE(h1[i] == Catch::Approx(h2[i]).margin(1e-6));
}

TEST_CASE("curriculum keeps the horizon at one on a tiny dataset") {
    auto pipe = make_pipeline(33);
    const std::int64_t count = data::window_count(pipe.train_split, 12, 12);
    REQUIRE(count < 2500); // well under one schedule step per epoch
    CurriculumSchedule sched;
    for (std::int64_t it = 0; it < count; ++it) REQUIRE(sched.horizon_at(it) == 1);

    auto cfg = tiny_model(models::ModelKind::Inception);
    TrainConfig tcfg;
    tcfg.epochs = 1;
    tcfg.batch_size = 32;
    tcfg.curriculum = true;
    Rng rng(3);
    auto model = models::make_model(cfg, pipe.train_split.nodes(), rng);
    auto result = seafield::train::train(*model, pipe.train_split, pipe.val_split, pipe.stats, tcfg);
    REQUIRE(result.iterations == (count + tcfg.batch_size - 1) / tcfg.batch_size);
}

TEST_CASE("five epochs strictly decrease the training loss") {
    // Spec smoke property for both model families, three seeds each.
    auto ds = data::synthesize_seasonal(20, 28, 60, 0.1, 40);
    auto parts = data::split(ds, data::SplitSpec{0.7, 0.1, 0.2}, 24);
    auto [train_norm, stats] = data::normalize(parts[0]);
    auto val_norm = data::normalize(parts[1], stats).first;

    for (auto kind : {models::ModelKind::Inception, models::ModelKind::Mtgnn}) {
        for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
            auto cfg = tiny_model(kind);
            TrainConfig tcfg;
            tcfg.epochs = 5;
            tcfg.batch_size = 64;
            tcfg.seed = seed;
            Rng rng(seed);
            auto model = models::make_model(cfg, train_norm.nodes(), rng);
            auto result = seafield::train::train(*model, train_norm, val_norm, stats, tcfg);
            INFO(models::model_kind_name(kind) << " seed " << seed);
            REQUIRE(result.train_loss.size() == 5);
            REQUIRE(result.train_loss[4] < result.train_loss[0]);
        }
    }
}

TEST_CASE("checkpoint round trip reproduces forward outputs bit for bit") {
    auto pipe = make_pipeline(34);
    auto cfg = tiny_model(models::ModelKind::Seagnn);
    TrainConfig tcfg;
    tcfg.epochs = 1;
    tcfg.batch_size = 32;
    tcfg.seed = 5;

    Rng rng(tcfg.seed);
    auto model = models::make_model(cfg, pipe.train_split.nodes(), rng);
    seafield::train::train(*model, pipe.train_split, pipe.val_split, pipe.stats, tcfg);

    testutil::TempDir tmp("ckpt");
    const std::string path = (tmp.path() / "model.ckpt").string();
    save_checkpoint(path, *model, pipe.stats, "model.kind=seagnn\n", 42);

    auto ck = read_checkpoint(path);
    REQUIRE(ck.iteration == 42);
    REQUIRE(ck.config_fingerprint == fingerprint("model.kind=seagnn\n"));
    REQUIRE(ck.stats.mean == pipe.stats.mean);
    REQUIRE(ck.stats.std == pipe.stats.std);

    Rng rng2(999); // different init; everything overwritten by the load
    auto reloaded = models::make_model(cfg, pipe.train_split.nodes(), rng2);
    load_checkpoint_into(ck, *reloaded);

    auto in = models::make_batch(pipe.val_split, {0, 3}, cfg.t_h,
                                 reloaded->required_pad());
    ad::NoGradGuard ng;
    auto a = model->forward(in, false);
    auto b = reloaded->forward(in, false);
    for (std::int64_t i = 0; i < a->value.size(); ++i) REQUIRE(a->value[i] == b->value[i]);
}

TEST_CASE("checkpoint with a bad magic is rejected") {
    testutil::TempDir tmp("badmagic");
    const std::string path = (tmp.path() / "junk.ckpt").string();
    testutil::write_file(tmp.path() / "junk.ckpt", "NOTACKPT\ngarbage");
    REQUIRE_THROWS_AS(read_checkpoint(path), DataError);
}

TEST_CASE("adam optimizes a convex bowl") {
    auto w = ad::parameter(Tensor({2}, {3.0, -2.0}));
    Adam opt({w}, 0.05, 0.0);
    for (int i = 0; i < 400; ++i) {
        ad::zero_grad({w});
        auto loss = ad::sum_all(ad::mul(w, w));
        ad::backward(loss);
        opt.clip_gradients(5.0);
        opt.step();
    }
    REQUIRE(std::abs(w->value[0]) < 1e-2);
    REQUIRE(std::abs(w->value[1]) < 1e-2);
}

TEST_CASE("gradient clipping caps the global norm") {
    auto w = ad::parameter(Tensor({2}, {0.0, 0.0}));
    Adam opt({w}, 0.1, 0.0);
    w->ensure_grad();
    w->grad[0] = 30.0;
    w->grad[1] = 40.0; // norm 50
    opt.clip_gradients(5.0);
    const double norm = std::hypot(w->grad[0], w->grad[1]);
    REQUIRE(norm == Catch::Approx(5.0).epsilon(1e-12));
    REQUIRE(w->grad[0] / w->grad[1] == Catch::Approx(0.75));
}
