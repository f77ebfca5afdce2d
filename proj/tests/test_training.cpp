#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "confshare/presets.hpp"
#include "confshare/training.hpp"
#include "doctest.h"
#include "model_fixture.hpp"

using namespace confshare;
using namespace testutil;

namespace {

ToyTaskSpec toy_task(const ModelConfig& c, int64_t frames = 32, int64_t batch = 4) {
    ToyTaskSpec spec;
    spec.feature_dim = c.input_dim;
    spec.num_classes = c.num_classes;
    spec.frames = frames;
    spec.batch = batch;
    return spec;
}

std::string hex(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

// Reference run of the toy task, recorded once and frozen.
const std::string kFrozenInitialLoss = "0x1.207b7f285a813p+1";
const std::string kFrozenFinalLoss = "0x1.669c18ab55014p-7";

}  // namespace

TEST_CASE("toy batches") {
    ToyTaskSpec spec;
    SUBCASE("shape contract") {
        const ToyBatch b = generate_toy_batch(spec, 3, 0);
        CHECK(b.features.shape() == Shape{4, 32, 80});
        REQUIRE(b.labels.size() == 4 * 32);
        for (int l : b.labels) CHECK((l >= 0 && l < 8));
    }
    SUBCASE("pure function of seed and index") {
        const ToyBatch a = generate_toy_batch(spec, 3, 5), b = generate_toy_batch(spec, 3, 5);
        CHECK(a.features.bit_equal(b.features));
        CHECK(a.labels == b.labels);
        const ToyBatch c = generate_toy_batch(spec, 3, 6), d = generate_toy_batch(spec, 4, 5);
        CHECK_FALSE(a.features.bit_equal(c.features));
        CHECK_FALSE(a.features.bit_equal(d.features));
    }
    SUBCASE("noise stays within bounds of the chosen prototype") {
        const Tensor protos = toy_prototypes(spec, 3);
        const ToyBatch b = generate_toy_batch(spec, 3, 1);
        double worst = 0.0;
        for (size_t f = 0; f < b.labels.size(); ++f)
            for (int64_t j = 0; j < 80; ++j) {
                const double diff = b.features[static_cast<int64_t>(f) * 80 + j] - protos.at(b.labels[f], j);
                worst = std::max(worst, std::abs(diff));
            }
        CHECK(worst <= 0.3);
        CHECK(worst > 0.0);
    }
    SUBCASE("noise-free frames are recovered by the nearest prototype") {
        spec.noise_scale = 0.0;
        const Tensor protos = toy_prototypes(spec, 9);
        const ToyBatch b = generate_toy_batch(spec, 9, 2);
        int correct = 0;
        for (size_t f = 0; f < b.labels.size(); ++f) {
            int best = -1;
            double best_dist = std::numeric_limits<double>::infinity();
            for (int k = 0; k < 8; ++k) {
                double dist = 0.0;
                for (int64_t j = 0; j < 80; ++j) {
                    const double diff = b.features[static_cast<int64_t>(f) * 80 + j] - protos.at(k, j);
                    dist += diff * diff;
                }
                if (dist < best_dist) best_dist = dist, best = k;
            }
            correct += best == b.labels[f];
        }
        CHECK(correct == static_cast<int>(b.labels.size()));
    }
}

TEST_CASE("learning rate zero leaves the model untouched") {
    const ModelConfig c = tiny_config(8, 2);
    Model model = build_model(c, repeat_plan(1, 2), 5);
    const ParameterStore before = model.store;
    OptimizerState opt;
    opt.lr = 0.0;
    const TrainReport rep = train_steps(model, toy_task(c, 8, 2), opt, 4, 5);
    CHECK(model.store.bit_equal(before));
    REQUIRE(rep.losses.size() == 4);
    // Each step draws a fresh batch, so only the batch-0 loss is comparable.
    CHECK(rep.losses[0] == batch_loss(c, model.store, model.schedule, generate_toy_batch(toy_task(c, 8, 2), 5, 0)));
    OptimizerState opt2;
    opt2.lr = 0.0;
    Model again = build_model(c, repeat_plan(1, 2), 5);
    const ToyBatch fixed = generate_toy_batch(toy_task(c, 8, 2), 5, 0);
    for (int s = 0; s < 3; ++s) {
        const LossResult r = loss_and_grads(again, fixed);
        CHECK(r.loss == rep.losses[0]);
        opt2.apply(again.store, r.grads);
    }
}

TEST_CASE("optimizer moments mirror parameter shapes") {
    const ModelConfig c = tiny_config(8, 2);
    Model model = build_model(c, repeat_plan(2, 1), 1);
    OptimizerState opt;
    const LossResult r = loss_and_grads(model, generate_toy_batch(toy_task(c, 4, 1), 1, 0));
    opt.apply(model.store, r.grads);
    CHECK(opt.step == 1);
    for (const auto& [key, t] : model.store.tensors()) {
        CHECK(opt.first_moment.at(key).shape() == t.shape());
        CHECK(opt.second_moment.at(key).shape() == t.shape());
    }
}

TEST_CASE("toy training run") {
    const ModelConfig c = toy_training_config();
    Model model = build_model(c, toy_training_plan(), kToySeed);
    OptimizerState opt;
    const TrainReport rep = train_steps(model, toy_task(c), opt, kToySteps, kToySeed);
    REQUIRE(rep.losses.size() == static_cast<size_t>(kToySteps));
    for (double l : rep.losses) CHECK(std::isfinite(l));
    CHECK(rep.initial_loss == rep.losses.front());
    CHECK(rep.final_loss == rep.losses.back());
    CHECK(rep.final_loss <= 0.5 * rep.initial_loss);
    CHECK(hex(rep.initial_loss) == kFrozenInitialLoss);
    CHECK(hex(rep.final_loss) == kFrozenFinalLoss);

    SUBCASE("moving average trends down") {
        constexpr size_t window = 20;
        std::vector<double> avg;
        for (size_t i = 0; i + window <= rep.losses.size(); ++i) {
            double s = 0.0;
            for (size_t j = i; j < i + window; ++j) s += rep.losses[j];
            avg.push_back(s / window);
        }
        size_t non_increasing = 0;
        for (size_t i = 0; i + 1 < avg.size(); ++i) non_increasing += avg[i + 1] <= avg[i];
        CHECK(static_cast<double>(non_increasing) >= 0.9 * static_cast<double>(avg.size() - 1));
    }
}

TEST_CASE("train reports are byte-identical across runs") {
    const ModelConfig c = tiny_config(8, 2);
    auto run = [&] {
        Model m = build_model(c, repeat_plan(2, 2), 21);
        OptimizerState opt;
        return serialize_train_report(train_steps(m, toy_task(c, 8, 2), opt, 10, 21));
    };
    const std::string a = run(), b = run();
    CHECK(a == b);
    CHECK(a.rfind("# confshare train report v1\n", 0) == 0);
    CHECK(a.find("# seed 21\n") != std::string::npos);
    CHECK(a.find("\n9\t") != std::string::npos);
}

TEST_CASE("train_steps rejects mismatched tasks and reports divergence") {
    const ModelConfig c = tiny_config(8, 2);
    Model model = build_model(c, repeat_plan(1, 1), 2);
    OptimizerState opt;
    ToyTaskSpec wrong = toy_task(c, 4, 1);
    wrong.num_classes = 3;
    CHECK_THROWS_AS(train_steps(model, wrong, opt, 1, 2), std::invalid_argument);

    opt.lr = 1e300;
    try {
        train_steps(model, toy_task(c, 4, 1), opt, 5, 2);
        FAIL("expected divergence");
    } catch (const TrainingDiverged& e) {
        CHECK(e.step() == 1);
        CHECK(std::string(e.what()).find("step 1") != std::string::npos);
    }
}

TEST_CASE("a shared model and its unshared clone part ways after one update") {
    const ModelConfig c = tiny_config(8, 2);
    Model shared = build_model(c, repeat_plan(1, 3), 4);
    Model clone = build_model(c, repeat_plan(3, 1), 4);
    for (auto& [key, t] : clone.store.tensors()) t = shared.store.at({key.section, key.tensor, 1});
    const ToyTaskSpec task = toy_task(c, 6, 2);
    const ToyBatch b0 = generate_toy_batch(task, 4, 0);
    CHECK(batch_loss(c, shared.store, shared.schedule, b0) == batch_loss(c, clone.store, clone.schedule, b0));

    OptimizerState o1, o2;
    train_steps(shared, task, o1, 1, 4);
    train_steps(clone, task, o2, 1, 4);
    CHECK(batch_loss(c, shared.store, shared.schedule, b0) != batch_loss(c, clone.store, clone.schedule, b0));
}

TEST_CASE("gradcheck_model") {
    GradcheckOptions opts;
    SUBCASE("an empty selection passes vacuously") {
        const ModelConfig c = tiny_config(8, 2);
        const Model m = build_model(c, repeat_plan(1, 1), 1);
        const GradcheckReport r = gradcheck_model(m, generate_toy_batch(toy_task(c, 4, 1), 1, 0), opts,
                                                  std::vector<ParamKey>{});
        CHECK(r.passed);
        CHECK(r.tensors.empty());
        CHECK(r.max_rel_error == 0.0);
    }
    SUBCASE("dense single block") {
        const ModelConfig c = tiny_config(8, 2);
        const Model m = build_model(c, repeat_plan(1, 1), 2);
        const GradcheckReport r = gradcheck_model(m, generate_toy_batch(toy_task(c, 6, 2), 2, 0), opts);
        CHECK(r.passed);
        CHECK(r.max_rel_error < 1e-5);
        CHECK(r.tensors.size() == m.store.tensors().size());
    }
    SUBCASE("shared low-rank layers accumulate over four uses") {
        const ModelConfig c = tiny_config(16, 2);
        SharingPlan p = repeat_plan(2, 2);
        p.lowrank = LowRankSpec{4};
        const Model m = build_model(c, p, 3);
        const GradcheckReport r = gradcheck_model(m, generate_toy_batch(toy_task(c, 6, 2), 3, 0), opts);
        CHECK(r.passed);
        CHECK(r.max_rel_error < 1e-5);
    }
    SUBCASE("zero tolerance fails on inexact differences") {
        const ModelConfig c = tiny_config(8, 2);
        const Model m = build_model(c, repeat_plan(1, 1), 2);
        GradcheckOptions strict = opts;
        strict.tol = 0.0;
        strict.samples_per_tensor = 2;
        CHECK_FALSE(gradcheck_model(m, generate_toy_batch(toy_task(c, 4, 1), 2, 0), strict).passed);
    }
}

TEST_CASE("every small preset with at most eight virtual layers passes gradcheck") {
    GradcheckOptions opts;
    opts.samples_per_tensor = 3;
    int checked = 0;
    for (const auto& name : preset_names()) {
        const Preset p = preset(name + "-small");
        if (p.plan.virtual_layers > 8) continue;
        CAPTURE(p.name);
        const Model m = build_model(p.config, p.plan, 11);
        const GradcheckReport r = gradcheck_model(m, generate_toy_batch(toy_task(p.config, 4, 1), 11, 0), opts);
        CHECK(r.passed);
        CHECK(r.max_rel_error < 1e-5);
        ++checked;
    }
    CHECK(checked >= 6);
}
