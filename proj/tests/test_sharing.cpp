#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "confshare/sharing.hpp"
#include "confshare/training.hpp"
#include "model_fixture.hpp"

using namespace confshare;
using testutil::random_tensor;
using testutil::tiny_config;

namespace {

std::vector<int64_t> iota1(int64_t n) {
    std::vector<int64_t> v(static_cast<size_t>(n));
    std::iota(v.begin(), v.end(), 1);
    return v;
}

SharingPlan uniform_plan(std::vector<int64_t> ids) {
    SharingPlan p;
    p.virtual_layers = static_cast<int64_t>(ids.size());
    for (auto& v : p.index) v = ids;
    return p;
}

bool has_message(const std::vector<PlanViolation>& vs, const std::string& vector, const std::string& text) {
    return std::any_of(vs.begin(), vs.end(), [&](const PlanViolation& v) {
        return v.vector == vector && v.message.find(text) != std::string::npos;
    });
}

int64_t groups_in_store(const ParameterStore& s, Section section, const std::string& tensor) {
    int64_t n = 0;
    for (const auto& [key, t] : s.tensors()) n += key.section == section && key.tensor == tensor;
    return n;
}

}  // namespace

TEST_CASE("validate_plan") {
    CHECK(validate_plan(uniform_plan({1, 2, 3, 4})).empty());

    SharingPlan bad_min = uniform_plan({1, 2, 3, 4});
    bad_min.indices(ModuleKind::Attention) = {2, 2, 3, 3};
    auto v = validate_plan(bad_min);
    REQUIRE(v.size() == 1);
    CHECK(has_message(v, "I_A", "minimum group id must be 1"));

    SharingPlan bad_len = uniform_plan({1, 2, 3, 4});
    bad_len.indices(ModuleKind::Conv) = {1, 2, 3};
    v = validate_plan(bad_len);
    REQUIRE(v.size() == 1);
    CHECK(has_message(v, "I_C", "length must equal V"));

    SharingPlan bad_max = uniform_plan({1, 2, 3, 4});
    bad_max.indices(ModuleKind::FFEnd) = {1, 2, 9, 4};
    v = validate_plan(bad_max);
    REQUIRE(v.size() == 1);
    CHECK(has_message(v, "I_FE", "maximum group id must not exceed V"));
    CHECK(v.front().position == 2);
    CHECK(v.front().str() == "I_FE[2]: maximum group id must not exceed V (found 9, V=4)");

    SharingPlan many = uniform_plan({1, 2});
    many.indices(ModuleKind::FFStart) = {0, 5, 7};
    v = validate_plan(many);
    CHECK(v.size() == 4);

    SharingPlan rank0 = uniform_plan({1});
    rank0.lowrank = LowRankSpec{0};
    CHECK(has_message(validate_plan(rank0), "lowrank", "rank must be at least 1"));
}

TEST_CASE("repeat_plan") {
    SharingPlan sl5 = repeat_plan(4, 3);
    CHECK(sl5.virtual_layers == 12);
    for (ModuleKind m : kModules) CHECK(sl5.indices(m) == std::vector<int64_t>{1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4});
    CHECK(repeat_plan(1, 3).indices(ModuleKind::Conv) == std::vector<int64_t>{1, 1, 1});
    CHECK(repeat_plan(4, 1).indices(ModuleKind::FFEnd) == std::vector<int64_t>{1, 2, 3, 4});
    CHECK(repeat_plan({2, 1}).indices(ModuleKind::FFStart) == std::vector<int64_t>{1, 1, 2});
    CHECK_THROWS_AS(repeat_plan(4, 0), std::invalid_argument);
    CHECK_THROWS_AS(repeat_plan({1, -2}), std::invalid_argument);
    CHECK_THROWS_AS(repeat_plan(0, 2), std::invalid_argument);
}

TEST_CASE("repeat_plan gives V = N*R and N groups per module") {
    for (int64_t n = 1; n <= 6; ++n)
        for (int64_t r = 1; r <= 5; ++r) {
            const SharingPlan p = repeat_plan(n, r);
            CHECK(p.virtual_layers == n * r);
            CHECK(validate_plan(p).empty());
            const GroupCounts g = physical_group_counts(p);
            for (ModuleKind m : kModules) CHECK(g.of(m) == n);
        }
}

TEST_CASE("unshare_module") {
    const SharingPlan sl5 = repeat_plan(4, 3);
    const SharingPlan sm2 = unshare_module(sl5, ModuleKind::Conv);
    CHECK(sm2.indices(ModuleKind::Conv) == iota1(12));
    CHECK(sm2.indices(ModuleKind::Attention) == sl5.indices(ModuleKind::Attention));
    const GroupCounts g = physical_group_counts(sm2);
    CHECK(g.of(ModuleKind::Conv) == 12);
    CHECK(g.of(ModuleKind::FFStart) == 4);
    CHECK(g.of(ModuleKind::Attention) == 4);
    CHECK(g.of(ModuleKind::FFEnd) == 4);

    const SharingPlan sm4 = unshare_module(unshare_module(sl5, ModuleKind::Attention), ModuleKind::Conv);
    CHECK(sm4.indices(ModuleKind::Attention) == iota1(12));
    CHECK(sm4.indices(ModuleKind::Conv) == iota1(12));
    CHECK(unshare_module(sm2, ModuleKind::Conv) == sm2);
    CHECK(sm4.virtual_layers == 12);
}

TEST_CASE("unshare_subcomponent") {
    const SharingPlan sl5 = repeat_plan(4, 3);
    const SharingPlan sc4 = unshare_subcomponent(sl5, {ModuleKind::Attention, SubName::Key});
    GroupCounts g = physical_group_counts(sc4);
    CHECK(g.of({ModuleKind::Attention, SubName::Key}) == 12);
    for (SubName s : {SubName::Query, SubName::Value, SubName::Post, SubName::PosQuery, SubName::MiscSmall}) {
        CHECK(g.of({ModuleKind::Attention, s}) == 4);
    }
    CHECK(sc4.virtual_layers == 12);

    const SharingPlan sc6 = unshare_subcomponent(sl5, {ModuleKind::Conv, SubName::DepthConv});
    Binding b = bind_parameters(tiny_config(8, 2), sc6, 1);
    CHECK(groups_in_store(b.store, Section::Conv, "kdepth") == 12);
    CHECK(groups_in_store(b.store, Section::Conv, "wpre") == 4);

    const SharingPlan sc10 = unshare_misc_small(sl5);
    Binding m = bind_parameters(tiny_config(8, 2), sc10, 1);
    for (const char* t : {"ln_gamma", "ln_beta", "b1", "b2"}) CHECK(groups_in_store(m.store, Section::FFStart, t) == 12);
    for (const char* t : {"bq", "bk", "bpos", "bpost"}) CHECK(groups_in_store(m.store, Section::Attention, t) == 12);
    for (const char* t : {"norm_gamma", "norm_beta", "bpre", "bpost"}) CHECK(groups_in_store(m.store, Section::Conv, t) == 12);
    CHECK(groups_in_store(m.store, Section::FFEnd, "final_ln_gamma") == 12);
    CHECK(groups_in_store(m.store, Section::FFEnd, "w1") == 4);
    CHECK(groups_in_store(m.store, Section::Conv, "kdepth") == 4);

    CHECK_THROWS_AS(unshare_subcomponent(sl5, {ModuleKind::Conv, SubName::Key}), std::invalid_argument);
    CHECK_THROWS_WITH(parse_subcomponent("conv.key"), doctest::Contains("attention.key"));
    CHECK(parse_subcomponent("Attention.Key") == SubComponentId{ModuleKind::Attention, SubName::Key});
    CHECK(parse_subcomponent("ff_end.linear2") == SubComponentId{ModuleKind::FFEnd, SubName::Linear2});
}

TEST_CASE("sub-component override wins over the module index") {
    SharingPlan p = unshare_subcomponent(repeat_plan(2, 2), {ModuleKind::Conv, SubName::PostConv});
    for (int64_t layer = 0; layer < 4; ++layer) {
        CHECK(bound_group(p, {ModuleKind::Conv, SubName::PostConv}, layer) == layer + 1);
        CHECK(bound_group(p, {ModuleKind::Conv, SubName::PreConv}, layer) == layer / 2 + 1);
    }
}

TEST_CASE("canonicalize is idempotent and order preserving") {
    Rng rng(10);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<int64_t> ids(1 + rng.below(10));
        for (auto& v : ids) v = 1 + static_cast<int64_t>(rng.below(6));
        const auto c = canonicalize(ids);
        CHECK(canonicalize(c) == c);
        int64_t next = 1;
        for (size_t i = 0; i < ids.size(); ++i) {
            for (size_t j = 0; j < ids.size(); ++j) CHECK((ids[i] == ids[j]) == (c[i] == c[j]));
            if (c[i] == next) ++next;
            CHECK(c[i] < next);
        }
    }
}

TEST_CASE("unsharing never changes V") {
    const SharingPlan base = repeat_plan(3, 2);
    for (ModuleKind m : kModules) {
        CHECK(unshare_module(base, m).virtual_layers == 6);
        for (SubName s : subcomponents_of(m)) CHECK(unshare_subcomponent(base, {m, s}).virtual_layers == 6);
    }
    CHECK(unshare_misc_small(base).virtual_layers == 6);
}

TEST_CASE("bind_parameters") {
    const ModelConfig c = tiny_config(8, 2);

    SUBCASE("SL5 allocates four groups per module and twelve bindings") {
        Binding b = bind_parameters(c, repeat_plan(4, 3), 5);
        CHECK(b.schedule.layers.size() == 12);
        for (auto [s, t] : {std::pair{Section::FFStart, "w1"}, {Section::Attention, "wq"}, {Section::Conv, "kdepth"},
                            {Section::FFEnd, "w2"}}) {
            CHECK(groups_in_store(b.store, s, t) == 4);
        }
        CHECK(b.schedule.layers[5].slots.at("attention/wq") == ParamKey{Section::Attention, "wq", 2});
        CHECK(b.schedule.layers[11].slots.at("conv/kdepth") == ParamKey{Section::Conv, "kdepth", 4});
    }
    SUBCASE("every schedule key exists in the store") {
        SharingPlan p = unshare_subcomponent(unshare_module(repeat_plan(2, 3), ModuleKind::Attention),
                                             {ModuleKind::FFEnd, SubName::Linear1});
        Binding b = bind_parameters(c, p, 5);
        CHECK(static_cast<int64_t>(b.schedule.layers.size()) == p.virtual_layers);
        for (const auto& layer : b.schedule.layers)
            for (const auto& [slot, key] : layer.slots) CHECK(b.store.contains(key));
    }
    SUBCASE("(1,1) matches the plain single block") {
        Binding a = bind_parameters(c, repeat_plan(1, 1), 5);
        Binding b = bind_parameters(c, uniform_plan({1}), 5);
        CHECK(a.store.bit_equal(b.store));
    }
    SUBCASE("same seed gives bit-identical stores") {
        Binding a = bind_parameters(c, repeat_plan(2, 2), 9);
        Binding b = bind_parameters(c, repeat_plan(2, 2), 9);
        CHECK(a.store.bit_equal(b.store));
        CHECK_FALSE(a.store.bit_equal(bind_parameters(c, repeat_plan(2, 2), 10).store));
        CHECK(a.store.token() != b.store.token());
    }
    SUBCASE("initializer ranges") {
        Binding b = bind_parameters(c, repeat_plan(1, 1), 9);
        for (const auto& [key, t] : b.store.tensors()) {
            if (key.tensor.find("gamma") != std::string::npos) {
                for (double v : t.data()) CHECK(v == 1.0);
            } else if (t.rank() == 1) {
                for (double v : t.data()) CHECK(v == 0.0);
            } else {
                const double bound = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
                for (double v : t.data()) CHECK(std::abs(v) <= bound);
            }
        }
    }
    SUBCASE("invalid plans are rejected with their violations") {
        SharingPlan bad = repeat_plan(2, 2);
        bad.indices(ModuleKind::Attention) = {2, 2, 3, 3};
        CHECK_THROWS_WITH_AS(bind_parameters(c, bad, 1), doctest::Contains("minimum group id must be 1"),
                             std::invalid_argument);
    }
}

TEST_CASE("perturbing a shared tensor changes exactly the layers bound to it") {
    const ModelConfig c = tiny_config(8, 2);
    Binding b = bind_parameters(c, repeat_plan(2, 2), 3);
    testutil::randomize(b.store, 4);
    Rng rng(12);
    const Tensor x = random_tensor({4, 8}, rng);

    auto per_layer = [&](const ParameterStore& store) {
        Tape tape;
        LeafMap leaves = make_leaves(tape, store, false);
        const EncoderParams p = materialize(tape, c, store, b.schedule, leaves);
        std::vector<Tensor> outs;
        for (const auto& layer : p.layers) outs.push_back(conformer_block(tape.constant(x), layer).value());
        return outs;
    };
    const auto before = per_layer(b.store);
    for (const auto& [key, t] : b.store.tensors()) {
        if (key.section == Section::Frontend || key.section == Section::Head) continue;
        ParameterStore probe = b.store;
        probe.at(key)[0] += 0.25;
        const auto after = per_layer(probe);
        for (size_t i = 0; i < after.size(); ++i) {
            bool bound = false;
            for (const auto& [slot, k] : b.schedule.layers[i].slots) bound = bound || k == key;
            INFO(key.str() << " layer " << i);
            CHECK(!after[i].bit_equal(before[i]) == bound);
        }
    }
}

TEST_CASE("shared gradient equals the sum over an unshared clone") {
    ModelConfig c = tiny_config(8, 2);
    const Model shared = build_model(c, repeat_plan(1, 3), 2);
    Model clone = build_model(c, repeat_plan(3, 1), 2);
    for (auto& [key, t] : clone.store.tensors()) t = shared.store.at(ParamKey{key.section, key.tensor, 1});

    ToyTaskSpec spec;
    spec.frames = 6;
    spec.batch = 2;
    const ToyBatch batch = generate_toy_batch(spec, 3, 0);
    const LossResult a = loss_and_grads(shared, batch);
    const LossResult b = loss_and_grads(clone, batch);
    CHECK(a.loss == b.loss);

    for (const auto& [key, t] : shared.store.tensors()) {
        const Tensor& g = a.grads.at(key.str());
        const bool per_layer = key.section != Section::Frontend && key.section != Section::Head;
        for (int64_t i = 0; i < t.numel(); ++i) {
            double expect = 0.0;
            if (per_layer) {
                for (int64_t grp = 1; grp <= 3; ++grp) expect += b.grads.at(ParamKey{key.section, key.tensor, grp}.str())[i];
            } else {
                expect = b.grads.at(key.str())[i];
            }
            INFO(key.str() << "[" << i << "]");
            CHECK(std::abs(g[i] - expect) <= 1e-10 * std::max({std::abs(g[i]), std::abs(expect), 1e-8}));
        }
    }
}

TEST_CASE("param keys round-trip") {
    const ParamKey k{Section::Attention, "wq", 3};
    CHECK(k.str() == "attention/wq/3");
    CHECK(ParamKey::parse("attention/wq/3") == k);
    CHECK(ParamKey::parse("ff_start/w1_u/12") == ParamKey{Section::FFStart, "w1_u", 12});
    CHECK_THROWS(ParamKey::parse("nowhere/w/1"));
    CHECK_THROWS(ParamKey::parse("conv/w"));
}
