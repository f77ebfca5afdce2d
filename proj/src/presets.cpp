#include "confshare/presets.hpp"

#include <cmath>

#include "confshare/accountant.hpp"

namespace confshare {

namespace {

constexpr std::string_view kSmallSuffix = "-small";

struct Row {
    std::string name;
    SharingPlan plan;
    std::string provenance;
    double reported_size;
    std::optional<int64_t> dim;
};

SharingPlan with_rank(SharingPlan plan, int64_t k) {
    plan.lowrank = LowRankSpec{k};
    return plan;
}

SharingPlan unshare_all(SharingPlan plan, std::initializer_list<ModuleKind> modules) {
    for (ModuleKind m : modules) plan = unshare_module(std::move(plan), m);
    return plan;
}

int64_t handcrafted_dim() {
    SizeBudget budget{4'900'000, 6'000'000};
    return fit_dim_to_budget(budget, repeat_plan(8, 1), baseline_template());
}

std::vector<Row> build_rows() {
    using MK = ModuleKind;
    using SN = SubName;
    const SharingPlan sl5 = repeat_plan(4, 3);
    std::vector<Row> rows;
    rows.push_back({"B0", repeat_plan(16, 1), "overview table, Conformer (S) baseline, 16 blocks", 14.0e6, std::nullopt});
    rows.push_back({"B1", repeat_plan(8, 1), "overview table, handcrafted 4.9M model; 8 blocks, d fitted to 4.9M", 4.9e6,
                    handcrafted_dim()});
    for (int64_t r = 1; r <= 3; ++r) {
        rows.push_back({"SL" + std::to_string(r - 1), repeat_plan(1, r),
                        "layer-sharing table, 1 physical / " + std::to_string(r) + " virtual", 2.55e6, std::nullopt});
    }
    for (int64_t r = 1; r <= 4; ++r) {
        rows.push_back({"SL" + std::to_string(r + 2), repeat_plan(4, r),
                        "layer-sharing table, 4 physical / " + std::to_string(4 * r) + " virtual", 4.84e6, std::nullopt});
    }
    rows.push_back({"SM0", unshare_all(sl5, {MK::FFStart}), "module table, SL5 with FF start unshared", 4.93e6, 96});
    rows.push_back({"SM1", unshare_all(sl5, {MK::Attention}), "module table, SL5 with attention unshared", 4.99e6, 128});
    rows.push_back({"SM2", unshare_all(sl5, {MK::Conv}), "module table, SL5 with convolution unshared", 5.03e6, 136});
    rows.push_back({"SM3", unshare_all(sl5, {MK::FFEnd}), "module table, SL5 with FF end unshared", 4.93e6, 96});
    rows.push_back({"SM4", unshare_all(sl5, {MK::Attention, MK::Conv}),
                    "module table, SL5 with attention and convolution unshared", 5.03e6, 120});
    const std::vector<std::pair<SubComponentId, double>> subs = {
        {{MK::FFStart, SN::Linear1}, 6.02e6}, {{MK::FFStart, SN::Linear2}, 6.02e6}, {{MK::Attention, SN::Query}, 5.01e6},
        {{MK::Attention, SN::Value}, 5.01e6}, {{MK::Attention, SN::Key}, 5.01e6},   {{MK::Conv, SN::PreConv}, 5.17e6},
        {{MK::Conv, SN::DepthConv}, 5.35e6},  {{MK::Conv, SN::PostConv}, 5.01e6},   {{MK::FFEnd, SN::Linear1}, 6.02e6},
        {{MK::FFEnd, SN::Linear2}, 6.02e6},
    };
    for (size_t i = 0; i < subs.size(); ++i) {
        rows.push_back({"SC" + std::to_string(i), unshare_subcomponent(sl5, subs[i].first),
                        "sub-component table, SL5 with " + subcomponent_str(subs[i].first) + " unshared", subs[i].second,
                        std::nullopt});
    }
    rows.push_back({"SC10", unshare_misc_small(sl5), "sub-component table, SL5 with all small weights unshared", 5.36e6,
                    std::nullopt});
    rows.push_back({"LR0", repeat_plan(4, 1), "low-rank table, 4 dense blocks", 4.84e6, std::nullopt});
    rows.push_back({"LR1", with_rank(repeat_plan(8, 1), 50), "low-rank table, 8 blocks, k=50", 5.04e6, std::nullopt});
    rows.push_back({"LR2", with_rank(repeat_plan(12, 1), 20), "low-rank table, 12 blocks, k=20", 4.98e6, std::nullopt});
    rows.push_back({"LR3", with_rank(repeat_plan(16, 1), 6), "low-rank table, 16 blocks, k=6", 5.00e6, std::nullopt});
    for (int64_t r = 2; r <= 5; ++r) {
        rows.push_back({"LRS" + std::to_string(r - 2), with_rank(repeat_plan(8, r), 50),
                        "low-rank table, 8 physical / " + std::to_string(8 * r) + " virtual, k=50" +
                            (r < 5 ? " (uniform repeats inferred from the virtual count)" : ""),
                        5.04e6, std::nullopt});
    }
    return rows;
}

const std::vector<Row>& rows() {
    static const std::vector<Row> r = build_rows();
    return r;
}

Preset from_row(const Row& row) {
    Preset p;
    p.name = row.name;
    p.config = baseline_template();
    if (row.dim) p.config.d = *row.dim;
    p.plan = row.plan;
    p.provenance = row.provenance;
    p.reported_size = row.reported_size;
    p.dim_reported = row.dim.has_value() && row.name != "B1";
    return p;
}

Preset small_variant(Preset p) {
    p.name += kSmallSuffix;
    p.config.d = kSmallDim;
    p.config.heads = kSmallHeads;
    p.config.external_params = 0;
    if (p.plan.lowrank) p.plan.lowrank->rank = small_rank(p.plan.lowrank->rank);
    p.provenance += "; reduced scale";
    p.reported_size.reset();
    p.dim_reported = false;
    return p;
}

std::string valid_list() {
    std::string s;
    for (const auto& n : preset_names()) s += " " + n;
    s += " (each also as <name>-small)";
    return s;
}

}  // namespace

int64_t small_rank(int64_t k) {
    return std::max<int64_t>(1, std::llround(static_cast<double>(k) * kSmallDim / 144.0));
}

const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> n;
        for (const auto& r : rows()) n.push_back(r.name);
        return n;
    }();
    return names;
}

Preset preset(std::string_view name) {
    std::string_view base = name;
    const bool small = base.size() > kSmallSuffix.size() && base.ends_with(kSmallSuffix);
    if (small) base.remove_suffix(kSmallSuffix.size());
    for (const auto& r : rows()) {
        if (r.name == base) return small ? small_variant(from_row(r)) : from_row(r);
    }
    throw UnknownPreset("unknown preset '" + std::string(name) + "'; valid:" + valid_list());
}

std::vector<Preset> all_presets() {
    std::vector<Preset> out;
    for (const auto& r : rows()) out.push_back(from_row(r));
    for (const auto& r : rows()) out.push_back(small_variant(from_row(r)));
    return out;
}

}  // namespace confshare
