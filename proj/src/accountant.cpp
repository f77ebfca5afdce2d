#include "confshare/accountant.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace confshare {

int64_t subcomponent_size(const ModelConfig& config, SubComponentId sub, const std::optional<LowRankSpec>& lowrank) {
    const int64_t d = config.d;
    const int64_t hidden = config.ff_hidden();
    switch (sub.module) {
        case ModuleKind::FFStart:
        case ModuleKind::FFEnd:
            switch (sub.name) {
                case SubName::Linear1:
                case SubName::Linear2:
                    return lowrank ? lowrank_param_count(d, hidden, lowrank->rank, false)
                                   : dense_param_count(d, hidden, false);
                case SubName::MiscSmall: {
                    // input norm, both biases, and for FFEnd the closing block norm
                    const int64_t base = 2 * d + hidden + d;
                    return sub.module == ModuleKind::FFEnd ? base + 2 * d : base;
                }
                default: break;
            }
            break;
        case ModuleKind::Attention:
            switch (sub.name) {
                case SubName::Query:
                case SubName::Key:
                case SubName::Value:
                case SubName::Post:
                case SubName::PosQuery: return d * d;
                case SubName::MiscSmall: return 2 * d + 5 * d;
                default: break;
            }
            break;
        case ModuleKind::Conv:
            switch (sub.name) {
                case SubName::PreConv: return d * 2 * d;
                case SubName::DepthConv: return config.kernel * d;
                case SubName::PostConv: return d * d;
                // input norm, pre-conv bias (2d), depthwise norm, post-conv bias
                case SubName::MiscSmall: return 2 * d + 2 * d + 2 * d + d;
                default: break;
            }
            break;
    }
    throw std::invalid_argument("no size for sub-component " + subcomponent_str(sub));
}

int64_t block_size(const ModelConfig& config, const std::optional<LowRankSpec>& lowrank) {
    int64_t total = 0;
    for (ModuleKind m : kModules) {
        for (SubName s : subcomponents_of(m)) total += subcomponent_size(config, {m, s}, lowrank);
    }
    return total;
}

double ParamReport::module_percent(ModuleKind m) const {
    double p = 0.0;
    for (const auto& r : rows) {
        if (r.percent && r.module == module_label(m)) p += *r.percent;
    }
    return p;
}

ParamReport count_params(const ModelConfig& config, const SharingPlan& plan) {
    config.validate();
    const auto violations = validate_plan(plan);
    if (!violations.empty()) {
        std::string msg = "invalid sharing plan:";
        for (const auto& v : violations) msg += "\n  " + v.str();
        throw std::invalid_argument(msg);
    }
    if (plan.lowrank) check_factor_rank(config.d, config.ff_hidden(), plan.lowrank->rank);

    ParamReport report;
    report.virtual_layers = plan.virtual_layers;
    report.block_total = block_size(config, plan.lowrank);
    const GroupCounts groups = physical_group_counts(plan);

    const int64_t front = config.input_dim * config.d + config.d;
    report.rows.push_back({"Frontend", "Linear", 1, front, front, std::nullopt});
    for (ModuleKind m : kModules) {
        for (SubName s : subcomponents_of(m)) {
            const SubComponentId id{m, s};
            const int64_t g = groups.of(id);
            if (g == 0) continue;
            const int64_t per = subcomponent_size(config, id, plan.lowrank);
            const double pct = 100.0 * static_cast<double>(per) / static_cast<double>(report.block_total);
            report.rows.push_back({std::string(module_label(m)), std::string(sub_label(s)), g, per, g * per, pct});
        }
    }
    const int64_t head = config.d * config.num_classes + config.num_classes;
    report.rows.push_back({"Head", "Linear", 1, head, head, std::nullopt});

    for (const auto& r : report.rows) report.encoder_total += r.total;
    report.external_params = config.external_params;
    report.grand_total = report.encoder_total + report.external_params;
    return report;
}

namespace {

std::string fmt_percent(const std::optional<double>& p) {
    if (!p) return "-";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", *p);
    return buf;
}

}  // namespace

std::string report_table(const ParamReport& report, ReportFormat format) {
    std::ostringstream os;
    if (format == ReportFormat::tsv) {
        os << "module\tsub_component\tgroups\tper_group\ttotal\tpercent\n";
        for (const auto& r : report.rows) {
            os << r.module << '\t' << r.sub_component << '\t' << r.groups << '\t' << r.per_group << '\t' << r.total
               << '\t' << fmt_percent(r.percent) << '\n';
        }
        os << "External\t-\t-\t-\t" << report.external_params << "\t-\n";
        return os.str();
    }

    char line[160];
    std::snprintf(line, sizeof line, "%-10s %-12s %7s %10s %12s %8s\n", "module", "sub-comp", "groups", "per-group",
                  "total", "% block");
    os << line;
    std::string last_module;
    for (const auto& r : report.rows) {
        const bool first = r.module != last_module;
        last_module = r.module;
        std::snprintf(line, sizeof line, "%-10s %-12s %7lld %10lld %12lld %8s\n", first ? r.module.c_str() : "",
                      r.sub_component.c_str(), static_cast<long long>(r.groups), static_cast<long long>(r.per_group),
                      static_cast<long long>(r.total), fmt_percent(r.percent).c_str());
        os << line;
    }
    std::snprintf(line, sizeof line, "%-10s %-12s %7s %10s %12lld %8s\n", "External", "", "", "",
                  static_cast<long long>(report.external_params), "");
    os << line;
    os << "\nvirtual layers  " << report.virtual_layers << '\n';
    os << "block total     " << report.block_total << '\n';
    os << "encoder total   " << report.encoder_total << '\n';
    os << "grand total     " << report.grand_total << '\n';
    return os.str();
}

void SizeBudget::validate() const {
    if (max_params < 1) throw std::invalid_argument("budget max_params must be positive");
    if (hard_ceiling < 1) throw std::invalid_argument("budget hard_ceiling must be positive");
    if (max_params > hard_ceiling) {
        throw std::invalid_argument("budget max_params " + std::to_string(max_params) + " exceeds hard ceiling " +
                                    std::to_string(hard_ceiling));
    }
}

int64_t fit_dim_to_budget(const SizeBudget& budget, const SharingPlan& plan, const ModelConfig& template_config,
                          int64_t step) {
    budget.validate();
    if (step < 1) throw std::invalid_argument("budget step must be positive");
    constexpr int64_t kMaxDim = 16384;
    std::optional<int64_t> best;
    bool saw_usable = false;
    for (int64_t d = step; d <= kMaxDim; d += step) {
        ModelConfig cfg = template_config;
        cfg.d = d;
        if (d % cfg.heads != 0) continue;
        if (plan.lowrank && !(plan.lowrank->rank <= std::min(d, cfg.ff_hidden()) &&
                              lowrank_reduces(d, cfg.ff_hidden(), plan.lowrank->rank))) {
            continue;
        }
        const int64_t total = count_params(cfg, plan).grand_total;
        if (!saw_usable) {
            saw_usable = true;
            if (total > budget.max_params) {
                throw std::invalid_argument("budget " + std::to_string(budget.max_params) +
                                            " is infeasible: smallest usable d=" + std::to_string(d) + " needs " +
                                            std::to_string(total) + " parameters");
            }
        }
        // Counts grow with d, so the first overshoot ends the search.
        if (total > budget.max_params) break;
        best = d;
    }
    if (!best) throw std::invalid_argument("budget fit found no usable model dimension");
    return *best;
}

// ---------------------------------------------------------------------------
// Calibration

namespace {

double share_sse(const ModelConfig& cfg) {
    std::array<int64_t, 12> sizes{};
    size_t i = 0;
    const std::array<SubComponentId, 12> named = {{
        {ModuleKind::FFStart, SubName::Linear1}, {ModuleKind::FFStart, SubName::Linear2},
        {ModuleKind::Attention, SubName::Key}, {ModuleKind::Attention, SubName::Value},
        {ModuleKind::Attention, SubName::Query}, {ModuleKind::Attention, SubName::Post},
        {ModuleKind::Attention, SubName::PosQuery}, {ModuleKind::Conv, SubName::PreConv},
        {ModuleKind::Conv, SubName::DepthConv}, {ModuleKind::Conv, SubName::PostConv},
        {ModuleKind::FFEnd, SubName::Linear1}, {ModuleKind::FFEnd, SubName::Linear2},
    }};
    int64_t total = 0;
    for (const auto& id : named) {
        sizes[i] = subcomponent_size(cfg, id, std::nullopt);
        total += sizes[i++];
    }
    double sse = 0.0;
    for (size_t j = 0; j < sizes.size(); ++j) {
        const double pct = 100.0 * static_cast<double>(sizes[j]) / static_cast<double>(total);
        sse += (pct - kBaselineShares[j]) * (pct - kBaselineShares[j]);
    }
    return sse;
}

}  // namespace

Calibration calibrate_baseline() {
    Calibration best;
    int64_t best_gap = std::numeric_limits<int64_t>::max();
    for (int64_t d = 64; d <= 256; d += 8) {
        ModelConfig cfg;
        cfg.d = d;
        cfg.heads = kBaselineHeads;
        double local_sse = std::numeric_limits<double>::infinity();
        double local_e = 0.0;
        int64_t local_w = 0;
        for (int e8 = 16; e8 <= 96; ++e8) {
            cfg.ff_expansion = e8 / 8.0;
            for (int64_t w = 1; w <= 63; w += 2) {
                cfg.kernel = w;
                const double sse = share_sse(cfg);
                if (sse < local_sse) {
                    local_sse = sse;
                    local_e = cfg.ff_expansion;
                    local_w = w;
                }
            }
        }
        cfg.ff_expansion = local_e;
        cfg.kernel = local_w;
        const int64_t block = block_size(cfg, std::nullopt);
        const int64_t gap = std::abs(block - kBaselineBlockParams);
        if (gap < best_gap) {
            best_gap = gap;
            best.ff_expansion = local_e;
            best.kernel = local_w;
            best.d = d;
            best.share_sse = local_sse;
            best.block_params = block;
        }
    }
    ModelConfig cfg;
    cfg.d = best.d;
    cfg.ff_expansion = best.ff_expansion;
    cfg.kernel = best.kernel;
    cfg.heads = best.heads;
    for (ModuleKind m : kModules) {
        int64_t mod = 0;
        for (SubName s : subcomponents_of(m)) mod += subcomponent_size(cfg, {m, s}, std::nullopt);
        best.module_percent[static_cast<size_t>(m)] = 100.0 * static_cast<double>(mod) / static_cast<double>(best.block_params);
    }
    return best;
}

std::vector<std::string> Calibration::assumptions() const {
    char buf[200];
    std::vector<std::string> out;
    std::snprintf(buf, sizeof buf, "assumed ff_expansion=%.3f kernel=%lld (fit to baseline sub-component shares, SSE %.3f)",
                  ff_expansion, static_cast<long long>(kernel), share_sse);
    out.emplace_back(buf);
    std::snprintf(buf, sizeof buf, "assumed d=%lld heads=%lld (block %lld params vs 12.2M/16 = %lld target)",
                  static_cast<long long>(d), static_cast<long long>(heads), static_cast<long long>(block_params),
                  static_cast<long long>(kBaselineBlockParams));
    out.emplace_back(buf);
    std::snprintf(buf, sizeof buf, "assumed external_params=%lld (decoder, opaque)",
                  static_cast<long long>(kBaselineDecoderParams));
    out.emplace_back(buf);
    std::snprintf(buf, sizeof buf, "module shares: FFStart %.1f%% Attention %.1f%% Conv %.1f%% FFEnd %.1f%%",
                  module_percent[0], module_percent[1], module_percent[2], module_percent[3]);
    out.emplace_back(buf);
    return out;
}

const Calibration& baseline_calibration() {
    static const Calibration c = calibrate_baseline();
    return c;
}

const ModelConfig& baseline_template() {
    static const ModelConfig cfg = [] {
        const Calibration& c = baseline_calibration();
        ModelConfig m;
        m.d = c.d;
        m.ff_expansion = c.ff_expansion;
        m.kernel = c.kernel;
        m.heads = c.heads;
        m.external_params = kBaselineDecoderParams;
        return m;
    }();
    return cfg;
}

}  // namespace confshare
