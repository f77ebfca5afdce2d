#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "confshare/model_config.hpp"
#include "confshare/sharing.hpp"

namespace confshare {

/// One line of the parameter inventory.
struct ReportRow {
    std::string module;         // "FFStart", ..., "Frontend", "Head"
    std::string sub_component;  // "Linear1", ..., "MiscSmall", "Linear"
    int64_t groups = 0;
    int64_t per_group = 0;
    int64_t total = 0;
    std::optional<double> percent;  // share of one block; absent outside the block
};

struct ParamReport {
    std::vector<ReportRow> rows;
    int64_t block_total = 0;    // one block with every sub-component present once
    int64_t encoder_total = 0;  // Σ row totals
    int64_t external_params = 0;
    int64_t grand_total = 0;    // encoder_total + external_params
    int64_t virtual_layers = 0;

    /// Sum of block-row percentages of one module.
    double module_percent(ModuleKind m) const;
};

/// Parameters in one physical copy of a sub-component, from the layer formulas.
int64_t subcomponent_size(const ModelConfig& config, SubComponentId sub, const std::optional<LowRankSpec>& lowrank);
/// One block, every sub-component counted once.
int64_t block_size(const ModelConfig& config, const std::optional<LowRankSpec>& lowrank);

/// Counts every physical tensor of (config, plan) once. Throws std::invalid_argument for invalid input.
ParamReport count_params(const ModelConfig& config, const SharingPlan& plan);

enum class ReportFormat { tsv, pretty };

/// TSV: header `module sub_component groups per_group total percent`, tab separated,
/// counts as plain integers, percentages with one fractional digit ("-" outside the
/// block), closed by an External row.
std::string report_table(const ParamReport& report, ReportFormat format);

struct SizeBudget {
    int64_t max_params = 5'000'000;
    int64_t hard_ceiling = 6'000'000;

    void validate() const;
};

/// Largest d, a multiple of `step` and of template_config.heads, whose grand total stays within
/// budget.max_params. template_config.d is ignored. Throws std::invalid_argument when the smallest
/// usable d already exceeds the budget.
int64_t fit_dim_to_budget(const SizeBudget& budget, const SharingPlan& plan, const ModelConfig& template_config,
                          int64_t step = 8);

// ---------------------------------------------------------------------------
// Calibration of the unpublished baseline hyperparameters.

/// Per-sub-component shares of the 14M baseline block, in percent:
/// FFStart L1, L2; Attention Key, Value, Query, Post, PosQuery; Conv Pre, Depth, Post; FFEnd L1, L2.
inline constexpr std::array<double, 12> kBaselineShares = {19.5, 19.5, 2.8, 2.8, 2.8, 2.8, 2.8, 5.2, 0.2, 2.6, 19.5, 19.5};
inline constexpr std::array<double, 4> kBaselineModuleShares = {39.0, 14.0, 8.0, 39.0};
/// 12.2M encoder over 16 blocks.
inline constexpr int64_t kBaselineBlockParams = 762'500;
inline constexpr int64_t kBaselineDecoderParams = 1'800'000;
inline constexpr int64_t kBaselineHeads = 4;

struct Calibration {
    double ff_expansion = 0.0;
    int64_t kernel = 0;
    int64_t d = 0;
    int64_t heads = kBaselineHeads;
    double share_sse = 0.0;  // squared error against kBaselineShares, percent²
    int64_t block_params = 0;
    std::array<double, 4> module_percent{};  // full-block shares per module

    /// Human-readable assumption lines for reports.
    std::vector<std::string> assumptions() const;
};

/// Grid search: for every d in {64, 72, …, 256} pick (ff_expansion ∈ {2, 2.125, …, 12},
/// odd kernel ∈ [1, 63]) minimizing the squared error of the named sub-component shares;
/// then keep the d whose full block is closest to kBaselineBlockParams. Ties go to the
/// earlier grid point.
Calibration calibrate_baseline();

/// Calibrated architecture with the 1.8M decoder as external parameters. Cached.
const ModelConfig& baseline_template();
const Calibration& baseline_calibration();

}  // namespace confshare
