#include "confshare/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "confshare/accountant.hpp"
#include "confshare/checkpoint.hpp"
#include "confshare/config_io.hpp"
#include "confshare/presets.hpp"
#include "confshare/training.hpp"

namespace confshare {

namespace {

struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct Source {
    std::string preset;
    std::string config;
};

struct Resolved {
    ModelConfig config;
    SharingPlan plan;
    std::vector<std::string> notes;
};

Resolved resolve(const Source& src) {
    if (!src.preset.empty() && !src.config.empty()) throw UsageError("--preset and --config are mutually exclusive");
    if (src.preset.empty() && src.config.empty()) throw UsageError("one of --preset or --config is required");
    if (!src.preset.empty()) {
        Preset p;
        try {
            p = preset(src.preset);
        } catch (const UnknownPreset& e) {
            throw UsageError(e.what());
        }
        Resolved r{p.config, p.plan, {}};
        r.notes.push_back("preset " + p.name + ": " + p.provenance);
        if (!p.dim_reported) {
            r.notes.push_back("assumption: d=" + std::to_string(p.config.d) +
                              (p.name.ends_with("-small") ? " (reduced scale)" : " from the calibrated template"));
        }
        return r;
    }
    ConfigFile cf = load_config_file(src.config);
    return {cf.config, cf.plan, {"config " + src.config}};
}

void add_source(CLI::App* cmd, Source& src) {
    auto* p = cmd->add_option("--preset", src.preset, "Preset name (see `presets`)");
    auto* c = cmd->add_option("--config", src.config, "Config file path");
    p->excludes(c);
}

std::string fmt_millions(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2fM", v / 1e6);
    return buf;
}

ReportFormat parse_format(const std::string& f) { return f == "tsv" ? ReportFormat::tsv : ReportFormat::pretty; }

int cmd_presets(std::ostream& out, const std::string& format) {
    const bool tsv = format == "tsv";
    if (tsv) {
        out << "name\tphysical\tvirtual\trank\td\ttotal\treported_size\n";
    } else {
        char line[160];
        std::snprintf(line, sizeof line, "%-6s %8s %7s %5s %5s %12s %10s\n", "name", "physical", "virtual", "rank", "d",
                      "total", "reported");
        out << line;
    }
    for (const auto& name : preset_names()) {
        const Preset p = preset(name);
        const ParamReport r = count_params(p.config, p.plan);
        const auto groups = physical_group_counts(p.plan).module;
        const int64_t physical = *std::min_element(groups.begin(), groups.end());
        const std::string rank = p.plan.lowrank ? std::to_string(p.plan.lowrank->rank) : "-";
        const std::string reported = p.reported_size ? fmt_millions(*p.reported_size) : "-";
        if (tsv) {
            out << p.name << '\t' << physical << '\t' << p.plan.virtual_layers << '\t' << rank << '\t' << p.config.d << '\t'
                << r.grand_total << '\t' << reported << '\n';
        } else {
            char line[160];
            std::snprintf(line, sizeof line, "%-6s %8lld %7lld %5s %5lld %12lld %10s\n", p.name.c_str(),
                          static_cast<long long>(physical), static_cast<long long>(p.plan.virtual_layers), rank.c_str(),
                          static_cast<long long>(p.config.d), static_cast<long long>(r.grand_total), reported.c_str());
            out << line;
        }
    }
    return kExitOk;
}

int cmd_describe(std::ostream& out, const Source& src, const std::string& format) {
    const Resolved r = resolve(src);
    const ParamReport report = count_params(r.config, r.plan);
    out << report_table(report, parse_format(format));
    if (format != "tsv") {
        for (const auto& n : r.notes) out << "# " << n << '\n';
    }
    return kExitOk;
}

int cmd_validate(std::ostream& out, const Source& src) {
    const Resolved r = resolve(src);
    const auto config_issues = r.config.violations();
    const auto plan_issues = validate_plan(r.plan);
    for (const auto& v : config_issues) out << "config: " << v << '\n';
    for (const auto& v : plan_issues) out << "plan: " << v.str() << '\n';
    if (config_issues.empty() && plan_issues.empty() && r.plan.lowrank) {
        try {
            check_factor_rank(r.config.d, r.config.ff_hidden(), r.plan.lowrank->rank);
        } catch (const std::invalid_argument& e) {
            out << "plan: lowrank: " << e.what() << '\n';
            return kExitFailure;
        }
    }
    if (!config_issues.empty() || !plan_issues.empty()) return kExitFailure;
    out << "valid: V=" << r.plan.virtual_layers << ", digest " << config_digest(r.config, r.plan) << '\n';
    return kExitOk;
}

ToyTaskSpec task_for(const ModelConfig& c, int64_t frames, int64_t batch) {
    ToyTaskSpec spec;
    spec.feature_dim = c.input_dim;
    spec.num_classes = c.num_classes;
    spec.frames = frames;
    spec.batch = batch;
    return spec;
}

int cmd_gradcheck(std::ostream& out, const Source& src, uint64_t seed, const GradcheckOptions& base, int64_t frames,
                  int64_t batch) {
    const Resolved r = resolve(src);
    const Model model = build_model(r.config, r.plan, seed);
    const ToyBatch b = generate_toy_batch(task_for(r.config, frames, batch), seed, 0);
    GradcheckOptions opts = base;
    opts.seed = seed;
    const GradcheckReport rep = gradcheck_model(model, b, opts);
    char line[256];
    for (const auto& t : rep.tensors) {
        std::snprintf(line, sizeof line, "%-28s %3lld coords  max_rel_err %.3e  %s\n", t.key.c_str(),
                      static_cast<long long>(t.coordinates), t.max_rel_error, t.passed ? "ok" : "FAIL");
        out << line;
    }
    std::snprintf(line, sizeof line, "%s: %zu tensors, max_rel_err %.3e, tol %.1e\n", rep.passed ? "PASS" : "FAIL",
                  rep.tensors.size(), rep.max_rel_error, opts.tol);
    out << line;
    return rep.passed ? kExitOk : kExitFailure;
}

int cmd_train(std::ostream& out, std::ostream& err, const Source& src, uint64_t seed, int64_t steps, double lr,
              int64_t frames, int64_t batch, const std::string& path) {
    if (steps < 0) throw UsageError("--steps must be non-negative");
    const Resolved r = resolve(src);
    Model model = build_model(r.config, r.plan, seed);
    OptimizerState opt;
    opt.lr = lr;
    TrainReport rep;
    try {
        rep = train_steps(model, task_for(r.config, frames, batch), opt, steps, seed);
    } catch (const TrainingDiverged& e) {
        err << e.what() << '\n';
        return kExitFailure;
    }
    const std::string text = serialize_train_report(rep);
    if (path.empty()) {
        out << text;
    } else {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot open " + path + " for writing");
        f << text;
        char line[128];
        std::snprintf(line, sizeof line, "wrote %s: %lld steps, loss %.6f -> %.6f\n", path.c_str(),
                      static_cast<long long>(steps), rep.initial_loss, rep.final_loss);
        out << line;
    }
    return kExitOk;
}

int cmd_budget(std::ostream& out, const Source& src, int64_t budget, int64_t step) {
    if (step < 1) throw UsageError("--step-size must be positive");
    const Resolved r = resolve(src);
    SizeBudget b;
    b.max_params = budget;
    b.hard_ceiling = std::max(b.hard_ceiling, budget);
    const int64_t d = fit_dim_to_budget(b, r.plan, r.config, step);
    ModelConfig fitted = r.config;
    fitted.d = d;
    const ParamReport rep = count_params(fitted, r.plan);
    out << "d = " << d << '\n' << "grand_total = " << rep.grand_total << '\n' << "budget = " << budget << '\n';
    return kExitOk;
}

int cmd_init(std::ostream& out, const Source& src, uint64_t seed, const std::string& path) {
    if (path.empty()) throw UsageError("init needs --out");
    const Resolved r = resolve(src);
    const Model model = build_model(r.config, r.plan, seed);
    save_checkpoint(path, model);
    out << "wrote " << path << ": " << model.store.tensors().size() << " tensors, " << model.store.total_scalars()
        << " parameters\n";
    return kExitOk;
}

int cmd_inspect(std::ostream& out, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    const CheckpointSummary s = read_checkpoint_manifest(f);
    const Model model = load_checkpoint(path);
    out << "version " << s.version << '\n'
        << "seed " << s.seed << '\n'
        << "digest " << config_digest(model.config, model.plan) << '\n'
        << "tensors " << s.tensors.size() << '\n'
        << "parameters " << model.store.total_scalars() << '\n'
        << "payload_bytes " << s.payload_bytes << '\n';
    for (const auto& [key, shape] : s.tensors) out << "  " << key << ' ' << shape_str(shape) << '\n';
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Parameter sharing and low-rank toolkit for conformer encoders", "confshare"};
    app.require_subcommand(1);

    std::string format = "pretty";
    Source src;
    uint64_t seed = 0;
    int64_t steps = 200;
    int64_t budget = 5'000'000;
    int64_t step_size = 8;
    int64_t frames = 32;
    int64_t batch = 4;
    int64_t gc_frames = 8;
    int64_t gc_batch = 2;
    double lr = 1e-3;
    std::string out_path;
    std::string ckpt;
    GradcheckOptions gc;

    auto* presets = app.add_subcommand("presets", "List every preset with its counted size");
    presets->add_option("--format", format)->check(CLI::IsMember({"pretty", "tsv"}));

    auto* describe = app.add_subcommand("describe", "Print the parameter report");
    add_source(describe, src);
    describe->add_option("--format", format)->check(CLI::IsMember({"pretty", "tsv"}));

    auto* validate = app.add_subcommand("validate", "Check a config and plan");
    add_source(validate, src);

    auto* gradcheck = app.add_subcommand("gradcheck", "Compare backward gradients with finite differences");
    add_source(gradcheck, src);
    gradcheck->add_option("--seed", seed);
    gradcheck->add_option("--eps", gc.eps)->check(CLI::PositiveNumber);
    gradcheck->add_option("--tol", gc.tol)->check(CLI::PositiveNumber);
    gradcheck->add_option("--samples", gc.samples_per_tensor)->check(CLI::PositiveNumber);
    gradcheck->add_option("--frames", gc_frames)->check(CLI::PositiveNumber);
    gradcheck->add_option("--batch", gc_batch)->check(CLI::PositiveNumber);

    auto* train = app.add_subcommand("train", "Train on the synthetic task and write a loss report");
    add_source(train, src);
    train->add_option("--seed", seed);
    train->add_option("--steps", steps);
    train->add_option("--lr", lr)->check(CLI::NonNegativeNumber);
    train->add_option("--frames", frames)->check(CLI::PositiveNumber);
    train->add_option("--batch", batch)->check(CLI::PositiveNumber);
    train->add_option("--out", out_path, "Report file (default: standard output)");

    auto* budget_cmd = app.add_subcommand("budget", "Fit the model dimension to a parameter budget");
    add_source(budget_cmd, src);
    budget_cmd->add_option("--budget", budget)->check(CLI::PositiveNumber);
    budget_cmd->add_option("--step-size", step_size);

    auto* init = app.add_subcommand("init", "Initialize a model and write a checkpoint");
    add_source(init, src);
    init->add_option("--seed", seed);
    init->add_option("--out", out_path)->required();

    auto* inspect = app.add_subcommand("inspect", "Summarize a checkpoint");
    inspect->add_option("checkpoint", ckpt)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (presets->parsed()) return cmd_presets(out, format);
        if (describe->parsed()) return cmd_describe(out, src, format);
        if (validate->parsed()) return cmd_validate(out, src);
        if (gradcheck->parsed()) return cmd_gradcheck(out, src, seed, gc, gc_frames, gc_batch);
        if (train->parsed()) return cmd_train(out, err, src, seed, steps, lr, frames, batch, out_path);
        if (budget_cmd->parsed()) return cmd_budget(out, src, budget, step_size);
        if (init->parsed()) return cmd_init(out, src, seed, out_path);
        if (inspect->parsed()) return cmd_inspect(out, ckpt);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace confshare
