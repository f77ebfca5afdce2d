#include "confshare/config_io.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <vector>

#include "confshare/accountant.hpp"

namespace confshare {

namespace {

std::string trim(std::string_view s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

std::vector<std::string> split_list(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
    return out;
}

[[noreturn]] void fail(int line, const std::string& msg) {
    throw ConfigError("config line " + std::to_string(line) + ": " + msg);
}

int64_t parse_int(int line, const std::string& key, const std::string& v) {
    if (v.empty()) fail(line, key + " needs an integer value");
    errno = 0;
    char* end = nullptr;
    const long long x = std::strtoll(v.c_str(), &end, 10);
    if (errno != 0 || end != v.c_str() + v.size()) fail(line, key + ": '" + v + "' is not an integer");
    return x;
}

double parse_real(int line, const std::string& key, const std::string& v) {
    errno = 0;
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (v.empty() || errno != 0 || end != v.c_str() + v.size() || !std::isfinite(x)) {
        fail(line, key + ": '" + v + "' is not a number");
    }
    return x;
}

bool parse_bool(int line, const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail(line, key + ": '" + v + "' is not a boolean");
}

std::vector<int64_t> parse_ints(int line, const std::string& key, const std::string& v) {
    std::vector<int64_t> out;
    if (v.empty()) return out;
    for (const auto& item : split_list(v)) out.push_back(parse_int(line, key, item));
    return out;
}

std::string join(const std::vector<int64_t>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(v[i]);
    }
    return s;
}

}  // namespace

ConfigFile parse_config(std::string_view text) {
    ConfigFile out{baseline_template(), SharingPlan{}};
    std::optional<std::vector<int64_t>> repeats;
    std::array<std::optional<std::vector<int64_t>>, 4> vectors;
    std::optional<int64_t> virtual_layers;
    std::vector<ModuleKind> unshare_modules;
    std::set<std::string> seen;

    std::istringstream in{std::string(text)};
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const auto hash = raw.find('#');
        const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail(line_no, "expected 'section.key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!seen.insert(key).second) fail(line_no, "duplicate key " + key);

        ModelConfig& c = out.config;
        if (key == "model.d") c.d = parse_int(line_no, key, value);
        else if (key == "model.ff_expansion") c.ff_expansion = parse_real(line_no, key, value);
        else if (key == "model.heads") c.heads = parse_int(line_no, key, value);
        else if (key == "model.kernel") c.kernel = parse_int(line_no, key, value);
        else if (key == "model.input_dim") c.input_dim = parse_int(line_no, key, value);
        else if (key == "model.num_classes") c.num_classes = parse_int(line_no, key, value);
        else if (key == "model.t_max") c.t_max = parse_int(line_no, key, value);
        else if (key == "model.external_params") c.external_params = parse_int(line_no, key, value);
        else if (key == "plan.virtual_layers") virtual_layers = parse_int(line_no, key, value);
        else if (key == "plan.repeats") repeats = parse_ints(line_no, key, value);
        else if (key == "plan.share_misc_small") out.plan.share_misc_small = parse_bool(line_no, key, value);
        else if (key == "plan.lowrank_rank") {
            if (value != "none") out.plan.lowrank = LowRankSpec{parse_int(line_no, key, value)};
        } else if (key == "plan.unshare_modules") {
            for (const auto& item : split_list(value)) {
                const auto m = parse_module(item);
                if (!m) fail(line_no, "unknown module '" + item + "'");
                unshare_modules.push_back(*m);
            }
        } else if (key == "plan.unshared") {
            for (const auto& item : split_list(value)) {
                try {
                    out.plan.unshared.insert(parse_subcomponent(item));
                } catch (const std::invalid_argument& e) {
                    fail(line_no, e.what());
                }
            }
        } else if (key.rfind("plan.", 0) == 0 && parse_module(key.substr(5))) {
            vectors[static_cast<size_t>(*parse_module(key.substr(5)))] = parse_ints(line_no, key, value);
        } else {
            fail(line_no, "unknown key " + key);
        }
    }

    SharingPlan& plan = out.plan;
    if (repeats) {
        if (repeats->empty()) throw ConfigError("plan.repeats must list at least one block");
        for (int64_t r : *repeats) {
            if (r < 1) throw ConfigError("plan.repeats entries must be at least 1");
        }
        const SharingPlan base = repeat_plan(*repeats);
        plan.index = base.index;
        plan.virtual_layers = base.virtual_layers;
    }
    int64_t longest = 0;
    for (ModuleKind m : kModules) {
        if (vectors[static_cast<size_t>(m)]) {
            plan.indices(m) = *vectors[static_cast<size_t>(m)];
            longest = std::max<int64_t>(longest, static_cast<int64_t>(plan.indices(m).size()));
        }
    }
    if (!repeats) plan.virtual_layers = longest;
    if (virtual_layers) plan.virtual_layers = *virtual_layers;
    // Applied literally; the other vectors stay as written so validation still sees them.
    for (ModuleKind m : unshare_modules) {
        auto& ids = plan.indices(m);
        ids.assign(static_cast<size_t>(std::max<int64_t>(plan.virtual_layers, 0)), 0);
        for (size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int64_t>(i) + 1;
    }
    return out;
}

ConfigFile load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

std::string serialize_config(const ModelConfig& c, const SharingPlan& plan) {
    std::ostringstream os;
    char e[64];
    std::snprintf(e, sizeof e, "%.17g", c.ff_expansion);
    os << "model.d = " << c.d << '\n'
       << "model.ff_expansion = " << e << '\n'
       << "model.heads = " << c.heads << '\n'
       << "model.kernel = " << c.kernel << '\n'
       << "model.input_dim = " << c.input_dim << '\n'
       << "model.num_classes = " << c.num_classes << '\n'
       << "model.t_max = " << c.t_max << '\n'
       << "model.external_params = " << c.external_params << '\n'
       << "plan.virtual_layers = " << plan.virtual_layers << '\n';
    for (ModuleKind m : kModules) os << "plan." << module_name(m) << " = " << join(plan.indices(m)) << '\n';
    if (!plan.unshared.empty()) {
        os << "plan.unshared = ";
        bool first = true;
        for (const auto& s : plan.unshared) {
            if (!first) os << ", ";
            os << subcomponent_str(s);
            first = false;
        }
        os << '\n';
    }
    os << "plan.share_misc_small = " << (plan.share_misc_small ? "true" : "false") << '\n';
    if (plan.lowrank) os << "plan.lowrank_rank = " << plan.lowrank->rank << '\n';
    return os.str();
}

std::string config_digest(const ModelConfig& config, const SharingPlan& plan) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(serialize_config(config, plan))));
    return buf;
}

}  // namespace confshare
