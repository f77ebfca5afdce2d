#include "confshare/sharing.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>

namespace confshare {

// ---------------------------------------------------------------------------
// Names

std::string_view module_name(ModuleKind m) {
    switch (m) {
        case ModuleKind::FFStart: return "ff_start";
        case ModuleKind::Attention: return "attention";
        case ModuleKind::Conv: return "conv";
        case ModuleKind::FFEnd: return "ff_end";
    }
    return "?";
}

std::string_view module_label(ModuleKind m) {
    switch (m) {
        case ModuleKind::FFStart: return "FFStart";
        case ModuleKind::Attention: return "Attention";
        case ModuleKind::Conv: return "Conv";
        case ModuleKind::FFEnd: return "FFEnd";
    }
    return "?";
}

std::string_view index_vector_name(ModuleKind m) {
    switch (m) {
        case ModuleKind::FFStart: return "I_FS";
        case ModuleKind::Attention: return "I_A";
        case ModuleKind::Conv: return "I_C";
        case ModuleKind::FFEnd: return "I_FE";
    }
    return "?";
}

namespace {

struct SubNames {
    SubName id;
    std::string_view snake;
    std::string_view label;
};

constexpr std::array<SubNames, 11> kSubNames = {{
    {SubName::Linear1, "linear1", "Linear1"},
    {SubName::Linear2, "linear2", "Linear2"},
    {SubName::Query, "query", "Query"},
    {SubName::Key, "key", "Key"},
    {SubName::Value, "value", "Value"},
    {SubName::Post, "post", "Post"},
    {SubName::PosQuery, "pos_query", "PosQuery"},
    {SubName::PreConv, "pre_conv", "PreConv"},
    {SubName::DepthConv, "depth_conv", "DepthConv"},
    {SubName::PostConv, "post_conv", "PostConv"},
    {SubName::MiscSmall, "misc_small", "MiscSmall"},
}};

std::string lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace

std::string_view sub_name(SubName s) { return kSubNames[static_cast<size_t>(s)].snake; }
std::string_view sub_label(SubName s) { return kSubNames[static_cast<size_t>(s)].label; }

std::optional<ModuleKind> parse_module(std::string_view s) {
    const std::string l = lower(s);
    for (ModuleKind m : kModules) {
        if (l == module_name(m) || l == lower(module_label(m))) return m;
    }
    return std::nullopt;
}

std::optional<SubName> parse_sub_name(std::string_view s) {
    const std::string l = lower(s);
    for (const auto& n : kSubNames) {
        if (l == n.snake || l == lower(n.label)) return n.id;
    }
    return std::nullopt;
}

std::vector<SubName> subcomponents_of(ModuleKind m) {
    switch (m) {
        case ModuleKind::FFStart:
        case ModuleKind::FFEnd: return {SubName::Linear1, SubName::Linear2, SubName::MiscSmall};
        case ModuleKind::Attention:
            return {SubName::Key, SubName::Value, SubName::Query, SubName::Post, SubName::PosQuery, SubName::MiscSmall};
        case ModuleKind::Conv: return {SubName::PreConv, SubName::DepthConv, SubName::PostConv, SubName::MiscSmall};
    }
    return {};
}

bool is_valid_subcomponent(SubComponentId id) {
    const auto subs = subcomponents_of(id.module);
    return std::find(subs.begin(), subs.end(), id.name) != subs.end();
}

std::string subcomponent_str(SubComponentId id) {
    return std::string(module_name(id.module)) + "." + std::string(sub_name(id.name));
}

SubComponentId parse_subcomponent(std::string_view s) {
    const auto dot = s.find('.');
    if (dot == std::string_view::npos) {
        throw std::invalid_argument("sub-component '" + std::string(s) + "' must be written as module.name");
    }
    const auto m = parse_module(s.substr(0, dot));
    const auto n = parse_sub_name(s.substr(dot + 1));
    if (!m || !n || !is_valid_subcomponent({*m, *n})) {
        std::string msg = "unknown sub-component '" + std::string(s) + "'; valid:";
        for (ModuleKind mk : kModules) {
            for (SubName sn : subcomponents_of(mk)) msg += " " + subcomponent_str({mk, sn});
        }
        throw std::invalid_argument(msg);
    }
    return {*m, *n};
}

// ---------------------------------------------------------------------------
// Plans

std::string PlanViolation::str() const {
    std::string s = vector;
    if (position) s += "[" + std::to_string(*position) + "]";
    return s + ": " + message;
}

std::vector<PlanViolation> validate_plan(const SharingPlan& plan) {
    std::vector<PlanViolation> out;
    const int64_t v = plan.virtual_layers;
    if (v < 0) out.push_back({"V", std::nullopt, "virtual layer count must be non-negative"});
    for (ModuleKind m : kModules) {
        const auto& ids = plan.indices(m);
        const std::string name(index_vector_name(m));
        if (static_cast<int64_t>(ids.size()) != v) {
            out.push_back({name, std::nullopt,
                           "length must equal V (length " + std::to_string(ids.size()) + ", V=" + std::to_string(v) + ")"});
        }
        if (ids.empty()) continue;
        const int64_t mn = *std::min_element(ids.begin(), ids.end());
        if (mn != 1) {
            out.push_back({name, std::nullopt, "minimum group id must be 1 (found " + std::to_string(mn) + ")"});
        }
        for (size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] > v) {
                out.push_back({name, static_cast<int64_t>(i), "maximum group id must not exceed V (found " +
                                                                  std::to_string(ids[i]) + ", V=" + std::to_string(v) + ")"});
            }
        }
    }
    for (const SubComponentId& s : plan.unshared) {
        if (!is_valid_subcomponent(s)) {
            out.push_back({"unshared", std::nullopt, "unknown sub-component " + subcomponent_str(s)});
        }
    }
    if (plan.lowrank && plan.lowrank->rank < 1) {
        out.push_back({"lowrank", std::nullopt, "rank must be at least 1 (found " + std::to_string(plan.lowrank->rank) + ")"});
    }
    return out;
}

std::vector<int64_t> canonicalize(const std::vector<int64_t>& ids) {
    std::map<int64_t, int64_t> relabel;
    std::vector<int64_t> out;
    out.reserve(ids.size());
    for (int64_t id : ids) {
        auto [it, inserted] = relabel.try_emplace(id, static_cast<int64_t>(relabel.size()) + 1);
        out.push_back(it->second);
    }
    return out;
}

SharingPlan canonicalize(SharingPlan plan) {
    for (auto& ids : plan.index) ids = canonicalize(ids);
    return plan;
}

SharingPlan repeat_plan(const std::vector<int64_t>& repeats) {
    if (repeats.empty()) throw std::invalid_argument("repeat_plan: at least one physical block is required");
    std::vector<int64_t> ids;
    for (size_t i = 0; i < repeats.size(); ++i) {
        if (repeats[i] < 1) {
            throw std::invalid_argument("repeat_plan: repeat count for block " + std::to_string(i + 1) +
                                        " must be at least 1 (got " + std::to_string(repeats[i]) + ")");
        }
        ids.insert(ids.end(), static_cast<size_t>(repeats[i]), static_cast<int64_t>(i) + 1);
    }
    SharingPlan plan;
    plan.virtual_layers = static_cast<int64_t>(ids.size());
    for (auto& v : plan.index) v = ids;
    return plan;
}

SharingPlan repeat_plan(int64_t physical, int64_t repeats) {
    if (physical < 1) throw std::invalid_argument("repeat_plan: physical block count must be at least 1");
    return repeat_plan(std::vector<int64_t>(static_cast<size_t>(physical), repeats));
}

SharingPlan unshare_module(SharingPlan plan, ModuleKind module) {
    auto& ids = plan.indices(module);
    ids.resize(static_cast<size_t>(std::max<int64_t>(plan.virtual_layers, 0)));
    for (size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int64_t>(i) + 1;
    return canonicalize(std::move(plan));
}

SharingPlan unshare_subcomponent(SharingPlan plan, SubComponentId sub) {
    if (!is_valid_subcomponent(sub)) {
        throw std::invalid_argument("unknown sub-component " + subcomponent_str(sub));
    }
    plan.unshared.insert(sub);
    return canonicalize(std::move(plan));
}

SharingPlan unshare_misc_small(SharingPlan plan) {
    plan.share_misc_small = false;
    return canonicalize(std::move(plan));
}

namespace {

bool overridden(const SharingPlan& plan, SubComponentId sub) {
    if (plan.unshared.count(sub)) return true;
    return sub.name == SubName::MiscSmall && !plan.share_misc_small;
}

}  // namespace

int64_t bound_group(const SharingPlan& plan, SubComponentId sub, int64_t layer) {
    if (overridden(plan, sub)) return layer + 1;
    return canonicalize(plan.indices(sub.module))[static_cast<size_t>(layer)];
}

GroupCounts physical_group_counts(const SharingPlan& plan) {
    GroupCounts gc;
    gc.virtual_layers = plan.virtual_layers;
    for (ModuleKind m : kModules) {
        const auto& ids = plan.indices(m);
        const int64_t distinct = static_cast<int64_t>(std::set<int64_t>(ids.begin(), ids.end()).size());
        gc.module[static_cast<size_t>(m)] = distinct;
        for (SubName s : subcomponents_of(m)) {
            const SubComponentId id{m, s};
            gc.sub[id] = overridden(plan, id) ? plan.virtual_layers : distinct;
        }
    }
    return gc;
}

// ---------------------------------------------------------------------------
// Binding

Section section_of(ModuleKind m) { return static_cast<Section>(static_cast<int>(m) + 1); }

std::string_view section_name(Section s) {
    switch (s) {
        case Section::Frontend: return "frontend";
        case Section::FFStart: return "ff_start";
        case Section::Attention: return "attention";
        case Section::Conv: return "conv";
        case Section::FFEnd: return "ff_end";
        case Section::Head: return "head";
    }
    return "?";
}

std::optional<Section> parse_section(std::string_view s) {
    for (int i = 0; i <= static_cast<int>(Section::Head); ++i) {
        if (section_name(static_cast<Section>(i)) == s) return static_cast<Section>(i);
    }
    return std::nullopt;
}

std::string ParamKey::str() const {
    return std::string(section_name(section)) + "/" + tensor + "/" + std::to_string(group);
}

ParamKey ParamKey::parse(std::string_view s) {
    const auto a = s.find('/');
    const auto b = s.rfind('/');
    if (a == std::string_view::npos || a == b) throw std::invalid_argument("malformed parameter key '" + std::string(s) + "'");
    const auto sec = parse_section(s.substr(0, a));
    if (!sec) throw std::invalid_argument("unknown section in parameter key '" + std::string(s) + "'");
    ParamKey key;
    key.section = *sec;
    key.tensor = std::string(s.substr(a + 1, b - a - 1));
    key.group = std::stoll(std::string(s.substr(b + 1)));
    return key;
}

std::vector<TensorSlot> module_slots(ModuleKind m, const ModelConfig& config, const std::optional<LowRankSpec>& lowrank) {
    const int64_t d = config.d;
    std::vector<TensorSlot> slots;
    auto misc = [&](std::string name, int64_t n, InitKind init) {
        slots.push_back({std::move(name), {n}, SubName::MiscSmall, init});
    };
    auto weight = [&](std::string name, int64_t rows, int64_t cols, SubName sub) {
        slots.push_back({std::move(name), {rows, cols}, sub, InitKind::Uniform});
    };
    switch (m) {
        case ModuleKind::FFStart:
        case ModuleKind::FFEnd: {
            const int64_t hidden = config.ff_hidden();
            misc("ln_gamma", d, InitKind::Ones);
            misc("ln_beta", d, InitKind::Zeros);
            if (lowrank) {
                const int64_t k = lowrank->rank;
                weight("w1_u", d, k, SubName::Linear1);
                weight("w1_v", hidden, k, SubName::Linear1);
                weight("w2_u", hidden, k, SubName::Linear2);
                weight("w2_v", d, k, SubName::Linear2);
            } else {
                weight("w1", d, hidden, SubName::Linear1);
                weight("w2", hidden, d, SubName::Linear2);
            }
            misc("b1", hidden, InitKind::Zeros);
            misc("b2", d, InitKind::Zeros);
            if (m == ModuleKind::FFEnd) {
                misc("final_ln_gamma", d, InitKind::Ones);
                misc("final_ln_beta", d, InitKind::Zeros);
            }
            break;
        }
        case ModuleKind::Attention:
            misc("ln_gamma", d, InitKind::Ones);
            misc("ln_beta", d, InitKind::Zeros);
            weight("wq", d, d, SubName::Query);
            misc("bq", d, InitKind::Zeros);
            weight("wk", d, d, SubName::Key);
            misc("bk", d, InitKind::Zeros);
            weight("wv", d, d, SubName::Value);
            misc("bv", d, InitKind::Zeros);
            weight("wpost", d, d, SubName::Post);
            misc("bpost", d, InitKind::Zeros);
            weight("wpos", d, d, SubName::PosQuery);
            misc("bpos", d, InitKind::Zeros);
            break;
        case ModuleKind::Conv:
            misc("ln_gamma", d, InitKind::Ones);
            misc("ln_beta", d, InitKind::Zeros);
            weight("wpre", d, 2 * d, SubName::PreConv);
            misc("bpre", 2 * d, InitKind::Zeros);
            weight("kdepth", config.kernel, d, SubName::DepthConv);
            misc("norm_gamma", d, InitKind::Ones);
            misc("norm_beta", d, InitKind::Zeros);
            weight("wpost", d, d, SubName::PostConv);
            misc("bpost", d, InitKind::Zeros);
            break;
    }
    return slots;
}

std::vector<TensorSlot> frontend_slots(const ModelConfig& config) {
    return {{"w", {config.input_dim, config.d}, SubName::Linear1, InitKind::Uniform},
            {"b", {config.d}, SubName::MiscSmall, InitKind::Zeros}};
}

std::vector<TensorSlot> head_slots(const ModelConfig& config) {
    return {{"w", {config.d, config.num_classes}, SubName::Linear1, InitKind::Uniform},
            {"b", {config.num_classes}, SubName::MiscSmall, InitKind::Zeros}};
}

void initialize_tensor(Tensor& t, InitKind init, Rng rng) {
    switch (init) {
        case InitKind::Zeros: std::fill(t.storage().begin(), t.storage().end(), 0.0); return;
        case InitKind::Ones: std::fill(t.storage().begin(), t.storage().end(), 1.0); return;
        case InitKind::Uniform: {
            const double fan = static_cast<double>(t.rows() + t.cols());
            const double limit = std::sqrt(6.0 / fan);
            for (double& v : t.storage()) v = rng.uniform(-limit, limit);
            return;
        }
    }
}

const Tensor& ParameterStore::at(const ParamKey& key) const {
    auto it = tensors_.find(key);
    if (it == tensors_.end()) throw std::out_of_range("parameter store has no key " + key.str());
    return it->second;
}

Tensor& ParameterStore::at(const ParamKey& key) {
    auto it = tensors_.find(key);
    if (it == tensors_.end()) throw std::out_of_range("parameter store has no key " + key.str());
    return it->second;
}

void ParameterStore::insert(ParamKey key, Tensor value) {
    auto [it, inserted] = tensors_.try_emplace(std::move(key), std::move(value));
    if (!inserted) throw std::logic_error("parameter store already holds " + it->first.str());
}

int64_t ParameterStore::total_scalars() const {
    int64_t n = 0;
    for (const auto& [key, t] : tensors_) n += t.numel();
    return n;
}

bool ParameterStore::bit_equal(const ParameterStore& other) const {
    if (tensors_.size() != other.tensors_.size()) return false;
    auto a = tensors_.begin();
    auto b = other.tensors_.begin();
    for (; a != tensors_.end(); ++a, ++b) {
        if (!(a->first == b->first) || !a->second.bit_equal(b->second)) return false;
    }
    return true;
}

namespace {

std::atomic<uint64_t> g_next_token{1};

void add_tensor(ParameterStore& store, const ParamKey& key, const TensorSlot& slot, uint64_t seed) {
    if (store.contains(key)) return;
    Tensor t(slot.shape, 0.0);
    initialize_tensor(t, slot.init, Rng(seed).fork(key.str()));
    store.insert(key, std::move(t));
}

}  // namespace

Binding bind_parameters(const ModelConfig& config, const SharingPlan& plan, uint64_t seed) {
    config.validate();
    const auto violations = validate_plan(plan);
    if (!violations.empty()) {
        std::string msg = "invalid sharing plan:";
        for (const auto& v : violations) msg += "\n  " + v.str();
        throw std::invalid_argument(msg);
    }
    if (plan.lowrank) check_factor_rank(config.d, config.ff_hidden(), plan.lowrank->rank);

    Binding b{ParameterStore(seed, g_next_token.fetch_add(1)), BoundSchedule{}};
    b.schedule.store_token = b.store.token();

    for (const auto& slot : frontend_slots(config)) {
        ParamKey key{Section::Frontend, slot.name, 1};
        add_tensor(b.store, key, slot, seed);
        b.schedule.frontend[slot.name] = key;
    }
    std::array<std::vector<TensorSlot>, 4> slots;
    for (ModuleKind m : kModules) slots[static_cast<size_t>(m)] = module_slots(m, config, plan.lowrank);

    for (int64_t layer = 0; layer < plan.virtual_layers; ++layer) {
        LayerBinding lb;
        for (ModuleKind m : kModules) {
            for (const auto& slot : slots[static_cast<size_t>(m)]) {
                ParamKey key{section_of(m), slot.name, bound_group(plan, {m, slot.sub}, layer)};
                add_tensor(b.store, key, slot, seed);
                lb.slots[std::string(module_name(m)) + "/" + slot.name] = key;
            }
        }
        b.schedule.layers.push_back(std::move(lb));
    }
    for (const auto& slot : head_slots(config)) {
        ParamKey key{Section::Head, slot.name, 1};
        add_tensor(b.store, key, slot, seed);
        b.schedule.head[slot.name] = key;
    }
    return b;
}

LeafMap make_leaves(Tape& tape, const ParameterStore& store, bool requires_grad) {
    LeafMap leaves;
    for (const auto& [key, t] : store.tensors()) leaves.emplace(key, tape.leaf(t, requires_grad, key.str()));
    return leaves;
}

namespace {

class Resolver {
public:
    Resolver(const std::map<std::string, ParamKey>& slots, const LeafMap& leaves) : slots_(slots), leaves_(leaves) {}

    bool has(const std::string& path) const { return slots_.count(path) != 0; }

    Var get(const std::string& path) const {
        auto s = slots_.find(path);
        if (s == slots_.end()) throw std::logic_error("schedule has no binding for slot " + path);
        auto l = leaves_.find(s->second);
        if (l == leaves_.end()) throw std::logic_error("schedule references " + s->second.str() + " missing from the store");
        return l->second;
    }

    LinearParams dense(const std::string& w, const std::string& b) const { return LinearParams{get(w), {}, {}, get(b)}; }

    LinearParams ff_linear(const std::string& prefix, const std::string& w, const std::string& b) const {
        if (has(prefix + w + "_u")) return LinearParams{{}, get(prefix + w + "_u"), get(prefix + w + "_v"), get(prefix + b)};
        return dense(prefix + w, prefix + b);
    }

    FeedForwardParams feed_forward(const std::string& prefix) const {
        return FeedForwardParams{get(prefix + "ln_gamma"), get(prefix + "ln_beta"), ff_linear(prefix, "w1", "b1"),
                                 ff_linear(prefix, "w2", "b2")};
    }

private:
    const std::map<std::string, ParamKey>& slots_;
    const LeafMap& leaves_;
};

}  // namespace

EncoderParams materialize(Tape& tape, const ModelConfig& config, const ParameterStore& store,
                          const BoundSchedule& schedule, const LeafMap& leaves) {
    if (!schedule.bound()) throw std::logic_error("encoder schedule is not bound to a parameter store");
    if (schedule.store_token != store.token()) {
        throw std::logic_error("encoder schedule was bound to a different parameter store");
    }
    Var rel = tape.constant(relative_position_table(config.t_max, config.d));

    EncoderParams p;
    p.frontend = Resolver(schedule.frontend, leaves).dense("w", "b");
    p.head = Resolver(schedule.head, leaves).dense("w", "b");
    for (const LayerBinding& lb : schedule.layers) {
        Resolver r(lb.slots, leaves);
        BlockParams bp;
        bp.ff_start = r.feed_forward("ff_start/");
        bp.attn.heads = config.heads;
        bp.attn.ln_gamma = r.get("attention/ln_gamma");
        bp.attn.ln_beta = r.get("attention/ln_beta");
        bp.attn.query = r.dense("attention/wq", "attention/bq");
        bp.attn.key = r.dense("attention/wk", "attention/bk");
        bp.attn.value = r.dense("attention/wv", "attention/bv");
        bp.attn.post = r.dense("attention/wpost", "attention/bpost");
        bp.attn.pos_query = r.dense("attention/wpos", "attention/bpos");
        bp.attn.rel_emb = rel;
        bp.conv.ln_gamma = r.get("conv/ln_gamma");
        bp.conv.ln_beta = r.get("conv/ln_beta");
        bp.conv.pre = r.dense("conv/wpre", "conv/bpre");
        bp.conv.depth_kernel = r.get("conv/kdepth");
        bp.conv.norm_gamma = r.get("conv/norm_gamma");
        bp.conv.norm_beta = r.get("conv/norm_beta");
        bp.conv.post = r.dense("conv/wpost", "conv/bpost");
        bp.ff_end = r.feed_forward("ff_end/");
        bp.final_ln_gamma = r.get("ff_end/final_ln_gamma");
        bp.final_ln_beta = r.get("ff_end/final_ln_beta");
        p.layers.push_back(std::move(bp));
    }
    return p;
}

}  // namespace confshare
