#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "confshare/conformer.hpp"
#include "confshare/lowrank.hpp"
#include "confshare/model_config.hpp"
#include "confshare/rng.hpp"
#include "confshare/tensor.hpp"

namespace confshare {

enum class ModuleKind : int { FFStart = 0, Attention = 1, Conv = 2, FFEnd = 3 };
inline constexpr std::array<ModuleKind, 4> kModules = {ModuleKind::FFStart, ModuleKind::Attention, ModuleKind::Conv,
                                                       ModuleKind::FFEnd};

enum class SubName : int {
    Linear1,
    Linear2,
    Query,
    Key,
    Value,
    Post,
    PosQuery,
    PreConv,
    DepthConv,
    PostConv,
    MiscSmall,
};

/// A named weight inside one module. Only the pairings of the block
/// inventory are valid: FF modules {Linear1, Linear2}, Attention {Key,
/// Value, Query, Post, PosQuery}, Conv {PreConv, DepthConv, PostConv}, and
/// MiscSmall in every module.
struct SubComponentId {
    ModuleKind module = ModuleKind::FFStart;
    SubName name = SubName::Linear1;

    auto operator<=>(const SubComponentId&) const = default;
};

std::string_view module_name(ModuleKind m);      // "ff_start", "attention", "conv", "ff_end"
std::string_view module_label(ModuleKind m);     // "FFStart", "Attention", ...
std::string_view index_vector_name(ModuleKind m);  // "I_FS", "I_A", "I_C", "I_FE"
std::string_view sub_name(SubName s);            // "linear1", "key", "misc_small", ...
std::string_view sub_label(SubName s);           // "Linear1", "Key", "MiscSmall", ...
std::optional<ModuleKind> parse_module(std::string_view s);
std::optional<SubName> parse_sub_name(std::string_view s);

bool is_valid_subcomponent(SubComponentId id);
/// Valid sub-components of a module, MiscSmall last.
std::vector<SubName> subcomponents_of(ModuleKind m);
std::string subcomponent_str(SubComponentId id);  // "attention.key"
/// Parses "module.sub" (either naming style). Throws std::invalid_argument on unknown pairs.
SubComponentId parse_subcomponent(std::string_view s);

/// Virtual-layer sharing plan.
///
/// index[m][i] is the physical group (1-based) that module m uses at virtual
/// layer i. Repeats, module sharing, and any mix of the two are all
/// expressed through these four vectors; e.g. four blocks each repeated
/// three times is [1,1,1,2,2,2,3,3,3,4,4,4] for every module.
struct SharingPlan {
    int64_t virtual_layers = 0;
    std::array<std::vector<int64_t>, 4> index;
    /// Sub-components bound to one group per virtual layer regardless of `index`.
    std::set<SubComponentId> unshared;
    /// false gives every small weight (norms, biases) one group per virtual layer.
    bool share_misc_small = true;
    std::optional<LowRankSpec> lowrank;

    const std::vector<int64_t>& indices(ModuleKind m) const { return index[static_cast<size_t>(m)]; }
    std::vector<int64_t>& indices(ModuleKind m) { return index[static_cast<size_t>(m)]; }

    bool operator==(const SharingPlan&) const = default;
};

struct PlanViolation {
    std::string vector;         // "I_A", "V", or "lowrank"
    std::optional<int64_t> position;  // 0-based entry, when one entry is at fault
    std::string message;

    std::string str() const;
};

/// Every violated constraint; empty means valid.
std::vector<PlanViolation> validate_plan(const SharingPlan& plan);

/// Relabels group ids to 1..G in order of first occurrence.
std::vector<int64_t> canonicalize(const std::vector<int64_t>& ids);
SharingPlan canonicalize(SharingPlan plan);

/// N physical blocks, block i repeated R[i] times consecutively.
SharingPlan repeat_plan(const std::vector<int64_t>& repeats);
SharingPlan repeat_plan(int64_t physical, int64_t repeats);

/// Gives `module` its own group at every virtual layer.
SharingPlan unshare_module(SharingPlan plan, ModuleKind module);
SharingPlan unshare_subcomponent(SharingPlan plan, SubComponentId sub);
/// Unshares the small weights of all modules.
SharingPlan unshare_misc_small(SharingPlan plan);

/// Distinct physical groups per module and per sub-component.
struct GroupCounts {
    int64_t virtual_layers = 0;
    std::array<int64_t, 4> module{};
    std::map<SubComponentId, int64_t> sub;

    int64_t of(ModuleKind m) const { return module[static_cast<size_t>(m)]; }
    int64_t of(SubComponentId s) const { return sub.at(s); }
};

/// Group count a sub-component ends up with after overrides; unshared entries win.
GroupCounts physical_group_counts(const SharingPlan& plan);

/// Group that sub-component `sub` uses at virtual layer `layer` (0-based).
int64_t bound_group(const SharingPlan& plan, SubComponentId sub, int64_t layer);

// -------------------------------------------------------------------------
// Parameter binding

enum class Section : int { Frontend = 0, FFStart = 1, Attention = 2, Conv = 3, FFEnd = 4, Head = 5 };

Section section_of(ModuleKind m);
std::string_view section_name(Section s);
std::optional<Section> parse_section(std::string_view s);

/// Canonical key of one physical tensor.
struct ParamKey {
    Section section = Section::Frontend;
    std::string tensor;
    int64_t group = 1;

    /// "attention/wq/3"
    std::string str() const;
    static ParamKey parse(std::string_view s);

    auto operator<=>(const ParamKey&) const = default;
};

enum class InitKind { Uniform, Zeros, Ones };

/// One tensor of a module: its name, shape, owning sub-component, and initializer.
struct TensorSlot {
    std::string name;
    Shape shape;
    SubName sub;
    InitKind init;
};

/// Tensors making up one module; low-rank replaces w1/w2 of FF modules by
/// w1_u/w1_v and w2_u/w2_v. The final block norm lives in FFEnd.
std::vector<TensorSlot> module_slots(ModuleKind m, const ModelConfig& config, const std::optional<LowRankSpec>& lowrank);
std::vector<TensorSlot> frontend_slots(const ModelConfig& config);
std::vector<TensorSlot> head_slots(const ModelConfig& config);

/// Fills `t` per `init`; uniform draws lie in ±sqrt(6 / (rows + cols)).
void initialize_tensor(Tensor& t, InitKind init, Rng rng);

/// Physical weights, one tensor per key.
class ParameterStore {
public:
    ParameterStore() = default;
    ParameterStore(uint64_t seed, uint64_t token) : seed_(seed), token_(token) {}

    const Tensor& at(const ParamKey& key) const;
    Tensor& at(const ParamKey& key);
    bool contains(const ParamKey& key) const { return tensors_.count(key) != 0; }
    void insert(ParamKey key, Tensor value);

    const std::map<ParamKey, Tensor>& tensors() const { return tensors_; }
    std::map<ParamKey, Tensor>& tensors() { return tensors_; }
    int64_t total_scalars() const;
    uint64_t seed() const { return seed_; }
    uint64_t token() const { return token_; }

    bool bit_equal(const ParameterStore& other) const;

private:
    uint64_t seed_ = 0;
    uint64_t token_ = 0;
    std::map<ParamKey, Tensor> tensors_;
};

/// Store keys used by one virtual layer, by "<module>/<tensor>" slot path.
struct LayerBinding {
    std::map<std::string, ParamKey> slots;
};

struct BoundSchedule {
    uint64_t store_token = 0;  // 0 means not bound to any store
    std::vector<LayerBinding> layers;
    std::map<std::string, ParamKey> frontend;
    std::map<std::string, ParamKey> head;

    bool bound() const { return store_token != 0; }
};

struct Binding {
    ParameterStore store;
    BoundSchedule schedule;
};

/// Allocates one tensor per distinct key and binds each virtual layer to its keys.
/// Throws std::invalid_argument listing violations for invalid plans or configs.
Binding bind_parameters(const ModelConfig& config, const SharingPlan& plan, uint64_t seed);

/// Leaf Vars for every tensor of a store, keyed like the store.
using LeafMap = std::map<ParamKey, Var>;
LeafMap make_leaves(Tape& tape, const ParameterStore& store, bool requires_grad);

/// Resolves the schedule into per-virtual-layer parameters on `tape`.
/// Throws std::logic_error when the schedule is unbound or references keys missing from `store`.
EncoderParams materialize(Tape& tape, const ModelConfig& config, const ParameterStore& store,
                          const BoundSchedule& schedule, const LeafMap& leaves);

}  // namespace confshare
