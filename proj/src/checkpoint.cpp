#include "confshare/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "confshare/config_io.hpp"

namespace confshare {

namespace {

constexpr std::string_view kMagic = "confshare-checkpoint";

std::string shape_token(const Shape& s) {
    std::string out;
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += 'x';
        out += std::to_string(s[i]);
    }
    return out;
}

Shape parse_shape(const std::string& tok) {
    Shape s;
    std::stringstream ss(tok);
    std::string part;
    while (std::getline(ss, part, 'x')) {
        try {
            size_t used = 0;
            s.push_back(std::stoll(part, &used));
            if (used != part.size()) throw CheckpointError("bad shape '" + tok + "'");
        } catch (const std::logic_error&) {
            throw CheckpointError("bad shape '" + tok + "'");
        }
    }
    if (s.empty()) throw CheckpointError("empty shape");
    return s;
}

std::string next_line(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw CheckpointError("truncated checkpoint manifest");
    return line;
}

int64_t expect_count(std::istream& is, std::string_view keyword) {
    std::istringstream ls(next_line(is));
    std::string word;
    int64_t n = -1;
    if (!(ls >> word >> n) || word != keyword || n < 0) {
        throw CheckpointError("expected '" + std::string(keyword) + " <count>' in checkpoint manifest");
    }
    return n;
}

void put_le(std::ostream& os, double v) {
    auto bits = std::bit_cast<uint64_t>(v);
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    os.write(bytes, 8);
}

double get_le(const unsigned char* p) {
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(p[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(std::ostream& os, const Model& model) {
    const std::string config = serialize_config(model.config, model.plan);
    int64_t config_lines = 0;
    for (char c : config) config_lines += c == '\n';
    os << kMagic << ' ' << kCheckpointVersion << '\n';
    os << "seed " << model.seed << '\n';
    os << "config " << config_lines << '\n' << config;
    os << "tensors " << model.store.tensors().size() << '\n';
    for (const auto& [key, t] : model.store.tensors()) os << key.str() << ' ' << shape_token(t.shape()) << '\n';
    os << "payload " << 8 * model.store.total_scalars() << '\n';
    for (const auto& [key, t] : model.store.tensors()) {
        for (double v : t.data()) put_le(os, v);
    }
    if (!os) throw CheckpointError("failed writing checkpoint");
}

void save_checkpoint(const std::string& path, const Model& model) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open " + path + " for writing");
    save_checkpoint(f, model);
}

CheckpointSummary read_checkpoint_manifest(std::istream& is) {
    CheckpointSummary s;
    {
        std::istringstream ls(next_line(is));
        std::string magic;
        if (!(ls >> magic >> s.version) || magic != kMagic) throw CheckpointError("not a confshare checkpoint");
        if (s.version != kCheckpointVersion) {
            throw CheckpointError("unsupported checkpoint version " + std::to_string(s.version));
        }
    }
    {
        std::istringstream ls(next_line(is));
        std::string word;
        if (!(ls >> word >> s.seed) || word != "seed") throw CheckpointError("expected 'seed <value>'");
    }
    const int64_t lines = expect_count(is, "config");
    for (int64_t i = 0; i < lines; ++i) s.config_text += next_line(is) + '\n';
    const int64_t count = expect_count(is, "tensors");
    for (int64_t i = 0; i < count; ++i) {
        std::istringstream ls(next_line(is));
        std::string key, shape;
        if (!(ls >> key >> shape)) throw CheckpointError("bad tensor line in checkpoint manifest");
        s.tensors.emplace_back(key, parse_shape(shape));
    }
    s.payload_bytes = expect_count(is, "payload");
    return s;
}

Model load_checkpoint(std::istream& is) {
    const CheckpointSummary s = read_checkpoint_manifest(is);
    ConfigFile cf;
    try {
        cf = parse_config(s.config_text);
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("checkpoint config: ") + e.what());
    }
    Model model = build_model(cf.config, cf.plan, s.seed);
    auto& tensors = model.store.tensors();
    if (tensors.size() != s.tensors.size()) throw CheckpointError("checkpoint tensor count does not match its config");
    if (s.payload_bytes != 8 * model.store.total_scalars()) {
        throw CheckpointError("payload length " + std::to_string(s.payload_bytes) + " does not match " +
                              std::to_string(8 * model.store.total_scalars()));
    }
    std::vector<unsigned char> payload(static_cast<size_t>(s.payload_bytes));
    is.read(reinterpret_cast<char*>(payload.data()), s.payload_bytes);
    if (is.gcount() != s.payload_bytes) throw CheckpointError("truncated checkpoint payload");
    if (is.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes after checkpoint payload");

    const unsigned char* p = payload.data();
    auto it = tensors.begin();
    for (const auto& [key, shape] : s.tensors) {
        if (it->first.str() != key || it->second.shape() != shape) {
            throw CheckpointError("checkpoint tensor " + key + " does not match its config");
        }
        for (double& v : it->second.storage()) {
            v = get_le(p);
            p += 8;
        }
        ++it;
    }
    return model;
}

Model load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open " + path);
    return load_checkpoint(f);
}

}  // namespace confshare
