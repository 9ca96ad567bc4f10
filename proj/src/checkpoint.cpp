#include "dime/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace dime {
namespace {

constexpr uint32_t kSchemaVersion = 1;

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const uint8_t* p) {
    return uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) | (uint32_t(p[3]) << 24);
}

uint64_t get_u64(const uint8_t* p) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

std::string shape_token(const std::vector<int>& shape) {
    std::string s;
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s;
}

std::vector<int> parse_shape_token(const std::string& tok) {
    std::vector<int> shape;
    std::stringstream ss(tok);
    std::string part;
    while (std::getline(ss, part, 'x')) shape.push_back(std::atoi(part.c_str()));
    return shape;
}

}  // namespace

void save_checkpoint(const DimeNet<float>& model, const Config& cfg, const CheckpointMeta& meta,
                     const std::string& path) {
    auto params = model.named_params();

    std::ostringstream header;
    for (const auto& key : cfg.keys()) header << "config " << key << " " << cfg.get(key) << "\n";
    header << "meta iteration " << meta.iteration << "\n";
    if (!meta.rng_state.empty()) header << "meta rng_state " << meta.rng_state << "\n";

    uint64_t offset = 0;
    for (const auto& [name, p] : params) {
        uint64_t bytes = static_cast<uint64_t>(p.numel()) * sizeof(float);
        header << "tensor " << name << " f32 " << shape_token(p.shape()) << " " << offset << " "
               << bytes << "\n";
        offset += bytes;
    }
    std::string htext = header.str();

    std::string prefix = "DIME";
    put_u32(prefix, kSchemaVersion);
    put_u64(prefix, htext.size());

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint " + path);
    f.write(prefix.data(), static_cast<std::streamsize>(prefix.size()));
    f.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& [name, p] : params) {
        const auto& v = p.value().v;
        f.write(reinterpret_cast<const char*>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(float)));
    }
    if (!f.good()) throw IoError("write error on checkpoint " + path);
}

DimeNet<float> load_checkpoint(const std::string& path, const Config* requested, Config* cfg_out,
                               CheckpointMeta* meta_out) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read checkpoint " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());

    using Kind = CheckpointError::Kind;
    if (bytes.size() < 16 || std::memcmp(bytes.data(), "DIME", 4) != 0)
        throw CheckpointError(Kind::CorruptHeader, "checkpoint: bad magic");
    uint32_t version = get_u32(bytes.data() + 4);
    if (version != kSchemaVersion)
        throw CheckpointError(Kind::UnknownSchema,
                              "checkpoint: unknown schema version " + std::to_string(version));
    uint64_t hlen = get_u64(bytes.data() + 8);
    if (16 + hlen > bytes.size())
        throw CheckpointError(Kind::CorruptHeader, "checkpoint: header extends past file end");

    std::string htext(reinterpret_cast<const char*>(bytes.data() + 16), hlen);
    const uint8_t* data = bytes.data() + 16 + hlen;
    const uint64_t data_size = bytes.size() - 16 - hlen;

    Config cfg;
    CheckpointMeta meta;
    struct TensorEntry {
        std::string name;
        std::vector<int> shape;
        uint64_t offset = 0, length = 0;
    };
    std::vector<TensorEntry> table;

    std::istringstream hs(htext);
    std::string line;
    while (std::getline(hs, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "config") {
            std::string key, value;
            ls >> key;
            std::getline(ls, value);
            if (!value.empty() && value.front() == ' ') value.erase(0, 1);
            try {
                cfg.set(key, value, false);
            } catch (const ConfigError& e) {
                throw CheckpointError(Kind::CorruptHeader,
                                      std::string("checkpoint: bad config entry: ") + e.what());
            }
        } else if (tag == "meta") {
            std::string key;
            ls >> key;
            if (key == "iteration") {
                ls >> meta.iteration;
            } else if (key == "rng_state") {
                std::string rest;
                std::getline(ls, rest);
                if (!rest.empty() && rest.front() == ' ') rest.erase(0, 1);
                meta.rng_state = rest;
            }
        } else if (tag == "tensor") {
            TensorEntry te;
            std::string dtype, shape;
            ls >> te.name >> dtype >> shape >> te.offset >> te.length;
            if (ls.fail() || dtype != "f32")
                throw CheckpointError(Kind::CorruptHeader, "checkpoint: bad tensor entry: " + line);
            te.shape = parse_shape_token(shape);
            table.push_back(std::move(te));
        } else {
            throw CheckpointError(Kind::CorruptHeader, "checkpoint: unknown header line: " + line);
        }
    }

    if (requested) {
        Config snapshot_vs = cfg;
        std::vector<std::string> diffs;
        for (const auto& key :
             Config::differing_keys(*requested, snapshot_vs, model_config_prefixes())) {
            if (requested->is_explicit(key)) diffs.push_back(key);
        }
        if (!diffs.empty()) {
            std::string msg = "checkpoint/config mismatch on:";
            for (const auto& k : diffs) msg += " " + k;
            throw CheckpointError(Kind::ConfigMismatch, msg);
        }
    }

    DimeNet<float> model(build_model_config(cfg));
    auto params = model.named_params();
    if (params.size() != table.size())
        throw CheckpointError(Kind::CorruptHeader,
                              "checkpoint: tensor table does not match the model");
    for (size_t i = 0; i < params.size(); ++i) {
        auto& [name, p] = params[i];
        const auto& te = table[i];
        if (te.name != name || te.shape != p.shape())
            throw CheckpointError(Kind::CorruptHeader,
                                  "checkpoint: tensor mismatch at '" + te.name + "'");
        if (te.offset + te.length > data_size)
            throw CheckpointError(Kind::Truncated,
                                  "checkpoint: data truncated at tensor '" + te.name + "'");
        if (te.length != static_cast<uint64_t>(p.numel()) * sizeof(float))
            throw CheckpointError(Kind::CorruptHeader,
                                  "checkpoint: tensor size mismatch at '" + te.name + "'");
        std::memcpy(p.mutable_value().v.data(), data + te.offset, te.length);
    }

    if (cfg_out) *cfg_out = cfg;
    if (meta_out) *meta_out = meta;
    return model;
}

}  // namespace dime
