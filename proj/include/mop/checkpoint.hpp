#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mop/errors.hpp"
#include "mop/surgery.hpp"
#include "mop/transformer.hpp"

namespace mop {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[9] = "MOPCKPT1";

// On-disk layout: 8-byte magic, little-endian u64 manifest length, UTF-8 JSON
// manifest, then a contiguous little-endian float32 payload holding every
// tensor in manifest index order. Round trips are bit-exact.

namespace detail {

inline void write_u64(std::ostream& os, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>(v >> (8 * i));
    os.write(b, 8);
}

inline std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    require(static_cast<bool>(is), ErrorKind::io_integrity, "checkpoint: truncated header");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace detail

inline nlohmann::ordered_json checkpoint_manifest(const TransformerModel<float>& m) {
    nlohmann::ordered_json manifest;
    manifest["format_version"] = kCheckpointVersion;
    manifest["config"] = {{"n_layers", m.layers.size()},
                          {"d_model", m.config.d_model},
                          {"n_heads", m.config.n_heads},
                          {"d_head", m.config.d_head},
                          {"d_ff", m.config.d_ff},
                          {"vocab_size", m.config.vocab_size},
                          {"max_seq_len", m.config.max_seq_len},
                          {"rope_theta", m.config.rope_theta}};
    auto layers = nlohmann::ordered_json::array();
    for (const auto& l : m.layers)
        layers.push_back({{"n_heads", l.n_heads}, {"d_ff", l.d_ff}});
    manifest["layers"] = std::move(layers);

    auto names = parameter_names(m);
    auto params = parameters(m);
    auto tensors = nlohmann::ordered_json::array();
    std::uint64_t offset = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::uint64_t nbytes = params[i]->size() * sizeof(float);
        tensors.push_back({{"name", names[i]},
                           {"dtype", "f32"},
                           {"shape", params[i]->shape},
                           {"offset", offset},
                           {"nbytes", nbytes}});
        offset += nbytes;
    }
    manifest["tensors"] = std::move(tensors);
    return manifest;
}

inline void save_checkpoint(const TransformerModel<float>& m, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    require(static_cast<bool>(os), ErrorKind::io, "save_checkpoint: cannot open " + path);
    const std::string manifest = checkpoint_manifest(m).dump();
    os.write(kCheckpointMagic, 8);
    detail::write_u64(os, manifest.size());
    os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
    for (const auto& p : parameters(m))
        os.write(reinterpret_cast<const char*>(p->data.data()),
                 static_cast<std::streamsize>(p->size() * sizeof(float)));
    require(static_cast<bool>(os), ErrorKind::io, "save_checkpoint: write failed for " + path);
}

inline TransformerModel<float> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(static_cast<bool>(is), ErrorKind::io, "load_checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    require(static_cast<bool>(is) && std::memcmp(magic, kCheckpointMagic, 8) == 0,
            ErrorKind::io_integrity, "load_checkpoint: not a MoP checkpoint: " + path);
    const std::uint64_t manifest_len = detail::read_u64(is);
    std::string manifest_text(manifest_len, '\0');
    is.read(manifest_text.data(), static_cast<std::streamsize>(manifest_len));
    require(static_cast<bool>(is), ErrorKind::io_integrity, "load_checkpoint: truncated manifest");

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(manifest_text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::io_integrity, std::string("load_checkpoint: bad manifest: ") + e.what());
    }
    require(manifest.value("format_version", 0u) == kCheckpointVersion, ErrorKind::io_version,
            "load_checkpoint: unsupported format version in " + path);

    const auto& jc = manifest.at("config");
    TransformerModel<float> m;
    m.config.n_layers = jc.at("n_layers").get<std::size_t>();
    m.config.d_model = jc.at("d_model").get<std::size_t>();
    m.config.n_heads = jc.at("n_heads").get<std::size_t>();
    m.config.d_head = jc.at("d_head").get<std::size_t>();
    m.config.d_ff = jc.at("d_ff").get<std::size_t>();
    m.config.vocab_size = jc.at("vocab_size").get<std::size_t>();
    m.config.max_seq_len = jc.at("max_seq_len").get<std::size_t>();
    m.config.rope_theta = jc.at("rope_theta").get<double>();

    const auto& jl = manifest.at("layers");
    require(jl.size() == m.config.n_layers, ErrorKind::io_integrity,
            "load_checkpoint: layer list does not match config");
    m.layers.resize(jl.size());
    for (std::size_t l = 0; l < jl.size(); ++l) {
        auto& layer = m.layers[l];
        layer.n_heads = jl[l].at("n_heads").get<std::size_t>();
        layer.d_ff = jl[l].at("d_ff").get<std::size_t>();
        layer.d_head = m.config.d_head;
        const std::size_t aw = layer.n_heads * layer.d_head, d = m.config.d_model;
        layer.wq = tensor<float>({d, aw}, true);
        layer.wk = tensor<float>({d, aw}, true);
        layer.wv = tensor<float>({d, aw}, true);
        layer.wo = tensor<float>({aw, d}, true);
        layer.w_gate = tensor<float>({d, layer.d_ff}, true);
        layer.w_up = tensor<float>({d, layer.d_ff}, true);
        layer.w_down = tensor<float>({layer.d_ff, d}, true);
        layer.norm_attn = tensor<float>({d}, true);
        layer.norm_mlp = tensor<float>({d}, true);
    }
    m.embedding = tensor<float>({m.config.vocab_size, m.config.d_model}, true);
    m.final_norm = tensor<float>({m.config.d_model}, true);
    m.lm_head = tensor<float>({m.config.d_model, m.config.vocab_size}, true);

    const auto names = parameter_names(m);
    auto params = parameters(m);
    const auto& jt = manifest.at("tensors");
    require(jt.size() == params.size(), ErrorKind::io_integrity,
            "load_checkpoint: tensor index has " + std::to_string(jt.size()) + " entries, expected " +
                std::to_string(params.size()));
    std::uint64_t offset = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& e = jt[i];
        require(e.at("name").get<std::string>() == names[i], ErrorKind::io_integrity,
                "load_checkpoint: tensor " + std::to_string(i) + " name mismatch");
        require(e.at("dtype").get<std::string>() == "f32", ErrorKind::io_integrity,
                "load_checkpoint: unsupported dtype for " + names[i]);
        const auto shape = e.at("shape").get<std::vector<std::size_t>>();
        require(shape == params[i]->shape, ErrorKind::io_integrity,
                "load_checkpoint: shape mismatch for " + names[i]);
        require(e.at("offset").get<std::uint64_t>() == offset, ErrorKind::io_integrity,
                "load_checkpoint: offsets must be contiguous and in index order");
        const std::uint64_t nbytes = e.at("nbytes").get<std::uint64_t>();
        require(nbytes == params[i]->size() * sizeof(float), ErrorKind::io_integrity,
                "load_checkpoint: payload length does not match shape for " + names[i]);
        offset += nbytes;
    }
    for (auto& p : params) {
        is.read(reinterpret_cast<char*>(p->data.data()),
                static_cast<std::streamsize>(p->size() * sizeof(float)));
        require(static_cast<bool>(is), ErrorKind::io_integrity,
                "load_checkpoint: truncated payload in " + path);
    }
    is.peek();
    require(is.eof(), ErrorKind::io_integrity,
            "load_checkpoint: trailing bytes after payload in " + path);
    return m;
}

}  // namespace mop
