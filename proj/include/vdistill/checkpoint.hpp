#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "vdistill/model.hpp"

namespace vdistill {

// Checkpoint layout: magic "VDCKPT1", uint32 tensor count, then per tensor
// (uint32 name length, name bytes, uint32 rank, uint32 dims...), then
// row-major float32 little-endian data in manifest order. The model config
// travels as a rank-1 tensor named "config".

namespace ckpt_detail {

inline void write_u32(std::ofstream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}

inline uint32_t read_u32(std::ifstream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) throw std::runtime_error("truncated checkpoint");
    return v;
}

struct TensorEntry {
    std::string name;
    std::vector<uint32_t> dims;
    size_t count() const {
        size_t n = 1;
        for (uint32_t d : dims) n *= d;
        return n;
    }
};

}  // namespace ckpt_detail

template <typename T>
void save_checkpoint(Model<T>& model, const std::string& path) {
    using namespace ckpt_detail;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write("VDCKPT1", 7);

    std::vector<Param<T>*> params = model.params();
    write_u32(out, static_cast<uint32_t>(params.size() + 1));

    auto write_entry = [&](const std::string& name, std::vector<uint32_t> dims) {
        write_u32(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(out, static_cast<uint32_t>(dims.size()));
        for (uint32_t d : dims) write_u32(out, d);
    };
    write_entry("config", {7});
    for (Param<T>* p : params) {
        write_entry(p->name, {static_cast<uint32_t>(p->value.rows), static_cast<uint32_t>(p->value.cols)});
    }

    const ModelConfig& c = model.cfg;
    float cfg_data[7] = {static_cast<float>(c.d_model), static_cast<float>(c.n_layers),
                         static_cast<float>(c.n_heads), static_cast<float>(c.d_ff),
                         static_cast<float>(c.max_seq), static_cast<float>(c.v_orig),
                         static_cast<float>(c.v_ext)};
    out.write(reinterpret_cast<const char*>(cfg_data), sizeof(cfg_data));
    std::vector<float> buf;
    for (Param<T>* p : params) {
        buf.resize(p->value.size());
        for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(p->value.data[i]);
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

template <typename T>
Model<T> load_checkpoint(const std::string& path) {
    using namespace ckpt_detail;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[7];
    in.read(magic, 7);
    if (!in || std::memcmp(magic, "VDCKPT1", 7) != 0) {
        throw std::runtime_error("bad checkpoint magic in " + path);
    }
    uint32_t n_tensors = read_u32(in);
    std::vector<TensorEntry> entries(n_tensors);
    for (auto& e : entries) {
        uint32_t len = read_u32(in);
        e.name.resize(len);
        in.read(e.name.data(), len);
        uint32_t rank = read_u32(in);
        e.dims.resize(rank);
        for (auto& d : e.dims) d = read_u32(in);
    }
    if (entries.empty() || entries[0].name != "config" || entries[0].count() != 7) {
        throw std::runtime_error("checkpoint missing config tensor: " + path);
    }

    float cfg_data[7];
    in.read(reinterpret_cast<char*>(cfg_data), sizeof(cfg_data));
    if (!in) throw std::runtime_error("truncated checkpoint");
    ModelConfig cfg;
    cfg.d_model = static_cast<int>(cfg_data[0]);
    cfg.n_layers = static_cast<int>(cfg_data[1]);
    cfg.n_heads = static_cast<int>(cfg_data[2]);
    cfg.d_ff = static_cast<int>(cfg_data[3]);
    cfg.max_seq = static_cast<int>(cfg_data[4]);
    cfg.v_orig = static_cast<int>(cfg_data[5]);
    cfg.v_ext = static_cast<int>(cfg_data[6]);

    Model<T> model = init_base_model<T>(cfg, 0);
    // Recreate LoRA slots from tensor names before filling values.
    for (const auto& e : entries) {
        if (e.name.rfind("lora.", 0) != 0 || e.name.size() < 8) continue;
        std::string target = e.name.substr(5, e.name.size() - 7);  // strip "lora." and ".A"/".B"
        if (!model.lora.count(target)) {
            if (e.dims.size() != 2) throw std::runtime_error("bad lora tensor rank: " + e.name);
            bool is_a = e.name.back() == 'A';
            int rank = is_a ? static_cast<int>(e.dims[0]) : static_cast<int>(e.dims[1]);
            attach_lora(model, rank, {target}, 0);
        }
    }

    std::vector<float> buf;
    for (size_t i = 1; i < entries.size(); ++i) {
        const TensorEntry& e = entries[i];
        Param<T>* p = model.find(e.name);
        if (!p) throw std::runtime_error("unknown tensor in checkpoint: " + e.name);
        if (e.dims.size() != 2 || static_cast<int>(e.dims[0]) != p->value.rows ||
            static_cast<int>(e.dims[1]) != p->value.cols) {
            throw std::runtime_error("tensor shape mismatch for " + e.name);
        }
        buf.resize(e.count());
        in.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!in) throw std::runtime_error("truncated checkpoint data for " + e.name);
        for (size_t k = 0; k < buf.size(); ++k) p->value.data[k] = static_cast<T>(buf[k]);
    }
    return model;
}

}  // namespace vdistill
