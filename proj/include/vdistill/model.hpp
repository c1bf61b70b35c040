#pragma once

#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "vdistill/graph.hpp"
#include "vdistill/matrix.hpp"
#include "vdistill/tokenizer.hpp"

namespace vdistill {

struct ModelConfig {
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 256;
    int max_seq = 256;
    int v_orig = 300;
    int v_ext = 0;

    void validate() const {
        if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0 || max_seq <= 0 || v_orig <= 0 ||
            v_ext < 0) {
            throw std::runtime_error("invalid model config: all dims must be positive");
        }
        if (d_model % n_heads != 0) throw std::runtime_error("d_model must be divisible by n_heads");
    }
};

template <typename T>
struct BlockParams {
    Param<T> ln1_gain, ln1_bias;
    Param<T> attn_q, attn_k, attn_v, attn_o;  // each d_model x d_model (out x in)
    Param<T> ln2_gain, ln2_bias;
    Param<T> ffn_in;   // d_ff x d_model
    Param<T> ffn_out;  // d_model x d_ff
};

template <typename T>
struct LoraPair {
    Param<T> A;  // r x in_dim
    Param<T> B;  // out_dim x r
};

// Decoder-only transformer with untied, partitioned embedding and head.
template <typename T>
struct Model {
    ModelConfig cfg;
    Param<T> embed_orig, embed_ext;  // v x d_model
    Param<T> head_orig, head_ext;    // v x d_model
    Param<T> pos;                    // max_seq x d_model
    std::vector<BlockParams<T>> blocks;
    Param<T> final_gain, final_bias;
    // keyed by wrapped matrix name, e.g. "block.0.attn_q"
    std::map<std::string, LoraPair<T>> lora;

    std::vector<Param<T>*> params() {
        std::vector<Param<T>*> out = {&embed_orig, &embed_ext, &head_orig, &head_ext, &pos};
        for (auto& b : blocks) {
            for (Param<T>* p : {&b.ln1_gain, &b.ln1_bias, &b.attn_q, &b.attn_k, &b.attn_v, &b.attn_o,
                                &b.ln2_gain, &b.ln2_bias, &b.ffn_in, &b.ffn_out}) {
                out.push_back(p);
            }
        }
        out.push_back(&final_gain);
        out.push_back(&final_bias);
        for (auto& [name, pair] : lora) {
            out.push_back(&pair.A);
            out.push_back(&pair.B);
        }
        return out;
    }

    Param<T>* find(const std::string& name) {
        for (Param<T>* p : params()) {
            if (p->name == name) return p;
        }
        return nullptr;
    }

    void zero_grads() {
        for (Param<T>* p : params()) p->zero_grad();
    }

    void set_trainable(const std::set<std::string>& names) {
        for (Param<T>* p : params()) p->trainable = names.count(p->name) > 0;
    }

    std::set<std::string> trainable_set() {
        std::set<std::string> out;
        for (Param<T>* p : params()) {
            if (p->trainable) out.insert(p->name);
        }
        return out;
    }

    // Linear layer x -> x * W^T, routed through a LoRA adapter when one is
    // attached to W.
    int linear(Graph<T>& g, int x, Param<T>& w) {
        int base = g.matmul_nt(x, g.param(w));
        auto it = lora.find(w.name);
        if (it == lora.end()) return base;
        int xa = g.matmul_nt(x, g.param(it->second.A));
        int delta = g.matmul_nt(xa, g.param(it->second.B));
        return g.add(base, delta);
    }

    // Full forward pass; returns the logits node (L x (v_orig + v_ext)).
    // When block_outputs is given, the residual-stream node of every block
    // is recorded for diagnostics.
    int forward(Graph<T>& g, const std::vector<TokenId>& ids,
                std::vector<int>* block_outputs = nullptr) {
        const int L = static_cast<int>(ids.size());
        if (L < 1) throw std::runtime_error("empty input sequence");
        if (L > cfg.max_seq) throw std::runtime_error("sequence too long");
        int x = g.lookup(embed_orig, embed_ext, pos, ids);
        for (auto& b : blocks) {
            int a = g.layer_norm(x, g.param(b.ln1_gain), g.param(b.ln1_bias));
            int q = linear(g, a, b.attn_q);
            int k = linear(g, a, b.attn_k);
            int v = linear(g, a, b.attn_v);
            int at = g.attention(q, k, v, cfg.n_heads);
            x = g.add(x, linear(g, at, b.attn_o));
            int h = g.layer_norm(x, g.param(b.ln2_gain), g.param(b.ln2_bias));
            int f = linear(g, g.gelu(linear(g, h, b.ffn_in)), b.ffn_out);
            x = g.add(x, f);
            if (block_outputs) block_outputs->push_back(x);
        }
        x = g.layer_norm(x, g.param(final_gain), g.param(final_bias));
        int logits = g.matmul_nt(x, g.param(head_orig));
        if (cfg.v_ext > 0) {
            int ext_logits = g.matmul_nt(x, g.param(head_ext));
            logits = g.concat_cols(logits, ext_logits);
        }
        return logits;
    }

    // Forward without keeping gradients (teacher / evaluation use).
    Mat<T> forward_logits(const std::vector<TokenId>& ids) {
        Graph<T> g;
        return g.val(forward(g, ids));
    }

    long parameter_count() {
        long n = 0;
        for (Param<T>* p : params()) n += static_cast<long>(p->value.size());
        return n;
    }
};

namespace detail {
template <typename T>
Param<T> make_param(const std::string& name, int rows, int cols, std::mt19937& rng, T sigma) {
    return Param<T>(name, randn<T>(rows, cols, rng, sigma));
}
template <typename T>
Param<T> make_const_param(const std::string& name, int rows, int cols, T value) {
    Mat<T> m(rows, cols);
    m.fill(value);
    return Param<T>(name, std::move(m));
}
}  // namespace detail

// Deterministic random initialization; stands in for a pre-trained
// checkpoint at desk scale.
template <typename T>
Model<T> init_base_model(const ModelConfig& cfg, uint64_t seed, T sigma = T(0.02)) {
    cfg.validate();
    std::mt19937 rng(static_cast<uint32_t>(seed));
    Model<T> m;
    m.cfg = cfg;
    m.embed_orig = detail::make_param<T>("embed.original", cfg.v_orig, cfg.d_model, rng, sigma);
    m.embed_ext = detail::make_param<T>("embed.extension", cfg.v_ext, cfg.d_model, rng, sigma);
    m.head_orig = detail::make_param<T>("head.original", cfg.v_orig, cfg.d_model, rng, sigma);
    m.head_ext = detail::make_param<T>("head.extension", cfg.v_ext, cfg.d_model, rng, sigma);
    m.pos = detail::make_param<T>("pos.embedding", cfg.max_seq, cfg.d_model, rng, sigma);
    for (int i = 0; i < cfg.n_layers; ++i) {
        std::string pre = "block." + std::to_string(i) + ".";
        BlockParams<T> b;
        b.ln1_gain = detail::make_const_param<T>(pre + "ln1.gain", 1, cfg.d_model, T(1));
        b.ln1_bias = detail::make_const_param<T>(pre + "ln1.bias", 1, cfg.d_model, T(0));
        b.attn_q = detail::make_param<T>(pre + "attn_q", cfg.d_model, cfg.d_model, rng, sigma);
        b.attn_k = detail::make_param<T>(pre + "attn_k", cfg.d_model, cfg.d_model, rng, sigma);
        b.attn_v = detail::make_param<T>(pre + "attn_v", cfg.d_model, cfg.d_model, rng, sigma);
        b.attn_o = detail::make_param<T>(pre + "attn_o", cfg.d_model, cfg.d_model, rng, sigma);
        b.ln2_gain = detail::make_const_param<T>(pre + "ln2.gain", 1, cfg.d_model, T(1));
        b.ln2_bias = detail::make_const_param<T>(pre + "ln2.bias", 1, cfg.d_model, T(0));
        b.ffn_in = detail::make_param<T>(pre + "ffn_in", cfg.d_ff, cfg.d_model, rng, sigma);
        b.ffn_out = detail::make_param<T>(pre + "ffn_out", cfg.d_model, cfg.d_ff, rng, sigma);
        m.blocks.push_back(std::move(b));
    }
    m.final_gain = detail::make_const_param<T>("final_norm.gain", 1, cfg.d_model, T(1));
    m.final_bias = detail::make_const_param<T>("final_norm.bias", 1, cfg.d_model, T(0));
    return m;
}

// Block matrix names eligible for LoRA.
inline std::vector<std::string> lora_target_names(const ModelConfig& cfg) {
    std::vector<std::string> out;
    for (int i = 0; i < cfg.n_layers; ++i) {
        std::string pre = "block." + std::to_string(i) + ".";
        for (const char* m : {"attn_q", "attn_k", "attn_v", "attn_o", "ffn_in", "ffn_out"}) {
            out.push_back(pre + m);
        }
    }
    return out;
}

// Attaches adapters: B zero-initialized so the forward pass is unchanged at
// attach time, A small random.
template <typename T>
void attach_lora(Model<T>& model, int rank, const std::vector<std::string>& targets, uint64_t seed) {
    if (rank < 1) throw std::runtime_error("lora rank must be >= 1");
    std::mt19937 rng(static_cast<uint32_t>(seed));
    for (const auto& name : targets) {
        Param<T>* w = model.find(name);
        if (!w) throw std::runtime_error("lora target not found: " + name);
        int out_dim = w->value.rows;
        int in_dim = w->value.cols;
        if (rank >= std::min(out_dim, in_dim)) {
            throw std::runtime_error("lora rank must be < min(d, k) for " + name);
        }
        LoraPair<T> pair;
        pair.A = detail::make_param<T>("lora." + name + ".A", rank, in_dim, rng, T(0.01));
        pair.B = detail::make_const_param<T>("lora." + name + ".B", out_dim, rank, T(0));
        model.lora.emplace(name, std::move(pair));
    }
}

}  // namespace vdistill
