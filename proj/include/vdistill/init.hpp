#pragma once

#include <cmath>
#include <random>
#include <string>

#include "vdistill/matrix.hpp"
#include "vdistill/model.hpp"
#include "vdistill/tokenizer.hpp"

namespace vdistill {

enum class EmbeddingInit { Random, Mean };
enum class HeadInit { Random, CopyFirst };

struct InitStrategy {
    EmbeddingInit embedding_mode = EmbeddingInit::Random;
    HeadInit head_mode = HeadInit::Random;
};

// Empirical standard deviation over all entries.
template <typename T>
T matrix_sigma(const Mat<T>& m) {
    if (m.size() == 0) return T(0);
    double mean = 0;
    for (T v : m.data) mean += v;
    mean /= static_cast<double>(m.size());
    double var = 0;
    for (T v : m.data) var += (v - mean) * (v - mean);
    var /= static_cast<double>(m.size());
    return static_cast<T>(std::sqrt(var));
}

template <typename T>
Mat<T> init_random_rows(int n_rows, int d_model, uint64_t seed, T sigma) {
    if (n_rows < 0) throw std::runtime_error("n_rows must be >= 0");
    std::mt19937 rng(static_cast<uint32_t>(seed));
    return randn<T>(n_rows, d_model, rng, sigma);
}

// Left-to-right arithmetic mean of the constituent subtoken rows.
template <typename T>
std::vector<T> init_mean_embedding(const std::string& token_string, const BpeTokenizer& base_tok,
                                   const Mat<T>& embed_original) {
    if (token_string.empty()) throw std::runtime_error("empty token string");
    std::vector<TokenId> ids = base_tok.tokenize(token_string);
    std::vector<T> row(embed_original.cols, T(0));
    for (TokenId id : ids) {
        const T* src = embed_original.row_ptr(id);
        for (int c = 0; c < embed_original.cols; ++c) row[c] += src[c];
    }
    const T k = static_cast<T>(ids.size());
    for (auto& v : row) v /= k;
    return row;
}

// Exact copy of the first subtoken's head row.
template <typename T>
std::vector<T> init_head_copy_first(const std::string& token_string, const BpeTokenizer& base_tok,
                                    const Mat<T>& head_original) {
    if (token_string.empty()) throw std::runtime_error("empty token string");
    std::vector<TokenId> ids = base_tok.tokenize(token_string);
    const T* src = head_original.row_ptr(ids.front());
    return std::vector<T>(src, src + head_original.cols);
}

// Fills the extension blocks of `model` for the added tokens of `ext_tok`
// according to the strategy. Random modes draw sigma from the corresponding
// original block.
template <typename T>
void init_extension_blocks(Model<T>& model, const ExtendedTokenizer& ext_tok,
                           const InitStrategy& strategy, uint64_t seed) {
    const auto& added = ext_tok.added();
    if (static_cast<int>(added.size()) != model.cfg.v_ext) {
        throw std::runtime_error("added token count does not match model v_ext");
    }
    if (strategy.embedding_mode == EmbeddingInit::Random) {
        model.embed_ext.value =
            init_random_rows<T>(model.cfg.v_ext, model.cfg.d_model, seed, matrix_sigma(model.embed_orig.value));
    } else {
        for (size_t i = 0; i < added.size(); ++i) {
            auto row = init_mean_embedding(added[i], ext_tok.base(), model.embed_orig.value);
            std::copy(row.begin(), row.end(), model.embed_ext.value.row_ptr(static_cast<int>(i)));
        }
    }
    if (strategy.head_mode == HeadInit::Random) {
        model.head_ext.value =
            init_random_rows<T>(model.cfg.v_ext, model.cfg.d_model, seed + 1, matrix_sigma(model.head_orig.value));
    } else {
        for (size_t i = 0; i < added.size(); ++i) {
            auto row = init_head_copy_first(added[i], ext_tok.base(), model.head_orig.value);
            std::copy(row.begin(), row.end(), model.head_ext.value.row_ptr(static_cast<int>(i)));
        }
    }
}

inline EmbeddingInit parse_embedding_init(const std::string& s) {
    if (s == "random") return EmbeddingInit::Random;
    if (s == "mean") return EmbeddingInit::Mean;
    throw std::runtime_error("unknown embedding init: " + s);
}

inline HeadInit parse_head_init(const std::string& s) {
    if (s == "random") return HeadInit::Random;
    if (s == "copy-first" || s == "copy_first") return HeadInit::CopyFirst;
    throw std::runtime_error("unknown head init: " + s);
}

}  // namespace vdistill
