#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vdistill/matrix.hpp"
#include "vdistill/tokenizer.hpp"

namespace vdistill {

template <typename T>
T cosine(const std::vector<T>& a, const std::vector<T>& b) {
    if (a.size() != b.size()) throw std::runtime_error("cosine: dim mismatch");
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0 || nb == 0) throw std::runtime_error("undefined cosine");
    return static_cast<T>(dot / (std::sqrt(na) * std::sqrt(nb)));
}

template <typename T>
struct SimilarityEntry {
    T mean_first = T(0);
    T mean_intermediate = T(0);
    T mean_last = T(0);
    int n_tokens_with_intermediates = 0;
};

// For each added token: cosine of its extension row against the reference
// rows of the first subtoken, the mean of intermediate subtokens (k >= 3
// only) and the last subtoken; means over all added tokens. Works for both
// the embedding and the head by choosing the matrices passed in.
template <typename T>
SimilarityEntry<T> composite_similarity(const Mat<T>& extension_matrix, const ExtendedTokenizer& ext_tok,
                                        const BpeTokenizer& base_tok, const Mat<T>& reference_matrix) {
    const auto& added = ext_tok.added();
    if (static_cast<int>(added.size()) != extension_matrix.rows) {
        throw std::runtime_error("extension matrix rows must match added token count");
    }
    SimilarityEntry<T> entry;
    double sum_first = 0, sum_inter = 0, sum_last = 0;
    int n = 0;
    const int d = extension_matrix.cols;
    for (size_t i = 0; i < added.size(); ++i) {
        std::vector<TokenId> ids = base_tok.tokenize(added[i]);
        const T* er = extension_matrix.row_ptr(static_cast<int>(i));
        std::vector<T> row(er, er + d);
        auto ref_row = [&](TokenId id) {
            const T* r = reference_matrix.row_ptr(id);
            return std::vector<T>(r, r + d);
        };
        sum_first += cosine(row, ref_row(ids.front()));
        sum_last += cosine(row, ref_row(ids.back()));
        if (ids.size() >= 3) {
            std::vector<T> inter(d, T(0));
            for (size_t k = 1; k + 1 < ids.size(); ++k) {
                const T* r = reference_matrix.row_ptr(ids[k]);
                for (int c = 0; c < d; ++c) inter[c] += r[c];
            }
            for (auto& v : inter) v /= static_cast<T>(ids.size() - 2);
            sum_inter += cosine(row, inter);
            ++entry.n_tokens_with_intermediates;
        }
        ++n;
    }
    if (n > 0) {
        entry.mean_first = static_cast<T>(sum_first / n);
        entry.mean_last = static_cast<T>(sum_last / n);
    }
    if (entry.n_tokens_with_intermediates > 0) {
        entry.mean_intermediate = static_cast<T>(sum_inter / entry.n_tokens_with_intermediates);
    }
    return entry;
}

}  // namespace vdistill
