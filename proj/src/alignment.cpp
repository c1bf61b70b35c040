#include "vdistill/alignment.hpp"

#include <algorithm>
#include <numeric>

namespace vdistill {

AlignmentMap map_token_sequences(const std::vector<TokenId>& orig, const std::vector<TokenId>& ext,
                                 int vocab_split, int window) {
    AlignmentMap map;
    const int n_orig = static_cast<int>(orig.size());
    const int n_ext = static_cast<int>(ext.size());
    int i = 0, j = 0;
    while (i < n_orig && j < n_ext) {
        if (orig[i] == ext[j] && orig[i] < vocab_split) {
            map.similar.emplace_back(i, j);
            ++i;
            ++j;
            continue;
        }
        // Resynchronize: smallest d + d', ties on smaller d.
        int best_d = -1, best_dp = -1;
        for (int d = 0; d <= window && i + d < n_orig; ++d) {
            for (int dp = 0; dp <= window && j + dp < n_ext; ++dp) {
                if (orig[i + d] != ext[j + dp] || orig[i + d] >= vocab_split) continue;
                if (best_d < 0 || d + dp < best_d + best_dp ||
                    (d + dp == best_d + best_dp && d < best_d)) {
                    best_d = d;
                    best_dp = dp;
                }
            }
        }
        DivergentGroup group;
        if (best_d >= 0) {
            for (int k = 0; k < best_d; ++k) group.orig_positions.push_back(i + k);
            for (int k = 0; k < best_dp; ++k) group.ext_positions.push_back(j + k);
            i += best_d;
            j += best_dp;
        } else {
            group.orig_positions.push_back(i);
            group.ext_positions.push_back(j);
            ++i;
            ++j;
        }
        if (!group.orig_positions.empty() || !group.ext_positions.empty()) {
            map.divergent.push_back(std::move(group));
        }
    }
    if (i < n_orig) {
        DivergentGroup tail;
        for (; i < n_orig; ++i) tail.orig_positions.push_back(i);
        map.divergent.push_back(std::move(tail));
    }
    if (j < n_ext) {
        DivergentGroup tail;
        for (; j < n_ext; ++j) tail.ext_positions.push_back(j);
        map.divergent.push_back(std::move(tail));
    }
    return map;
}

ColumnSelection select_training_positions(const AlignmentMap& align) {
    std::vector<std::pair<int, int>> pairs(align.similar);
    for (const auto& g : align.divergent) {
        if (g.orig_positions.empty() || g.ext_positions.empty()) continue;
        pairs.emplace_back(g.orig_positions.front(), g.ext_positions.front());
    }
    std::sort(pairs.begin(), pairs.end(),
              [](const auto& a, const auto& b) { return a.second < b.second; });
    ColumnSelection sel;
    sel.orig_cols.reserve(pairs.size());
    sel.ext_cols.reserve(pairs.size());
    for (const auto& [o, e] : pairs) {
        sel.orig_cols.push_back(o);
        sel.ext_cols.push_back(e);
    }
    return sel;
}

}  // namespace vdistill
