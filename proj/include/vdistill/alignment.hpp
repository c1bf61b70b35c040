#pragma once

#include <vector>

#include "vdistill/tokenizer.hpp"

namespace vdistill {

struct DivergentGroup {
    std::vector<int> orig_positions;
    std::vector<int> ext_positions;
};

// Position map between the original and extended tokenization of one text.
// Entries jointly partition both position ranges in order.
struct AlignmentMap {
    std::vector<std::pair<int, int>> similar;
    std::vector<DivergentGroup> divergent;
};

struct ColumnSelection {
    std::vector<int> orig_cols;
    std::vector<int> ext_cols;  // same length
};

// Two-cursor mapping with windowed resynchronization. On mismatch the
// smallest (d + d') with O[i+d] == E[j+d'] wins, ties on smaller d; if no
// resynchronization exists within the window, the mismatched pair becomes a
// one-to-one divergent group and both cursors advance.
AlignmentMap map_token_sequences(const std::vector<TokenId>& orig, const std::vector<TokenId>& ext,
                                 int vocab_split, int window = 20);

// Keeps every similar pair plus the first position of each divergent group,
// sorted by extended position. Groups with an empty side contribute nothing.
ColumnSelection select_training_positions(const AlignmentMap& align);

}  // namespace vdistill
