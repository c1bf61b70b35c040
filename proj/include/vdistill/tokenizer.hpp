#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace vdistill {

using TokenId = int32_t;

// Byte-level BPE tokenizer. Ids 0..255 are the single-byte alphabet,
// merged tokens follow densely in merge order.
class BpeTokenizer {
public:
    BpeTokenizer();

    // Trains merges on the corpus until the vocabulary reaches
    // min(target_vocab_size, reachable). Ties between equally frequent
    // pairs break on the lexicographically smallest concatenation.
    static BpeTokenizer train(const std::vector<std::string>& corpus, int target_vocab_size);

    // Builds a tokenizer from an explicit merge list (the persisted form).
    static BpeTokenizer from_merges(const std::vector<std::pair<std::string, std::string>>& merges);

    std::vector<TokenId> tokenize(const std::string& text) const;
    std::string detokenize(const std::vector<TokenId>& ids) const;

    int vocab_size() const { return static_cast<int>(id_to_token_.size()); }
    const std::string& token_string(TokenId id) const;
    // -1 when the string is not a token.
    TokenId token_id(const std::string& s) const;
    const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }

    void save(const std::string& path) const;
    static BpeTokenizer load(const std::string& path);

private:
    friend class ExtendedTokenizer;
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, TokenId> token_to_id_;
    std::vector<std::pair<std::string, std::string>> merges_;
    // (left id, right id) -> merged id, for fast encoding
    std::unordered_map<uint64_t, TokenId> merge_lookup_;

    void rebuild_lookup();
};

// Frozen base tokenizer plus whole-word added tokens with ids starting at
// the base vocabulary size. Added tokens are matched first by greedy
// longest-match over the raw text; remaining spans go through base BPE.
class ExtendedTokenizer {
public:
    ExtendedTokenizer(BpeTokenizer base, std::vector<std::string> added_tokens);

    std::vector<TokenId> tokenize(const std::string& text) const;
    std::string detokenize(const std::vector<TokenId>& ids) const;

    const BpeTokenizer& base() const { return base_; }
    const std::vector<std::string>& added() const { return added_; }
    int base_vocab_size() const { return base_.vocab_size(); }
    int vocab_size() const { return base_.vocab_size() + static_cast<int>(added_.size()); }
    const std::string& token_string(TokenId id) const;

    void save(const std::string& path) const;
    static ExtendedTokenizer load(const std::string& path);

private:
    BpeTokenizer base_;
    std::vector<std::string> added_;
};

struct ExpansionResult {
    ExtendedTokenizer tokenizer;
    // (token, corpus count) in the order they were added
    std::vector<std::pair<std::string, long>> selected;
    std::vector<std::string> warnings;
};

// Expansion recipe: train a fresh BPE on the corpus, count token
// occurrences, filter numeric / substring-of-base / duplicate candidates,
// then append the top n_add by count (ties on token string).
ExpansionResult expand_vocabulary(const BpeTokenizer& base, const std::vector<std::string>& corpus,
                                  int n_add, int fresh_vocab_size = 0);

// True when every char is an ASCII digit after stripping one optional
// leading space.
bool is_numeric_token(const std::string& s);

}  // namespace vdistill
