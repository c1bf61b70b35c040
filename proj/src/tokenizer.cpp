#include "vdistill/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace vdistill {

namespace {

uint64_t pair_key(TokenId l, TokenId r) {
    return (static_cast<uint64_t>(static_cast<uint32_t>(l)) << 32) | static_cast<uint32_t>(r);
}

// Replaces every non-overlapping (l, r) adjacency left-to-right.
void apply_merge(std::vector<TokenId>& seq, TokenId l, TokenId r, TokenId merged) {
    size_t w = 0;
    for (size_t i = 0; i < seq.size();) {
        if (i + 1 < seq.size() && seq[i] == l && seq[i + 1] == r) {
            seq[w++] = merged;
            i += 2;
        } else {
            seq[w++] = seq[i++];
        }
    }
    seq.resize(w);
}

std::string escape_token(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '\\': out += "\\\\"; break;
            case '\t': out += "\\t"; break;
            case '\n': out += "\\n"; break;
            default: out += c;
        }
    }
    return out;
}

std::string unescape_token(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && i + 1 < s.size()) {
            char n = s[++i];
            if (n == 't') out += '\t';
            else if (n == 'n') out += '\n';
            else if (n == '\\') out += '\\';
            else throw std::runtime_error("bad escape in tokenizer file");
        } else {
            out += s[i];
        }
    }
    return out;
}

struct ParsedTokenizerFile {
    std::vector<std::pair<std::string, TokenId>> vocab;
    std::vector<std::pair<std::string, std::string>> merges;
    std::vector<std::pair<std::string, TokenId>> added;
    bool has_added = false;
};

ParsedTokenizerFile parse_tokenizer_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open tokenizer file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty tokenizer file: " + path);
    std::istringstream hdr(line);
    std::string tag, ver;
    int vocab_size = 0;
    hdr >> tag >> ver >> vocab_size;
    if (tag != "bpe-tokenizer" || ver != "v1") {
        throw std::runtime_error("bad tokenizer header: " + line);
    }
    ParsedTokenizerFile out;
    enum { VOCAB, MERGES, ADDED } section = VOCAB;
    while (std::getline(in, line)) {
        if (line == "merges") {
            section = MERGES;
            continue;
        }
        if (line == "added") {
            section = ADDED;
            out.has_added = true;
            continue;
        }
        size_t tab = line.find('\t');
        if (tab == std::string::npos) throw std::runtime_error("malformed tokenizer line: " + line);
        std::string left = unescape_token(line.substr(0, tab));
        std::string right_raw = line.substr(tab + 1);
        if (section == MERGES) {
            out.merges.emplace_back(left, unescape_token(right_raw));
        } else {
            TokenId id = static_cast<TokenId>(std::stol(right_raw));
            (section == VOCAB ? out.vocab : out.added).emplace_back(left, id);
        }
    }
    if (static_cast<int>(out.vocab.size()) != vocab_size) {
        throw std::runtime_error("tokenizer vocab size mismatch in " + path);
    }
    return out;
}

}  // namespace

BpeTokenizer::BpeTokenizer() {
    id_to_token_.reserve(256);
    for (int b = 0; b < 256; ++b) {
        std::string s(1, static_cast<char>(b));
        token_to_id_[s] = static_cast<TokenId>(b);
        id_to_token_.push_back(std::move(s));
    }
}

void BpeTokenizer::rebuild_lookup() {
    merge_lookup_.clear();
    for (size_t m = 0; m < merges_.size(); ++m) {
        TokenId l = token_to_id_.at(merges_[m].first);
        TokenId r = token_to_id_.at(merges_[m].second);
        merge_lookup_[pair_key(l, r)] = static_cast<TokenId>(256 + m);
    }
}

BpeTokenizer BpeTokenizer::train(const std::vector<std::string>& corpus, int target_vocab_size) {
    if (corpus.empty()) throw std::runtime_error("empty corpus");
    if (target_vocab_size < 257) throw std::runtime_error("target_vocab_size must be >= 257");

    BpeTokenizer tok;
    std::vector<std::vector<TokenId>> docs;
    docs.reserve(corpus.size());
    for (const auto& text : corpus) {
        std::vector<TokenId> ids;
        ids.reserve(text.size());
        for (unsigned char c : text) ids.push_back(static_cast<TokenId>(c));
        docs.push_back(std::move(ids));
    }

    while (tok.vocab_size() < target_vocab_size) {
        // Non-overlapping left-to-right pair counts, matching how merges
        // are later applied.
        std::unordered_map<uint64_t, long> counts;
        for (const auto& doc : docs) {
            for (size_t i = 0; i + 1 < doc.size();) {
                ++counts[pair_key(doc[i], doc[i + 1])];
                i += (doc[i] == doc[i + 1]) ? 2 : 1;
            }
        }
        if (counts.empty()) break;

        long best_count = 0;
        TokenId best_l = -1, best_r = -1;
        std::string best_concat;
        for (const auto& [key, count] : counts) {
            TokenId l = static_cast<TokenId>(key >> 32);
            TokenId r = static_cast<TokenId>(key & 0xffffffffu);
            std::string concat = tok.id_to_token_[l] + tok.id_to_token_[r];
            if (count > best_count || (count == best_count && concat < best_concat)) {
                best_count = count;
                best_l = l;
                best_r = r;
                best_concat = std::move(concat);
            }
        }
        if (best_count < 2) break;  // a once-seen pair gains nothing

        TokenId merged = static_cast<TokenId>(tok.vocab_size());
        tok.merges_.emplace_back(tok.id_to_token_[best_l], tok.id_to_token_[best_r]);
        tok.token_to_id_[best_concat] = merged;
        tok.id_to_token_.push_back(best_concat);
        for (auto& doc : docs) apply_merge(doc, best_l, best_r, merged);
    }
    tok.rebuild_lookup();
    return tok;
}

BpeTokenizer BpeTokenizer::from_merges(const std::vector<std::pair<std::string, std::string>>& merges) {
    BpeTokenizer tok;
    for (const auto& [l, r] : merges) {
        if (tok.token_id(l) < 0 || tok.token_id(r) < 0) {
            throw std::runtime_error("merge references unknown token: " + l + " + " + r);
        }
        std::string concat = l + r;
        if (tok.token_id(concat) >= 0) throw std::runtime_error("duplicate merge result: " + concat);
        tok.merges_.emplace_back(l, r);
        tok.token_to_id_[concat] = tok.vocab_size();
        tok.id_to_token_.push_back(concat);
    }
    tok.rebuild_lookup();
    return tok;
}

std::vector<TokenId> BpeTokenizer::tokenize(const std::string& text) const {
    std::vector<TokenId> seq;
    seq.reserve(text.size());
    for (unsigned char c : text) seq.push_back(static_cast<TokenId>(c));
    // Repeatedly apply the lowest-ranked applicable merge.
    while (seq.size() > 1) {
        TokenId best = -1;
        TokenId best_l = -1, best_r = -1;
        for (size_t i = 0; i + 1 < seq.size(); ++i) {
            auto it = merge_lookup_.find(pair_key(seq[i], seq[i + 1]));
            if (it != merge_lookup_.end() && (best < 0 || it->second < best)) {
                best = it->second;
                best_l = seq[i];
                best_r = seq[i + 1];
            }
        }
        if (best < 0) break;
        apply_merge(seq, best_l, best_r, best);
    }
    return seq;
}

std::string BpeTokenizer::detokenize(const std::vector<TokenId>& ids) const {
    std::string out;
    for (TokenId id : ids) {
        if (id < 0 || id >= vocab_size()) throw std::runtime_error("id out of range");
        out += id_to_token_[id];
    }
    return out;
}

const std::string& BpeTokenizer::token_string(TokenId id) const {
    if (id < 0 || id >= vocab_size()) throw std::runtime_error("id out of range");
    return id_to_token_[id];
}

TokenId BpeTokenizer::token_id(const std::string& s) const {
    auto it = token_to_id_.find(s);
    return it == token_to_id_.end() ? -1 : it->second;
}

void BpeTokenizer::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write tokenizer file: " + path);
    out << "bpe-tokenizer v1 " << vocab_size() << "\n";
    for (int id = 0; id < vocab_size(); ++id) {
        out << escape_token(id_to_token_[id]) << '\t' << id << '\n';
    }
    out << "merges\n";
    for (const auto& [l, r] : merges_) {
        out << escape_token(l) << '\t' << escape_token(r) << '\n';
    }
}

BpeTokenizer BpeTokenizer::load(const std::string& path) {
    ParsedTokenizerFile f = parse_tokenizer_file(path);
    if (f.has_added) throw std::runtime_error("not a base tokenizer (has added section): " + path);
    BpeTokenizer tok;
    for (const auto& [l, r] : f.merges) {
        if (tok.token_id(l) < 0 || tok.token_id(r) < 0) {
            throw std::runtime_error("merge references unknown token in " + path);
        }
        std::string concat = l + r;
        tok.merges_.emplace_back(l, r);
        tok.token_to_id_[concat] = tok.vocab_size();
        tok.id_to_token_.push_back(concat);
    }
    for (const auto& [s, id] : f.vocab) {
        if (tok.token_id(s) != id) {
            throw std::runtime_error("vocab entry inconsistent with merges in " + path);
        }
    }
    tok.rebuild_lookup();
    return tok;
}

ExtendedTokenizer::ExtendedTokenizer(BpeTokenizer base, std::vector<std::string> added_tokens)
    : base_(std::move(base)), added_(std::move(added_tokens)) {
    for (const auto& a : added_) {
        if (a.empty()) throw std::runtime_error("added token must be non-empty");
        for (int id = 0; id < base_.vocab_size(); ++id) {
            if (base_.token_string(id).find(a) != std::string::npos) {
                throw std::runtime_error("added token '" + a + "' is a substring of base token '" +
                                         base_.token_string(id) + "'");
            }
        }
    }
    for (size_t i = 0; i < added_.size(); ++i) {
        for (size_t j = i + 1; j < added_.size(); ++j) {
            if (added_[i] == added_[j]) throw std::runtime_error("duplicate added token: " + added_[i]);
        }
    }
}

std::vector<TokenId> ExtendedTokenizer::tokenize(const std::string& text) const {
    std::vector<TokenId> out;
    size_t span_start = 0;
    size_t pos = 0;
    auto flush_span = [&](size_t end) {
        if (end > span_start) {
            auto ids = base_.tokenize(text.substr(span_start, end - span_start));
            out.insert(out.end(), ids.begin(), ids.end());
        }
    };
    while (pos < text.size()) {
        int best = -1;
        size_t best_len = 0;
        for (size_t a = 0; a < added_.size(); ++a) {
            const std::string& tok = added_[a];
            if (tok.size() > best_len && text.compare(pos, tok.size(), tok) == 0) {
                best = static_cast<int>(a);
                best_len = tok.size();
            }
        }
        if (best >= 0) {
            flush_span(pos);
            out.push_back(static_cast<TokenId>(base_.vocab_size() + best));
            pos += best_len;
            span_start = pos;
        } else {
            ++pos;
        }
    }
    flush_span(text.size());
    return out;
}

std::string ExtendedTokenizer::detokenize(const std::vector<TokenId>& ids) const {
    std::string out;
    for (TokenId id : ids) out += token_string(id);
    return out;
}

const std::string& ExtendedTokenizer::token_string(TokenId id) const {
    if (id < 0 || id >= vocab_size()) throw std::runtime_error("id out of range");
    if (id < base_.vocab_size()) return base_.token_string(id);
    return added_[id - base_.vocab_size()];
}

void ExtendedTokenizer::save(const std::string& path) const {
    base_.save(path);
    std::ofstream out(path, std::ios::binary | std::ios::app);
    out << "added\n";
    for (size_t i = 0; i < added_.size(); ++i) {
        out << escape_token(added_[i]) << '\t' << (base_.vocab_size() + i) << '\n';
    }
}

ExtendedTokenizer ExtendedTokenizer::load(const std::string& path) {
    ParsedTokenizerFile f = parse_tokenizer_file(path);
    BpeTokenizer base;
    for (const auto& [l, r] : f.merges) {
        std::string concat = l + r;
        base.merges_.emplace_back(l, r);
        base.token_to_id_[concat] = base.vocab_size();
        base.id_to_token_.push_back(concat);
    }
    base.rebuild_lookup();
    std::vector<std::string> added;
    for (const auto& [s, id] : f.added) {
        if (id != base.vocab_size() + static_cast<TokenId>(added.size())) {
            throw std::runtime_error("added token ids must be dense after base vocab in " + path);
        }
        added.push_back(s);
    }
    return ExtendedTokenizer(std::move(base), std::move(added));
}

bool is_numeric_token(const std::string& s) {
    size_t start = (!s.empty() && s[0] == ' ') ? 1 : 0;
    if (start >= s.size()) return false;
    for (size_t i = start; i < s.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
    }
    return true;
}

ExpansionResult expand_vocabulary(const BpeTokenizer& base, const std::vector<std::string>& corpus,
                                  int n_add, int fresh_vocab_size) {
    if (corpus.empty()) throw std::runtime_error("empty corpus");
    if (n_add < 1) throw std::runtime_error("n_add must be >= 1");
    if (fresh_vocab_size <= 0) fresh_vocab_size = base.vocab_size() + 4 * n_add;

    BpeTokenizer fresh = BpeTokenizer::train(corpus, fresh_vocab_size);

    std::vector<long> counts(fresh.vocab_size(), 0);
    for (const auto& doc : corpus) {
        for (TokenId id : fresh.tokenize(doc)) ++counts[id];
    }

    std::vector<std::pair<std::string, long>> candidates;
    for (TokenId id = 0; id < fresh.vocab_size(); ++id) {
        if (counts[id] == 0) continue;
        const std::string& tok = fresh.token_string(id);
        if (is_numeric_token(tok)) continue;
        bool substring_or_dup = false;
        for (int b = 0; b < base.vocab_size() && !substring_or_dup; ++b) {
            substring_or_dup = base.token_string(b).find(tok) != std::string::npos;
        }
        if (substring_or_dup) continue;
        candidates.emplace_back(tok, counts[id]);
    }

    std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    ExpansionResult result{ExtendedTokenizer(base, {}), {}, {}};
    if (candidates.empty()) {
        result.warnings.push_back("no candidate tokens survived filtering; added list is empty");
        return result;
    }
    if (static_cast<int>(candidates.size()) > n_add) candidates.resize(n_add);
    std::vector<std::string> added;
    for (auto& [tok, count] : candidates) {
        added.push_back(tok);
        result.selected.emplace_back(tok, count);
    }
    result.tokenizer = ExtendedTokenizer(base, std::move(added));
    return result;
}

}  // namespace vdistill
