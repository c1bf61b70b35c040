#pragma once

#include <string>
#include <vector>

namespace vdistill {

enum class CorpusFormat { Plain, Paired };

struct Corpus {
    std::vector<std::string> documents;
};

// Plain: blank-line-separated blocks. Paired: one `query<TAB>answer` record
// per line, joined into a single training text per record.
Corpus load_corpus(const std::string& path, CorpusFormat format);

void save_corpus(const Corpus& corpus, const std::string& path);

// Synthetic pseudo-code corpora so the whole pipeline runs with zero
// external data. "base" flavor uses short generic identifiers (for training
// the base tokenizer and pretraining); "domain" flavor repeats long
// multi-subtoken identifiers that are worth adding to the vocabulary.
enum class CorpusFlavor { Base, Domain };
Corpus generate_corpus(CorpusFlavor flavor, int n_docs, uint64_t seed);

}  // namespace vdistill
