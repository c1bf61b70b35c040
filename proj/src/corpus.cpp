#include "vdistill/corpus.hpp"

#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace vdistill {

Corpus load_corpus(const std::string& path, CorpusFormat format) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path);
    Corpus corpus;
    std::string line;
    if (format == CorpusFormat::Plain) {
        std::string block;
        auto flush = [&]() {
            if (!block.empty()) {
                if (block.back() == '\n') block.pop_back();
                corpus.documents.push_back(block);
                block.clear();
            }
        };
        while (std::getline(in, line)) {
            if (line.empty()) {
                flush();
            } else {
                block += line;
                block += '\n';
            }
        }
        flush();
    } else {
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            size_t tab = line.find('\t');
            if (tab == std::string::npos) {
                throw std::runtime_error("malformed paired record at line " + std::to_string(line_no) +
                                         ": missing tab separator");
            }
            std::string query = line.substr(0, tab);
            std::string answer = line.substr(tab + 1);
            corpus.documents.push_back(query + "\n" + answer + "\n");
        }
    }
    if (corpus.documents.empty()) {
        std::cerr << "warning: corpus '" << path << "' is empty\n";
    }
    return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write corpus file: " + path);
    for (const auto& doc : corpus.documents) {
        out << doc << "\n\n";
    }
}

namespace {

const char* kBaseIdents[] = {"sum", "val", "idx", "buf", "tmp", "arg", "out", "key", "row", "acc"};
const char* kDomainIdents[] = {"eratosthenes",  "fibonacci",     "quicksort",   "numpyarray",
                               "cellconnect",   "matplotfigure", "dataframeset", "gradientstep",
                               "accumulator",   "thresholding",  "interpolator", "checksummer",
                               "tokenstream",   "normalizer",    "partitioner",  "vectorizer"};

}  // namespace

Corpus generate_corpus(CorpusFlavor flavor, int n_docs, uint64_t seed) {
    std::mt19937 rng(static_cast<uint32_t>(seed));
    Corpus corpus;
    corpus.documents.reserve(n_docs);
    const bool domain = flavor == CorpusFlavor::Domain;
    const int n_base = static_cast<int>(sizeof(kBaseIdents) / sizeof(kBaseIdents[0]));
    const int n_domain = static_cast<int>(sizeof(kDomainIdents) / sizeof(kDomainIdents[0]));

    for (int d = 0; d < n_docs; ++d) {
        std::string fn;
        if (domain) {
            fn = kDomainIdents[rng() % n_domain];
        } else {
            fn = std::string(kBaseIdents[rng() % n_base]) + "_" + kBaseIdents[rng() % n_base];
        }
        std::string var = kBaseIdents[rng() % n_base];
        std::string var2 = kBaseIdents[rng() % n_base];
        int limit = 2 + static_cast<int>(rng() % 30);

        std::ostringstream doc;
        doc << "def " << fn << "(" << var << "):\n";
        doc << "    " << var2 << " = 0\n";
        switch (rng() % 3) {
            case 0:
                doc << "    for i in range(" << var << "):\n";
                doc << "        " << var2 << " = " << var2 << " + i\n";
                break;
            case 1:
                doc << "    while " << var2 << " < " << limit << ":\n";
                doc << "        " << var2 << " = " << var2 << " + 1\n";
                break;
            default:
                doc << "    if " << var << " > " << limit << ":\n";
                doc << "        " << var2 << " = " << fn << "(" << var << " - 1)\n";
                break;
        }
        if (domain) {
            // Extra occurrences so the identifiers dominate the frequency
            // counts during expansion.
            doc << "    " << var << " = " << fn << "(" << var2 << ")\n";
        }
        doc << "    return " << var2 << "\n";
        corpus.documents.push_back(doc.str());
    }
    return corpus;
}

}  // namespace vdistill
