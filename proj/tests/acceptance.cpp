// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on failure.
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "vdistill/analysis.hpp"
#include "vdistill/checkpoint.hpp"
#include "vdistill/distill.hpp"
#include "vdistill/init.hpp"
#include "vdistill/pipeline.hpp"
#include "vdistill/train.hpp"

using namespace vdistill;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

// Runs one criterion; the callable returns std::nullopt on success or a
// failure description.
void criterion(const std::string& name, const std::function<std::optional<std::string>()>& fn) {
    auto t0 = std::chrono::steady_clock::now();
    std::optional<std::string> err;
    try {
        err = fn();
    } catch (const std::exception& e) {
        err = std::string("exception: ") + e.what();
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream line;
    if (err) {
        ++g_failures;
        line << "FAIL: " << name << " (" << *err << ")";
    } else {
        line << "PASS: " << name;
    }
    line << "  [" << std::fixed << std::setprecision(1) << secs << "s]";
    std::cout << line.str() << std::endl;
}

ModelConfig toy_config(int v_orig, int v_ext) {
    ModelConfig cfg;
    cfg.d_model = 64;
    cfg.n_layers = 2;
    cfg.n_heads = 4;
    cfg.d_ff = 256;
    cfg.max_seq = 128;
    cfg.v_orig = v_orig;
    cfg.v_ext = v_ext;
    return cfg;
}

ModelConfig small_config(int v_orig, int v_ext, int n_layers = 1) {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.n_layers = n_layers;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.max_seq = 64;
    cfg.v_orig = v_orig;
    cfg.v_ext = v_ext;
    return cfg;
}

const std::string kCellText = "int CellConnectDLS(void) { return 0; }";

std::vector<double> read_csv_column(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("missing csv: " + file.string());
    std::vector<double> out;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        size_t comma = line.find(',');
        if (comma == std::string::npos) continue;
        out.push_back(std::stod(line.substr(comma + 1)));
    }
    return out;
}

std::vector<std::vector<double>> read_csv_rows(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("missing csv: " + file.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(cell.empty() ? 0.0 : std::stod(cell));
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

int main() {
    std::cout << "acceptance gate\n";

    // Shared fixtures: worked-example tokenizers and a synthetic-corpus pair.
    BpeTokenizer cell_base = testutil::cellconnect_base();
    ExtendedTokenizer cell_ext = testutil::cellconnect_extended();

    Corpus base_corpus = generate_corpus(CorpusFlavor::Base, 150, 42);
    Corpus domain_corpus = generate_corpus(CorpusFlavor::Domain, 150, 43);
    BpeTokenizer toy_tok = BpeTokenizer::train(base_corpus.documents, 300);

    criterion("alignment golden mapping", [&]() -> std::optional<std::string> {
        AlignmentMap a = map_token_sequences(cell_base.tokenize(kCellText), cell_ext.tokenize(kCellText),
                                             cell_base.vocab_size());
        std::vector<std::pair<int, int>> expected = {{0, 0}, {1, 1}, {7, 4},   {8, 5},   {9, 6},
                                                     {10, 7}, {11, 8}, {12, 9}, {13, 10}, {14, 11},
                                                     {15, 12}, {16, 13}};
        if (a.similar != expected) return "similar pairs differ from the golden mapping";
        if (a.divergent.size() != 1) return "expected exactly one divergent group";
        if (a.divergent[0].orig_positions != std::vector<int>{2, 3, 4, 5, 6} ||
            a.divergent[0].ext_positions != std::vector<int>{2, 3}) {
            return "divergent group differs from ([2,3,4,5,6],[2,3])";
        }
        return std::nullopt;
    });

    criterion("column selection structure (17-vs-15 case)", [&]() -> std::optional<std::string> {
        std::vector<TokenId> orig, ext;
        for (int i = 0; i < 17; ++i) orig.push_back(10 + i);
        ext = {10, 300, 13, 14, 15, 16, 17, 18, 19, 20, 301, 23, 24, 25, 26};
        AlignmentMap a = map_token_sequences(orig, ext, 300);
        ColumnSelection sel = select_training_positions(a);
        if (sel.orig_cols.size() != 15) {
            return "expected 15 column pairs, got " + std::to_string(sel.orig_cols.size());
        }
        std::vector<int> expected_orig;
        for (int i = 0; i < 17; ++i) {
            if (i != 2 && i != 12) expected_orig.push_back(i);
        }
        if (sel.orig_cols != expected_orig) return "original columns are not {0..16} minus {2,12}";

        Model<float> m = init_base_model<float>(small_config(300, 2), 1);
        Graph<float> g;
        int logits = m.forward(g, ext);
        int truncated = g.slice_cols(logits, 0, m.cfg.v_orig);
        if (g.val(truncated).cols != m.cfg.v_orig) return "truncated logits width != v_orig";
        if (g.val(logits).cols - g.val(truncated).cols != m.cfg.v_ext) {
            return "truncation did not drop exactly v_ext logits";
        }
        return std::nullopt;
    });

    criterion("KL identity with zero added tokens", [&]() -> std::optional<std::string> {
        ExtendedTokenizer no_add(toy_tok, {});
        Model<float> m = init_base_model<float>(toy_config(300, 0), 7);
        int tested = 0;
        for (int i = 0; i < 150 && tested < 50; ++i) {
            const std::string& text = domain_corpus.documents[i];
            if (toy_tok.tokenize(text).size() < 2) continue;
            auto report = embedding_distill_loss(m, toy_tok, no_add, text);
            if (std::abs(report.kl_loss) > 1e-6) {
                return "kl_loss " + std::to_string(report.kl_loss) + " on text " + std::to_string(i);
            }
            ++tested;
        }
        if (tested < 50) return "fewer than 50 usable texts";
        return std::nullopt;
    });

    criterion("gradient oracle (64-bit central differences)", [&]() -> std::optional<std::string> {
        using T = double;
        Model<T> m = init_base_model<T>(small_config(cell_base.vocab_size(), 2), 11);
        std::mt19937 rng(13);
        double max_rel = 0;

        // KL wrt the embedding extension.
        m.set_trainable({"embed.extension"});
        m.zero_grads();
        {
            Graph<T> g;
            int node = 0;
            embedding_distill_loss(m, cell_base, cell_ext, kCellText, &g, &node);
            g.backward(node);
        }
        auto kl_fn = [&]() { return embedding_distill_loss(m, cell_base, cell_ext, kCellText).kl_loss; };
        for (int t = 0; t < 50; ++t) {
            int r = static_cast<int>(rng() % m.embed_ext.value.rows);
            int c = static_cast<int>(rng() % m.embed_ext.value.cols);
            T analytic = m.embed_ext.grad(r, c);
            T numeric = testutil::central_difference<T>(m.embed_ext.value, r, c, T(1e-5), kl_fn);
            if (std::abs(analytic) < 1e-9 && std::abs(numeric) < 1e-9) continue;
            max_rel = std::max(max_rel, std::abs(analytic - numeric) /
                                            std::max({std::abs(analytic), std::abs(numeric), T(1e-9)}));
        }

        // CE wrt the head extension.
        m.set_trainable({"head.extension"});
        m.zero_grads();
        {
            Graph<T> g;
            int node = 0;
            head_ce_loss(m, cell_ext, kCellText, &g, &node);
            g.backward(node);
        }
        auto ce_fn = [&]() { return head_ce_loss(m, cell_ext, kCellText).ce_loss; };
        for (int t = 0; t < 50; ++t) {
            int r = static_cast<int>(rng() % m.head_ext.value.rows);
            int c = static_cast<int>(rng() % m.head_ext.value.cols);
            T analytic = m.head_ext.grad(r, c);
            T numeric = testutil::central_difference<T>(m.head_ext.value, r, c, T(1e-5), ce_fn);
            if (std::abs(analytic) < 1e-9 && std::abs(numeric) < 1e-9) continue;
            max_rel = std::max(max_rel, std::abs(analytic - numeric) /
                                            std::max({std::abs(analytic), std::abs(numeric), T(1e-9)}));
        }
        if (max_rel >= 1e-3) return "max relative error " + std::to_string(max_rel);
        return std::nullopt;
    });

    criterion("gradient disjointness over 20 dual steps", [&]() -> std::optional<std::string> {
        Model<float> m = init_base_model<float>(small_config(cell_base.vocab_size(), 2), 17);
        Adam<float> opt_kl(1e-3f, {"embed.extension"});
        Adam<float> opt_ce(1e-3f, {"head.extension"});
        auto before = testutil::all_param_hashes(m);
        for (int s = 0; s < 20; ++s) {
            auto pre = testutil::all_param_hashes(m);
            dual_step(m, opt_kl, opt_ce, cell_base, cell_ext, kCellText);
            auto post = testutil::all_param_hashes(m);
            for (size_t i = 0; i < pre.size(); ++i) {
                const auto& name = pre[i].first;
                bool target = name == "embed.extension" || name == "head.extension";
                if (!target && pre[i].second != post[i].second) {
                    return "non-target block changed at step " + std::to_string(s) + ": " + name;
                }
                if (target && pre[i].second == post[i].second) {
                    return "target block failed to update at step " + std::to_string(s) + ": " + name;
                }
            }
        }
        (void)before;
        return std::nullopt;
    });

    // Build an extended tokenizer over the toy corpus for the init criteria.
    ExpansionResult toy_exp = expand_vocabulary(toy_tok, domain_corpus.documents, 16);
    const ExtendedTokenizer& toy_ext = toy_exp.tokenizer;
    const int n_added = static_cast<int>(toy_ext.added().size());

    criterion("copy-first head logit equality", [&]() -> std::optional<std::string> {
        if (n_added == 0) return "vocabulary expansion added no tokens";
        Model<float> m = init_base_model<float>(toy_config(300, n_added), 19);
        init_extension_blocks(m, toy_ext, {EmbeddingInit::Mean, HeadInit::CopyFirst}, 23);
        std::mt19937 rng(29);
        for (int t = 0; t < 20; ++t) {
            const std::string& doc = domain_corpus.documents[rng() % domain_corpus.documents.size()];
            std::vector<TokenId> ctx = toy_ext.tokenize(doc);
            if (ctx.size() > 32) ctx.resize(32);
            if (ctx.size() < 2) continue;
            Mat<float> logits = m.forward_logits(ctx);
            int last = logits.rows - 1;
            for (int i = 0; i < n_added; ++i) {
                TokenId first_sub = toy_tok.tokenize(toy_ext.added()[i]).front();
                if (logits(last, 300 + i) != logits(last, first_sub)) {
                    return "logit mismatch for added token " + std::to_string(i);
                }
            }
        }
        return std::nullopt;
    });

    criterion("mean-init bitwise exactness", [&]() -> std::optional<std::string> {
        if (n_added == 0) return "vocabulary expansion added no tokens";
        Model<float> m = init_base_model<float>(toy_config(300, n_added), 19);
        init_extension_blocks(m, toy_ext, {EmbeddingInit::Mean, HeadInit::CopyFirst}, 23);
        for (int i = 0; i < n_added; ++i) {
            std::vector<TokenId> subs = toy_tok.tokenize(toy_ext.added()[i]);
            for (int c = 0; c < m.cfg.d_model; ++c) {
                float acc = 0.0f;
                for (TokenId id : subs) acc += m.embed_orig.value(id, c);
                acc /= static_cast<float>(subs.size());
                if (m.embed_ext.value(i, c) != acc) {
                    return "row " + std::to_string(i) + " column " + std::to_string(c) +
                           " differs from the left-to-right mean";
                }
            }
        }
        return std::nullopt;
    });

    criterion("LoRA zero-delta at attach time", [&]() -> std::optional<std::string> {
        Model<float> m = init_base_model<float>(toy_config(300, n_added), 31);
        std::mt19937 rng(37);
        std::vector<std::vector<TokenId>> contexts;
        for (int t = 0; t < 20; ++t) {
            std::vector<TokenId> ctx = toy_ext.tokenize(
                domain_corpus.documents[rng() % domain_corpus.documents.size()]);
            if (ctx.size() > 24) ctx.resize(24);
            if (ctx.size() < 2) ctx = {1, 2, 3};
            contexts.push_back(std::move(ctx));
        }
        std::vector<Mat<float>> before;
        for (const auto& ctx : contexts) before.push_back(m.forward_logits(ctx));
        attach_lora(m, 4, lora_target_names(m.cfg), 41);
        for (size_t t = 0; t < contexts.size(); ++t) {
            Mat<float> after = m.forward_logits(contexts[t]);
            for (size_t i = 0; i < after.size(); ++i) {
                if (std::abs(after.data[i] - before[t].data[i]) > 1e-7f) {
                    return "forward output moved by more than 1e-7 on context " + std::to_string(t);
                }
            }
        }
        return std::nullopt;
    });

    criterion("gradient-accumulation equivalence (k=4)", [&]() -> std::optional<std::string> {
        using T = double;
        std::vector<std::string> docs = {
            "int CellConnectDLS(void) { return 0; }",
            "void CellConnect(void) { return; }",
            "int DLS(void) { return 1; }",
            "void CellConnectDLS(void) { return; }",
        };
        auto fresh = [&]() {
            Model<T> m = init_base_model<T>(small_config(cell_base.vocab_size(), 2), 43);
            m.set_trainable({"head.extension"});
            return m;
        };
        std::vector<std::vector<TokenId>> seqs;
        for (const auto& d : docs) seqs.push_back(cell_ext.tokenize(d));

        // (a) four accumulated single-sample backwards, then one step
        Model<T> m1 = fresh();
        m1.zero_grads();
        for (const auto& s : seqs) {
            Graph<T> g;
            g.backward(build_ce_graph(m1, g, s));
        }
        Adam<T> opt1(1e-3, {"head.extension"});
        opt1.step(m1);

        // (b) one graph summing the four losses, then one step
        Model<T> m2 = fresh();
        m2.zero_grads();
        {
            Graph<T> g;
            int total = build_ce_graph(m2, g, seqs[0]);
            for (size_t i = 1; i < seqs.size(); ++i) total = g.add(total, build_ce_graph(m2, g, seqs[i]));
            g.backward(total);
        }
        Adam<T> opt2(1e-3, {"head.extension"});
        opt2.step(m2);

        for (size_t i = 0; i < m1.head_ext.value.size(); ++i) {
            T a = m1.head_ext.value.data[i];
            T b = m2.head_ext.value.data[i];
            T rel = std::abs(a - b) / std::max({std::abs(a), std::abs(b), T(1e-12)});
            if (rel > 1e-6) return "parameter " + std::to_string(i) + " relative diff " + std::to_string(rel);
        }
        return std::nullopt;
    });

    criterion("vocabulary-expansion filters", [&]() -> std::optional<std::string> {
        // Base vocab contains "standard" (so "stand" is a planted substring)
        // and "numpy" (a planted duplicate); " 1234" is a planted numeral.
        BpeTokenizer base = BpeTokenizer::from_merges({{"s", "t"},
                                                       {"a", "n"},
                                                       {"d", "a"},
                                                       {"st", "an"},
                                                       {"stan", "da"},
                                                       {"standa", "r"},
                                                       {"standar", "d"},
                                                       {"n", "u"},
                                                       {"m", "p"},
                                                       {"nu", "mp"},
                                                       {"nump", "y"}});
        std::vector<std::string> corpus;
        for (int i = 0; i < 60; ++i) corpus.push_back("stand 1234 pandas numpy standard");
        ExpansionResult res = expand_vocabulary(base, corpus, 8);
        bool has_pandas = false;
        for (const auto& [tok, count] : res.selected) {
            if (is_numeric_token(tok)) return "numeric token survived the filter: '" + tok + "'";
            for (int b = 0; b < base.vocab_size(); ++b) {
                const std::string& bs = base.token_string(b);
                if (bs.find(tok) != std::string::npos) {
                    return "substring of base token '" + bs + "' survived: '" + tok + "'";
                }
            }
            if (tok.find("pandas") != std::string::npos || tok == "pandas") has_pandas = true;
        }
        for (const auto& [tok, count] : res.selected) {
            if (tok == "stand" || tok == "numpy" || tok == "1234" || tok == " 1234") {
                return "planted candidate survived: '" + tok + "'";
            }
        }
        if (!has_pandas) return "legitimate candidate 'pandas' was not selected";
        return std::nullopt;
    });

    // End-to-end pipeline; its artifacts also back the training-dynamics and
    // similarity criteria below.
    const fs::path out_dir = fs::current_path() / "acceptance_out";
    PipelineConfig pcfg;
    pcfg.out_dir = out_dir.string();
    pcfg.model = toy_config(300, 0);
    pcfg.n_add = 16;
    pcfg.base_corpus_docs = 150;
    pcfg.domain_corpus_docs = 120;
    pcfg.train_docs = 60;
    pcfg.pretrain_epochs = 4;
    pcfg.seed = 42;
    pcfg.verbose = false;

    criterion("end-to-end pipeline with resumable stages", [&]() -> std::optional<std::string> {
        fs::remove_all(out_dir);
        auto t0 = std::chrono::steady_clock::now();
        PipelineResult result = run_pipeline(pcfg);
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (secs > 1800) return "pipeline exceeded 30 minutes";
        if (result.final_checkpoints.size() != 5) {
            return "expected 5 strategy checkpoints, got " + std::to_string(result.final_checkpoints.size());
        }
        for (const auto& ckpt : result.final_checkpoints) {
            if (!fs::exists(ckpt)) return "missing checkpoint: " + ckpt;
        }
        for (const char* strat : {"random_ce", "mean_ce", "random_klce", "mean_klce"}) {
            for (const char* file : {"train_kl_losses.csv", "train_ce_losses.csv", "val_kl_losses.csv",
                                     "val_ce_losses.csv", "embed_similarity.csv", "head_similarity.csv"}) {
                if (!fs::exists(out_dir / strat / file)) {
                    return std::string("missing metrics csv: ") + strat + "/" + file;
                }
            }
        }
        if (!fs::exists(out_dir / "manifest.json")) return "missing manifest.json";

        // Stage re-run determinism: rebuild one stage and compare bytes.
        fs::path stage = out_dir / "random_ce" / "phase2.ckpt";
        std::string original = file_bytes(stage);
        fs::remove(stage);
        fs::remove(out_dir / "random_ce" / "phase3_lora.ckpt");
        run_pipeline(pcfg);
        if (file_bytes(stage) != original) return "re-run stage is not byte-identical";
        return std::nullopt;
    });

    criterion("toy training dynamics (KL+CE halves KL; CE decreases)", [&]() -> std::optional<std::string> {
        std::vector<double> kl = read_csv_column(out_dir / "random_klce" / "train_kl_losses.csv");
        if (kl.size() < 13) return "phase-1 KL trace too short";
        if (!(kl.back() <= 0.5 * kl.front())) {
            return "final KL " + std::to_string(kl.back()) + " > 0.5 x initial " + std::to_string(kl.front());
        }
        std::vector<double> ce = read_csv_column(out_dir / "random_ce" / "train_ce_losses.csv");
        if (ce.size() < 4) return "phase-1 CE trace too short";
        for (int e = 0; e < 3; ++e) {
            if (!(ce[e + 1] < ce[e])) {
                return "CE did not strictly decrease at epoch " + std::to_string(e + 1);
            }
        }
        // Exploratory (non-blocking): does CE-only training raise the KL loss?
        std::vector<double> ce_kl = read_csv_column(out_dir / "random_ce" / "train_kl_losses.csv");
        std::cout << "REPORT: CE-only KL trajectory " << ce_kl.front() << " -> " << ce_kl.back()
                  << (ce_kl.back() > ce_kl.front() ? " (increased)"
                                                   : " (did not increase)")
                  << std::endl;
        return std::nullopt;
    });

    criterion("similarity report", [&]() -> std::optional<std::string> {
        const double bound = 3.0 / std::sqrt(64.0);
        auto rows = read_csv_rows(out_dir / "random_klce" / "embed_similarity.csv");
        if (rows.empty() || rows[0].size() < 4) return "similarity csv malformed";
        for (int c = 1; c <= 3; ++c) {
            if (std::abs(rows[0][c]) >= bound) {
                return "epoch-0 random-init cosine mean " + std::to_string(rows[0][c]) +
                       " outside |mean| < " + std::to_string(bound);
            }
        }
        for (const char* strat : {"random_ce", "mean_ce", "random_klce", "mean_klce"}) {
            for (const char* file : {"embed_similarity.csv", "head_similarity.csv"}) {
                auto r = read_csv_rows(out_dir / strat / file);
                if (r.size() < 13) return std::string(strat) + "/" + file + " trajectory incomplete";
            }
        }
        // Exploratory (non-blocking): directional affinity after phase 1.
        auto kl_rows = read_csv_rows(out_dir / "random_klce" / "embed_similarity.csv");
        auto ce_rows = read_csv_rows(out_dir / "random_ce" / "head_similarity.csv");
        bool kl_first = kl_rows.back()[1] > kl_rows.back()[3];
        bool ce_last = ce_rows.back()[3] > ce_rows.back()[1];
        std::cout << "REPORT: directional affinity: KL-trained embedding favors "
                  << (kl_first ? "first" : "last") << " subtoken; CE-trained head favors "
                  << (ce_last ? "last" : "first") << " subtoken" << std::endl;
        return std::nullopt;
    });

    std::cout << (g_failures == 0 ? "ALL CRITERIA PASSED" : "FAILURES: " + std::to_string(g_failures))
              << std::endl;
    return g_failures == 0 ? 0 : 1;
}
