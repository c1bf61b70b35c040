#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "vdistill/alignment.hpp"
#include "vdistill/analysis.hpp"
#include "vdistill/checkpoint.hpp"
#include "vdistill/corpus.hpp"
#include "vdistill/distill.hpp"
#include "vdistill/init.hpp"
#include "vdistill/pipeline.hpp"
#include "vdistill/tokenizer.hpp"
#include "vdistill/train.hpp"

using namespace vdistill;

namespace {

uint64_t default_seed() {
    if (const char* env = std::getenv("VDISTILL_SEED")) {
        return static_cast<uint64_t>(std::stoull(env));
    }
    return 42;
}

// Loads a tokenizer file as extended; plain base files get an empty added
// list.
ExtendedTokenizer load_any_tokenizer(const std::string& path) { return ExtendedTokenizer::load(path); }

std::vector<std::string> read_docs(const std::string& path, const std::string& format) {
    CorpusFormat f = format == "paired" ? CorpusFormat::Paired : CorpusFormat::Plain;
    return load_corpus(path, f).documents;
}

void print_alignment(const AlignmentMap& map) {
    std::cout << "Similar mappings:\n[";
    for (size_t i = 0; i < map.similar.size(); ++i) {
        if (i) std::cout << ", ";
        std::cout << "(" << map.similar[i].first << ", " << map.similar[i].second << ")";
    }
    std::cout << "]\n\nDivergent mappings:\n[";
    for (size_t i = 0; i < map.divergent.size(); ++i) {
        if (i) std::cout << ", ";
        std::cout << "([";
        for (size_t k = 0; k < map.divergent[i].orig_positions.size(); ++k) {
            if (k) std::cout << ", ";
            std::cout << map.divergent[i].orig_positions[k];
        }
        std::cout << "], [";
        for (size_t k = 0; k < map.divergent[i].ext_positions.size(); ++k) {
            if (k) std::cout << ", ";
            std::cout << map.divergent[i].ext_positions[k];
        }
        std::cout << "])";
    }
    std::cout << "]\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vocabulary expansion and self-distillation toolkit"};
    app.require_subcommand(1);

    // train-tokenizer
    auto* tt = app.add_subcommand("train-tokenizer", "train a byte-level BPE tokenizer");
    std::string tt_corpus, tt_out, tt_format = "plain";
    int tt_vocab = 300;
    tt->add_option("--corpus", tt_corpus)->required();
    tt->add_option("--vocab-size", tt_vocab)->required();
    tt->add_option("--out", tt_out)->required();
    tt->add_option("--format", tt_format);

    // extend-vocab
    auto* ev = app.add_subcommand("extend-vocab", "append filtered high-frequency tokens");
    std::string ev_base, ev_corpus, ev_out, ev_format = "plain";
    int ev_add = 16, ev_fresh = 0;
    ev->add_option("--base", ev_base)->required();
    ev->add_option("--corpus", ev_corpus)->required();
    ev->add_option("--add", ev_add)->required();
    ev->add_option("--out", ev_out)->required();
    ev->add_option("--fresh-vocab-size", ev_fresh);
    ev->add_option("--format", ev_format);

    // tokenize
    auto* tk = app.add_subcommand("tokenize", "print space-separated token ids");
    std::string tk_tok, tk_text, tk_file;
    tk->add_option("--tokenizer", tk_tok)->required();
    tk->add_option("--text", tk_text);
    tk->add_option("--file", tk_file);

    // align
    auto* al = app.add_subcommand("align", "map positions between two tokenizations");
    std::string al_base, al_ext, al_file;
    int al_window = 20;
    al->add_option("--tokenizer-base", al_base)->required();
    al->add_option("--tokenizer-ext", al_ext)->required();
    al->add_option("--file", al_file)->required();
    al->add_option("--window", al_window);

    // init-extension
    auto* ie = app.add_subcommand("init-extension", "initialize extension blocks");
    std::string ie_model, ie_tok, ie_embed = "random", ie_head = "random", ie_out;
    uint64_t ie_seed = default_seed();
    ie->add_option("--model", ie_model)->required();
    ie->add_option("--tokenizer-ext", ie_tok)->required();
    ie->add_option("--embed", ie_embed)->check(CLI::IsMember({"random", "mean"}));
    ie->add_option("--head", ie_head)->check(CLI::IsMember({"random", "copy-first"}));
    ie->add_option("--seed", ie_seed);
    ie->add_option("--out", ie_out)->required();

    // train
    auto* tr = app.add_subcommand("train", "run one training phase");
    tr->set_config("--config");
    std::string tr_phase, tr_model, tr_base, tr_ext, tr_corpus, tr_out, tr_metrics, tr_strategy = "mean,klce";
    std::string tr_format = "plain";
    int tr_epochs = -1, tr_batch = 1, tr_val = 0, tr_rank = 4, tr_restart = 0;
    double tr_lr = -1, tr_warmup = 0.1;
    uint64_t tr_seed = default_seed();
    tr->add_option("--phase", tr_phase)->required()->check(CLI::IsMember({"p1", "p2", "p3-lora", "p3-seq"}));
    tr->add_option("--model", tr_model)->required();
    tr->add_option("--tokenizer-base", tr_base)->required();
    tr->add_option("--tokenizer-ext", tr_ext)->required();
    tr->add_option("--corpus", tr_corpus)->required();
    tr->add_option("--strategy", tr_strategy);
    tr->add_option("--epochs", tr_epochs);
    tr->add_option("--lr", tr_lr);
    tr->add_option("--warmup", tr_warmup);
    tr->add_option("--batch", tr_batch);
    tr->add_option("--seed", tr_seed);
    tr->add_option("--val-docs", tr_val);
    tr->add_option("--lora-rank", tr_rank);
    tr->add_option("--restart-at", tr_restart);
    tr->add_option("--format", tr_format);
    tr->add_option("--out", tr_out)->required();
    tr->add_option("--metrics-dir", tr_metrics);

    // analyze-similarity
    auto* an = app.add_subcommand("analyze-similarity", "cosine similarity to composite subtokens");
    std::string an_model, an_base, an_ext, an_which = "embedding", an_out;
    int an_epoch = 0;
    an->add_option("--model", an_model)->required();
    an->add_option("--tokenizer-base", an_base)->required();
    an->add_option("--tokenizer-ext", an_ext)->required();
    an->add_option("--which", an_which)->check(CLI::IsMember({"embedding", "head"}));
    an->add_option("--epoch", an_epoch);
    an->add_option("--out", an_out);

    // pipeline
    auto* pl = app.add_subcommand("pipeline", "run the full expansion pipeline");
    PipelineConfig pcfg;
    pl->add_option("--out-dir", pcfg.out_dir)->required();
    pl->add_option("--base-corpus", pcfg.base_corpus_path);
    pl->add_option("--domain-corpus", pcfg.domain_corpus_path);
    pl->add_option("--add", pcfg.n_add);
    pl->add_option("--vocab-size", pcfg.model.v_orig);
    pl->add_option("--d-model", pcfg.model.d_model);
    pl->add_option("--layers", pcfg.model.n_layers);
    pl->add_option("--heads", pcfg.model.n_heads);
    pl->add_option("--d-ff", pcfg.model.d_ff);
    pl->add_option("--train-docs", pcfg.train_docs);
    pl->add_option("--pretrain-epochs", pcfg.pretrain_epochs);
    pl->add_option("--p1-epochs", pcfg.p1_epochs);
    pl->add_option("--p2-epochs", pcfg.p2_epochs);
    pl->add_option("--p3-epochs", pcfg.p3_epochs);
    pl->add_option("--lora-rank", pcfg.lora_rank);
    uint64_t pl_seed = default_seed();
    pl->add_option("--seed", pl_seed);

    // gen-corpus
    auto* gc = app.add_subcommand("gen-corpus", "write a synthetic pseudo-code corpus");
    std::string gc_out, gc_flavor = "domain";
    int gc_docs = 300;
    uint64_t gc_seed = default_seed();
    gc->add_option("--out", gc_out)->required();
    gc->add_option("--flavor", gc_flavor)->check(CLI::IsMember({"base", "domain"}));
    gc->add_option("--docs", gc_docs);
    gc->add_option("--seed", gc_seed);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*tt) {
            BpeTokenizer::train(read_docs(tt_corpus, tt_format), tt_vocab).save(tt_out);
            std::cout << "wrote " << tt_out << "\n";
        } else if (*ev) {
            BpeTokenizer base = BpeTokenizer::load(ev_base);
            ExpansionResult res = expand_vocabulary(base, read_docs(ev_corpus, ev_format), ev_add, ev_fresh);
            for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
            res.tokenizer.save(ev_out);
            std::cout << "added " << res.tokenizer.added().size() << " tokens -> " << ev_out << "\n";
        } else if (*tk) {
            ExtendedTokenizer tok = load_any_tokenizer(tk_tok);
            std::string text = tk_text;
            if (!tk_file.empty()) {
                std::ifstream in(tk_file, std::ios::binary);
                if (!in) throw std::runtime_error("cannot open " + tk_file);
                text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
            }
            auto ids = tok.tokenize(text);
            for (size_t i = 0; i < ids.size(); ++i) std::cout << (i ? " " : "") << ids[i];
            std::cout << "\n";
        } else if (*al) {
            BpeTokenizer base = BpeTokenizer::load(al_base);
            ExtendedTokenizer ext = ExtendedTokenizer::load(al_ext);
            std::ifstream in(al_file, std::ios::binary);
            if (!in) throw std::runtime_error("cannot open " + al_file);
            std::string text(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>{});
            print_alignment(map_token_sequences(base.tokenize(text), ext.tokenize(text),
                                                base.vocab_size(), al_window));
        } else if (*ie) {
            Model<float> model = load_checkpoint<float>(ie_model);
            ExtendedTokenizer ext = ExtendedTokenizer::load(ie_tok);
            int v_ext = static_cast<int>(ext.added().size());
            if (model.cfg.v_ext != v_ext) {
                model.cfg.v_ext = v_ext;
                model.embed_ext = Param<float>("embed.extension", Mat<float>(v_ext, model.cfg.d_model));
                model.head_ext = Param<float>("head.extension", Mat<float>(v_ext, model.cfg.d_model));
            }
            InitStrategy strategy{parse_embedding_init(ie_embed), parse_head_init(ie_head)};
            init_extension_blocks(model, ext, strategy, ie_seed);
            save_checkpoint(model, ie_out);
            std::cout << "wrote " << ie_out << "\n";
        } else if (*tr) {
            Model<float> model = load_checkpoint<float>(tr_model);
            BpeTokenizer base = BpeTokenizer::load(tr_base);
            ExtendedTokenizer ext = ExtendedTokenizer::load(tr_ext);
            std::vector<std::string> docs = read_docs(tr_corpus, tr_format);
            int n_val = std::min<int>(tr_val, static_cast<int>(docs.size()) / 2);
            std::vector<std::string> val_docs(docs.end() - n_val, docs.end());
            docs.resize(docs.size() - n_val);
            if (val_docs.empty()) val_docs = docs;

            PhaseConfig pc;
            pc.batch_size = tr_batch;
            pc.seed = tr_seed;
            pc.warmup_fraction = tr_warmup;
            pc.lora_rank = tr_rank;
            pc.restart_at = tr_restart;
            size_t comma = tr_strategy.find_first_of(",x");
            std::string emb = tr_strategy.substr(0, comma);
            std::string obj = comma == std::string::npos ? "klce" : tr_strategy.substr(comma + 1);
            pc.strategy.embedding_mode = parse_embedding_init(emb);
            pc.objective = obj == "ce" ? Objective::CE : Objective::KLCE;

            PhaseMetrics<float> metrics;
            if (tr_phase == "p1") {
                pc.phase = Phase::P1NewModules;
                pc.epochs = tr_epochs < 0 ? 12 : tr_epochs;
                pc.learning_rate = tr_lr < 0 ? 4.2e-4 : tr_lr;
                metrics = run_phase1(model, base, ext, docs, val_docs, pc);
            } else if (tr_phase == "p2") {
                pc.phase = Phase::P2FullEmbedHead;
                pc.epochs = tr_epochs < 0 ? 4 : tr_epochs;
                pc.learning_rate = tr_lr < 0 ? 4.2e-4 : tr_lr;
                metrics = run_phase2(model, base, ext, docs, val_docs, pc);
            } else if (tr_phase == "p3-lora") {
                pc.phase = Phase::P3Lora;
                pc.epochs = tr_epochs < 0 ? 4 : tr_epochs;
                pc.learning_rate = tr_lr < 0 ? 2.2e-4 : tr_lr;
                metrics = run_phase3_lora(model, base, ext, docs, val_docs, pc);
            } else {
                pc.phase = Phase::P3Sequential;
                pc.learning_rate = tr_lr < 0 ? 4.2e-5 : tr_lr;
                metrics = run_phase3_sequential(model, base, ext, docs, val_docs, pc);
            }
            save_checkpoint(model, tr_out);
            if (!tr_metrics.empty()) {
                write_metrics_csvs(tr_metrics, tr_strategy, metrics);
            }
            std::cout << "final train CE " << metrics.train_ce.back() << ", train KL "
                      << metrics.train_kl.back() << " -> " << tr_out << "\n";
        } else if (*an) {
            Model<float> model = load_checkpoint<float>(an_model);
            BpeTokenizer base = BpeTokenizer::load(an_base);
            ExtendedTokenizer ext = ExtendedTokenizer::load(an_ext);
            bool head = an_which == "head";
            SimilarityEntry<float> e =
                composite_similarity(head ? model.head_ext.value : model.embed_ext.value, ext, base,
                                     head ? model.head_orig.value : model.embed_orig.value);
            std::string line = std::to_string(an_epoch) + "," + std::to_string(e.mean_first) + "," +
                               std::to_string(e.mean_intermediate) + "," + std::to_string(e.mean_last);
            if (an_out.empty()) {
                std::cout << "epoch,first,intermediate,last\n" << line << "\n";
            } else {
                bool exists = static_cast<bool>(std::ifstream(an_out));
                std::ofstream out(an_out, std::ios::app);
                if (!exists) out << "epoch,first,intermediate,last\n";
                out << line << "\n";
            }
        } else if (*pl) {
            pcfg.seed = pl_seed;
            PipelineResult res = run_pipeline(pcfg);
            std::cout << "pipeline complete; manifest: " << res.manifest_path << "\n";
            for (const auto& c : res.final_checkpoints) std::cout << "  checkpoint: " << c << "\n";
        } else if (*gc) {
            CorpusFlavor flavor = gc_flavor == "base" ? CorpusFlavor::Base : CorpusFlavor::Domain;
            save_corpus(generate_corpus(flavor, gc_docs, gc_seed), gc_out);
            std::cout << "wrote " << gc_docs << " documents -> " << gc_out << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
