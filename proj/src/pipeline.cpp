#include "vdistill/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "vdistill/checkpoint.hpp"
#include "vdistill/init.hpp"
#include "vdistill/train.hpp"

namespace vdistill {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct StrategySpec {
    std::string name;
    InitStrategy init;
    Objective objective;
    bool skip_phase1;
};

// The four parallel strategies plus the non-optimized baseline.
std::vector<StrategySpec> strategy_matrix() {
    return {
        {"random_ce", {EmbeddingInit::Random, HeadInit::Random}, Objective::CE, false},
        {"mean_ce", {EmbeddingInit::Mean, HeadInit::CopyFirst}, Objective::CE, false},
        {"random_klce", {EmbeddingInit::Random, HeadInit::Random}, Objective::KLCE, false},
        {"mean_klce", {EmbeddingInit::Mean, HeadInit::CopyFirst}, Objective::KLCE, false},
        {"baseline", {EmbeddingInit::Random, HeadInit::Random}, Objective::CE, true},
    };
}

void merge_strategy_csvs(const fs::path& root, const std::vector<std::string>& strategies,
                         const std::string& file) {
    std::vector<std::vector<std::string>> columns;
    size_t n_rows = 0;
    for (const auto& s : strategies) {
        std::ifstream in(root / s / file);
        if (!in) return;
        std::vector<std::string> col;
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            size_t comma = line.find(',');
            col.push_back(comma == std::string::npos ? "" : line.substr(comma + 1));
        }
        n_rows = std::max(n_rows, col.size());
        columns.push_back(std::move(col));
    }
    std::ofstream out(root / file);
    out << "epoch";
    for (const auto& s : strategies) out << "," << s;
    out << "\n";
    for (size_t e = 0; e < n_rows; ++e) {
        out << e;
        for (const auto& col : columns) out << "," << (e < col.size() ? col[e] : "");
        out << "\n";
    }
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    const fs::path root(cfg.out_dir);
    auto log = [&](const std::string& msg) {
        if (cfg.verbose) std::cout << "[pipeline] " << msg << std::endl;
    };

    // Corpora
    std::string base_corpus_path = cfg.base_corpus_path;
    if (base_corpus_path.empty()) {
        base_corpus_path = (root / "base_corpus.txt").string();
        if (!fs::exists(base_corpus_path)) {
            save_corpus(generate_corpus(CorpusFlavor::Base, cfg.base_corpus_docs, cfg.seed),
                        base_corpus_path);
            log("generated base corpus");
        }
    }
    std::string domain_corpus_path = cfg.domain_corpus_path;
    if (domain_corpus_path.empty()) {
        domain_corpus_path = (root / "domain_corpus.txt").string();
        if (!fs::exists(domain_corpus_path)) {
            save_corpus(generate_corpus(CorpusFlavor::Domain, cfg.domain_corpus_docs, cfg.seed + 1),
                        domain_corpus_path);
            log("generated domain corpus");
        }
    }
    Corpus base_corpus = load_corpus(base_corpus_path, cfg.corpus_format);
    Corpus domain_corpus = load_corpus(domain_corpus_path, cfg.corpus_format);
    if (base_corpus.documents.empty() || domain_corpus.documents.empty()) {
        throw std::runtime_error("pipeline requires non-empty corpora");
    }
    int n_train = std::min<int>(cfg.train_docs, static_cast<int>(domain_corpus.documents.size()));
    std::vector<std::string> train_docs(domain_corpus.documents.begin(),
                                        domain_corpus.documents.begin() + n_train);
    std::vector<std::string> val_docs(domain_corpus.documents.begin() + n_train,
                                      domain_corpus.documents.end());
    if (val_docs.empty()) val_docs = train_docs;

    // Base tokenizer
    const fs::path base_tok_path = root / "tokenizer_base.txt";
    if (!fs::exists(base_tok_path)) {
        BpeTokenizer::train(base_corpus.documents, cfg.model.v_orig).save(base_tok_path.string());
        log("trained base tokenizer");
    }
    BpeTokenizer base_tok = BpeTokenizer::load(base_tok_path.string());
    if (base_tok.vocab_size() != cfg.model.v_orig) {
        throw std::runtime_error("base tokenizer vocab (" + std::to_string(base_tok.vocab_size()) +
                                 ") does not match model v_orig");
    }

    // Extended tokenizer
    const fs::path ext_tok_path = root / "tokenizer_ext.txt";
    if (!fs::exists(ext_tok_path)) {
        ExpansionResult exp = expand_vocabulary(base_tok, domain_corpus.documents, cfg.n_add);
        for (const auto& w : exp.warnings) std::cerr << "warning: " << w << "\n";
        exp.tokenizer.save(ext_tok_path.string());
        log("expanded vocabulary: " + std::to_string(exp.tokenizer.added().size()) + " tokens added");
    }
    ExtendedTokenizer ext_tok = ExtendedTokenizer::load(ext_tok_path.string());

    // Pretrained base model (the desk-scale stand-in for a checkpoint)
    const fs::path base_ckpt = root / "model_base.ckpt";
    if (!fs::exists(base_ckpt)) {
        ModelConfig base_cfg = cfg.model;
        base_cfg.v_ext = 0;
        Model<float> model = init_base_model<float>(base_cfg, cfg.seed);
        // Pretrain on both corpora under base tokenization so the teacher
        // has seen the domain identifiers in their multi-token form.
        std::vector<std::string> pretrain_docs = base_corpus.documents;
        pretrain_docs.insert(pretrain_docs.end(), train_docs.begin(), train_docs.end());
        log("pretraining base model (" + std::to_string(cfg.pretrain_epochs) + " epochs)");
        pretrain_base(model, base_tok, pretrain_docs, cfg.pretrain_epochs, cfg.pretrain_lr);
        save_checkpoint(model, base_ckpt.string());
    }

    PipelineResult result;
    result.strategy_names.clear();
    json manifest;
    manifest["seed"] = cfg.seed;
    manifest["corpora"] = {{"base", base_corpus_path}, {"domain", domain_corpus_path}};
    manifest["tokenizers"] = {{"base", base_tok_path.string()}, {"ext", ext_tok_path.string()}};
    manifest["base_checkpoint"] = base_ckpt.string();
    manifest["config"] = {{"d_model", cfg.model.d_model},   {"n_layers", cfg.model.n_layers},
                          {"n_heads", cfg.model.n_heads},   {"d_ff", cfg.model.d_ff},
                          {"max_seq", cfg.model.max_seq},   {"v_orig", cfg.model.v_orig},
                          {"n_add", cfg.n_add},             {"p1_epochs", cfg.p1_epochs},
                          {"p1_lr", cfg.p1_lr},             {"p2_epochs", cfg.p2_epochs},
                          {"p3_epochs", cfg.p3_epochs},     {"p3_lr", cfg.p3_lr},
                          {"lora_rank", cfg.lora_rank},     {"train_docs", n_train},
                          {"val_docs", static_cast<int>(val_docs.size())}};

    for (const StrategySpec& spec : strategy_matrix()) {
        result.strategy_names.push_back(spec.name);
        const fs::path sdir = root / spec.name;
        fs::create_directories(sdir);
        json stage = {{"strategy", spec.name}};

        const fs::path init_ckpt = sdir / "init.ckpt";
        if (!fs::exists(init_ckpt)) {
            Model<float> model = load_checkpoint<float>(base_ckpt.string());
            model.cfg.v_ext = static_cast<int>(ext_tok.added().size());
            model.embed_ext = Param<float>("embed.extension", Mat<float>(model.cfg.v_ext, model.cfg.d_model));
            model.head_ext = Param<float>("head.extension", Mat<float>(model.cfg.v_ext, model.cfg.d_model));
            init_extension_blocks(model, ext_tok, spec.init, cfg.seed + 100);
            save_checkpoint(model, init_ckpt.string());
            log(spec.name + ": initialized extension blocks");
        }
        stage["init"] = init_ckpt.string();

        const fs::path p1_ckpt = sdir / "phase1.ckpt";
        if (!spec.skip_phase1 && !fs::exists(p1_ckpt)) {
            Model<float> model = load_checkpoint<float>(init_ckpt.string());
            PhaseConfig pc;
            pc.phase = Phase::P1NewModules;
            pc.epochs = cfg.p1_epochs;
            pc.learning_rate = cfg.p1_lr;
            pc.warmup_fraction = cfg.warmup_fraction;
            pc.batch_size = cfg.batch_size;
            pc.seed = cfg.seed;
            pc.strategy = spec.init;
            pc.objective = spec.objective;
            log(spec.name + ": phase 1 (" + std::to_string(pc.epochs) + " epochs)");
            PhaseMetrics<float> m = run_phase1(model, base_tok, ext_tok, train_docs, val_docs, pc);
            write_metrics_csvs(sdir.string(), spec.name, m);
            save_checkpoint(model, p1_ckpt.string());
        }
        stage["phase1"] = spec.skip_phase1 ? json(nullptr) : json(p1_ckpt.string());

        const fs::path p2_ckpt = sdir / "phase2.ckpt";
        if (!fs::exists(p2_ckpt)) {
            Model<float> model =
                load_checkpoint<float>(spec.skip_phase1 ? init_ckpt.string() : p1_ckpt.string());
            PhaseConfig pc;
            pc.phase = Phase::P2FullEmbedHead;
            pc.epochs = cfg.p2_epochs;
            pc.learning_rate = cfg.p2_lr;
            pc.warmup_fraction = cfg.warmup_fraction;
            pc.batch_size = cfg.batch_size;
            pc.seed = cfg.seed;
            log(spec.name + ": phase 2 (" + std::to_string(pc.epochs) + " epochs)");
            run_phase2(model, base_tok, ext_tok, train_docs, val_docs, pc);
            save_checkpoint(model, p2_ckpt.string());
        }
        stage["phase2"] = p2_ckpt.string();

        const fs::path p3_ckpt = sdir / "phase3_lora.ckpt";
        if (!fs::exists(p3_ckpt)) {
            Model<float> model = load_checkpoint<float>(p2_ckpt.string());
            PhaseConfig pc;
            pc.phase = Phase::P3Lora;
            pc.epochs = cfg.p3_epochs;
            pc.learning_rate = cfg.p3_lr;
            pc.batch_size = cfg.batch_size;
            pc.seed = cfg.seed;
            pc.lora_rank = cfg.lora_rank;
            log(spec.name + ": phase 3 LoRA (" + std::to_string(pc.epochs) + " epochs)");
            run_phase3_lora(model, base_tok, ext_tok, train_docs, val_docs, pc);
            save_checkpoint(model, p3_ckpt.string());
        }
        stage["phase3_lora"] = p3_ckpt.string();
        result.final_checkpoints.push_back(p3_ckpt.string());

        stage["metrics"] = {
            (sdir / "train_kl_losses.csv").string(), (sdir / "train_ce_losses.csv").string(),
            (sdir / "val_kl_losses.csv").string(), (sdir / "val_ce_losses.csv").string()};
        manifest["stages"].push_back(stage);
    }

    for (const char* file : {"train_kl_losses.csv", "train_ce_losses.csv", "val_kl_losses.csv",
                             "val_ce_losses.csv"}) {
        std::vector<std::string> with_p1;
        for (const auto& s : result.strategy_names) {
            if (s != "baseline") with_p1.push_back(s);
        }
        merge_strategy_csvs(root, with_p1, file);
        manifest["combined_metrics"].push_back((root / file).string());
    }

    result.manifest_path = (root / "manifest.json").string();
    std::ofstream(result.manifest_path) << manifest.dump(2) << "\n";
    return result;
}

}  // namespace vdistill
