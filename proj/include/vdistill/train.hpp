#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "vdistill/analysis.hpp"
#include "vdistill/distill.hpp"
#include "vdistill/init.hpp"
#include "vdistill/model.hpp"
#include "vdistill/optimizer.hpp"

namespace vdistill {

enum class Objective { CE, KLCE };

enum class Phase { P1NewModules, P2FullEmbedHead, P3Lora, P3Sequential };

struct Schedule {
    double warmup_fraction = 0.1;
    bool decay = true;  // linear decay after warmup; constant otherwise
};

// Piecewise-linear multiplier: 0 -> 1 over the warmup steps, then either
// 1 -> 0 over the remainder or flat 1.
inline double lr_at(const Schedule& s, long step, long total_steps) {
    if (total_steps <= 0) return 0.0;
    if (step < 0 || step > total_steps) throw std::runtime_error("lr_at: step out of range");
    double warmup = s.warmup_fraction * total_steps;
    if (step < warmup) return step / warmup;
    if (!s.decay) return 1.0;
    if (total_steps == warmup) return 1.0;
    return static_cast<double>(total_steps - step) / (total_steps - warmup);
}

struct PhaseConfig {
    Phase phase = Phase::P1NewModules;
    int epochs = 12;
    double learning_rate = 4.2e-4;
    double warmup_fraction = 0.1;
    int batch_size = 1;  // gradient-accumulation count
    uint64_t seed = 0;
    InitStrategy strategy;
    Objective objective = Objective::KLCE;
    int lora_rank = 4;
    int restart_at = 0;  // optional hot restart epoch (0 = off)

    void validate() const {
        if (learning_rate <= 0) throw std::runtime_error("learning_rate must be > 0");
        if (warmup_fraction < 0 || warmup_fraction >= 1) {
            throw std::runtime_error("warmup_fraction must be in [0, 1)");
        }
        if (batch_size < 1) throw std::runtime_error("batch_size must be >= 1");
        if (epochs < 0) throw std::runtime_error("epochs must be >= 0");
    }
};

template <typename T>
struct PhaseMetrics {
    // index 0 is the pre-training state, index e the state after epoch e
    std::vector<T> train_kl, train_ce, val_kl, val_ce;
    std::vector<SimilarityEntry<T>> embed_sim, head_sim;
};

// Mean KL and CE loss over a document set, no parameter updates.
// Documents too short to align are skipped.
template <typename T>
std::pair<T, T> evaluate_losses(Model<T>& model, const BpeTokenizer& base_tok,
                                const ExtendedTokenizer& ext_tok, const std::vector<std::string>& docs) {
    double kl_sum = 0, ce_sum = 0;
    int kl_n = 0, ce_n = 0;
    for (const auto& doc : docs) {
        try {
            kl_sum += embedding_distill_loss(model, base_tok, ext_tok, doc).kl_loss;
            ++kl_n;
        } catch (const std::runtime_error&) {
        }
        try {
            ce_sum += head_ce_loss(model, ext_tok, doc).ce_loss;
            ++ce_n;
        } catch (const std::runtime_error&) {
        }
    }
    return {static_cast<T>(kl_n ? kl_sum / kl_n : 0), static_cast<T>(ce_n ? ce_sum / ce_n : 0)};
}

namespace train_detail {

template <typename T>
void record_epoch(PhaseMetrics<T>& metrics, Model<T>& model, const BpeTokenizer& base_tok,
                  const ExtendedTokenizer& ext_tok, const std::vector<std::string>& train_docs,
                  const std::vector<std::string>& val_docs, bool similarity) {
    auto [tkl, tce] = evaluate_losses(model, base_tok, ext_tok, train_docs);
    metrics.train_kl.push_back(tkl);
    metrics.train_ce.push_back(tce);
    auto [vkl, vce] = evaluate_losses(model, base_tok, ext_tok, val_docs);
    metrics.val_kl.push_back(vkl);
    metrics.val_ce.push_back(vce);
    if (similarity && model.cfg.v_ext > 0) {
        metrics.embed_sim.push_back(composite_similarity(model.embed_ext.value, ext_tok,
                                                         ext_tok.base(), model.embed_orig.value));
        metrics.head_sim.push_back(composite_similarity(model.head_ext.value, ext_tok, ext_tok.base(),
                                                        model.head_orig.value));
    }
}

// Schedule position accounting for an optional hot restart: each segment
// gets its own warmup/decay ramp.
struct StepClock {
    long steps_per_epoch = 0;
    int epochs = 0;
    int restart_at = 0;  // 0 = single segment
    Schedule schedule;

    double multiplier(int epoch, long step_in_epoch) const {
        int seg_start = 0, seg_epochs = epochs;
        if (restart_at > 0 && restart_at < epochs) {
            if (epoch < restart_at) {
                seg_epochs = restart_at;
            } else {
                seg_start = restart_at;
                seg_epochs = epochs - restart_at;
            }
        }
        long step = (epoch - seg_start) * steps_per_epoch + step_in_epoch;
        return lr_at(schedule, step, seg_epochs * steps_per_epoch);
    }
};

// Generic accumulated-CE training epoch over the given token sequences.
template <typename T>
void ce_epoch(Model<T>& model, Adam<T>& opt, const std::vector<std::vector<TokenId>>& sequences,
              int batch_size, const StepClock& clock, int epoch) {
    model.set_trainable(std::set<std::string>(opt.targets().begin(), opt.targets().end()));
    long step = 0;
    size_t i = 0;
    while (i < sequences.size()) {
        model.zero_grads();
        int accumulated = 0;
        for (int b = 0; b < batch_size && i < sequences.size(); ++i) {
            if (sequences[i].size() < 2) continue;
            Graph<T> g;
            int loss = build_ce_graph(model, g, sequences[i]);
            g.backward(loss);
            ++accumulated;
            ++b;
        }
        if (accumulated == 0) continue;
        opt.step(model, static_cast<T>(clock.multiplier(epoch, step)));
        ++step;
    }
}

}  // namespace train_detail

// Phase 1: trains only the extension blocks. KLCE runs the dual-optimizer
// pipeline (KL on embed.extension, CE on head.extension); CE trains both
// extension blocks under a single CE graph.
template <typename T>
PhaseMetrics<T> run_phase1(Model<T>& model, const BpeTokenizer& base_tok, const ExtendedTokenizer& ext_tok,
                           const std::vector<std::string>& train_docs,
                           const std::vector<std::string>& val_docs, const PhaseConfig& cfg) {
    cfg.validate();
    if (train_docs.empty()) throw std::runtime_error("empty corpus");
    PhaseMetrics<T> metrics;
    train_detail::record_epoch(metrics, model, base_tok, ext_tok, train_docs, val_docs, true);

    std::vector<std::vector<TokenId>> ext_seqs;
    std::vector<std::vector<TokenId>> orig_seqs;
    for (const auto& doc : train_docs) {
        ext_seqs.push_back(ext_tok.tokenize(doc));
        orig_seqs.push_back(base_tok.tokenize(doc));
    }

    long batches_per_epoch = (static_cast<long>(train_docs.size()) + cfg.batch_size - 1) / cfg.batch_size;
    train_detail::StepClock clock{batches_per_epoch, cfg.epochs, cfg.restart_at,
                                  Schedule{cfg.warmup_fraction, true}};

    if (cfg.objective == Objective::KLCE) {
        Adam<T> opt_kl(static_cast<T>(cfg.learning_rate), {"embed.extension"});
        Adam<T> opt_ce(static_cast<T>(cfg.learning_rate), {"head.extension"});
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            long step = 0;
            size_t i = 0;
            while (i < train_docs.size()) {
                T mult = static_cast<T>(clock.multiplier(epoch, step));
                // KL pass over the batch
                model.set_trainable({"embed.extension"});
                model.zero_grads();
                int accumulated = 0;
                size_t batch_start = i;
                for (int b = 0; b < cfg.batch_size && i < train_docs.size(); ++i) {
                    try {
                        Mat<T> teacher = model.forward_logits(orig_seqs[i]);
                        Graph<T> g;
                        int loss = build_kl_graph(model, g, orig_seqs[i], ext_seqs[i], teacher);
                        g.backward(loss);
                        ++accumulated;
                    } catch (const std::runtime_error&) {
                    }
                    ++b;
                }
                if (accumulated > 0) opt_kl.step(model, mult);
                // CE pass over the same batch
                model.set_trainable({"head.extension"});
                model.zero_grads();
                accumulated = 0;
                for (size_t k = batch_start; k < i; ++k) {
                    if (ext_seqs[k].size() < 2) continue;
                    Graph<T> g;
                    int loss = build_ce_graph(model, g, ext_seqs[k]);
                    g.backward(loss);
                    ++accumulated;
                }
                if (accumulated > 0) opt_ce.step(model, mult);
                ++step;
            }
            train_detail::record_epoch(metrics, model, base_tok, ext_tok, train_docs, val_docs, true);
        }
    } else {
        Adam<T> opt(static_cast<T>(cfg.learning_rate), {"embed.extension", "head.extension"});
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            train_detail::ce_epoch(model, opt, ext_seqs, cfg.batch_size, clock, epoch);
            train_detail::record_epoch(metrics, model, base_tok, ext_tok, train_docs, val_docs, true);
        }
    }
    return metrics;
}

// Phase 2: full embedding and head (original + extension) under CE.
template <typename T>
PhaseMetrics<T> run_phase2(Model<T>& model, const BpeTokenizer& base_tok, const ExtendedTokenizer& ext_tok,
                           const std::vector<std::string>& train_docs,
                           const std::vector<std::string>& val_docs, const PhaseConfig& cfg) {
    cfg.validate();
    if (train_docs.empty()) throw std::runtime_error("empty corpus");
    PhaseMetrics<T> metrics;
    train_detail::record_epoch(metrics, model, base_tok, ext_tok, train_docs, val_docs, false);
    std::vector<std::vector<TokenId>> ext_seqs;
    for (const auto& doc : train_docs) ext_seqs.push_back(ext_tok.tokenize(doc));
    long batches_per_epoch = (static_cast<long>(train_docs.size()) + cfg.batch_size - 1) / cfg.batch_size;
    train_detail::StepClock clock{batches_per_epoch, cfg.epochs, 0, Schedule{cfg.warmup_fraction, true}};
    Adam<T> opt(static_cast<T>(cfg.learning_rate),
                {"embed.original", "embed.extension", "head.original", "head.extension"});
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        train_detail::ce_epoch(model, opt, ext_seqs, cfg.batch_size, clock, epoch);
        train_detail::record_epoch(metrics, model, base_tok, ext_tok, train_docs, val_docs, false);
    }
    return metrics;
}

// Phase 3a: LoRA adapters on every block matrix; only adapters train.
// Warmup over the first epoch, then constant.
template <typename T>
PhaseMetrics<T> run_phase3_lora(Model<T>& model, const BpeTokenizer& base_tok,
                                const ExtendedTokenizer& ext_tok,
                                const std::vector<std::string>& train_docs,
                                const std::vector<std::string>& val_docs, const PhaseConfig& cfg) {
    cfg.validate();
    if (train_docs.empty()) throw std::runtime_error("empty corpus");
    if (model.lora.empty()) {
        attach_lora(model, cfg.lora_rank, lora_target_names(model.cfg), cfg.seed);
    }
    PhaseMetrics<T> metrics;
    train_detail::record_epoch(metrics, model, base_tok, ext_tok, train_docs, val_docs, false);
    std::vector<std::vector<TokenId>> ext_seqs;
    for (const auto& doc : train_docs) ext_seqs.push_back(ext_tok.tokenize(doc));
    long batches_per_epoch = (static_cast<long>(train_docs.size()) + cfg.batch_size - 1) / cfg.batch_size;
    double warmup = cfg.epochs > 0 ? 1.0 / cfg.epochs : 0.0;  // first epoch
    train_detail::StepClock clock{batches_per_epoch, cfg.epochs, 0, Schedule{warmup, false}};
    std::set<std::string> targets;
    for (auto& [name, pair] : model.lora) {
        targets.insert(pair.A.name);
        targets.insert(pair.B.name);
    }
    Adam<T> opt(static_cast<T>(cfg.learning_rate), targets);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        train_detail::ce_epoch(model, opt, ext_seqs, cfg.batch_size, clock, epoch);
        train_detail::record_epoch(metrics, model, base_tok, ext_tok, train_docs, val_docs, false);
    }
    return metrics;
}

// Phase 3b: unfreeze the first half of the blocks for one epoch, then the
// second half for one epoch.
template <typename T>
PhaseMetrics<T> run_phase3_sequential(Model<T>& model, const BpeTokenizer& base_tok,
                                      const ExtendedTokenizer& ext_tok,
                                      const std::vector<std::string>& train_docs,
                                      const std::vector<std::string>& val_docs, const PhaseConfig& cfg) {
    cfg.validate();
    if (train_docs.empty()) throw std::runtime_error("empty corpus");
    PhaseMetrics<T> metrics;
    train_detail::record_epoch(metrics, model, base_tok, ext_tok, train_docs, val_docs, false);
    std::vector<std::vector<TokenId>> ext_seqs;
    for (const auto& doc : train_docs) ext_seqs.push_back(ext_tok.tokenize(doc));
    long batches_per_epoch = (static_cast<long>(train_docs.size()) + cfg.batch_size - 1) / cfg.batch_size;

    int first_half = (model.cfg.n_layers + 1) / 2;
    auto block_targets = [&](int lo, int hi) {
        std::set<std::string> names;
        for (int i = lo; i < hi; ++i) {
            std::string pre = "block." + std::to_string(i) + ".";
            for (const char* m : {"ln1.gain", "ln1.bias", "attn_q", "attn_k", "attn_v", "attn_o",
                                  "ln2.gain", "ln2.bias", "ffn_in", "ffn_out"}) {
                names.insert(pre + m);
            }
        }
        return names;
    };
    for (int sub = 0; sub < 2; ++sub) {
        std::set<std::string> targets =
            sub == 0 ? block_targets(0, first_half) : block_targets(first_half, model.cfg.n_layers);
        if (targets.empty()) continue;
        train_detail::StepClock clock{batches_per_epoch, 1, 0, Schedule{cfg.warmup_fraction, true}};
        Adam<T> opt(static_cast<T>(cfg.learning_rate), targets);
        train_detail::ce_epoch(model, opt, ext_seqs, cfg.batch_size, clock, 0);
        train_detail::record_epoch(metrics, model, base_tok, ext_tok, train_docs, val_docs, false);
    }
    return metrics;
}

// Next-token pretraining of the whole model on a base-tokenized corpus;
// stands in for a full-scale pretrained checkpoint.
template <typename T>
void pretrain_base(Model<T>& model, const BpeTokenizer& base_tok, const std::vector<std::string>& docs,
                   int epochs, double lr, double warmup_fraction = 0.1) {
    if (docs.empty()) throw std::runtime_error("empty corpus");
    std::vector<std::vector<TokenId>> seqs;
    for (const auto& doc : docs) seqs.push_back(base_tok.tokenize(doc));
    std::set<std::string> targets;
    for (Param<T>* p : model.params()) {
        if (p->name.rfind("lora.", 0) == 0) continue;
        if (p->value.size() == 0) continue;
        targets.insert(p->name);
    }
    train_detail::StepClock clock{static_cast<long>(seqs.size()), epochs, 0,
                                  Schedule{warmup_fraction, true}};
    Adam<T> opt(static_cast<T>(lr), targets);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        train_detail::ce_epoch(model, opt, seqs, 1, clock, epoch);
    }
}

// Loss CSVs in the per-strategy layout: `epoch,<strategy>`.
template <typename T>
void write_metrics_csvs(const std::string& dir, const std::string& strategy,
                        const PhaseMetrics<T>& metrics) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto write = [&](const std::string& file, const std::vector<T>& values) {
        std::ofstream out(fs::path(dir) / file);
        out << "epoch," << strategy << "\n";
        for (size_t e = 0; e < values.size(); ++e) out << e << "," << values[e] << "\n";
    };
    write("train_kl_losses.csv", metrics.train_kl);
    write("train_ce_losses.csv", metrics.train_ce);
    write("val_kl_losses.csv", metrics.val_kl);
    write("val_ce_losses.csv", metrics.val_ce);
    auto write_sim = [&](const std::string& file, const std::vector<SimilarityEntry<T>>& entries) {
        if (entries.empty()) return;
        std::ofstream out(fs::path(dir) / file);
        out << "epoch,first,intermediate,last\n";
        for (size_t e = 0; e < entries.size(); ++e) {
            out << e << "," << entries[e].mean_first << "," << entries[e].mean_intermediate << ","
                << entries[e].mean_last << "\n";
        }
    };
    write_sim("embed_similarity.csv", metrics.embed_sim);
    write_sim("head_similarity.csv", metrics.head_sim);
}

}  // namespace vdistill
