#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "vdistill/alignment.hpp"
#include "vdistill/graph.hpp"
#include "vdistill/model.hpp"
#include "vdistill/optimizer.hpp"
#include "vdistill/tokenizer.hpp"

namespace vdistill {

template <typename T>
struct DistillLossReport {
    T kl_loss = T(0);
    T ce_loss = T(0);
    int n_columns = 0;
    int n_orig_tokens = 0;
    int n_ext_tokens = 0;
};

// KL(P || Q) with 0*log(0/q) := 0 and q clamped below at 1e-12.
template <typename T>
T kl_divergence(const std::vector<T>& p, const std::vector<T>& q) {
    if (p.size() != q.size()) throw std::runtime_error("kl_divergence: length mismatch");
    T loss = 0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= T(0)) continue;
        loss += p[i] * std::log(p[i] / std::max(q[i], T(1e-12)));
    }
    return loss;
}

// Mean over rows of -log p(target), clamped below at 1e-12.
template <typename T>
T cross_entropy(const std::vector<int>& targets, const Mat<T>& prob_rows) {
    if (static_cast<int>(targets.size()) != prob_rows.rows) {
        throw std::runtime_error("cross_entropy: target count mismatch");
    }
    T loss = 0;
    for (int r = 0; r < prob_rows.rows; ++r) {
        if (targets[r] < 0 || targets[r] >= prob_rows.cols) {
            throw std::runtime_error("cross_entropy: index out of range");
        }
        loss -= std::log(std::max(prob_rows(r, targets[r]), T(1e-12)));
    }
    return loss / prob_rows.rows;
}

// Builds the student-side KL loss graph: forward on extended ids, truncate
// logits to the original vocabulary, select aligned columns, compare against
// the teacher's softmaxed columns. Returns the loss node.
template <typename T>
int build_kl_graph(Model<T>& model, Graph<T>& g, const std::vector<TokenId>& orig_ids,
                   const std::vector<TokenId>& ext_ids, const Mat<T>& teacher_logits,
                   int* n_columns_out = nullptr) {
    AlignmentMap align = map_token_sequences(orig_ids, ext_ids, model.cfg.v_orig);
    ColumnSelection sel = select_training_positions(align);
    if (n_columns_out) *n_columns_out = static_cast<int>(sel.ext_cols.size());
    if (orig_ids.size() < 2 || ext_ids.size() < 2 || sel.ext_cols.empty()) {
        throw std::runtime_error("no alignable positions");
    }

    Mat<T> teacher_sel(static_cast<int>(sel.orig_cols.size()), model.cfg.v_orig);
    for (size_t r = 0; r < sel.orig_cols.size(); ++r) {
        const T* src = teacher_logits.row_ptr(sel.orig_cols[r]);
        std::copy(src, src + model.cfg.v_orig, teacher_sel.row_ptr(static_cast<int>(r)));
    }
    softmax_rows_inplace(teacher_sel);

    int logits = model.forward(g, ext_ids);
    int truncated = model.cfg.v_ext > 0 ? g.slice_cols(logits, 0, model.cfg.v_orig) : logits;
    int selected = g.gather_rows(truncated, sel.ext_cols);
    return g.kl_vs_target(selected, std::move(teacher_sel));
}

// Teacher pass under original tokenization (no gradients), student pass
// under extended tokenization; mean KL over selected columns.
template <typename T>
DistillLossReport<T> embedding_distill_loss(Model<T>& model, const BpeTokenizer& base_tok,
                                            const ExtendedTokenizer& ext_tok, const std::string& text,
                                            Graph<T>* graph_out = nullptr, int* loss_node_out = nullptr) {
    std::vector<TokenId> orig_ids = base_tok.tokenize(text);
    std::vector<TokenId> ext_ids = ext_tok.tokenize(text);
    Mat<T> teacher_logits = model.forward_logits(orig_ids);

    DistillLossReport<T> report;
    report.n_orig_tokens = static_cast<int>(orig_ids.size());
    report.n_ext_tokens = static_cast<int>(ext_ids.size());

    Graph<T> local;
    Graph<T>& g = graph_out ? *graph_out : local;
    int loss = build_kl_graph(model, g, orig_ids, ext_ids, teacher_logits, &report.n_columns);
    report.kl_loss = g.val(loss)(0, 0);
    if (loss_node_out) *loss_node_out = loss;
    return report;
}

// Builds the full-vocabulary next-token CE graph on extended ids.
template <typename T>
int build_ce_graph(Model<T>& model, Graph<T>& g, const std::vector<TokenId>& ext_ids) {
    if (ext_ids.size() < 2) throw std::runtime_error("sequence too short");
    int logits = model.forward(g, ext_ids);
    std::vector<int> positions(ext_ids.size() - 1);
    std::vector<int> targets(ext_ids.size() - 1);
    for (size_t t = 0; t + 1 < ext_ids.size(); ++t) {
        positions[t] = static_cast<int>(t);
        targets[t] = ext_ids[t + 1];
    }
    int pred = g.gather_rows(logits, positions);
    return g.ce_vs_targets(pred, std::move(targets));
}

template <typename T>
DistillLossReport<T> head_ce_loss(Model<T>& model, const ExtendedTokenizer& ext_tok,
                                  const std::string& text, Graph<T>* graph_out = nullptr,
                                  int* loss_node_out = nullptr) {
    std::vector<TokenId> ext_ids = ext_tok.tokenize(text);
    DistillLossReport<T> report;
    report.n_ext_tokens = static_cast<int>(ext_ids.size());
    Graph<T> local;
    Graph<T>& g = graph_out ? *graph_out : local;
    int loss = build_ce_graph(model, g, ext_ids);
    report.ce_loss = g.val(loss)(0, 0);
    if (loss_node_out) *loss_node_out = loss;
    return report;
}

// One dual-optimizer update: a KL backward touching only the KL optimizer's
// targets, then a CE backward touching only the CE optimizer's targets.
template <typename T>
DistillLossReport<T> dual_step(Model<T>& model, Adam<T>& opt_kl, Adam<T>& opt_ce,
                               const BpeTokenizer& base_tok, const ExtendedTokenizer& ext_tok,
                               const std::string& text, T lr_multiplier = T(1)) {
    for (const auto& name : opt_kl.targets()) {
        if (opt_ce.targets().count(name)) throw std::runtime_error("graphs not disjoint");
    }

    model.set_trainable(std::set<std::string>(opt_kl.targets().begin(), opt_kl.targets().end()));
    model.zero_grads();
    Graph<T> g_kl;
    int kl_node = 0;
    DistillLossReport<T> report =
        embedding_distill_loss(model, base_tok, ext_tok, text, &g_kl, &kl_node);
    g_kl.backward(kl_node);
    opt_kl.step(model, lr_multiplier);

    model.set_trainable(std::set<std::string>(opt_ce.targets().begin(), opt_ce.targets().end()));
    model.zero_grads();
    Graph<T> g_ce;
    int ce_node = 0;
    DistillLossReport<T> ce_report = head_ce_loss(model, ext_tok, text, &g_ce, &ce_node);
    g_ce.backward(ce_node);
    opt_ce.step(model, lr_multiplier);

    report.ce_loss = ce_report.ce_loss;
    return report;
}

}  // namespace vdistill
