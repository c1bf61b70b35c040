#include <doctest.h>

#include "test_util.hpp"
#include "vdistill/distill.hpp"

using namespace vdistill;

namespace {

ModelConfig cc_cfg(int v_ext) {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.max_seq = 64;
    cfg.v_orig = testutil::cellconnect_base().vocab_size();
    cfg.v_ext = v_ext;
    return cfg;
}

const std::string kText = "int CellConnectDLS(void) { return 0; }";

}  // namespace

TEST_CASE("kl_divergence worked values") {
    CHECK(kl_divergence<double>({0.3, 0.7}, {0.3, 0.7}) == doctest::Approx(0.0));
    CHECK(kl_divergence<double>({1.0, 0.0}, {0.5, 0.5}) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
    CHECK(kl_divergence<double>({0.5, 0.5}, {0.25, 0.75}) == doctest::Approx(0.1438).epsilon(1e-3));
    CHECK_THROWS(kl_divergence<double>({1.0}, {0.5, 0.5}));
    // non-negativity over random pairs
    std::mt19937 rng(1);
    for (int t = 0; t < 50; ++t) {
        std::vector<double> p(8), q(8);
        double sp = 0, sq = 0;
        for (int i = 0; i < 8; ++i) {
            p[i] = rng() % 1000 + 1;
            q[i] = rng() % 1000 + 1;
            sp += p[i];
            sq += q[i];
        }
        for (int i = 0; i < 8; ++i) {
            p[i] /= sp;
            q[i] /= sq;
        }
        CHECK(kl_divergence(p, q) >= -1e-9);
    }
}

TEST_CASE("cross_entropy worked values") {
    Mat<double> rows(2, 4);
    rows(0, 1) = 1.0;  // exact hit
    for (int c = 0; c < 4; ++c) rows(1, c) = 0.25;
    CHECK(cross_entropy<double>({1, 2}, rows) == doctest::Approx(std::log(4.0) / 2).epsilon(1e-9));

    Mat<double> two(2, 2);
    two(0, 0) = 0.5;
    two(0, 1) = 0.5;
    two(1, 0) = 0.25;
    two(1, 1) = 0.75;
    CHECK(cross_entropy<double>({0, 0}, two) ==
          doctest::Approx((std::log(2.0) + std::log(4.0)) / 2).epsilon(1e-9));
    CHECK_THROWS(cross_entropy<double>({5, 0}, two));
}

TEST_CASE("identity collapse: zero added tokens gives zero KL") {
    BpeTokenizer base = testutil::cellconnect_base();
    ExtendedTokenizer ext(base, {});
    Model<float> m = init_base_model<float>(cc_cfg(0), 3);
    auto report = embedding_distill_loss(m, base, ext, kText);
    CHECK(std::abs(report.kl_loss) < 1e-6);
    CHECK(report.n_orig_tokens == report.n_ext_tokens);
}

TEST_CASE("worked case: 13 columns and truncated student width") {
    BpeTokenizer base = testutil::cellconnect_base();
    ExtendedTokenizer ext = testutil::cellconnect_extended();
    Model<float> m = init_base_model<float>(cc_cfg(2), 3);
    auto report = embedding_distill_loss(m, base, ext, kText);
    CHECK(report.n_columns == 13);  // 12 similar + 1 divergent group
    CHECK(report.n_orig_tokens == 17);
    CHECK(report.n_ext_tokens == 14);
    CHECK(report.kl_loss >= 0);
}

TEST_CASE("unalignable text errors") {
    BpeTokenizer base = testutil::cellconnect_base();
    ExtendedTokenizer ext = testutil::cellconnect_extended();
    Model<float> m = init_base_model<float>(cc_cfg(2), 3);
    CHECK_THROWS_WITH(embedding_distill_loss(m, base, ext, "i"), "no alignable positions");
    CHECK_THROWS_WITH(head_ce_loss(m, ext, "i"), "sequence too short");
}

TEST_CASE("finite-difference agreement of the KL gradient") {
    using T = double;
    BpeTokenizer base = testutil::cellconnect_base();
    ExtendedTokenizer ext = testutil::cellconnect_extended();
    Model<T> m = init_base_model<T>(cc_cfg(2), 5);
    m.set_trainable({"embed.extension"});
    m.zero_grads();
    Graph<T> g;
    int loss_node = 0;
    embedding_distill_loss(m, base, ext, kText, &g, &loss_node);
    g.backward(loss_node);

    auto loss_fn = [&]() { return embedding_distill_loss(m, base, ext, kText).kl_loss; };
    std::mt19937 rng(17);
    int checked = 0;
    for (int t = 0; t < 20; ++t) {
        int r = static_cast<int>(rng() % m.embed_ext.value.rows);
        int c = static_cast<int>(rng() % m.embed_ext.value.cols);
        T analytic = m.embed_ext.grad(r, c);
        T numeric = testutil::central_difference<T>(m.embed_ext.value, r, c, T(1e-5), loss_fn);
        if (std::abs(analytic) < 1e-9 && std::abs(numeric) < 1e-9) continue;
        T rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), T(1e-9)});
        CHECK(rel < 1e-3);
        ++checked;
    }
    CHECK(checked > 5);
}

TEST_CASE("dual_step updates only the two extension blocks") {
    BpeTokenizer base = testutil::cellconnect_base();
    ExtendedTokenizer ext = testutil::cellconnect_extended();
    Model<float> m = init_base_model<float>(cc_cfg(2), 7);
    Adam<float> opt_kl(1e-3f, {"embed.extension"});
    Adam<float> opt_ce(1e-3f, {"head.extension"});

    auto before = testutil::all_param_hashes(m);
    dual_step(m, opt_kl, opt_ce, base, ext, kText);
    auto after = testutil::all_param_hashes(m);
    REQUIRE(before.size() == after.size());
    for (size_t i = 0; i < before.size(); ++i) {
        const auto& name = before[i].first;
        if (name == "embed.extension" || name == "head.extension") {
            CHECK(before[i].second != after[i].second);
        } else {
            CAPTURE(name);
            CHECK(before[i].second == after[i].second);
        }
    }
}

TEST_CASE("dual_step rejects overlapping optimizer targets") {
    BpeTokenizer base = testutil::cellconnect_base();
    ExtendedTokenizer ext = testutil::cellconnect_extended();
    Model<float> m = init_base_model<float>(cc_cfg(2), 7);
    Adam<float> opt_kl(1e-3f, {"embed.extension"});
    Adam<float> opt_ce(1e-3f, {"embed.extension", "head.extension"});
    CHECK_THROWS_WITH(dual_step(m, opt_kl, opt_ce, base, ext, kText), "graphs not disjoint");
}

TEST_CASE("dual_step is deterministic") {
    BpeTokenizer base = testutil::cellconnect_base();
    ExtendedTokenizer ext = testutil::cellconnect_extended();
    auto run = [&]() {
        Model<float> m = init_base_model<float>(cc_cfg(2), 7);
        Adam<float> opt_kl(1e-3f, {"embed.extension"});
        Adam<float> opt_ce(1e-3f, {"head.extension"});
        for (int s = 0; s < 3; ++s) dual_step(m, opt_kl, opt_ce, base, ext, kText);
        return testutil::all_param_hashes(m);
    };
    CHECK(run() == run());
}

TEST_CASE("repeated dual steps reduce the KL loss") {
    BpeTokenizer base = testutil::cellconnect_base();
    ExtendedTokenizer ext = testutil::cellconnect_extended();
    Model<float> m = init_base_model<float>(cc_cfg(2), 9);
    Adam<float> opt_kl(5e-3f, {"embed.extension"});
    Adam<float> opt_ce(5e-3f, {"head.extension"});
    float initial = embedding_distill_loss(m, base, ext, kText).kl_loss;
    for (int s = 0; s < 30; ++s) dual_step(m, opt_kl, opt_ce, base, ext, kText);
    float final_loss = embedding_distill_loss(m, base, ext, kText).kl_loss;
    CHECK(final_loss < initial);
}

TEST_CASE("head_ce_loss matches a hand-computed CE over the softmaxed logits") {
    BpeTokenizer base = testutil::cellconnect_base();
    ExtendedTokenizer ext = testutil::cellconnect_extended();
    Model<float> m = init_base_model<float>(cc_cfg(2), 4);
    std::vector<TokenId> ids = ext.tokenize(kText);
    Mat<float> logits = m.forward_logits(ids);
    Mat<float> probs = softmax_rows(logits);
    std::vector<int> targets(ids.begin() + 1, ids.end());
    Mat<float> pred(static_cast<int>(targets.size()), probs.cols);
    for (size_t r = 0; r < targets.size(); ++r) {
        std::copy(probs.row_ptr(static_cast<int>(r)), probs.row_ptr(static_cast<int>(r)) + probs.cols,
                  pred.row_ptr(static_cast<int>(r)));
    }
    float expected = cross_entropy(targets, pred);
    auto report = head_ce_loss(m, ext, kText);
    CHECK(report.ce_loss == doctest::Approx(expected).epsilon(1e-5));
}
