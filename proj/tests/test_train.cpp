#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "test_util.hpp"
#include "vdistill/train.hpp"

using namespace vdistill;

namespace {

ModelConfig cc_cfg() {
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.max_seq = 64;
    cfg.v_orig = testutil::cellconnect_base().vocab_size();
    cfg.v_ext = 2;
    return cfg;
}

std::vector<std::string> train_docs() {
    return {
        "int CellConnectDLS(void) { return 0; }",
        "void CellConnect(void) { return; }",
        "int DLS(void) { return 1; }",
        "int CellConnectDLS(void) { return 2; }",
    };
}

std::vector<std::string> val_docs() { return {"void CellConnectDLS(void) { return; }"}; }

}  // namespace

TEST_CASE("lr schedule: warmup then linear decay") {
    Schedule s{0.1, true};
    CHECK(lr_at(s, 0, 100) == doctest::Approx(0.0));
    CHECK(lr_at(s, 5, 100) == doctest::Approx(0.5));
    CHECK(lr_at(s, 10, 100) == doctest::Approx(1.0));
    CHECK(lr_at(s, 55, 100) == doctest::Approx(0.5));
    CHECK(lr_at(s, 100, 100) == doctest::Approx(0.0));
    CHECK_THROWS(lr_at(s, -1, 100));
    CHECK_THROWS(lr_at(s, 101, 100));

    Schedule flat{0.25, false};
    CHECK(lr_at(flat, 1, 8) == doctest::Approx(0.5));
    CHECK(lr_at(flat, 2, 8) == doctest::Approx(1.0));
    CHECK(lr_at(flat, 7, 8) == doctest::Approx(1.0));
}

TEST_CASE("phase config validation") {
    PhaseConfig pc;
    CHECK_NOTHROW(pc.validate());
    pc.learning_rate = 0;
    CHECK_THROWS(pc.validate());
    pc = PhaseConfig{};
    pc.warmup_fraction = 1.0;
    CHECK_THROWS(pc.validate());
    pc = PhaseConfig{};
    pc.batch_size = 0;
    CHECK_THROWS(pc.validate());
}

TEST_CASE("phase 1 KLCE trains only the extension blocks and logs metrics") {
    BpeTokenizer base = testutil::cellconnect_base();
    ExtendedTokenizer ext = testutil::cellconnect_extended();
    Model<float> m = init_base_model<float>(cc_cfg(), 21);

    PhaseConfig pc;
    pc.phase = Phase::P1NewModules;
    pc.epochs = 2;
    pc.learning_rate = 1e-3;
    pc.objective = Objective::KLCE;

    auto before = testutil::all_param_hashes(m);
    PhaseMetrics<float> metrics = run_phase1(m, base, ext, train_docs(), val_docs(), pc);
    auto after = testutil::all_param_hashes(m);
    for (size_t i = 0; i < before.size(); ++i) {
        const auto& name = before[i].first;
        if (name == "embed.extension" || name == "head.extension") {
            CHECK(before[i].second != after[i].second);
        } else {
            CAPTURE(name);
            CHECK(before[i].second == after[i].second);
        }
    }
    // index 0 = pre-training state, one entry per epoch after
    CHECK(metrics.train_kl.size() == 3);
    CHECK(metrics.val_ce.size() == 3);
    CHECK(metrics.embed_sim.size() == 3);
    CHECK(metrics.head_sim.size() == 3);
}

TEST_CASE("phase 1 CE objective also leaves the base frozen") {
    BpeTokenizer base = testutil::cellconnect_base();
    ExtendedTokenizer ext = testutil::cellconnect_extended();
    Model<float> m = init_base_model<float>(cc_cfg(), 22);
    PhaseConfig pc;
    pc.epochs = 1;
    pc.learning_rate = 1e-3;
    pc.objective = Objective::CE;
    auto before = testutil::all_param_hashes(m);
    run_phase1(m, base, ext, train_docs(), val_docs(), pc);
    auto after = testutil::all_param_hashes(m);
    for (size_t i = 0; i < before.size(); ++i) {
        const auto& name = before[i].first;
        bool ext_block = name == "embed.extension" || name == "head.extension";
        CHECK(ext_block == (before[i].second != after[i].second));
    }
}

TEST_CASE("phase 1 rejects an empty corpus") {
    BpeTokenizer base = testutil::cellconnect_base();
    ExtendedTokenizer ext = testutil::cellconnect_extended();
    Model<float> m = init_base_model<float>(cc_cfg(), 22);
    PhaseConfig pc;
    CHECK_THROWS_WITH(run_phase1(m, base, ext, {}, {}, pc), "empty corpus");
}

TEST_CASE("phase 2 touches both embedding and head, original and extension") {
    BpeTokenizer base = testutil::cellconnect_base();
    ExtendedTokenizer ext = testutil::cellconnect_extended();
    Model<float> m = init_base_model<float>(cc_cfg(), 23);
    PhaseConfig pc;
    pc.phase = Phase::P2FullEmbedHead;
    pc.epochs = 1;
    pc.learning_rate = 1e-3;
    auto before = testutil::all_param_hashes(m);
    run_phase2(m, base, ext, train_docs(), val_docs(), pc);
    auto after = testutil::all_param_hashes(m);
    std::set<std::string> expected = {"embed.original", "embed.extension", "head.original",
                                      "head.extension"};
    for (size_t i = 0; i < before.size(); ++i) {
        CAPTURE(before[i].first);
        CHECK(expected.count(before[i].first) == (before[i].second != after[i].second ? 1u : 0u));
    }
}

TEST_CASE("phase 3 LoRA trains only adapters") {
    BpeTokenizer base = testutil::cellconnect_base();
    ExtendedTokenizer ext = testutil::cellconnect_extended();
    Model<float> m = init_base_model<float>(cc_cfg(), 24);
    PhaseConfig pc;
    pc.phase = Phase::P3Lora;
    pc.epochs = 2;
    pc.learning_rate = 1e-3;
    pc.lora_rank = 2;
    auto before = testutil::all_param_hashes(m);
    run_phase3_lora(m, base, ext, train_docs(), val_docs(), pc);
    CHECK(m.lora.size() == 12);  // 6 matrices x 2 layers
    auto after_base = testutil::all_param_hashes(m);
    for (const auto& [name, h] : before) {
        for (const auto& [name2, h2] : after_base) {
            if (name2 == name) {
                CAPTURE(name);
                CHECK(h == h2);  // every pre-existing tensor untouched
            }
        }
    }
    bool some_b_nonzero = false;
    for (auto& [name, pair] : m.lora) {
        for (float v : pair.B.value.data) some_b_nonzero |= v != 0.0f;
    }
    CHECK(some_b_nonzero);
}

TEST_CASE("phase 3 sequential trains first then second half of the blocks") {
    BpeTokenizer base = testutil::cellconnect_base();
    ExtendedTokenizer ext = testutil::cellconnect_extended();
    Model<float> m = init_base_model<float>(cc_cfg(), 25);
    PhaseConfig pc;
    pc.phase = Phase::P3Sequential;
    pc.epochs = 2;
    pc.learning_rate = 1e-3;
    auto before = testutil::all_param_hashes(m);
    PhaseMetrics<float> metrics = run_phase3_sequential(m, base, ext, train_docs(), val_docs(), pc);
    CHECK(metrics.train_ce.size() == 3);  // pre + one per half
    auto after = testutil::all_param_hashes(m);
    for (size_t i = 0; i < before.size(); ++i) {
        const auto& name = before[i].first;
        bool block_param = name.rfind("block.", 0) == 0;
        CAPTURE(name);
        CHECK(block_param == (before[i].second != after[i].second));
    }
}

TEST_CASE("hot restart resets the schedule but stays deterministic") {
    BpeTokenizer base = testutil::cellconnect_base();
    ExtendedTokenizer ext = testutil::cellconnect_extended();
    auto run = [&](int restart_at) {
        Model<float> m = init_base_model<float>(cc_cfg(), 26);
        PhaseConfig pc;
        pc.epochs = 4;
        pc.learning_rate = 1e-3;
        pc.objective = Objective::CE;
        pc.restart_at = restart_at;
        run_phase1(m, base, ext, train_docs(), val_docs(), pc);
        return testutil::all_param_hashes(m);
    };
    CHECK(run(2) == run(2));
    CHECK(run(0) != run(2));
}

TEST_CASE("step clock segments the schedule at the restart epoch") {
    train_detail::StepClock clock{10, 4, 2, Schedule{0.1, true}};
    // Segment 1 covers epochs 0-1 (20 steps), segment 2 epochs 2-3.
    CHECK(clock.multiplier(0, 0) == doctest::Approx(0.0));
    CHECK(clock.multiplier(0, 2) == doctest::Approx(1.0));
    CHECK(clock.multiplier(2, 0) == doctest::Approx(0.0));  // fresh ramp after restart
    CHECK(clock.multiplier(2, 2) == doctest::Approx(1.0));
    CHECK(clock.multiplier(3, 9) == doctest::Approx(1.0 / 18).epsilon(1e-9));
}

TEST_CASE("evaluate_losses skips unalignable documents") {
    BpeTokenizer base = testutil::cellconnect_base();
    ExtendedTokenizer ext = testutil::cellconnect_extended();
    Model<float> m = init_base_model<float>(cc_cfg(), 27);
    std::vector<std::string> docs = train_docs();
    auto [kl_a, ce_a] = evaluate_losses(m, base, ext, docs);
    docs.push_back("i");  // single-token document
    auto [kl_b, ce_b] = evaluate_losses(m, base, ext, docs);
    CHECK(kl_a == doctest::Approx(kl_b));
    CHECK(ce_a == doctest::Approx(ce_b));
}

TEST_CASE("metrics CSV layout") {
    PhaseMetrics<float> metrics;
    metrics.train_kl = {1.0f, 0.5f};
    metrics.train_ce = {2.0f, 1.5f};
    metrics.val_kl = {1.1f, 0.6f};
    metrics.val_ce = {2.1f, 1.6f};
    metrics.embed_sim.push_back({0.1f, 0.2f, 0.3f, 1});
    auto dir = std::filesystem::temp_directory_path() / "vdistill_csv_test";
    write_metrics_csvs(dir.string(), "mean_klce", metrics);

    std::ifstream in(dir / "train_kl_losses.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "epoch,mean_klce");
    std::getline(in, line);
    CHECK(line.rfind("0,", 0) == 0);

    std::ifstream sim(dir / "embed_similarity.csv");
    std::getline(sim, line);
    CHECK(line == "epoch,first,intermediate,last");
    CHECK_FALSE(std::filesystem::exists(dir / "head_similarity.csv"));  // no entries recorded
    std::filesystem::remove_all(dir);
}
