#pragma once

#include <string>
#include <vector>

#include "vdistill/corpus.hpp"
#include "vdistill/model.hpp"

namespace vdistill {

// End-to-end run description. Every file the pipeline reads or writes is
// reachable from here; the manifest is persisted as manifest.json in the
// output directory.
struct PipelineConfig {
    std::string out_dir;
    // empty paths mean "generate synthetic data under out_dir"
    std::string base_corpus_path;
    std::string domain_corpus_path;
    CorpusFormat corpus_format = CorpusFormat::Plain;

    ModelConfig model;
    int n_add = 16;
    int base_corpus_docs = 300;
    int domain_corpus_docs = 300;
    int train_docs = 200;  // head of the domain corpus; the rest validates
    uint64_t seed = 42;

    int pretrain_epochs = 8;
    double pretrain_lr = 1e-3;
    int p1_epochs = 12;
    double p1_lr = 4.2e-4;
    int p2_epochs = 4;
    double p2_lr = 4.2e-4;
    int p3_epochs = 4;
    double p3_lr = 2.2e-4;
    int lora_rank = 4;
    double warmup_fraction = 0.1;
    int batch_size = 1;
    bool verbose = true;
};

struct PipelineResult {
    std::vector<std::string> strategy_names;
    std::vector<std::string> final_checkpoints;
    std::string manifest_path;
};

// extend-vocab -> init-extension -> phase 1 -> phase 2 -> phase 3 (LoRA)
// over the five-strategy matrix, persisting each stage. Stages whose output
// already exists are reused, which makes the pipeline resumable.
PipelineResult run_pipeline(const PipelineConfig& cfg);

}  // namespace vdistill
