#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vlprompt/corpus.hpp"
#include "vlprompt/encoders.hpp"

namespace vlp {

struct PretrainSchedule {
    double lr = 2e-3;
    double warmup_frac = 0.1;
    double weight_decay = 1e-4;
    int batch_images = 64;
    int batch_texts = 64;
    int epochs = 30;
    /// Pretrain samples held out of training, used for retrieval probes.
    int retrieval_holdout = 64;

    void validate() const;
};

struct PromptSchedule {
    int m = 16;          // context tokens per prompt
    int reduction = 16;  // bottleneck: d -> d/reduction -> d_model
    double lr = 2e-3;
    double weight_decay = 0.0;
    int epochs = 10;
    int batch = 32;
    double fewshot_lr = 5e-3;
    int fewshot_epochs = 40;
    int fullshot_epochs = 10;

    void validate() const;
};

/// One experiment = one validated config file. Unknown keys anywhere in the
/// file are rejected so typos cannot silently fall back to defaults.
struct RunConfig {
    CorpusConfig corpus;
    EncoderConfig encoder;
    PretrainSchedule pretrain;
    PromptSchedule prompt;
    double tau_init = 0.07;
    std::uint64_t seed = 1;                    // master seed (corpus + pretraining)
    std::vector<std::uint64_t> seeds = {1, 2, 3};  // evaluation seeds
    std::string out_dir = "runs/default";

    static RunConfig from_json_text(const std::string& text);
    static RunConfig from_file(const std::filesystem::path& path);
    /// Canonical serialization: every field, fixed order. Two configs with
    /// equal canonical text behave identically.
    std::string canonical_json() const;
    /// 16-hex-digit FNV-1a of the canonical serialization; embedded in every
    /// emitted artifact for provenance.
    std::string hash() const;
    void validate() const;
};

}  // namespace vlp
