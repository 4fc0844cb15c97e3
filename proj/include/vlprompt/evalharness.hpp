#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vlprompt/config.hpp"
#include "vlprompt/corpus.hpp"
#include "vlprompt/encoders.hpp"
#include "vlprompt/promptgen.hpp"

namespace vlp {

struct ClassMetrics {
    int class_id = -1;
    std::string class_name;
    // NaN when the class is absent from the test split
    double precision = 0, recall = 0, specificity = 0, f1 = 0;
    bool absent = false;
};

struct MetricsReport {
    std::string protocol;  // "zero", "few:1", ..., "full"
    std::uint64_t seed = 0;
    int shots = 0;  // -1 encodes full supervision
    std::vector<ClassMetrics> per_class;
    std::vector<std::vector<int>> confusion;  // [true][predicted], class_ids order
    std::vector<int> class_ids;
    double accuracy = 0;
    double macro_auc = 0;
    double wall_seconds = 0;
    bool absent_class_warning = false;
    ShotSelection shot_selection;
};

/// Runs classify on every sample of the split and aggregates the metrics.
/// Classes missing from the split get NaN per-class rates plus a warning
/// flag; overall metrics cover the present classes.
MetricsReport evaluate(const Model& model, const PromptGeneratorParams& params, const std::vector<int>& class_ids,
                       const std::vector<SampleRecord>& split, const std::vector<Tensor>& images);

/// Exact rank-statistic AUC with midrank ties: P(score_pos > score_neg) +
/// 0.5 P(equal). Returns NaN when either class is empty.
double auc_rank(const std::vector<double>& scores, const std::vector<int>& is_positive);

struct ProtocolSpec {
    std::string name;  // zero | few:<n> | full
    int shots = 0;     // 0 for zero, n for few, -1 for full
};
ProtocolSpec parse_protocol(const std::string& text);
/// The full grid: zero, few:1, few:2, few:4, few:8, few:16, full.
std::vector<ProtocolSpec> protocol_grid();

struct RunProtocolInputs {
    const Model* model = nullptr;
    const Tokenizer* tokenizer = nullptr;
    /// Prompt generator trained on base classes, one per seed (same order as
    /// seeds).
    std::vector<PromptGeneratorParams> per_seed_params;
    std::vector<std::uint64_t> seeds;
    std::vector<SampleRecord> unseen_train;
    std::vector<Tensor> unseen_train_images;
    std::vector<SampleRecord> unseen_test;
    std::vector<Tensor> unseen_test_images;
};

struct ProtocolRunResult {
    std::vector<MetricsReport> reports;               // one per (protocol, seed)
    std::vector<std::pair<std::string, double>> summary;  // per protocol: median accuracy over seeds
};

/// Runs each requested protocol for each seed: zero-shot name-initialized
/// class rows, few-shot fine-tuning on top of those, or full-split training.
/// Deterministic given inputs; protocols fan out over worker threads.
ProtocolRunResult run_protocols(const RunProtocolInputs& in, const std::vector<ProtocolSpec>& protocols,
                                const PromptSchedule& schedule, int max_threads = 0);

/// CSV with the stable header
/// protocol,seed,shots,class,precision,recall,specificity,f1,accuracy,auc,seconds
/// Rows are per (report, class) plus one "overall" row per report. The
/// seconds column is fixed at 0 so identical runs stay byte-identical; real
/// timings go to the JSON summary.
std::string metrics_csv(const std::vector<MetricsReport>& reports);
std::string metrics_json(const ProtocolRunResult& result, const std::string& config_hash);

}  // namespace vlp
