#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vlprompt/rng.hpp"
#include "vlprompt/tensor.hpp"
#include "vlprompt/vocab.hpp"

namespace vlp {

struct CorpusConfig {
    int pretrain_samples = 2000;
    int base_train_per_class = 60;
    int unseen_train_per_class = 50;
    int unseen_test_per_class = 50;
    int image_size = 32;
    /// P(number of findings = 0, 1, 2, 3) for pretrain samples. Classification
    /// splits always carry exactly the one finding named by their class
    /// (none for "No Finding") so the split's class label is unambiguous.
    std::vector<double> findings_dist = {0.10, 0.70, 0.15, 0.05};
    double noise_sigma = 0.03;
    /// Chance that an absent finding gets an explicit negated mention.
    double negation_prob = 0.05;
    /// Chance that a pretrain report carries a hedged mention of an absent
    /// finding, which the extractor reads as positive (weak-label noise).
    double ambiguity_prob = 0.02;
    std::uint64_t seed = 1;

    void validate() const;
};

struct SampleRecord {
    std::string id;
    std::string image_path;  // relative to the corpus directory
    std::string report;
    LabelVector labels;  // extracted from the report text
    int class_id = 0;
    std::string split;  // pretrain | base-train | unseen-train | unseen-test
    int height = 0;
    int width = 0;
};

/// One generated sample before it is written out.
struct GeneratedSample {
    SampleRecord record;
    std::vector<float> pixels;       // row-major HxW in [0, 1]
    LabelVector generative_labels;   // what the renderer actually drew
};

// -- generation --------------------------------------------------------------

/// Renders one sample: motifs on a noisy background plus a templated report.
/// Fully determined by (config.seed, split, index_in_split).
GeneratedSample generate_sample(const CorpusConfig& cfg, const std::string& split, int index,
                                const std::vector<int>& finding_ids);

/// Generates every split into `out_dir` (manifest.jsonl + images/*.f32 +
/// meta.json) and returns the records in manifest order.
std::vector<SampleRecord> generate_corpus(const CorpusConfig& cfg, const std::filesystem::path& out_dir,
                                          const std::string& config_hash = "");

/// Draws the finding set for one sample of a split. Classification splits
/// receive their per-class primary finding; pretrain draws from findings_dist.
std::vector<int> draw_findings(const CorpusConfig& cfg, Rng& rng);

// -- corpus IO ---------------------------------------------------------------

std::vector<SampleRecord> load_manifest(const std::filesystem::path& corpus_dir);
/// Loads a raw .f32 image as an (H, W, 1) float tensor.
Tensor load_image(const std::filesystem::path& corpus_dir, const SampleRecord& rec);

// -- text ops ----------------------------------------------------------------

/// Lowercased alphanumeric word split shared by the labeler and tokenizer.
std::vector<std::string> word_tokens(const std::string& text);

/// Every lowercase word that can appear in a generated report (template text
/// plus all observation synonyms); the tokenizer vocabulary source.
std::vector<std::string> report_lexicon();

/// Rule-based weak labeler: an observation is positive iff some synonym
/// occurs in a sentence with no negation cue ("no", "without", "free of",
/// "negative for") ending within the 3 tokens before it.
LabelVector extract_labels(const std::string& report, const ObservationVocabulary& vocab);

/// Splits on sentence terminators and drops sentences shorter than
/// min_tokens tokens, preserving order.
std::vector<std::string> sentence_filter(const std::string& report, int min_tokens = 4);

// -- targets -----------------------------------------------------------------

struct SimilarityTargets {
    Tensor s;          // (N_img, N_text) pairwise label cosines
    Tensor y_img2txt;  // row softmax of s
    Tensor y_txt2img;  // column softmax of s
};

/// Ground-truth semantic targets from label batches. Pure data (no autodiff).
SimilarityTargets gt_similarity(const std::vector<LabelVector>& img_labels,
                                const std::vector<LabelVector>& txt_labels, Dtype dt = Dtype::F32);

// -- augmentation ------------------------------------------------------------

/// Horizontal mirror of an (H, W, 1) image (an involution).
Tensor hflip(const Tensor& image);

/// Training augmentation on an (H, W, 1) image in [0, 1]: resize to
/// (H+4, W+4), random crop back, horizontal flip p=0.5, brightness in
/// [0.8, 1.2] with clamping, rotation in [-10 deg, 10 deg] (nearest
/// neighbor). Deterministic given the seed.
Tensor augment(const Tensor& image, std::uint64_t seed);

}  // namespace vlp
