#pragma once

#include <string>
#include <vector>

#include "vlprompt/encoders.hpp"
#include "vlprompt/promptgen.hpp"
#include "vlprompt/tokenizer.hpp"

namespace vlp {

struct WordNeighbor {
    std::string token;
    double distance = 0;
    int rank = 0;  // 1-based, consecutive
};

/// Exact k nearest vocabulary embeddings to `query` by Euclidean distance,
/// special tokens excluded, ties broken by ascending token id.
std::vector<WordNeighbor> nearest_words(const Tensor& query, const Tensor& token_embeddings,
                                        const Tokenizer& tokenizer, int k = 30);

/// Pairwise cosine matrix of per-image flattened conditioned contexts
/// (the m rows of v_j + pi_i concatenated into one vector per image).
Tensor context_similarity_matrix(const Model& model, const PromptGeneratorParams& params,
                                 const std::vector<Tensor>& images);

struct ComponentFootprint {
    std::string component;
    std::int64_t parameters = 0;
    std::int64_t flops = 0;  // per forward pass; 2 * MAC for affine ops, +1 per bias add
    double fraction = 0;     // parameter share of the whole model
};

/// Parameter counts come from the checkpoint tensors themselves; FLOPs from
/// the architecture on one (image, prompt) forward. Components: the prompt
/// generator ("prompt." prefix), the rest, and the whole model. The paper's
/// published reference scale (86,016 parameters / 86,112 FLOPs) is carried
/// in reference_note as a citation, never recomputed.
struct FootprintReport {
    std::vector<ComponentFootprint> components;
    std::string reference_note;
};
FootprintReport count_footprint(const Checkpoint& ckpt, const EncoderConfig& enc, const PromptSchedule& prompt);

/// Channel-mean of the conv encoder's last feature map (token-norm map over
/// patches for the attention variant), min-max normalized to [0, 1]
/// (all-zero when the map is constant), nearest-neighbor upsampled to the
/// input resolution. Returns (H, W).
Tensor activation_map(const Model& model, const Tensor& image);

std::string neighbors_csv(const std::vector<std::vector<WordNeighbor>>& per_slot);
std::string footprint_csv(const FootprintReport& report);
std::string matrix_csv(const Tensor& matrix);
/// Binary 8-bit PGM (values scaled from [0, 1]).
void write_pgm(const Tensor& heatmap, const std::filesystem::path& path);

}  // namespace vlp
