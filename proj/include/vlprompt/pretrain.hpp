#pragma once

#include <filesystem>
#include <ostream>
#include <vector>

#include "vlprompt/checkpoint.hpp"
#include "vlprompt/config.hpp"
#include "vlprompt/corpus.hpp"
#include "vlprompt/encoders.hpp"

namespace vlp {

struct PredictedSimilarity {
    Tensor s_hat;      // (N_img, N_text) embedding cosines
    Tensor y_img2txt;  // row softmax of s_hat / tau
    Tensor y_txt2img;  // column softmax of s_hat / tau
};

/// Embedding-side similarity distributions. tau must be a positive scalar
/// (usually the graph node exp(log_tau), so it stays learnable).
PredictedSimilarity predicted_similarity(const Tensor& img_emb, const Tensor& txt_emb, const Tensor& tau);

/// Symmetric semantic-matching loss:
///   L = -1/2 [ 1/N_img  * sum_ij y_ij      log y_hat_ij
///            + 1/N_text * sum_ij y(t2i)_ij log y_hat(t2i)_ij ]
/// A 1e-12 floor inside the logs keeps early training NaN-free.
Tensor semantic_loss(const PredictedSimilarity& pred, const SimilarityTargets& target);
/// Same loss on raw distribution pairs (rows of y_img2txt / columns of
/// y_txt2img are the supervised directions).
Tensor semantic_loss(const Tensor& yhat_img2txt, const Tensor& yhat_txt2img, const Tensor& y_img2txt,
                     const Tensor& y_txt2img);

struct PretrainLogRow {
    int epoch = 0;
    int step = 0;
    double loss = 0;
    double tau = 0;
};

struct PretrainResult {
    Model model;
    Tokenizer tokenizer;
    std::vector<PretrainLogRow> log;
    std::vector<double> epoch_mean_loss;
    double retrieval_top1 = 0;  // held-out decoupled batches of 32
};

/// Decoupled image-text pretraining over the corpus' pretrain split.
/// Deterministic given the config (master seed drives init, batch order,
/// augmentation). Writes one `epoch,step,loss,tau` row per step to log_csv
/// when given. A non-finite loss aborts with a diagnostic naming the step.
PretrainResult pretrain_run(const RunConfig& cfg, const std::filesystem::path& corpus_dir,
                            std::ostream* log_csv = nullptr);

/// Packs the pretrained model (+ tau) into a checkpoint.
Checkpoint model_checkpoint(const Model& m, const CheckpointMeta& meta);

/// Rebuilds a model from a pretraining checkpoint.
Model model_from_checkpoint(const Checkpoint& ckpt, const EncoderConfig& cfg, const Tokenizer& tokenizer);

/// Image-to-text retrieval probe on held-out samples: batches of
/// `batch` decoupled images/sentences; a retrieval counts as a hit when the
/// retrieved sentence attains the maximum ground-truth label similarity for
/// that image. Returns the mean top-1 hit rate.
double retrieval_probe(const Model& m, const Tokenizer& tok, const std::vector<Tensor>& images,
                       const std::vector<LabelVector>& img_labels, const std::vector<std::string>& sentences,
                       const std::vector<LabelVector>& txt_labels, int batch, std::uint64_t seed);

}  // namespace vlp
