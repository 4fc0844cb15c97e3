#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "vlprompt/checkpoint.hpp"
#include "vlprompt/config.hpp"
#include "vlprompt/corpus.hpp"
#include "vlprompt/encoders.hpp"

namespace vlp {

/// Which parameter groups the base-class training phase updates. Class
/// embeddings are always trained (the downstream task requires them).
/// The four ablation variants are {class}, {context, class},
/// {metanet, class} and {metanet, context, class}.
struct TrainableMask {
    bool metanet = true;
    bool context = true;
    static constexpr bool cls = true;

    /// Parses "full", "class", "context_class" or "metanet_class".
    static TrainableMask from_string(const std::string& s);
    std::string to_string() const;
};

/// Context matrix, per-class embeddings, and the bottleneck Meta-Net.
/// A disabled Meta-Net means the conditional token is identically zero; the
/// weights stay untouched so ablations are clean additive identities.
struct PromptGeneratorParams {
    int m = 16;
    int reduction = 16;
    bool metanet_enabled = true;

    Tensor ctx;               // (m, d_model)
    std::vector<Tensor> cls;  // one (d_model,) row per observation class
    Tensor meta_w1, meta_b1;  // (d, d/reduction), (d/reduction,)
    Tensor meta_w2, meta_b2;  // (d/reduction, d_model), (d_model,)

    NamedTensors named_params() const;  // all under the "prompt." prefix
    PromptGeneratorParams clone() const;
    void set_requires_grad(const TrainableMask& mask, const std::vector<int>& trainable_classes);
};

/// Fresh generator: contexts from N(0, 0.02), class rows for every
/// observation, Meta-Net with small random affine maps.
PromptGeneratorParams make_prompt_generator(const PromptSchedule& schedule, const EncoderConfig& enc,
                                            int num_classes, std::uint64_t seed, Dtype dt = Dtype::F32);

/// Same, but every class row starts from its class-name token embeddings
/// (same rule as zero_shot_setup). Training then keeps base rows in the
/// token-embedding regime, which is what lets name-initialized unseen rows
/// transfer at zero-shot time.
PromptGeneratorParams make_prompt_generator_name_init(const PromptSchedule& schedule, const EncoderConfig& enc,
                                                      const ObservationVocabulary& vocab, const Tokenizer& tokenizer,
                                                      const Tensor& token_embeddings, std::uint64_t seed,
                                                      Dtype dt = Dtype::F32);

/// pi = W2 * relu(W1 * image_embedding + b1) + b2; zero when the Meta-Net is
/// disabled.
Tensor metanet_forward(const PromptGeneratorParams& p, const Tensor& image_embedding);

/// [v_1 + pi, ..., v_m + pi, C_k] as an (m + 1, d_model) sequence.
Tensor build_prompt(const PromptGeneratorParams& p, const Tensor& image_embedding, int class_id);

/// Class probabilities for one image embedding over `class_ids` (softmax of
/// prompt-text/image cosines over tau). Returns a (K,) tensor wired into the
/// graph, so it also drives training losses.
Tensor classify_probs(const Model& model, const PromptGeneratorParams& p, const Tensor& image_embedding,
                      const std::vector<int>& class_ids, const Tensor& tau);

/// Convenience: encode the image, return probabilities and the argmax class.
struct Classification {
    std::vector<double> probs;
    int predicted_class = -1;  // entry of class_ids, not its index
};
Classification classify(const Model& model, const PromptGeneratorParams& p, const Tensor& image,
                        const std::vector<int>& class_ids);

struct PromptTrainLog {
    std::vector<double> epoch_mean_loss;
    std::vector<double> epoch_accuracy;
};

/// Base-class prompt learning: minimizes cross-entropy of the class
/// probabilities over base-train samples, updating only mask-enabled groups.
/// Encoders are frozen; image embeddings are computed once up front.
PromptTrainLog prompt_train(const Model& model, PromptGeneratorParams& params, const std::vector<int>& base_classes,
                            const std::vector<Tensor>& images, const std::vector<int>& class_ids,
                            const PromptSchedule& schedule, const TrainableMask& mask, std::uint64_t seed);

/// Name-initialized class rows for unseen classes: the mean of the class
/// name's token embeddings. A fully out-of-vocabulary name is an error.
void zero_shot_setup(PromptGeneratorParams& params, const std::vector<int>& unseen_classes,
                     const ObservationVocabulary& vocab, const Tokenizer& tokenizer, const Tensor& token_embeddings);
/// Same, with explicit (class id, class name) pairs.
void zero_shot_setup(PromptGeneratorParams& params, const std::vector<std::pair<int, std::string>>& classes,
                     const Tokenizer& tokenizer, const Tensor& token_embeddings);

/// Records which samples a few-shot run drew, for the metrics output.
struct ShotSelection {
    int shots = 0;
    std::vector<std::string> sample_ids;
};

/// Fine-tunes only the unseen-class rows on `shots` samples per class.
/// shots == 0 returns the params unchanged. Every other tensor is
/// bit-identical afterwards.
PromptGeneratorParams fewshot_finetune(const Model& model, const PromptGeneratorParams& params,
                                       const std::vector<int>& unseen_classes, int shots,
                                       const std::vector<SampleRecord>& unseen_train,
                                       const std::vector<Tensor>& unseen_train_images,
                                       const PromptSchedule& schedule, std::uint64_t seed,
                                       ShotSelection* selection = nullptr);

/// Trains the whole prompt generator (Meta-Net, contexts, class rows) on the
/// full unseen-train split; encoders stay frozen.
PromptGeneratorParams fullshot_train(const Model& model, const PromptGeneratorParams& params,
                                     const std::vector<int>& unseen_classes,
                                     const std::vector<SampleRecord>& unseen_train,
                                     const std::vector<Tensor>& unseen_train_images, const PromptSchedule& schedule,
                                     std::uint64_t seed, PromptTrainLog* log = nullptr);

/// Prompt tensors live in the same checkpoint under the reserved "prompt."
/// prefix; metadata records m, reduction and the Meta-Net bypass flag.
Checkpoint prompt_checkpoint(const Model& model, const PromptGeneratorParams& params, CheckpointMeta meta);
PromptGeneratorParams prompt_params_from_checkpoint(const Checkpoint& ckpt, const EncoderConfig& enc);

}  // namespace vlp
