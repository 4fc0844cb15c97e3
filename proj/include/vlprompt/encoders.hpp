#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "vlprompt/tensor.hpp"
#include "vlprompt/tokenizer.hpp"

namespace vlp {

struct EncoderConfig {
    std::string variant = "conv";  // image encoder: "conv" or "attention"
    int d_model = 64;              // transformer width (text + attention image encoder)
    int d = 64;                    // shared embedding dimension after projection
    int layers = 2;
    int heads = 4;
    int max_seq_len = 32;
    int patch = 4;
    int image_size = 32;
    std::array<int, 3> conv_channels = {8, 16, 32};

    void validate() const;
};

/// One pre-norm transformer block: x += attn(ln1(x)); x += mlp(ln2(x)).
struct BlockParams {
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b;
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct TextEncoderParams {
    Tensor tok_emb;  // (vocab, d_model)
    Tensor pos_emb;  // (max_seq_len, d_model), learned
    std::vector<BlockParams> blocks;
    Tensor lnf_g, lnf_b;
    Tensor proj, proj_b;  // (d_model, d) affine map to the shared space
};

struct ConvEncoderParams {
    Tensor w1, b1, w2, b2, w3, b3;  // 3x3 conv stages
    Tensor lnf_g, lnf_b;            // feature norm before projection
    Tensor proj, proj_b;            // (c3, d) affine map to the shared space
};

struct AttnEncoderParams {
    Tensor patch_w, patch_b;  // (patch^2, d_model), (d_model,)
    Tensor pos_emb;           // (n_patches, d_model)
    std::vector<BlockParams> blocks;
    Tensor lnf_g, lnf_b;
    Tensor proj, proj_b;  // (d_model, d) affine map to the shared space
};

/// The pretrainable vision-language model: both encoders, their projections
/// to the shared dimension, and the log-space temperature.
struct Model {
    EncoderConfig cfg;
    TextEncoderParams txt;
    std::optional<ConvEncoderParams> conv;
    std::optional<AttnEncoderParams> attn;
    Tensor log_tau;  // tau = exp(log_tau), kept positive by construction

    /// All parameters in a fixed order with their checkpoint names.
    NamedTensors named_params() const;
    void set_requires_grad_all(bool rg);
    Tensor tau() const;  // graph node exp(log_tau)
};

/// Fresh model; every tensor is initialized from a stream derived from
/// (seed, tensor name), so values do not depend on construction order.
Model make_model(const EncoderConfig& cfg, const Tokenizer& tokenizer, std::uint64_t seed, Dtype dt = Dtype::F32);

// -- forward passes ----------------------------------------------------------

Tensor transformer_block(const BlockParams& p, const Tensor& x, int heads);

/// Embedding entry point: seq is (S, d_model) with S <= max_seq_len. This is
/// what makes continuous prompts possible. Returns the projected (d,)
/// representation of the final sequence slot.
Tensor encode_text_embeddings(const Model& m, const Tensor& seq);

/// Token entry point: looks up embeddings for ids up to and including EOS,
/// then runs the embedding path on exactly those rows.
Tensor encode_text_tokens(const Model& m, const std::vector<std::int64_t>& ids);

/// Image entry point, (H, W, 1) in [0, 1] -> (d,). Variant from the config.
Tensor encode_image(const Model& m, const Tensor& image);

/// Last feature stage before pooling: (C, H/8, W/8) for the conv variant,
/// (n_patches, d_model) token matrix for the attention variant.
Tensor image_feature_map(const Model& m, const Tensor& image);

}  // namespace vlp
