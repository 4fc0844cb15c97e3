#include "vlprompt/introspect.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "vlprompt/ops.hpp"

namespace vlp {

namespace op = ops;

std::vector<WordNeighbor> nearest_words(const Tensor& query, const Tensor& token_embeddings,
                                        const Tokenizer& tokenizer, int k) {
    if (k <= 0) throw DomainError("nearest_words: k must be positive");
    if (token_embeddings.rank() != 2 || token_embeddings.dim(0) == 0) {
        throw ShapeError("nearest_words: embedding table must be a non-empty (V, d) matrix");
    }
    if (query.rank() != 1 || query.dim(0) != token_embeddings.dim(1)) {
        throw ShapeError("nearest_words: query dimension " + shape_str(query.shape()) +
                         " does not match table " + shape_str(token_embeddings.shape()));
    }
    const std::int64_t v = token_embeddings.dim(0), d = token_embeddings.dim(1);
    if (k > static_cast<int>(v)) throw DomainError("nearest_words: k exceeds the vocabulary size");

    struct Entry {
        double dist;
        std::int64_t id;
    };
    std::vector<Entry> entries;
    entries.reserve(static_cast<std::size_t>(v));
    for (std::int64_t id = 0; id < v; ++id) {
        if (tokenizer.is_special(id)) continue;
        double ss = 0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double diff = token_embeddings.value_at(id * d + j) - query.value_at(j);
            ss += diff * diff;
        }
        entries.push_back({std::sqrt(ss), id});
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.dist != b.dist) return a.dist < b.dist;
        return a.id < b.id;  // ties: lower token id first
    });
    std::vector<WordNeighbor> out;
    for (int i = 0; i < k && i < static_cast<int>(entries.size()); ++i) {
        out.push_back({tokenizer.token(entries[static_cast<std::size_t>(i)].id),
                       entries[static_cast<std::size_t>(i)].dist, i + 1});
    }
    return out;
}

Tensor context_similarity_matrix(const Model& model, const PromptGeneratorParams& params,
                                 const std::vector<Tensor>& images) {
    if (images.size() < 2) throw DomainError("context_similarity_matrix: need at least 2 images");
    const std::int64_t n = static_cast<std::int64_t>(images.size());
    std::vector<Tensor> flat;
    flat.reserve(images.size());
    for (const auto& img : images) {
        Tensor ie = encode_image(model, img).clone_detached();
        Tensor pi = metanet_forward(params, ie);
        Tensor conditioned = op::add(params.ctx, pi);  // (m, d_model)
        flat.push_back(op::reshape(conditioned, {params.ctx.dim(0) * params.ctx.dim(1)}));
    }
    Tensor stacked = op::l2_normalize_rows(op::stack_rows(flat));
    Tensor sim = op::matmul(stacked, op::transpose(stacked));
    return Tensor::from_doubles({n, n}, sim.to_doubles(), sim.dtype());
}

namespace {

std::int64_t affine_flops(std::int64_t rows, std::int64_t in, std::int64_t out, bool bias) {
    return 2 * rows * in * out + (bias ? rows * out : 0);
}

/// One transformer block on an S-row sequence. Activations and norms are
/// free; residual adds count one per element.
std::int64_t block_flops(std::int64_t s, std::int64_t dm) {
    std::int64_t f = 0;
    f += 3 * affine_flops(s, dm, dm, true);  // q, k, v
    f += 2 * (2 * s * s * dm);               // scores and context, summed over heads
    f += affine_flops(s, dm, dm, true);      // output projection
    f += affine_flops(s, dm, 4 * dm, true);  // mlp in
    f += affine_flops(s, 4 * dm, dm, true);  // mlp out
    f += 2 * s * dm;                         // residual adds
    return f;
}

std::int64_t text_encoder_flops(const EncoderConfig& enc, std::int64_t s) {
    std::int64_t f = s * enc.d_model;  // positional add
    for (int i = 0; i < enc.layers; ++i) f += block_flops(s, enc.d_model);
    f += affine_flops(1, enc.d_model, enc.d, false);  // final projection
    return f;
}

std::int64_t image_encoder_flops(const EncoderConfig& enc) {
    if (enc.variant == "conv") {
        std::int64_t f = 0;
        std::int64_t h = enc.image_size, w = enc.image_size;
        int cin = 1;
        for (const int cout : enc.conv_channels) {
            f += 2 * static_cast<std::int64_t>(cin) * 9 * cout * h * w + static_cast<std::int64_t>(cout) * h * w;
            h /= 2;
            w /= 2;
            cin = cout;
        }
        f += affine_flops(1, enc.conv_channels[2], enc.d, false);
        return f;
    }
    const std::int64_t np = static_cast<std::int64_t>(enc.image_size / enc.patch) * (enc.image_size / enc.patch);
    std::int64_t f = affine_flops(np, static_cast<std::int64_t>(enc.patch) * enc.patch, enc.d_model, true);
    f += np * enc.d_model;  // positional add
    for (int i = 0; i < enc.layers; ++i) f += block_flops(np, enc.d_model);
    f += affine_flops(1, enc.d_model, enc.d, false);
    return f;
}

std::int64_t prompt_generator_flops(const EncoderConfig& enc, const PromptSchedule& prompt) {
    const std::int64_t hidden = enc.d / prompt.reduction;
    std::int64_t f = affine_flops(1, enc.d, hidden, true);        // meta-net first map
    f += affine_flops(1, hidden, enc.d_model, true);              // meta-net second map
    f += static_cast<std::int64_t>(prompt.m) * enc.d_model;       // pi added to every context slot
    return f;
}

}  // namespace

FootprintReport count_footprint(const Checkpoint& ckpt, const EncoderConfig& enc, const PromptSchedule& prompt) {
    FootprintReport rep;
    std::int64_t prompt_params = 0, rest_params = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        if (name.rfind("prompt.", 0) == 0) {
            prompt_params += t.numel();
        } else {
            rest_params += t.numel();
        }
    }
    const std::int64_t pg_flops = prompt_generator_flops(enc, prompt);
    // one forward = one image and one (m + 1)-slot prompt through the text side
    const std::int64_t rest_flops = image_encoder_flops(enc) + text_encoder_flops(enc, prompt.m + 1);
    const std::int64_t whole_params = prompt_params + rest_params;
    const std::int64_t whole_flops = pg_flops + rest_flops;

    rep.components.push_back({"prompt_generator", prompt_params, pg_flops,
                              whole_params ? static_cast<double>(prompt_params) / whole_params : 0.0});
    rep.components.push_back({"model_without_prompt_generator", rest_params, rest_flops,
                              whole_params ? static_cast<double>(rest_params) / whole_params : 0.0});
    rep.components.push_back({"whole_model", whole_params, whole_flops, 1.0});
    rep.reference_note =
        "published reference scale: prompt generator 86,016 parameters / 86,112 FLOPs "
        "(0.0480% of 179,275,900 parameters, 0.0007% of 12,101,549,664 FLOPs); cited, not recomputed";
    return rep;
}

Tensor activation_map(const Model& model, const Tensor& image) {
    const std::int64_t h = image.dim(0), w = image.dim(1);
    Tensor feat = image_feature_map(model, image);

    std::vector<double> grid;
    std::int64_t gh = 0, gw = 0;
    if (model.conv) {
        const std::int64_t c = feat.dim(0);
        gh = feat.dim(1);
        gw = feat.dim(2);
        grid.assign(static_cast<std::size_t>(gh * gw), 0.0);
        for (std::int64_t ci = 0; ci < c; ++ci) {
            for (std::int64_t i = 0; i < gh * gw; ++i) {
                grid[static_cast<std::size_t>(i)] += feat.value_at(ci * gh * gw + i);
            }
        }
        for (auto& v : grid) v /= static_cast<double>(c);
    } else {
        // attention variant: L2 norm per patch token over the patch grid
        const std::int64_t np = feat.dim(0), dm = feat.dim(1);
        gh = gw = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(np))));
        grid.assign(static_cast<std::size_t>(np), 0.0);
        for (std::int64_t t = 0; t < np; ++t) {
            double ss = 0;
            for (std::int64_t j = 0; j < dm; ++j) {
                const double v = feat.value_at(t * dm + j);
                ss += v * v;
            }
            grid[static_cast<std::size_t>(t)] = std::sqrt(ss);
        }
    }

    double lo = grid[0], hi = grid[0];
    for (const double v : grid) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi - lo > 0) {
        for (auto& v : grid) v = (v - lo) / (hi - lo);
    } else {
        for (auto& v : grid) v = 0.0;  // constant maps normalize to all-zero
    }

    // nearest-neighbor upsample to the image resolution
    std::vector<double> up(static_cast<std::size_t>(h * w));
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            const std::int64_t gy = std::min(gh - 1, y * gh / h);
            const std::int64_t gx = std::min(gw - 1, x * gw / w);
            up[static_cast<std::size_t>(y * w + x)] = grid[static_cast<std::size_t>(gy * gw + gx)];
        }
    }
    return Tensor::from_doubles({h, w}, up);
}

std::string neighbors_csv(const std::vector<std::vector<WordNeighbor>>& per_slot) {
    std::string csv = "slot,rank,token,distance\n";
    for (std::size_t slot = 0; slot < per_slot.size(); ++slot) {
        for (const auto& n : per_slot[slot]) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.6f", n.distance);
            csv += std::to_string(slot) + "," + std::to_string(n.rank) + "," + n.token + "," + buf + "\n";
        }
    }
    return csv;
}

std::string footprint_csv(const FootprintReport& report) {
    std::string csv = "component,parameters,flops,fraction_of_whole\n";
    for (const auto& c : report.components) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.9f", c.fraction);
        csv += c.component + "," + std::to_string(c.parameters) + "," + std::to_string(c.flops) + "," + buf + "\n";
    }
    csv += "# " + report.reference_note + "\n";
    return csv;
}

std::string matrix_csv(const Tensor& matrix) {
    std::string csv;
    const std::int64_t r = matrix.dim(0), c = matrix.dim(1);
    for (std::int64_t i = 0; i < r; ++i) {
        for (std::int64_t j = 0; j < c; ++j) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.6f", matrix.value_at(i * c + j));
            csv += buf;
            csv += (j + 1 == c) ? '\n' : ',';
        }
    }
    return csv;
}

void write_pgm(const Tensor& heatmap, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    const std::int64_t h = heatmap.dim(0), w = heatmap.dim(1);
    os << "P5\n" << w << " " << h << "\n255\n";
    for (std::int64_t i = 0; i < h * w; ++i) {
        const double v = std::clamp(heatmap.value_at(i), 0.0, 1.0);
        const unsigned char byte = static_cast<unsigned char>(std::lround(v * 255.0));
        os.write(reinterpret_cast<const char*>(&byte), 1);
    }
}

}  // namespace vlp
