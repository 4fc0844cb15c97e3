#include "vlprompt/encoders.hpp"

#include <cmath>

#include "vlprompt/ops.hpp"

namespace vlp {

namespace op = ops;

void EncoderConfig::validate() const {
    if (variant != "conv" && variant != "attention") {
        throw ConfigError("encoder config: variant must be 'conv' or 'attention', got '" + variant + "'");
    }
    if (d_model <= 0 || d <= 0 || layers <= 0 || heads <= 0) {
        throw ConfigError("encoder config: d_model, d, layers, heads must be positive");
    }
    if (d_model % heads != 0) throw ConfigError("encoder config: d_model must be divisible by heads");
    if (max_seq_len < 3) throw ConfigError("encoder config: max_seq_len must be at least 3");
    if (image_size % 8 != 0) throw ConfigError("encoder config: image_size must be divisible by 8");
    if (patch <= 0 || image_size % patch != 0) {
        throw ConfigError("encoder config: patch must divide image_size");
    }
    for (const int c : conv_channels) {
        if (c <= 0) throw ConfigError("encoder config: conv channels must be positive");
    }
}

namespace {

Tensor init_tensor(Shape shape, const std::string& name, std::uint64_t seed, double stddev, Dtype dt) {
    Rng rng = Rng(seed).derive("init/" + name);
    Tensor t = stddev > 0 ? Tensor::randn(std::move(shape), rng, stddev, dt, true)
                          : Tensor::zeros(std::move(shape), dt, true);
    t.set_name(name);
    return t;
}

Tensor init_const(Shape shape, const std::string& name, double value, Dtype dt) {
    Tensor t = Tensor::full(std::move(shape), value, dt, true);
    t.set_name(name);
    return t;
}

BlockParams make_block(const std::string& prefix, int d_model, std::uint64_t seed, Dtype dt) {
    const double w_std = 1.0 / std::sqrt(static_cast<double>(d_model));
    const int hidden = 4 * d_model;
    BlockParams b;
    b.ln1_g = init_const({d_model}, prefix + ".ln1.g", 1.0, dt);
    b.ln1_b = init_const({d_model}, prefix + ".ln1.b", 0.0, dt);
    b.wq = init_tensor({d_model, d_model}, prefix + ".attn.wq", seed, w_std, dt);
    b.bq = init_const({d_model}, prefix + ".attn.bq", 0.0, dt);
    b.wk = init_tensor({d_model, d_model}, prefix + ".attn.wk", seed, w_std, dt);
    b.bk = init_const({d_model}, prefix + ".attn.bk", 0.0, dt);
    b.wv = init_tensor({d_model, d_model}, prefix + ".attn.wv", seed, w_std, dt);
    b.bv = init_const({d_model}, prefix + ".attn.bv", 0.0, dt);
    b.wo = init_tensor({d_model, d_model}, prefix + ".attn.wo", seed, w_std, dt);
    b.bo = init_const({d_model}, prefix + ".attn.bo", 0.0, dt);
    b.ln2_g = init_const({d_model}, prefix + ".ln2.g", 1.0, dt);
    b.ln2_b = init_const({d_model}, prefix + ".ln2.b", 0.0, dt);
    b.mlp_w1 = init_tensor({d_model, hidden}, prefix + ".mlp.w1", seed, w_std, dt);
    b.mlp_b1 = init_const({hidden}, prefix + ".mlp.b1", 0.0, dt);
    b.mlp_w2 = init_tensor({hidden, d_model}, prefix + ".mlp.w2", seed, 1.0 / std::sqrt(static_cast<double>(hidden)), dt);
    b.mlp_b2 = init_const({d_model}, prefix + ".mlp.b2", 0.0, dt);
    return b;
}

void block_params(const std::string& prefix, const BlockParams& b, NamedTensors& out) {
    out.emplace_back(prefix + ".ln1.g", b.ln1_g);
    out.emplace_back(prefix + ".ln1.b", b.ln1_b);
    out.emplace_back(prefix + ".attn.wq", b.wq);
    out.emplace_back(prefix + ".attn.bq", b.bq);
    out.emplace_back(prefix + ".attn.wk", b.wk);
    out.emplace_back(prefix + ".attn.bk", b.bk);
    out.emplace_back(prefix + ".attn.wv", b.wv);
    out.emplace_back(prefix + ".attn.bv", b.bv);
    out.emplace_back(prefix + ".attn.wo", b.wo);
    out.emplace_back(prefix + ".attn.bo", b.bo);
    out.emplace_back(prefix + ".ln2.g", b.ln2_g);
    out.emplace_back(prefix + ".ln2.b", b.ln2_b);
    out.emplace_back(prefix + ".mlp.w1", b.mlp_w1);
    out.emplace_back(prefix + ".mlp.b1", b.mlp_b1);
    out.emplace_back(prefix + ".mlp.w2", b.mlp_w2);
    out.emplace_back(prefix + ".mlp.b2", b.mlp_b2);
}

Tensor affine_rows(const Tensor& x, const Tensor& g, const Tensor& b) {
    return op::add(op::mul(x, g), b);
}

}  // namespace

Model make_model(const EncoderConfig& cfg, const Tokenizer& tokenizer, std::uint64_t seed, Dtype dt) {
    cfg.validate();
    Model m;
    m.cfg = cfg;

    m.txt.tok_emb = init_tensor({tokenizer.vocab_size(), cfg.d_model}, "txt.tok_emb", seed, 0.02, dt);
    m.txt.pos_emb = init_tensor({cfg.max_seq_len, cfg.d_model}, "txt.pos_emb", seed, 0.01, dt);
    for (int i = 0; i < cfg.layers; ++i) {
        m.txt.blocks.push_back(make_block("txt.blk" + std::to_string(i), cfg.d_model, seed, dt));
    }
    m.txt.lnf_g = init_const({cfg.d_model}, "txt.lnf.g", 1.0, dt);
    m.txt.lnf_b = init_const({cfg.d_model}, "txt.lnf.b", 0.0, dt);
    m.txt.proj = init_tensor({cfg.d_model, cfg.d}, "txt.proj", seed, 1.0 / std::sqrt(static_cast<double>(cfg.d_model)), dt);
    m.txt.proj_b = init_const({cfg.d}, "txt.proj.b", 0.0, dt);

    if (cfg.variant == "conv") {
        ConvEncoderParams c;
        const auto [c1, c2, c3] = cfg.conv_channels;
        auto conv_std = [](int cin) { return std::sqrt(2.0 / (9.0 * static_cast<double>(cin))); };
        c.w1 = init_tensor({c1, 1, 3, 3}, "img.conv1.w", seed, conv_std(1), dt);
        c.b1 = init_const({c1}, "img.conv1.b", 0.0, dt);
        c.w2 = init_tensor({c2, c1, 3, 3}, "img.conv2.w", seed, conv_std(c1), dt);
        c.b2 = init_const({c2}, "img.conv2.b", 0.0, dt);
        c.w3 = init_tensor({c3, c2, 3, 3}, "img.conv3.w", seed, conv_std(c2), dt);
        c.b3 = init_const({c3}, "img.conv3.b", 0.0, dt);
        c.lnf_g = init_const({c3}, "img.lnf.g", 1.0, dt);
        c.lnf_b = init_const({c3}, "img.lnf.b", 0.0, dt);
        c.proj = init_tensor({c3, cfg.d}, "img.proj", seed, 1.0 / std::sqrt(static_cast<double>(c3)), dt);
        c.proj_b = init_const({cfg.d}, "img.proj.b", 0.0, dt);
        m.conv = std::move(c);
    } else {
        AttnEncoderParams a;
        const int pp = cfg.patch * cfg.patch;
        const int np = (cfg.image_size / cfg.patch) * (cfg.image_size / cfg.patch);
        a.patch_w = init_tensor({pp, cfg.d_model}, "img.patch.w", seed, 1.0 / std::sqrt(static_cast<double>(pp)), dt);
        a.patch_b = init_const({cfg.d_model}, "img.patch.b", 0.0, dt);
        a.pos_emb = init_tensor({np, cfg.d_model}, "img.pos_emb", seed, 0.01, dt);
        for (int i = 0; i < cfg.layers; ++i) {
            a.blocks.push_back(make_block("img.blk" + std::to_string(i), cfg.d_model, seed, dt));
        }
        a.lnf_g = init_const({cfg.d_model}, "img.lnf.g", 1.0, dt);
        a.lnf_b = init_const({cfg.d_model}, "img.lnf.b", 0.0, dt);
        a.proj = init_tensor({cfg.d_model, cfg.d}, "img.proj", seed, 1.0 / std::sqrt(static_cast<double>(cfg.d_model)), dt);
        a.proj_b = init_const({cfg.d}, "img.proj.b", 0.0, dt);
        m.attn = std::move(a);
    }

    m.log_tau = init_const({1}, "tau.log", std::log(0.07), dt);
    return m;
}

NamedTensors Model::named_params() const {
    NamedTensors out;
    out.emplace_back("txt.tok_emb", txt.tok_emb);
    out.emplace_back("txt.pos_emb", txt.pos_emb);
    for (std::size_t i = 0; i < txt.blocks.size(); ++i) {
        block_params("txt.blk" + std::to_string(i), txt.blocks[i], out);
    }
    out.emplace_back("txt.lnf.g", txt.lnf_g);
    out.emplace_back("txt.lnf.b", txt.lnf_b);
    out.emplace_back("txt.proj", txt.proj);
    out.emplace_back("txt.proj.b", txt.proj_b);
    if (conv) {
        out.emplace_back("img.conv1.w", conv->w1);
        out.emplace_back("img.conv1.b", conv->b1);
        out.emplace_back("img.conv2.w", conv->w2);
        out.emplace_back("img.conv2.b", conv->b2);
        out.emplace_back("img.conv3.w", conv->w3);
        out.emplace_back("img.conv3.b", conv->b3);
        out.emplace_back("img.lnf.g", conv->lnf_g);
        out.emplace_back("img.lnf.b", conv->lnf_b);
        out.emplace_back("img.proj", conv->proj);
        out.emplace_back("img.proj.b", conv->proj_b);
    }
    if (attn) {
        out.emplace_back("img.patch.w", attn->patch_w);
        out.emplace_back("img.patch.b", attn->patch_b);
        out.emplace_back("img.pos_emb", attn->pos_emb);
        for (std::size_t i = 0; i < attn->blocks.size(); ++i) {
            block_params("img.blk" + std::to_string(i), attn->blocks[i], out);
        }
        out.emplace_back("img.lnf.g", attn->lnf_g);
        out.emplace_back("img.lnf.b", attn->lnf_b);
        out.emplace_back("img.proj", attn->proj);
        out.emplace_back("img.proj.b", attn->proj_b);
    }
    out.emplace_back("tau.log", log_tau);
    return out;
}

void Model::set_requires_grad_all(bool rg) {
    for (auto& [name, t] : named_params()) {
        Tensor tt = t;
        tt.set_requires_grad(rg);
    }
}

Tensor Model::tau() const { return op::exp(log_tau); }

Tensor transformer_block(const BlockParams& p, const Tensor& x, int heads) {
    const std::int64_t s = x.dim(0), dm = x.dim(1);
    const std::int64_t dh = dm / heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor y = affine_rows(op::layer_norm_rows(x), p.ln1_g, p.ln1_b);
    Tensor q = op::add(op::matmul(y, p.wq), p.bq);
    Tensor k = op::add(op::matmul(y, p.wk), p.bk);
    Tensor v = op::add(op::matmul(y, p.wv), p.bv);

    std::vector<Tensor> head_ctx;
    head_ctx.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        const std::int64_t c0 = h * dh, c1 = (h + 1) * dh;
        Tensor qh = op::slice_cols(q, c0, c1);
        Tensor kh = op::slice_cols(k, c0, c1);
        Tensor vh = op::slice_cols(v, c0, c1);
        Tensor scores = op::scale(op::matmul(qh, op::transpose(kh)), att_scale);  // (s, s)
        Tensor probs = op::softmax_rows(scores);
        head_ctx.push_back(op::matmul(probs, vh));  // (s, dh)
    }
    Tensor ctx = heads == 1 ? head_ctx[0] : op::concat(head_ctx, 1);
    Tensor attn_out = op::add(op::matmul(ctx, p.wo), p.bo);
    Tensor h1 = op::add(x, attn_out);

    Tensor z = affine_rows(op::layer_norm_rows(h1), p.ln2_g, p.ln2_b);
    Tensor mlp = op::add(op::matmul(op::relu(op::add(op::matmul(z, p.mlp_w1), p.mlp_b1)), p.mlp_w2), p.mlp_b2);
    (void)s;
    return op::add(h1, mlp);
}

Tensor encode_text_embeddings(const Model& m, const Tensor& seq) {
    if (seq.rank() != 2 || seq.dim(1) != m.cfg.d_model) {
        throw ShapeError("encode_text_embeddings: sequence must be (S, d_model=" + std::to_string(m.cfg.d_model) +
                         "), got " + shape_str(seq.shape()));
    }
    const std::int64_t s = seq.dim(0);
    if (s > m.cfg.max_seq_len) {
        throw ShapeError("encode_text_embeddings: sequence length " + std::to_string(s) + " exceeds max " +
                         std::to_string(m.cfg.max_seq_len));
    }
    std::vector<std::int64_t> pos_ids(static_cast<std::size_t>(s));
    for (std::int64_t i = 0; i < s; ++i) pos_ids[static_cast<std::size_t>(i)] = i;
    Tensor x = op::add(seq, op::embedding_lookup(m.txt.pos_emb, pos_ids));
    for (const auto& blk : m.txt.blocks) x = transformer_block(blk, x, m.cfg.heads);
    x = affine_rows(op::layer_norm_rows(x), m.txt.lnf_g, m.txt.lnf_b);
    Tensor last = op::reshape(op::row(x, s - 1), {1, m.cfg.d_model});
    return op::reshape(op::add(op::matmul(last, m.txt.proj), m.txt.proj_b), {m.cfg.d});
}

Tensor encode_text_tokens(const Model& m, const std::vector<std::int64_t>& ids) {
    // keep ids up to and including EOS (id 3); trailing PAD carries no signal
    std::vector<std::int64_t> trimmed;
    for (const auto id : ids) {
        trimmed.push_back(id);
        if (id == 3) break;
    }
    if (trimmed.empty()) throw ShapeError("encode_text_tokens: empty id sequence");
    return encode_text_embeddings(m, op::embedding_lookup(m.txt.tok_emb, trimmed));
}

namespace {

Tensor image_to_chw(const Model& m, const Tensor& image) {
    if (image.rank() != 3 || image.dim(2) != 1 || image.dim(0) != m.cfg.image_size ||
        image.dim(1) != m.cfg.image_size) {
        throw ShapeError("encode_image: expected (" + std::to_string(m.cfg.image_size) + ", " +
                         std::to_string(m.cfg.image_size) + ", 1) image, got " + shape_str(image.shape()));
    }
    Tensor chw = op::reshape(image, {1, image.dim(0), image.dim(1)});
    // per-image mean centering; the shared background level carries no class
    // information but would otherwise dominate the embedding direction
    return op::sub(chw, op::mean_all(chw));
}

Tensor conv_features(const Model& m, const Tensor& image) {
    Tensor x = image_to_chw(m, image);
    x = op::avgpool2(op::relu(op::conv2d(x, m.conv->w1, m.conv->b1)));
    x = op::avgpool2(op::relu(op::conv2d(x, m.conv->w2, m.conv->b2)));
    x = op::avgpool2(op::relu(op::conv2d(x, m.conv->w3, m.conv->b3)));
    return x;  // (c3, H/8, W/8)
}

Tensor attn_tokens(const Model& m, const Tensor& image) {
    Tensor chw = image_to_chw(m, image);
    Tensor patches = op::extract_patches(chw, m.cfg.patch);  // (np, p*p)
    Tensor x = op::add(op::matmul(patches, m.attn->patch_w), m.attn->patch_b);
    std::vector<std::int64_t> pos_ids(static_cast<std::size_t>(x.dim(0)));
    for (std::int64_t i = 0; i < x.dim(0); ++i) pos_ids[static_cast<std::size_t>(i)] = i;
    x = op::add(x, op::embedding_lookup(m.attn->pos_emb, pos_ids));
    for (const auto& blk : m.attn->blocks) x = transformer_block(blk, x, m.cfg.heads);
    return affine_rows(op::layer_norm_rows(x), m.attn->lnf_g, m.attn->lnf_b);  // (np, d_model)
}

}  // namespace

Tensor encode_image(const Model& m, const Tensor& image) {
    if (m.conv) {
        Tensor feat = conv_features(m, image);
        const std::int64_t c = feat.dim(0), hw = feat.dim(1) * feat.dim(2);
        Tensor pooled = op::reshape(op::mean_axis(op::reshape(feat, {c, hw}), 1), {1, c});
        // normalize pooled features so the shared background component does
        // not dominate the embedding direction
        Tensor normed = affine_rows(op::layer_norm_rows(pooled), m.conv->lnf_g, m.conv->lnf_b);
        return op::reshape(op::add(op::matmul(normed, m.conv->proj), m.conv->proj_b), {m.cfg.d});
    }
    Tensor tokens = attn_tokens(m, image);
    Tensor pooled = op::mean_axis(tokens, 0);  // (d_model,)
    return op::reshape(op::add(op::matmul(op::reshape(pooled, {1, m.cfg.d_model}), m.attn->proj), m.attn->proj_b),
                       {m.cfg.d});
}

Tensor image_feature_map(const Model& m, const Tensor& image) {
    if (m.conv) return conv_features(m, image);
    return attn_tokens(m, image);
}

}  // namespace vlp
