#include "vlprompt/pretrain.hpp"

#include <algorithm>
#include <cmath>

#include "vlprompt/ops.hpp"
#include "vlprompt/optim.hpp"

namespace vlp {

namespace op = ops;

PredictedSimilarity predicted_similarity(const Tensor& img_emb, const Tensor& txt_emb, const Tensor& tau) {
    if (img_emb.rank() != 2 || txt_emb.rank() != 2 || img_emb.dim(1) != txt_emb.dim(1)) {
        throw ShapeError("predicted_similarity: embeddings must share dimension d, got " +
                         shape_str(img_emb.shape()) + " and " + shape_str(txt_emb.shape()));
    }
    if (!(tau.item() > 0.0)) {
        throw DomainError("predicted_similarity: tau must be positive, got " + std::to_string(tau.item()));
    }
    PredictedSimilarity out;
    Tensor ni = op::l2_normalize_rows(img_emb);
    Tensor nt = op::l2_normalize_rows(txt_emb);
    out.s_hat = op::matmul(ni, op::transpose(nt));
    Tensor scaled = op::div(out.s_hat, tau);
    out.y_img2txt = op::softmax_rows(scaled);
    out.y_txt2img = op::transpose(op::softmax_rows(op::transpose(scaled)));
    return out;
}

Tensor semantic_loss(const Tensor& yhat_img2txt, const Tensor& yhat_txt2img, const Tensor& y_img2txt,
                     const Tensor& y_txt2img) {
    if (yhat_img2txt.shape() != y_img2txt.shape() || yhat_txt2img.shape() != y_txt2img.shape()) {
        throw ShapeError("semantic_loss: prediction/target shapes disagree");
    }
    const double n_img = static_cast<double>(yhat_img2txt.dim(0));
    const double n_txt = static_cast<double>(yhat_img2txt.dim(1));
    constexpr double kFloor = 1e-12;
    Tensor i2t = op::sum_all(op::mul(y_img2txt, op::log(op::add_const(yhat_img2txt, kFloor))));
    Tensor t2i = op::sum_all(op::mul(y_txt2img, op::log(op::add_const(yhat_txt2img, kFloor))));
    return op::scale(op::add(op::scale(i2t, 1.0 / n_img), op::scale(t2i, 1.0 / n_txt)), -0.5);
}

Tensor semantic_loss(const PredictedSimilarity& pred, const SimilarityTargets& target) {
    return semantic_loss(pred.y_img2txt, pred.y_txt2img, target.y_img2txt, target.y_txt2img);
}

Checkpoint model_checkpoint(const Model& m, const CheckpointMeta& meta) {
    Checkpoint ckpt;
    ckpt.meta = meta;
    ckpt.meta.extra["encoder_variant"] = m.cfg.variant;
    ckpt.tensors = m.named_params();
    return ckpt;
}

Model model_from_checkpoint(const Checkpoint& ckpt, const EncoderConfig& cfg, const Tokenizer& tokenizer) {
    Model m = make_model(cfg, tokenizer, 0);
    const auto it = ckpt.meta.extra.find("encoder_variant");
    if (it != ckpt.meta.extra.end() && it->second != cfg.variant) {
        throw ConfigError("checkpoint was trained with encoder variant '" + it->second +
                          "' but the config selects '" + cfg.variant + "'");
    }
    restore_tensors(ckpt, m.named_params());
    return m;
}

namespace {

struct SentenceItem {
    std::string text;
    LabelVector labels;
};

}  // namespace

double retrieval_probe(const Model& m, const Tokenizer& tok, const std::vector<Tensor>& images,
                       const std::vector<LabelVector>& img_labels, const std::vector<std::string>& sentences,
                       const std::vector<LabelVector>& txt_labels, int batch, std::uint64_t seed) {
    if (images.size() < static_cast<std::size_t>(batch) || sentences.size() < static_cast<std::size_t>(batch)) {
        throw DomainError("retrieval_probe: not enough held-out samples for a batch of " + std::to_string(batch));
    }
    Rng rng = Rng(seed).derive("retrieval");
    int hits = 0, total = 0;
    const int rounds = static_cast<int>(std::min(images.size(), sentences.size())) / batch;
    auto img_order = rng.sample_without_replacement(images.size(), images.size());
    auto txt_order = rng.sample_without_replacement(sentences.size(), sentences.size());
    for (int r = 0; r < rounds; ++r) {
        std::vector<Tensor> ie;
        std::vector<Tensor> te;
        std::vector<const LabelVector*> il, tl;
        for (int i = 0; i < batch; ++i) {
            const auto ii = img_order[static_cast<std::size_t>(r * batch + i)];
            const auto ti = txt_order[static_cast<std::size_t>(r * batch + i)];
            ie.push_back(encode_image(m, images[ii]));
            te.push_back(encode_text_tokens(m, tok.encode(sentences[ti])));
            il.push_back(&img_labels[ii]);
            tl.push_back(&txt_labels[ti]);
        }
        Tensor ie_m = op::stack_rows(ie);
        Tensor te_m = op::stack_rows(te);
        Tensor s_hat = op::matmul(op::l2_normalize_rows(ie_m), op::transpose(op::l2_normalize_rows(te_m)));
        for (int i = 0; i < batch; ++i) {
            double best_hat = -2.0;
            int arg_hat = 0;
            double best_gt = -2.0;
            for (int j = 0; j < batch; ++j) {
                const double v = s_hat.value_at(i * batch + j);
                if (v > best_hat) {
                    best_hat = v;
                    arg_hat = j;
                }
                best_gt = std::max(best_gt, il[static_cast<std::size_t>(i)]->cosine(*tl[static_cast<std::size_t>(j)]));
            }
            const double got = il[static_cast<std::size_t>(i)]->cosine(*tl[static_cast<std::size_t>(arg_hat)]);
            if (got >= best_gt - 1e-12) ++hits;
            ++total;
        }
    }
    return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

PretrainResult pretrain_run(const RunConfig& cfg, const std::filesystem::path& corpus_dir, std::ostream* log_csv) {
    const auto records = load_manifest(corpus_dir);

    std::vector<SampleRecord> pool;
    for (const auto& r : records) {
        if (r.split == "pretrain") pool.push_back(r);
    }
    if (static_cast<int>(pool.size()) < cfg.pretrain.batch_images + cfg.pretrain.retrieval_holdout) {
        throw DomainError("pretrain: pretrain split too small (" + std::to_string(pool.size()) + " samples)");
    }
    // hold out the tail for the retrieval probe
    const std::size_t holdout = static_cast<std::size_t>(cfg.pretrain.retrieval_holdout);
    const std::size_t train_n = pool.size() - holdout;

    // cache all images once; the corpus is desk-scale by construction
    std::vector<Tensor> images(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) images[i] = load_image(corpus_dir, pool[i]);

    // sentence pool: filtered sentences inherit their report's labels
    std::vector<SentenceItem> train_sentences, holdout_sentences;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        for (const auto& s : sentence_filter(pool[i].report)) {
            SentenceItem item{s, pool[i].labels};
            (i < train_n ? train_sentences : holdout_sentences).push_back(std::move(item));
        }
    }
    if (train_sentences.size() < static_cast<std::size_t>(cfg.pretrain.batch_texts)) {
        throw DomainError("pretrain: not enough sentences for a text batch");
    }

    PretrainResult result{.model = Model{}, .tokenizer = Tokenizer(cfg.encoder.max_seq_len), .log = {}, .epoch_mean_loss = {}, .retrieval_top1 = 0.0};
    Model model = make_model(cfg.encoder, result.tokenizer, cfg.seed);
    {  // tau init comes from the config
        const float lt = static_cast<float>(std::log(cfg.tau_init));
        model.log_tau.data_mut<float>()[0] = lt;
    }

    // Projection-bias calibration: start both towers with zero-mean
    // embeddings. The shared component of the raw features otherwise
    // dominates every embedding direction, and the cosine structure the
    // Eq. 4 targets ask for cannot emerge within a desk-scale schedule.
    {
        const std::size_t cal_n = std::min<std::size_t>(256, train_n);
        std::vector<double> mean_e(static_cast<std::size_t>(cfg.encoder.d), 0.0);
        for (std::size_t i = 0; i < cal_n; ++i) {
            const auto e = encode_image(model, images[i]).to_doubles();
            for (std::size_t j = 0; j < e.size(); ++j) mean_e[j] += e[j];
        }
        Tensor img_b = model.conv ? model.conv->proj_b : model.attn->proj_b;
        for (std::size_t j = 0; j < mean_e.size(); ++j) {
            img_b.data_mut<float>()[j] = static_cast<float>(-mean_e[j] / static_cast<double>(cal_n));
        }
        const std::size_t cal_t = std::min<std::size_t>(256, train_sentences.size());
        std::fill(mean_e.begin(), mean_e.end(), 0.0);
        for (std::size_t i = 0; i < cal_t; ++i) {
            const auto e = encode_text_tokens(model, result.tokenizer.encode(train_sentences[i].text)).to_doubles();
            for (std::size_t j = 0; j < e.size(); ++j) mean_e[j] += e[j];
        }
        for (std::size_t j = 0; j < mean_e.size(); ++j) {
            model.txt.proj_b.data_mut<float>()[j] = static_cast<float>(-mean_e[j] / static_cast<double>(cal_t));
        }
    }
    const NamedTensors params = model.named_params();

    const int steps_per_epoch = std::max<int>(1, static_cast<int>(train_n) / cfg.pretrain.batch_images);
    Adam adam({.lr = cfg.pretrain.lr,
               .weight_decay = cfg.pretrain.weight_decay,
               .warmup_frac = cfg.pretrain.warmup_frac,
               .total_steps = static_cast<std::int64_t>(steps_per_epoch) * cfg.pretrain.epochs});

    Rng run_rng = Rng(cfg.seed).derive("pretrain");
    if (log_csv) (*log_csv) << "epoch,step,loss,tau\n";

    for (int epoch = 0; epoch < cfg.pretrain.epochs; ++epoch) {
        double epoch_loss = 0;
        for (int step = 0; step < steps_per_epoch; ++step) {
            Rng step_rng = run_rng.derive(static_cast<std::uint64_t>(epoch)).derive(static_cast<std::uint64_t>(step));

            std::vector<Tensor> img_emb;
            std::vector<LabelVector> img_labels;
            {
                Rng pick = step_rng.derive("images");
                auto idx = pick.sample_without_replacement(train_n, static_cast<std::size_t>(cfg.pretrain.batch_images));
                int i = 0;
                for (const auto ii : idx) {
                    Tensor aug = augment(images[ii], step_rng.derive("aug").derive(static_cast<std::uint64_t>(i)).next_u64());
                    img_emb.push_back(encode_image(model, aug));
                    img_labels.push_back(pool[ii].labels);
                    ++i;
                }
            }
            std::vector<Tensor> txt_emb;
            std::vector<LabelVector> txt_labels;
            {
                Rng pick = step_rng.derive("texts");
                auto idx = pick.sample_without_replacement(train_sentences.size(),
                                                           static_cast<std::size_t>(cfg.pretrain.batch_texts));
                for (const auto ti : idx) {
                    txt_emb.push_back(encode_text_tokens(model, result.tokenizer.encode(train_sentences[ti].text)));
                    txt_labels.push_back(train_sentences[ti].labels);
                }
            }

            SimilarityTargets targets = gt_similarity(img_labels, txt_labels, Dtype::F32);
            PredictedSimilarity pred = predicted_similarity(op::stack_rows(img_emb), op::stack_rows(txt_emb),
                                                            model.tau());
            Tensor loss = semantic_loss(pred, targets);
            const double loss_v = loss.item();
            if (!std::isfinite(loss_v)) {
                throw DomainError("pretrain: non-finite loss at epoch " + std::to_string(epoch) + " step " +
                                  std::to_string(step));
            }
            for (const auto& [name, t] : params) {
                Tensor tt = t;
                tt.zero_grad();
            }
            loss.backward();
            adam.step(params);

            const double tau_v = model.tau().item();
            result.log.push_back({epoch, step, loss_v, tau_v});
            epoch_loss += loss_v;
            if (log_csv) {
                char line[96];
                std::snprintf(line, sizeof(line), "%d,%d,%.6f,%.6f\n", epoch, step, loss_v, tau_v);
                (*log_csv) << line;
            }
        }
        result.epoch_mean_loss.push_back(epoch_loss / steps_per_epoch);
    }

    if (holdout > 0) {
        std::vector<Tensor> ho_images(images.begin() + static_cast<std::ptrdiff_t>(train_n), images.end());
        std::vector<LabelVector> ho_labels;
        for (std::size_t i = train_n; i < pool.size(); ++i) ho_labels.push_back(pool[i].labels);
        std::vector<std::string> ho_sent;
        std::vector<LabelVector> ho_sent_labels;
        for (const auto& s : holdout_sentences) {
            ho_sent.push_back(s.text);
            ho_sent_labels.push_back(s.labels);
        }
        const int batch = 32;
        if (static_cast<int>(ho_images.size()) >= batch && static_cast<int>(ho_sent.size()) >= batch) {
            result.retrieval_top1 = retrieval_probe(model, result.tokenizer, ho_images, ho_labels, ho_sent,
                                                    ho_sent_labels, batch, cfg.seed);
        }
    }

    result.model = std::move(model);
    return result;
}

}  // namespace vlp
