#include "vlprompt/promptgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "vlprompt/ops.hpp"
#include "vlprompt/optim.hpp"
#include "vlprompt/pretrain.hpp"

namespace vlp {

namespace op = ops;

TrainableMask TrainableMask::from_string(const std::string& s) {
    if (s == "full") return {.metanet = true, .context = true};
    if (s == "class") return {.metanet = false, .context = false};
    if (s == "context_class") return {.metanet = false, .context = true};
    if (s == "metanet_class") return {.metanet = true, .context = false};
    throw ConfigError("mask must be one of full|class|context_class|metanet_class, got '" + s + "'");
}

std::string TrainableMask::to_string() const {
    if (metanet && context) return "full";
    if (metanet) return "metanet_class";
    if (context) return "context_class";
    return "class";
}

namespace {

std::string cls_name(int k) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "prompt.cls.%02d", k);
    return buf;
}

}  // namespace

NamedTensors PromptGeneratorParams::named_params() const {
    NamedTensors out;
    out.emplace_back("prompt.ctx", ctx);
    for (std::size_t k = 0; k < cls.size(); ++k) out.emplace_back(cls_name(static_cast<int>(k)), cls[k]);
    out.emplace_back("prompt.meta.w1", meta_w1);
    out.emplace_back("prompt.meta.b1", meta_b1);
    out.emplace_back("prompt.meta.w2", meta_w2);
    out.emplace_back("prompt.meta.b2", meta_b2);
    return out;
}

PromptGeneratorParams PromptGeneratorParams::clone() const {
    PromptGeneratorParams p;
    p.m = m;
    p.reduction = reduction;
    p.metanet_enabled = metanet_enabled;
    p.ctx = ctx.clone_detached().set_requires_grad(ctx.requires_grad());
    for (const auto& c : cls) {
        p.cls.push_back(c.clone_detached().set_requires_grad(c.requires_grad()));
    }
    p.meta_w1 = meta_w1.clone_detached().set_requires_grad(meta_w1.requires_grad());
    p.meta_b1 = meta_b1.clone_detached().set_requires_grad(meta_b1.requires_grad());
    p.meta_w2 = meta_w2.clone_detached().set_requires_grad(meta_w2.requires_grad());
    p.meta_b2 = meta_b2.clone_detached().set_requires_grad(meta_b2.requires_grad());
    return p;
}

void PromptGeneratorParams::set_requires_grad(const TrainableMask& mask, const std::vector<int>& trainable_classes) {
    ctx.set_requires_grad(mask.context);
    meta_w1.set_requires_grad(mask.metanet && metanet_enabled);
    meta_b1.set_requires_grad(mask.metanet && metanet_enabled);
    meta_w2.set_requires_grad(mask.metanet && metanet_enabled);
    meta_b2.set_requires_grad(mask.metanet && metanet_enabled);
    for (auto& c : cls) c.set_requires_grad(false);
    for (const int k : trainable_classes) {
        cls[static_cast<std::size_t>(k)].set_requires_grad(true);
    }
}

PromptGeneratorParams make_prompt_generator(const PromptSchedule& schedule, const EncoderConfig& enc,
                                            int num_classes, std::uint64_t seed, Dtype dt) {
    if (schedule.m < 1) throw ConfigError("prompt generator: m must be >= 1");
    if (enc.d % schedule.reduction != 0) {
        throw ConfigError("prompt generator: reduction must divide d");
    }
    const int hidden = enc.d / schedule.reduction;
    PromptGeneratorParams p;
    p.m = schedule.m;
    p.reduction = schedule.reduction;
    auto init = [&](Shape shape, const std::string& name, double stddev) {
        Rng rng = Rng(seed).derive("init/" + name);
        Tensor t = Tensor::randn(std::move(shape), rng, stddev, dt, true);
        t.set_name(name);
        return t;
    };
    // contexts are "randomly initialized": zero-mean Gaussian, sigma 0.02
    p.ctx = init({schedule.m, enc.d_model}, "prompt.ctx", 0.02);
    for (int k = 0; k < num_classes; ++k) p.cls.push_back(init({enc.d_model}, cls_name(k), 0.02));
    p.meta_w1 = init({enc.d, hidden}, "prompt.meta.w1", 1.0 / std::sqrt(static_cast<double>(enc.d)));
    p.meta_b1 = Tensor::zeros({hidden}, dt, true).set_name("prompt.meta.b1");
    p.meta_w2 = init({hidden, enc.d_model}, "prompt.meta.w2", 1.0 / std::sqrt(static_cast<double>(hidden)));
    p.meta_b2 = Tensor::zeros({enc.d_model}, dt, true).set_name("prompt.meta.b2");
    return p;
}

PromptGeneratorParams make_prompt_generator_name_init(const PromptSchedule& schedule, const EncoderConfig& enc,
                                                      const ObservationVocabulary& vocab, const Tokenizer& tokenizer,
                                                      const Tensor& token_embeddings, std::uint64_t seed, Dtype dt) {
    PromptGeneratorParams p = make_prompt_generator(schedule, enc, vocab.size(), seed, dt);
    std::vector<int> all_classes;
    for (int k = 0; k < vocab.size(); ++k) all_classes.push_back(k);
    zero_shot_setup(p, all_classes, vocab, tokenizer, token_embeddings);
    return p;
}

Tensor metanet_forward(const PromptGeneratorParams& p, const Tensor& image_embedding) {
    if (image_embedding.rank() != 1 || image_embedding.dim(0) != p.meta_w1.dim(0)) {
        throw ShapeError("metanet_forward: expected image embedding of dimension " + std::to_string(p.meta_w1.dim(0)) +
                         ", got " + shape_str(image_embedding.shape()));
    }
    if (!p.metanet_enabled) {
        return Tensor::zeros({p.meta_w2.dim(1)}, image_embedding.dtype());
    }
    Tensor x = op::reshape(image_embedding, {1, image_embedding.dim(0)});
    Tensor h = op::relu(op::add(op::matmul(x, p.meta_w1), p.meta_b1));
    Tensor out = op::add(op::matmul(h, p.meta_w2), p.meta_b2);
    return op::reshape(out, {p.meta_w2.dim(1)});
}

Tensor build_prompt(const PromptGeneratorParams& p, const Tensor& image_embedding, int class_id) {
    if (class_id < 0 || class_id >= static_cast<int>(p.cls.size())) {
        throw DomainError("build_prompt: unknown class " + std::to_string(class_id));
    }
    Tensor pi = metanet_forward(p, image_embedding);
    Tensor conditioned = op::add(p.ctx, pi);  // broadcast pi over the m context rows
    Tensor class_row = op::reshape(p.cls[static_cast<std::size_t>(class_id)], {1, p.ctx.dim(1)});
    return op::concat({conditioned, class_row}, 0);  // class slot last
}

Tensor classify_probs(const Model& model, const PromptGeneratorParams& p, const Tensor& image_embedding,
                      const std::vector<int>& class_ids, const Tensor& tau) {
    if (class_ids.empty()) throw DomainError("classify: empty class set");
    Tensor img_row = op::l2_normalize_rows(op::reshape(image_embedding, {1, image_embedding.dim(0)}));
    std::vector<Tensor> sims;
    sims.reserve(class_ids.size());
    for (const int k : class_ids) {
        Tensor text_emb = encode_text_embeddings(model, build_prompt(p, image_embedding, k));
        Tensor txt_row = op::l2_normalize_rows(op::reshape(text_emb, {1, text_emb.dim(0)}));
        sims.push_back(op::reshape(op::matmul(img_row, op::transpose(txt_row)), {1}));
    }
    Tensor logits = op::reshape(op::concat(sims, 0), {1, static_cast<std::int64_t>(sims.size())});
    return op::reshape(op::softmax_rows(logits, tau), {static_cast<std::int64_t>(sims.size())});
}

Classification classify(const Model& model, const PromptGeneratorParams& p, const Tensor& image,
                        const std::vector<int>& class_ids) {
    Tensor ie = encode_image(model, image);
    Tensor probs = classify_probs(model, p, ie, class_ids, model.tau());
    Classification out;
    out.probs = probs.to_doubles();
    std::size_t best = 0;
    for (std::size_t i = 1; i < out.probs.size(); ++i) {
        if (out.probs[i] > out.probs[best]) best = i;
    }
    out.predicted_class = class_ids[best];
    return out;
}

namespace {

/// Shared mini-batch CE trainer over a fixed class set with precomputed
/// image embeddings. Gradients flow only into params tensors that have
/// requires_grad set; encoders receive none because the image embeddings are
/// detached constants and text-encoder tensors are frozen by the caller.
PromptTrainLog run_ce_training(const Model& model, PromptGeneratorParams& params,
                               const std::vector<int>& class_set, const std::vector<Tensor>& image_embeddings,
                               const std::vector<int>& targets, double lr, double weight_decay, int epochs,
                               int batch, std::uint64_t seed, const char* stage) {
    const std::size_t n = image_embeddings.size();
    if (n == 0) throw DomainError(std::string(stage) + ": empty training set");
    NamedTensors trainable;
    for (const auto& [name, t] : params.named_params()) {
        if (t.requires_grad()) trainable.emplace_back(name, t);
    }
    if (trainable.empty()) throw DomainError(std::string(stage) + ": mask leaves nothing trainable");

    Tensor tau = model.tau().clone_detached();  // frozen after pretraining

    const int steps_per_epoch = std::max<int>(1, static_cast<int>(n) / batch);
    Adam adam({.lr = lr, .weight_decay = weight_decay});
    Rng rng = Rng(seed).derive(stage);

    PromptTrainLog log;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        double loss_sum = 0;
        int correct = 0, seen = 0;
        Rng erng = rng.derive(static_cast<std::uint64_t>(epoch));
        auto order = erng.sample_without_replacement(n, n);
        for (int step = 0; step < steps_per_epoch; ++step) {
            const std::size_t lo = static_cast<std::size_t>(step) * static_cast<std::size_t>(batch);
            const std::size_t hi = std::min(n, lo + static_cast<std::size_t>(batch));
            std::vector<Tensor> losses;
            for (std::size_t i = lo; i < hi; ++i) {
                const std::size_t s = order[i];
                Tensor probs = classify_probs(model, params, image_embeddings[s], class_set, tau);
                const int target = targets[s];
                std::vector<double> oh(static_cast<std::size_t>(probs.dim(0)), 0.0);
                oh[static_cast<std::size_t>(target)] = 1.0;
                Tensor onehot = Tensor::from_doubles({probs.dim(0)}, oh, probs.dtype());
                Tensor p_target = op::dot(probs, onehot);
                losses.push_back(op::neg(op::log(op::add_const(p_target, 1e-12))));

                // batch accuracy from the same forward pass
                const auto pv = probs.to_doubles();
                std::size_t best = 0;
                for (std::size_t c = 1; c < pv.size(); ++c) {
                    if (pv[c] > pv[best]) best = c;
                }
                if (static_cast<int>(best) == target) ++correct;
                ++seen;
            }
            Tensor loss = op::scale(op::sum_all(op::concat(losses, 0)), 1.0 / static_cast<double>(hi - lo));
            const double lv = loss.item();
            if (!std::isfinite(lv)) {
                throw DomainError(std::string(stage) + ": non-finite loss at epoch " + std::to_string(epoch));
            }
            for (auto& [name, t] : trainable) {
                Tensor tt = t;
                tt.zero_grad();
            }
            loss.backward();
            adam.step(trainable);
            loss_sum += lv;
        }
        log.epoch_mean_loss.push_back(loss_sum / steps_per_epoch);
        log.epoch_accuracy.push_back(seen ? static_cast<double>(correct) / seen : 0.0);
    }
    return log;
}

std::vector<Tensor> detach_all(const std::vector<Tensor>& xs) {
    std::vector<Tensor> out;
    out.reserve(xs.size());
    for (const auto& x : xs) out.push_back(x.clone_detached());
    return out;
}

}  // namespace

PromptTrainLog prompt_train(const Model& model, PromptGeneratorParams& params, const std::vector<int>& base_classes,
                            const std::vector<Tensor>& images, const std::vector<int>& class_ids,
                            const PromptSchedule& schedule, const TrainableMask& mask, std::uint64_t seed) {
    if (images.size() != class_ids.size()) throw ShapeError("prompt_train: images/labels size mismatch");
    // the ablation bypass is a property of the generator from here on
    params.metanet_enabled = mask.metanet;
    params.set_requires_grad(mask, base_classes);

    // encoders are fixed; precompute image embeddings once, detached
    std::vector<Tensor> emb;
    emb.reserve(images.size());
    for (const auto& img : images) emb.push_back(encode_image(model, img).clone_detached());

    std::vector<int> targets(class_ids.size());
    for (std::size_t i = 0; i < class_ids.size(); ++i) {
        const auto it = std::find(base_classes.begin(), base_classes.end(), class_ids[i]);
        if (it == base_classes.end()) {
            throw DomainError("prompt_train: sample class " + std::to_string(class_ids[i]) +
                              " is not a base class");
        }
        targets[i] = static_cast<int>(it - base_classes.begin());
    }
    return run_ce_training(model, params, base_classes, emb, targets, schedule.lr, schedule.weight_decay,
                           schedule.epochs, schedule.batch, seed, "prompt_train");
}

void zero_shot_setup(PromptGeneratorParams& params, const std::vector<int>& unseen_classes,
                     const ObservationVocabulary& vocab, const Tokenizer& tokenizer, const Tensor& token_embeddings) {
    std::vector<std::pair<int, std::string>> classes;
    for (const int k : unseen_classes) classes.emplace_back(k, vocab.at(k).name);
    zero_shot_setup(params, classes, tokenizer, token_embeddings);
}

void zero_shot_setup(PromptGeneratorParams& params, const std::vector<std::pair<int, std::string>>& classes,
                     const Tokenizer& tokenizer, const Tensor& token_embeddings) {
    for (const auto& [k, name] : classes) {
        if (k < 0 || k >= static_cast<int>(params.cls.size())) {
            throw DomainError("zero_shot_setup: unknown class " + std::to_string(k));
        }
        std::vector<std::int64_t> ids;
        for (const auto id : tokenizer.word_ids(name)) {
            if (id != tokenizer.unk_id()) ids.push_back(id);
        }
        if (ids.empty()) {
            throw DomainError("zero_shot_setup: class name '" + name + "' is fully out of vocabulary");
        }
        const std::int64_t dm = token_embeddings.dim(1);
        Tensor& row = params.cls[static_cast<std::size_t>(k)];
        std::vector<double> mean(static_cast<std::size_t>(dm), 0.0);
        for (std::int64_t j = 0; j < dm; ++j) {
            double acc = 0;
            for (const auto id : ids) acc += token_embeddings.value_at(id * dm + j);
            mean[static_cast<std::size_t>(j)] = acc / static_cast<double>(ids.size());
        }
        const bool rg = row.requires_grad();
        row = Tensor::from_doubles({dm}, mean, row.dtype()).set_name(row.name()).set_requires_grad(rg);
    }
}

namespace {

std::vector<std::size_t> select_shots(const std::vector<SampleRecord>& unseen_train,
                                      const std::vector<int>& unseen_classes, int shots, std::uint64_t seed,
                                      ShotSelection* selection) {
    std::vector<std::size_t> chosen;
    Rng rng = Rng(seed).derive("shots");
    for (const int k : unseen_classes) {
        std::vector<std::size_t> of_class;
        for (std::size_t i = 0; i < unseen_train.size(); ++i) {
            if (unseen_train[i].class_id == k) of_class.push_back(i);
        }
        if (static_cast<int>(of_class.size()) < shots) {
            throw DomainError("fewshot: class " + std::to_string(k) + " has only " +
                              std::to_string(of_class.size()) + " train samples, need " + std::to_string(shots));
        }
        Rng crng = rng.derive(static_cast<std::uint64_t>(k));
        for (const auto pick : crng.sample_without_replacement(of_class.size(), static_cast<std::size_t>(shots))) {
            chosen.push_back(of_class[pick]);
        }
    }
    std::sort(chosen.begin(), chosen.end());
    if (selection) {
        selection->shots = shots;
        for (const auto i : chosen) selection->sample_ids.push_back(unseen_train[i].id);
    }
    return chosen;
}

}  // namespace

PromptGeneratorParams fewshot_finetune(const Model& model, const PromptGeneratorParams& params,
                                       const std::vector<int>& unseen_classes, int shots,
                                       const std::vector<SampleRecord>& unseen_train,
                                       const std::vector<Tensor>& unseen_train_images,
                                       const PromptSchedule& schedule, std::uint64_t seed,
                                       ShotSelection* selection) {
    if (shots < 0) throw DomainError("fewshot: shots must be >= 0");
    PromptGeneratorParams tuned = params.clone();
    if (shots == 0) {
        if (selection) selection->shots = 0;
        return tuned;
    }
    const auto chosen = select_shots(unseen_train, unseen_classes, shots, seed, selection);

    // only the unseen-class rows are trainable
    tuned.set_requires_grad(TrainableMask{.metanet = false, .context = false}, unseen_classes);

    std::vector<Tensor> emb;
    std::vector<int> targets;
    for (const auto i : chosen) {
        emb.push_back(encode_image(model, unseen_train_images[i]).clone_detached());
        const auto it = std::find(unseen_classes.begin(), unseen_classes.end(), unseen_train[i].class_id);
        targets.push_back(static_cast<int>(it - unseen_classes.begin()));
    }
    run_ce_training(model, tuned, unseen_classes, emb, targets, schedule.fewshot_lr, 0.0, schedule.fewshot_epochs,
                    schedule.batch, seed, "fewshot");
    return tuned;
}

PromptGeneratorParams fullshot_train(const Model& model, const PromptGeneratorParams& params,
                                     const std::vector<int>& unseen_classes,
                                     const std::vector<SampleRecord>& unseen_train,
                                     const std::vector<Tensor>& unseen_train_images, const PromptSchedule& schedule,
                                     std::uint64_t seed, PromptTrainLog* log) {
    PromptGeneratorParams tuned = params.clone();
    // the full generator trains; the Meta-Net only if this variant has one
    tuned.set_requires_grad(TrainableMask{.metanet = tuned.metanet_enabled, .context = true}, unseen_classes);

    std::vector<Tensor> emb;
    std::vector<int> targets;
    for (std::size_t i = 0; i < unseen_train.size(); ++i) {
        emb.push_back(encode_image(model, unseen_train_images[i]).clone_detached());
        const auto it = std::find(unseen_classes.begin(), unseen_classes.end(), unseen_train[i].class_id);
        if (it == unseen_classes.end()) {
            throw DomainError("fullshot: sample class " + std::to_string(unseen_train[i].class_id) +
                              " is not an unseen class");
        }
        targets.push_back(static_cast<int>(it - unseen_classes.begin()));
    }
    PromptTrainLog l = run_ce_training(model, tuned, unseen_classes, emb, targets, schedule.lr,
                                       schedule.weight_decay, schedule.fullshot_epochs, schedule.batch, seed,
                                       "fullshot");
    if (log) *log = std::move(l);
    return tuned;
}

Checkpoint prompt_checkpoint(const Model& model, const PromptGeneratorParams& params, CheckpointMeta meta) {
    meta.extra["prompt.m"] = std::to_string(params.m);
    meta.extra["prompt.reduction"] = std::to_string(params.reduction);
    meta.extra["prompt.metanet_enabled"] = params.metanet_enabled ? "1" : "0";
    Checkpoint ckpt = model_checkpoint(model, meta);
    for (auto& entry : params.named_params()) ckpt.tensors.push_back(entry);
    return ckpt;
}

PromptGeneratorParams prompt_params_from_checkpoint(const Checkpoint& ckpt, const EncoderConfig& enc) {
    PromptGeneratorParams p;
    const auto need = [&](const std::string& key) {
        const auto it = ckpt.meta.extra.find(key);
        if (it == ckpt.meta.extra.end()) throw IoError("checkpoint: missing metadata '" + key + "'");
        return it->second;
    };
    p.m = std::stoi(need("prompt.m"));
    p.reduction = std::stoi(need("prompt.reduction"));
    p.metanet_enabled = need("prompt.metanet_enabled") == "1";
    p.ctx = ckpt.at("prompt.ctx").clone_detached().set_requires_grad(true);
    for (int k = 0;; ++k) {
        const Tensor* row = ckpt.find(cls_name(k));
        if (!row) break;
        p.cls.push_back(row->clone_detached().set_requires_grad(true));
    }
    if (p.cls.empty()) throw IoError("checkpoint: no prompt class rows found");
    p.meta_w1 = ckpt.at("prompt.meta.w1").clone_detached().set_requires_grad(true);
    p.meta_b1 = ckpt.at("prompt.meta.b1").clone_detached().set_requires_grad(true);
    p.meta_w2 = ckpt.at("prompt.meta.w2").clone_detached().set_requires_grad(true);
    p.meta_b2 = ckpt.at("prompt.meta.b2").clone_detached().set_requires_grad(true);
    if (p.ctx.dim(1) != enc.d_model) {
        throw IoError("checkpoint: prompt dimensions do not match the encoder config");
    }
    return p;
}

}  // namespace vlp
