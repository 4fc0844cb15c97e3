#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "support/gradcheck.hpp"
#include "vlprompt/ops.hpp"
#include "vlprompt/pretrain.hpp"

using namespace vlp;
namespace op = vlp::ops;
namespace fs = std::filesystem;

namespace {

// Independent scalar-loop realization of the symmetric semantic loss:
//   L = -1/2 ( 1/N_img sum_i sum_j y_ij ln yhat_ij
//            + 1/N_txt sum_j sum_i y'_ij ln yhat'_ij )
// with row- and column-normalized distributions computed from scratch.
double oracle_semantic_loss(const std::vector<std::vector<double>>& s_gt,
                            const std::vector<std::vector<double>>& s_hat, double tau) {
    const std::size_t n = s_gt.size(), m = s_gt[0].size();
    auto row_softmax = [](const std::vector<std::vector<double>>& a, bool transpose) {
        const std::size_t rows = transpose ? a[0].size() : a.size();
        const std::size_t cols = transpose ? a.size() : a[0].size();
        std::vector<std::vector<double>> out(rows, std::vector<double>(cols));
        for (std::size_t i = 0; i < rows; ++i) {
            double mx = -1e300;
            for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, transpose ? a[j][i] : a[i][j]);
            double z = 0;
            for (std::size_t j = 0; j < cols; ++j) z += std::exp((transpose ? a[j][i] : a[i][j]) - mx);
            for (std::size_t j = 0; j < cols; ++j) out[i][j] = std::exp((transpose ? a[j][i] : a[i][j]) - mx) / z;
        }
        return out;
    };
    std::vector<std::vector<double>> s_hat_tau(n, std::vector<double>(m));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) s_hat_tau[i][j] = s_hat[i][j] / tau;
    }
    const auto y_i2t = row_softmax(s_gt, false);
    const auto y_t2i = row_softmax(s_gt, true);  // (m, n): columns of s_gt
    const auto yh_i2t = row_softmax(s_hat_tau, false);
    const auto yh_t2i = row_softmax(s_hat_tau, true);
    double term_img = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) term_img += y_i2t[i][j] * std::log(yh_i2t[i][j]);
    }
    double term_txt = 0;
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t i = 0; i < n; ++i) term_txt += y_t2i[j][i] * std::log(yh_t2i[j][i]);
    }
    return -0.5 * (term_img / static_cast<double>(n) + term_txt / static_cast<double>(m));
}

}  // namespace

TEST_CASE("predicted_similarity: identical embeddings give uniform rows") {
    Tensor emb = Tensor::full({4, 8}, 0.3, Dtype::F64);
    Tensor txt = Tensor::full({6, 8}, -0.2, Dtype::F64);
    auto pred = predicted_similarity(emb, txt, Tensor::scalar(0.5, Dtype::F64));
    for (int i = 0; i < 4 * 6; ++i) {
        CHECK(pred.y_img2txt.value_at(i) == doctest::Approx(1.0 / 6).epsilon(1e-9));
        CHECK(pred.y_txt2img.value_at(i) == doctest::Approx(1.0 / 4).epsilon(1e-9));
    }
}

TEST_CASE("predicted_similarity: cosines stay in [-1, 1], tau errors") {
    Rng rng(9);
    Tensor a = Tensor::uniform({5, 16}, rng, -3, 3, Dtype::F64);
    Tensor b = Tensor::uniform({7, 16}, rng, -3, 3, Dtype::F64);
    auto pred = predicted_similarity(a, b, Tensor::scalar(0.07, Dtype::F64));
    for (int i = 0; i < 35; ++i) {
        CHECK(pred.s_hat.value_at(i) >= -1.0 - 1e-12);
        CHECK(pred.s_hat.value_at(i) <= 1.0 + 1e-12);
    }
    CHECK_THROWS_AS(predicted_similarity(a, b, Tensor::scalar(0.0, Dtype::F64)), DomainError);
    CHECK_THROWS_AS(predicted_similarity(a, b, Tensor::scalar(-1.0, Dtype::F64)), DomainError);
    CHECK_THROWS_AS(predicted_similarity(a, Tensor::zeros({3, 4}, Dtype::F64), Tensor::scalar(1, Dtype::F64)),
                    ShapeError);
}

TEST_CASE("tiny temperature sends the dominant entry's probability to 1") {
    // one strictly dominant cosine per row
    Tensor img = Tensor::from_doubles({1, 2}, {1.0, 0.0}, Dtype::F64);
    Tensor txt = Tensor::from_doubles({3, 2}, {0.9, 0.4359, 0.0, 1.0, -0.6, 0.8}, Dtype::F64);
    auto pred = predicted_similarity(img, txt, Tensor::scalar(1e-3, Dtype::F64));
    // row cosines: ~0.9, 0.0, -0.6, margin far above 0.1
    CHECK(pred.y_img2txt.value_at(0) > 0.99);
}

TEST_CASE("semantic_loss identities: equality case and uniform case") {
    // yhat == y: loss equals the mean target entropy
    Rng rng(21);
    const int n = 4, m = 5;
    std::vector<LabelVector> il, tl;
    for (int i = 0; i < n; ++i) il.push_back(LabelVector::from_findings({1 + (i % 13)}));
    for (int j = 0; j < m; ++j) tl.push_back(LabelVector::from_findings({1 + ((j * 3) % 13)}));
    auto tgt = gt_similarity(il, tl, Dtype::F64);

    PredictedSimilarity mirrored{tgt.s, tgt.y_img2txt, tgt.y_txt2img};
    const double loss = semantic_loss(mirrored, tgt).item();
    double h_img = 0, h_txt = 0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
            const double yij = tgt.y_img2txt.value_at(i * m + j);
            const double yji = tgt.y_txt2img.value_at(i * m + j);
            h_img -= yij * std::log(yij);
            h_txt -= yji * std::log(yji);
        }
    }
    const double mean_entropy = 0.5 * (h_img / n + h_txt / m);
    CHECK(loss == doctest::Approx(mean_entropy).epsilon(1e-6));

    // uniform target and uniform prediction: loss = ln(m) averaged with ln(n)
    Tensor uy = Tensor::full({n, m}, 1.0 / m, Dtype::F64);
    Tensor uyt = Tensor::full({n, m}, 1.0 / n, Dtype::F64);
    const double uloss = semantic_loss(uy, uyt, uy, uyt).item();
    CHECK(uloss == doctest::Approx(0.5 * (std::log(m) + std::log(n))).epsilon(1e-6));

    // square case: exactly ln N
    Tensor sq = Tensor::full({m, m}, 1.0 / m, Dtype::F64);
    CHECK(semantic_loss(sq, sq, sq, sq).item() == doctest::Approx(std::log(m)).epsilon(1e-9));
}

TEST_CASE("semantic_loss matches the scalar-loop oracle on a random 5x7 case") {
    Rng rng(77);
    const int n = 5, m = 7, d = 12;
    Tensor ie = Tensor::uniform({n, d}, rng, -2, 2, Dtype::F64);
    Tensor te = Tensor::uniform({m, d}, rng, -2, 2, Dtype::F64);
    const double tau = 0.45;

    std::vector<LabelVector> il, tl;
    for (int i = 0; i < n; ++i) {
        std::vector<int> f;
        for (int k = 1; k < 14; ++k) {
            if (rng.bernoulli(0.3)) f.push_back(k);
        }
        il.push_back(LabelVector::from_findings(f));
    }
    for (int j = 0; j < m; ++j) {
        std::vector<int> f;
        for (int k = 1; k < 14; ++k) {
            if (rng.bernoulli(0.3)) f.push_back(k);
        }
        tl.push_back(LabelVector::from_findings(f));
    }
    auto tgt = gt_similarity(il, tl, Dtype::F64);
    auto pred = predicted_similarity(ie, te, Tensor::scalar(tau, Dtype::F64));
    const double got = semantic_loss(pred, tgt).item();

    // oracle from scratch
    std::vector<std::vector<double>> s_gt(n, std::vector<double>(m)), s_hat(n, std::vector<double>(m));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
            s_gt[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                il[static_cast<std::size_t>(i)].cosine(tl[static_cast<std::size_t>(j)]);
            double dot = 0, na = 0, nb = 0;
            for (int c = 0; c < d; ++c) {
                const double x = ie.value_at(i * d + c), y = te.value_at(j * d + c);
                dot += x * y;
                na += x * x;
                nb += y * y;
            }
            s_hat[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = dot / (std::sqrt(na) * std::sqrt(nb));
        }
    }
    const double expect = oracle_semantic_loss(s_gt, s_hat, tau);
    CHECK(std::abs(got - expect) < 1e-9);
}

TEST_CASE("Gibbs: semantic loss never falls below the mean target entropy") {
    Rng rng(5150);
    for (int rep = 0; rep < 200; ++rep) {
        const int n = 2 + static_cast<int>(rng.below(4));
        const int m = 2 + static_cast<int>(rng.below(4));
        std::vector<LabelVector> il, tl;
        for (int i = 0; i < n; ++i) {
            std::vector<int> f;
            for (int k = 1; k < 14; ++k) {
                if (rng.bernoulli(0.25)) f.push_back(k);
            }
            il.push_back(LabelVector::from_findings(f));
        }
        for (int j = 0; j < m; ++j) {
            std::vector<int> f;
            for (int k = 1; k < 14; ++k) {
                if (rng.bernoulli(0.25)) f.push_back(k);
            }
            tl.push_back(LabelVector::from_findings(f));
        }
        auto tgt = gt_similarity(il, tl, Dtype::F64);
        Tensor ie = Tensor::uniform({n, 8}, rng, -2, 2, Dtype::F64);
        Tensor te = Tensor::uniform({m, 8}, rng, -2, 2, Dtype::F64);
        auto pred = predicted_similarity(ie, te, Tensor::scalar(0.3 + rng.uniform01(), Dtype::F64));
        const double loss = semantic_loss(pred, tgt).item();
        double h_img = 0, h_txt = 0;
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < m; ++j) {
                const double yij = tgt.y_img2txt.value_at(i * m + j);
                const double yji = tgt.y_txt2img.value_at(i * m + j);
                h_img -= yij * std::log(yij);
                h_txt -= yji * std::log(yji);
            }
        }
        const double floor = 0.5 * (h_img / n + h_txt / m);
        CHECK_MESSAGE(loss >= floor - 1e-9, "rep ", rep, " loss ", loss, " floor ", floor);
    }
}

TEST_CASE("Eq.7 gradient w.r.t. tau matches finite differences") {
    Rng rng(31337);
    const int n = 4, m = 5, d = 8;
    std::vector<LabelVector> il, tl;
    for (int i = 0; i < n; ++i) il.push_back(LabelVector::from_findings({1 + (i % 13)}));
    for (int j = 0; j < m; ++j) tl.push_back(LabelVector::from_findings({1 + ((j * 2) % 13)}));
    auto tgt = gt_similarity(il, tl, Dtype::F64);

    std::vector<Tensor> inputs = {Tensor::uniform({n, d}, rng, -2, 2, Dtype::F64, true),
                                  Tensor::uniform({m, d}, rng, -2, 2, Dtype::F64, true),
                                  Tensor::uniform({1}, rng, 0.05, 0.8, Dtype::F64, true)};
    auto fn = [&tgt](std::vector<Tensor>& v) {
        auto pred = predicted_similarity(v[0], v[1], v[2]);
        return semantic_loss(pred, tgt);
    };
    auto rep = vlptest::grad_check(fn, inputs, 1e-5, 1e-9);
    CHECK_MESSAGE(rep.ok(), rep.worst);
}

TEST_CASE("pretrain_run on a small corpus: learning and bit-exact reruns") {
    RunConfig cfg;
    cfg.corpus.pretrain_samples = 220;
    cfg.corpus.base_train_per_class = 2;
    cfg.corpus.unseen_train_per_class = 2;
    cfg.corpus.unseen_test_per_class = 2;
    cfg.pretrain.epochs = 3;
    cfg.pretrain.batch_images = 32;
    cfg.pretrain.batch_texts = 32;
    cfg.pretrain.retrieval_holdout = 64;
    cfg.seed = 11;
    cfg.corpus.seed = 11;

    const auto dir = fs::temp_directory_path() / ("vlp_pretrain_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    generate_corpus(cfg.corpus, dir, cfg.hash());

    std::ostringstream csv1, csv2;
    PretrainResult r1 = pretrain_run(cfg, dir, &csv1);
    PretrainResult r2 = pretrain_run(cfg, dir, &csv2);

    // untrained-model first-epoch loss sits near ln(batch) for near-uniform predictions
    CHECK(r1.epoch_mean_loss.front() == doctest::Approx(std::log(32)).epsilon(0.20));
    // learning: strictly decreasing epoch means on this corpus
    CHECK(r1.epoch_mean_loss.back() < r1.epoch_mean_loss.front());
    // identical seed -> bit-identical run (log text and every parameter)
    CHECK(csv1.str() == csv2.str());
    const auto p1 = r1.model.named_params();
    const auto p2 = r2.model.named_params();
    REQUIRE(p1.size() == p2.size());
    for (std::size_t i = 0; i < p1.size(); ++i) {
        auto a = p1[i].second.data<float>();
        auto b = p2[i].second.data<float>();
        CHECK_MESSAGE(std::equal(a.begin(), a.end(), b.begin()), p1[i].first);
    }
    // tau stays positive through training
    CHECK(r1.model.tau().item() > 0.0);
    // log rows carry epoch, step, loss, tau
    CHECK(csv1.str().rfind("epoch,step,loss,tau\n", 0) == 0);

    // checkpoint round trip via model_checkpoint / model_from_checkpoint
    CheckpointMeta meta;
    meta.config_hash = cfg.hash();
    const auto ckpt_path = dir / "test.mpck";
    save_checkpoint(model_checkpoint(r1.model, meta), ckpt_path);
    Checkpoint loaded = load_checkpoint(ckpt_path);
    Model m2 = model_from_checkpoint(loaded, cfg.encoder, r1.tokenizer);
    Rng rng(4);
    Tensor img = Tensor::uniform({32, 32, 1}, rng, 0, 1);
    CHECK(encode_image(r1.model, img).to_doubles() == encode_image(m2, img).to_doubles());

    fs::remove_all(dir);
}
