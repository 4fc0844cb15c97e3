#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "vlprompt/encoders.hpp"
#include "vlprompt/ops.hpp"
#include "vlprompt/tokenizer.hpp"

using namespace vlp;
namespace op = vlp::ops;

namespace {

EncoderConfig toy_config(const std::string& variant) {
    EncoderConfig cfg;
    cfg.variant = variant;
    cfg.d_model = 16;
    cfg.d = 12;
    cfg.layers = 2;
    cfg.heads = 4;
    cfg.max_seq_len = 32;
    cfg.image_size = 16;
    cfg.patch = 4;
    cfg.conv_channels = {4, 6, 8};
    return cfg;
}

}  // namespace

TEST_CASE("tokenizer: specials, round trip, UNK, truncation") {
    Tokenizer tok(32);
    CHECK(Tokenizer::kPad == 0);
    CHECK(tok.token(0) == "<pad>");
    CHECK(tok.token(tok.eos_id()) == "<eos>");

    // vocabulary word round-trips
    const auto ids = tok.word_ids("cardiomegaly");
    REQUIRE(ids.size() == 1);
    CHECK(ids[0] != tok.unk_id());
    CHECK(tok.token(ids[0]) == "cardiomegaly");

    // out-of-vocabulary word
    CHECK(tok.word_ids("zzzgibberish")[0] == tok.unk_id());

    // 40-word text truncates to exactly max_len with EOS last
    std::string long_text;
    for (int i = 0; i < 40; ++i) long_text += "edema ";
    const auto enc = tok.encode(long_text);
    REQUIRE(enc.size() == 32);
    CHECK(enc[0] == tok.bos_id());
    CHECK(enc[31] == tok.eos_id());
    CHECK(std::count(enc.begin(), enc.end(), Tokenizer::kPad) == 0);

    // short text pads with PAD after EOS
    const auto short_enc = tok.encode("edema");
    REQUIRE(short_enc.size() == 32);
    CHECK(short_enc[0] == tok.bos_id());
    CHECK(short_enc[2] == tok.eos_id());
    CHECK(short_enc[3] == Tokenizer::kPad);

    // ids are dense
    for (std::int64_t i = 0; i < tok.vocab_size(); ++i) CHECK(!tok.token(i).empty());
}

TEST_CASE("both image encoder variants emit (d,) and are deterministic") {
    Tokenizer tok(32);
    Rng rng(4);
    Tensor img = Tensor::uniform({16, 16, 1}, rng, 0.0, 1.0);
    for (const char* variant : {"conv", "attention"}) {
        Model m = make_model(toy_config(variant), tok, 7);
        Tensor e1 = encode_image(m, img);
        Tensor e2 = encode_image(m, img);
        CHECK(e1.shape() == Shape{12});
        CHECK(e1.to_doubles() == e2.to_doubles());
        CHECK(e1.all_finite());
    }
    Model m = make_model(toy_config("conv"), tok, 7);
    CHECK_THROWS_AS(encode_image(m, Tensor::zeros({8, 8, 1})), ShapeError);
}

TEST_CASE("conv variant with zeroed kernels passes only the bias path") {
    Tokenizer tok(32);
    Model m = make_model(toy_config("conv"), tok, 7);
    auto zero_out = [](Tensor t) {
        for (auto& v : t.data_mut<float>()) v = 0.0f;
    };
    zero_out(m.conv->w1);
    zero_out(m.conv->w2);
    zero_out(m.conv->w3);
    zero_out(m.conv->b1);
    zero_out(m.conv->b2);
    // last-stage biases: mix of positive and negative to exercise relu
    const std::vector<double> b3 = {0.5, -0.25, 1.0, 0.0, 2.0, -1.0, 0.125, 0.75};
    for (int i = 0; i < 8; ++i) m.conv->b3.data_mut<float>()[static_cast<std::size_t>(i)] = static_cast<float>(b3[static_cast<std::size_t>(i)]);
    // identity-like projection: proj[i][i] = 1
    zero_out(m.conv->proj);
    for (int i = 0; i < 8; ++i) m.conv->proj.data_mut<float>()[static_cast<std::size_t>(i * 12 + i)] = 1.0f;

    Tensor out = encode_image(m, Tensor::zeros({16, 16, 1}));
    // hand trace: all activations equal relu(b3[c]) everywhere, GAP keeps them,
    // identity projection copies channel c to output c
    for (int i = 0; i < 8; ++i) CHECK(out.value_at(i) == doctest::Approx(std::max(0.0, b3[static_cast<std::size_t>(i)])).epsilon(1e-6));
    for (int i = 8; i < 12; ++i) CHECK(out.value_at(i) == doctest::Approx(0.0));
}

TEST_CASE("token path and embedding path agree bit-exactly") {
    Tokenizer tok(32);
    Model m = make_model(toy_config("conv"), tok, 3);
    const auto ids = tok.encode("there is evidence of edema");
    Tensor via_tokens = encode_text_tokens(m, ids);

    std::vector<std::int64_t> trimmed;
    for (const auto id : ids) {
        trimmed.push_back(id);
        if (id == tok.eos_id()) break;
    }
    Tensor seq = op::embedding_lookup(m.txt.tok_emb, trimmed);
    Tensor via_embeddings = encode_text_embeddings(m, seq);

    CHECK(via_tokens.shape() == Shape{12});
    CHECK(via_tokens.to_doubles() == via_embeddings.to_doubles());
}

TEST_CASE("positional encoding: permuting middle tokens changes the output") {
    Tokenizer tok(32);
    Model m = make_model(toy_config("conv"), tok, 3);
    auto ids = tok.encode("no pleural effusion is identified today");
    Tensor a = encode_text_tokens(m, ids);
    // swap two middle words
    std::swap(ids[2], ids[3]);
    Tensor b = encode_text_tokens(m, ids);
    CHECK(a.to_doubles() != b.to_doubles());
}

TEST_CASE("embedding path rejects wrong width and overlong sequences") {
    Tokenizer tok(32);
    Model m = make_model(toy_config("conv"), tok, 3);
    CHECK_THROWS_AS(encode_text_embeddings(m, Tensor::zeros({5, 7})), ShapeError);
    CHECK_THROWS_AS(encode_text_embeddings(m, Tensor::zeros({33, 16})), ShapeError);
}

TEST_CASE("gradients flow to every encoder parameter") {
    Tokenizer tok(32);
    for (const char* variant : {"conv", "attention"}) {
        Model m = make_model(toy_config(variant), tok, 11);
        Rng rng(2);
        Tensor img = Tensor::uniform({16, 16, 1}, rng, 0.0, 1.0);
        Tensor ie = encode_image(m, img);
        Tensor te = encode_text_tokens(m, tok.encode("there is evidence of edema"));
        Tensor loss = op::sum_all(op::mul(op::add(ie, te), op::add(ie, te)));
        loss.backward();
        int with_grad = 0, total = 0;
        for (const auto& [name, t] : m.named_params()) {
            ++total;
            double gsum = 0;
            for (const double g : t.grad_to_doubles()) gsum += std::abs(g);
            if (gsum > 0) ++with_grad;
        }
        // tau does not participate in this loss; position rows beyond the
        // sequence length get no gradient, everything else must
        CHECK_MESSAGE(with_grad >= total - 1, variant, ": ", with_grad, "/", total);
    }
}

TEST_CASE("model feature map shapes") {
    Tokenizer tok(32);
    Rng rng(4);
    Tensor img = Tensor::uniform({16, 16, 1}, rng, 0.0, 1.0);
    Model mc = make_model(toy_config("conv"), tok, 7);
    CHECK(image_feature_map(mc, img).shape() == Shape{8, 2, 2});
    Model ma = make_model(toy_config("attention"), tok, 7);
    CHECK(image_feature_map(ma, img).shape() == Shape{16, 16});
}

TEST_CASE("tau is positive and differentiable through exp") {
    Tokenizer tok(32);
    Model m = make_model(toy_config("conv"), tok, 7);
    CHECK(m.tau().item() == doctest::Approx(0.07).epsilon(1e-6));
    Tensor t = m.tau();
    t.backward();
    CHECK(m.log_tau.grad_at(0) == doctest::Approx(0.07).epsilon(1e-5));
}
