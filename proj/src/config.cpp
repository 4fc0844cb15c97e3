#include "vlprompt/config.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace vlp {

namespace {

using json = nlohmann::ordered_json;

void expect_keys(const json& j, const std::vector<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        bool ok = false;
        for (const auto& a : allowed) ok = ok || a == key;
        if (!ok) throw ConfigError("config: unknown key '" + key + "' in " + where);
    }
}

template <class T>
void read_field(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: field '" + where + "." + key + "' has the wrong type");
    }
}

void parse_corpus(const json& j, CorpusConfig& c) {
    expect_keys(j,
                {"pretrain_samples", "base_train_per_class", "unseen_train_per_class", "unseen_test_per_class",
                 "image_size", "findings_dist", "noise_sigma", "negation_prob", "ambiguity_prob"},
                "corpus");
    read_field(j, "pretrain_samples", c.pretrain_samples, "corpus");
    read_field(j, "base_train_per_class", c.base_train_per_class, "corpus");
    read_field(j, "unseen_train_per_class", c.unseen_train_per_class, "corpus");
    read_field(j, "unseen_test_per_class", c.unseen_test_per_class, "corpus");
    read_field(j, "image_size", c.image_size, "corpus");
    read_field(j, "findings_dist", c.findings_dist, "corpus");
    read_field(j, "noise_sigma", c.noise_sigma, "corpus");
    read_field(j, "negation_prob", c.negation_prob, "corpus");
    read_field(j, "ambiguity_prob", c.ambiguity_prob, "corpus");
}

void parse_encoder(const json& j, EncoderConfig& e) {
    expect_keys(j, {"variant", "d_model", "d", "layers", "heads", "max_seq_len", "patch", "conv_channels"},
                "encoder");
    read_field(j, "variant", e.variant, "encoder");
    read_field(j, "d_model", e.d_model, "encoder");
    read_field(j, "d", e.d, "encoder");
    read_field(j, "layers", e.layers, "encoder");
    read_field(j, "heads", e.heads, "encoder");
    read_field(j, "max_seq_len", e.max_seq_len, "encoder");
    read_field(j, "patch", e.patch, "encoder");
    if (j.contains("conv_channels")) {
        const auto v = j.at("conv_channels").get<std::vector<int>>();
        if (v.size() != 3) throw ConfigError("config: encoder.conv_channels needs exactly 3 entries");
        e.conv_channels = {v[0], v[1], v[2]};
    }
}

void parse_pretrain(const json& j, PretrainSchedule& p) {
    expect_keys(j, {"lr", "warmup_frac", "weight_decay", "batch_images", "batch_texts", "epochs", "retrieval_holdout"},
                "pretrain");
    read_field(j, "lr", p.lr, "pretrain");
    read_field(j, "warmup_frac", p.warmup_frac, "pretrain");
    read_field(j, "weight_decay", p.weight_decay, "pretrain");
    read_field(j, "batch_images", p.batch_images, "pretrain");
    read_field(j, "batch_texts", p.batch_texts, "pretrain");
    read_field(j, "epochs", p.epochs, "pretrain");
    read_field(j, "retrieval_holdout", p.retrieval_holdout, "pretrain");
}

void parse_prompt(const json& j, PromptSchedule& p) {
    expect_keys(j,
                {"m", "reduction", "lr", "weight_decay", "epochs", "batch", "fewshot_lr", "fewshot_epochs",
                 "fullshot_epochs"},
                "prompt");
    read_field(j, "m", p.m, "prompt");
    read_field(j, "reduction", p.reduction, "prompt");
    read_field(j, "lr", p.lr, "prompt");
    read_field(j, "weight_decay", p.weight_decay, "prompt");
    read_field(j, "epochs", p.epochs, "prompt");
    read_field(j, "batch", p.batch, "prompt");
    read_field(j, "fewshot_lr", p.fewshot_lr, "prompt");
    read_field(j, "fewshot_epochs", p.fewshot_epochs, "prompt");
    read_field(j, "fullshot_epochs", p.fullshot_epochs, "prompt");
}

}  // namespace

void PretrainSchedule::validate() const {
    if (lr <= 0) throw ConfigError("config: pretrain.lr must be positive");
    if (warmup_frac < 0 || warmup_frac > 1) throw ConfigError("config: pretrain.warmup_frac must be in [0, 1]");
    if (weight_decay < 0) throw ConfigError("config: pretrain.weight_decay must be >= 0");
    if (batch_images < 2 || batch_texts < 2) throw ConfigError("config: pretrain batches need at least 2 samples");
    if (epochs <= 0) throw ConfigError("config: pretrain.epochs must be positive");
    if (retrieval_holdout < 0) throw ConfigError("config: pretrain.retrieval_holdout must be >= 0");
}

void PromptSchedule::validate() const {
    if (m < 1) throw ConfigError("config: prompt.m must be >= 1");
    if (reduction < 1) throw ConfigError("config: prompt.reduction must be >= 1");
    if (lr <= 0 || fewshot_lr <= 0) throw ConfigError("config: prompt learning rates must be positive");
    if (weight_decay < 0) throw ConfigError("config: prompt.weight_decay must be >= 0");
    if (epochs <= 0 || fewshot_epochs <= 0 || fullshot_epochs <= 0) {
        throw ConfigError("config: prompt epoch counts must be positive");
    }
    if (batch < 1) throw ConfigError("config: prompt.batch must be >= 1");
}

RunConfig RunConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: invalid json: ") + e.what());
    }
    expect_keys(j, {"corpus", "encoder", "pretrain", "prompt", "tau_init", "seed", "seeds", "out_dir"}, "config");
    RunConfig cfg;
    if (j.contains("corpus")) parse_corpus(j.at("corpus"), cfg.corpus);
    if (j.contains("encoder")) parse_encoder(j.at("encoder"), cfg.encoder);
    if (j.contains("pretrain")) parse_pretrain(j.at("pretrain"), cfg.pretrain);
    if (j.contains("prompt")) parse_prompt(j.at("prompt"), cfg.prompt);
    read_field(j, "tau_init", cfg.tau_init, "config");
    read_field(j, "seed", cfg.seed, "config");
    read_field(j, "seeds", cfg.seeds, "config");
    read_field(j, "out_dir", cfg.out_dir, "config");
    cfg.corpus.seed = cfg.seed;
    cfg.encoder.image_size = cfg.corpus.image_size;  // one canvas size per experiment
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return from_json_text(ss.str());
}

std::string RunConfig::canonical_json() const {
    json j;
    j["corpus"] = {{"pretrain_samples", corpus.pretrain_samples},
                   {"base_train_per_class", corpus.base_train_per_class},
                   {"unseen_train_per_class", corpus.unseen_train_per_class},
                   {"unseen_test_per_class", corpus.unseen_test_per_class},
                   {"image_size", corpus.image_size},
                   {"findings_dist", corpus.findings_dist},
                   {"noise_sigma", corpus.noise_sigma},
                   {"negation_prob", corpus.negation_prob},
                   {"ambiguity_prob", corpus.ambiguity_prob}};
    j["encoder"] = {{"variant", encoder.variant},
                    {"d_model", encoder.d_model},
                    {"d", encoder.d},
                    {"layers", encoder.layers},
                    {"heads", encoder.heads},
                    {"max_seq_len", encoder.max_seq_len},
                    {"patch", encoder.patch},
                    {"conv_channels", std::vector<int>{encoder.conv_channels[0], encoder.conv_channels[1],
                                                       encoder.conv_channels[2]}}};
    j["pretrain"] = {{"lr", pretrain.lr},
                     {"warmup_frac", pretrain.warmup_frac},
                     {"weight_decay", pretrain.weight_decay},
                     {"batch_images", pretrain.batch_images},
                     {"batch_texts", pretrain.batch_texts},
                     {"epochs", pretrain.epochs},
                     {"retrieval_holdout", pretrain.retrieval_holdout}};
    j["prompt"] = {{"m", prompt.m},
                   {"reduction", prompt.reduction},
                   {"lr", prompt.lr},
                   {"weight_decay", prompt.weight_decay},
                   {"epochs", prompt.epochs},
                   {"batch", prompt.batch},
                   {"fewshot_lr", prompt.fewshot_lr},
                   {"fewshot_epochs", prompt.fewshot_epochs},
                   {"fullshot_epochs", prompt.fullshot_epochs}};
    j["tau_init"] = tau_init;
    j["seed"] = seed;
    j["seeds"] = seeds;
    j["out_dir"] = out_dir;
    return j.dump(2);
}

std::string RunConfig::hash() const {
    const std::uint64_t h = Rng::fnv1a64(canonical_json());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void RunConfig::validate() const {
    corpus.validate();
    encoder.validate();
    pretrain.validate();
    prompt.validate();
    if (tau_init <= 0) throw ConfigError("config: tau_init must be positive");
    if (seeds.empty()) throw ConfigError("config: seeds must not be empty");
    if (out_dir.empty()) throw ConfigError("config: out_dir must not be empty");
    if (encoder.d % prompt.reduction != 0) {
        throw ConfigError("config: prompt.reduction must divide encoder.d");
    }
    if (prompt.m + 1 > encoder.max_seq_len) {
        throw ConfigError("config: prompt.m + 1 must fit within encoder.max_seq_len");
    }
}

}  // namespace vlp
