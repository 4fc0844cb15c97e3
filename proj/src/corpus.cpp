#include "vlprompt/corpus.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vlprompt/ops.hpp"
#include "vlprompt/wire.hpp"

namespace vlp {

namespace {

using json = nlohmann::ordered_json;

constexpr double kBackgroundLevel = 0.25;

// ---------------------------------------------------------------------------
// report templates
// ---------------------------------------------------------------------------

const std::vector<std::string>& positive_templates() {
    static const std::vector<std::string> t = {
        "There is evidence of {syn}.",
        "Findings are consistent with {syn}.",
        "The study demonstrates {syn} today.",
        "Imaging reveals {syn} in this exam.",
    };
    return t;
}

const std::vector<std::string>& negative_templates() {
    static const std::vector<std::string> t = {
        "No {syn} is identified.",
        "The exam is free of {syn}.",
        "Negative for {syn} on this study.",
        "There is no {syn} at this time.",
        "Study without {syn} or interval change.",
    };
    return t;
}

const std::vector<std::string>& filler_sentences() {
    static const std::vector<std::string> t = {
        "The patient was imaged at the bedside.",
        "Comparison was made with the prior study.",
        "Image quality is adequate for interpretation.",
        "Monitoring hardware remains in stable position.",
    };
    return t;
}

const std::vector<std::string>& short_sentences() {
    static const std::vector<std::string> t = {"Ok.", "Stable exam.", "Unchanged."};
    return t;
}

const std::vector<std::string>& clear_sentences() {
    static const std::vector<std::string> t = {
        "The lungs are clear bilaterally.",
        "Normal study without acute disease.",
        "Clear lung fields are seen throughout.",
    };
    return t;
}

// A hedged mention the extractor reads as positive although nothing was drawn.
const std::vector<std::string>& ambiguous_templates() {
    static const std::vector<std::string> t = {
        "The referring physician asked about {syn}.",
        "Clinical correlation regarding {syn} is requested.",
    };
    return t;
}

std::string instantiate(const std::string& tpl, const std::string& syn) {
    const auto pos = tpl.find("{syn}");
    return tpl.substr(0, pos) + syn + tpl.substr(pos + 5);
}

// ---------------------------------------------------------------------------
// tokenization
// ---------------------------------------------------------------------------

std::vector<std::string> split_sentences(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (const char ch : text) {
        cur.push_back(ch);
        if (ch == '.' || ch == '!' || ch == '?') {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

// Negation cues as token sequences; a cue negates a synonym match when its
// last token falls within the 3 tokens preceding the match.
const std::vector<std::vector<std::string>>& negation_cues() {
    static const std::vector<std::vector<std::string>> cues = {
        {"no"}, {"without"}, {"free", "of"}, {"negative", "for"}};
    return cues;
}

bool match_at(const std::vector<std::string>& tokens, std::size_t pos, const std::vector<std::string>& phrase) {
    if (pos + phrase.size() > tokens.size()) return false;
    for (std::size_t i = 0; i < phrase.size(); ++i) {
        if (tokens[pos + i] != phrase[i]) return false;
    }
    return true;
}

bool negated_before(const std::vector<std::string>& tokens, std::size_t pos) {
    for (const auto& cue : negation_cues()) {
        const std::size_t len = cue.size();
        // cue must end within the 3 tokens preceding `pos`
        for (std::size_t back = 1; back <= 3; ++back) {
            if (pos < back + len - 1) continue;
            const std::size_t start = pos - back - (len - 1);
            if (match_at(tokens, start, cue)) return true;
        }
    }
    return false;
}

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

std::vector<float> render_image(const CorpusConfig& cfg, const std::vector<int>& findings, Rng& rng) {
    const auto& vocab = ObservationVocabulary::standard();
    const int side = cfg.image_size;
    std::vector<float> img(static_cast<std::size_t>(side) * side);
    for (auto& p : img) p = static_cast<float>(kBackgroundLevel + cfg.noise_sigma * rng.gaussian());
    for (const int k : findings) {
        const double amp = vocab.at(k).motif.amplitude;
        for (const auto px : vocab.motif_pixels(k, side, side)) {
            img[static_cast<std::size_t>(px)] += static_cast<float>(amp);
        }
    }
    for (auto& p : img) p = std::clamp(p, 0.0f, 1.0f);
    return img;
}

std::string compose_report(const CorpusConfig& cfg, const std::vector<int>& findings, bool allow_ambiguity,
                           Rng& rng) {
    const auto& vocab = ObservationVocabulary::standard();
    auto pick = [&rng](const std::vector<std::string>& v) { return v[rng.below(v.size())]; };
    auto synonym = [&](int k) {
        const auto& syn = vocab.at(k).synonyms;
        return syn[rng.below(syn.size())];
    };

    std::vector<std::string> sentences;
    std::vector<bool> mentioned(static_cast<std::size_t>(vocab.size()), false);
    for (const int k : findings) mentioned[static_cast<std::size_t>(k)] = true;

    if (findings.empty()) {
        sentences.push_back(pick(clear_sentences()));
    } else {
        for (const int k : findings) sentences.push_back(instantiate(pick(positive_templates()), synonym(k)));
    }

    // explicit negated mentions for a random subset of absent findings
    int negations = 0;
    for (int k = 1; k < vocab.size() && negations < 3; ++k) {
        if (mentioned[static_cast<std::size_t>(k)]) continue;
        if (rng.bernoulli(cfg.negation_prob)) {
            sentences.push_back(instantiate(pick(negative_templates()), synonym(k)));
            mentioned[static_cast<std::size_t>(k)] = true;
            ++negations;
        }
    }

    if (allow_ambiguity && rng.bernoulli(cfg.ambiguity_prob)) {
        std::vector<int> absent;
        for (int k = 1; k < vocab.size(); ++k) {
            if (!mentioned[static_cast<std::size_t>(k)]) absent.push_back(k);
        }
        if (!absent.empty()) {
            const int k = absent[rng.below(absent.size())];
            sentences.push_back(instantiate(pick(ambiguous_templates()), synonym(k)));
        }
    }

    if (rng.bernoulli(0.3)) sentences.push_back(pick(filler_sentences()));
    if (rng.bernoulli(0.15)) sentences.push_back(pick(short_sentences()));

    rng.shuffle(sentences);
    std::string report;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        if (i) report += ' ';
        report += sentences[i];
    }
    return report;
}

std::string sample_id(const std::string& split, int index) {
    static const std::vector<std::pair<std::string, std::string>> prefixes = {
        {"pretrain", "pt"}, {"base-train", "bt"}, {"unseen-train", "ut"}, {"unseen-test", "ue"}};
    std::string prefix = "xx";
    for (const auto& [name, p] : prefixes) {
        if (name == split) prefix = p;
    }
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%s%05d", prefix.c_str(), index);
    return buf;
}

void write_f32(const std::filesystem::path& path, const std::vector<float>& data) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    for (const float v : data) wire::write_le(os, v);
    if (!os) throw IoError("short write to " + path.string());
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<std::string> word_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (const char ch : text) {
        if (std::isalnum(static_cast<unsigned char>(ch))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::vector<std::string> report_lexicon() {
    std::vector<std::string> words;
    auto take = [&words](const std::vector<std::string>& sentences) {
        for (const auto& s : sentences) {
            for (auto& w : word_tokens(s)) {
                if (w != "syn") words.push_back(std::move(w));  // skip the template placeholder
            }
        }
    };
    take(positive_templates());
    take(negative_templates());
    take(filler_sentences());
    take(short_sentences());
    take(clear_sentences());
    take(ambiguous_templates());
    for (const auto& obs : ObservationVocabulary::standard().entries()) {
        take(obs.synonyms);
        take({obs.name});
    }
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    return words;
}

void CorpusConfig::validate() const {
    auto positive = [](int v, const char* what) {
        if (v <= 0) throw ConfigError(std::string("corpus config: ") + what + " must be positive");
    };
    positive(pretrain_samples, "pretrain_samples");
    positive(base_train_per_class, "base_train_per_class");
    positive(unseen_train_per_class, "unseen_train_per_class");
    positive(unseen_test_per_class, "unseen_test_per_class");
    if (image_size < 8 || image_size % 8 != 0) {
        throw ConfigError("corpus config: image_size must be a positive multiple of 8");
    }
    if (findings_dist.size() != 4) throw ConfigError("corpus config: findings_dist needs 4 entries (counts 0-3)");
    double sum = 0;
    for (const double p : findings_dist) {
        if (p < 0) throw ConfigError("corpus config: findings_dist entries must be >= 0");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("corpus config: findings_dist must sum to 1");
    if (noise_sigma < 0) throw ConfigError("corpus config: noise_sigma must be >= 0");
    if (negation_prob < 0 || negation_prob > 1) throw ConfigError("corpus config: negation_prob must be in [0, 1]");
    if (ambiguity_prob < 0 || ambiguity_prob > 1) throw ConfigError("corpus config: ambiguity_prob must be in [0, 1]");
}

std::vector<int> draw_findings(const CorpusConfig& cfg, Rng& rng) {
    const double u = rng.uniform01();
    double acc = 0;
    int count = 0;
    for (std::size_t c = 0; c < cfg.findings_dist.size(); ++c) {
        acc += cfg.findings_dist[c];
        if (u < acc) {
            count = static_cast<int>(c);
            break;
        }
        count = static_cast<int>(c);
    }
    std::vector<int> pool;
    for (int k = 1; k < kNumObservations; ++k) pool.push_back(k);
    rng.shuffle(pool);
    pool.resize(static_cast<std::size_t>(count));
    std::sort(pool.begin(), pool.end());
    return pool;
}

GeneratedSample generate_sample(const CorpusConfig& cfg, const std::string& split, int index,
                                const std::vector<int>& finding_ids) {
    Rng rng = Rng(cfg.seed).derive("sample").derive(split).derive(static_cast<std::uint64_t>(index));
    GeneratedSample out;
    out.pixels = render_image(cfg, finding_ids, rng);
    out.generative_labels = LabelVector::from_findings(finding_ids);
    const bool ambiguity = split == "pretrain";
    out.record.report = compose_report(cfg, finding_ids, ambiguity, rng);
    out.record.labels = extract_labels(out.record.report, ObservationVocabulary::standard());
    out.record.id = sample_id(split, index);
    out.record.image_path = "images/" + out.record.id + ".f32";
    out.record.class_id = out.record.labels.lowest_positive();
    out.record.split = split;
    out.record.height = cfg.image_size;
    out.record.width = cfg.image_size;
    return out;
}

std::vector<SampleRecord> generate_corpus(const CorpusConfig& cfg, const std::filesystem::path& out_dir,
                                          const std::string& config_hash) {
    cfg.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "images", ec);
    if (ec) throw IoError("cannot create corpus directory " + (out_dir / "images").string() + ": " + ec.message());

    const auto& vocab = ObservationVocabulary::standard();
    std::vector<SampleRecord> records;

    auto emit = [&](const std::string& split, int index, const std::vector<int>& findings) {
        GeneratedSample s = generate_sample(cfg, split, index, findings);
        write_f32(out_dir / s.record.image_path, s.pixels);
        records.push_back(s.record);
    };

    {
        Rng draw_rng = Rng(cfg.seed).derive("findings");
        for (int i = 0; i < cfg.pretrain_samples; ++i) {
            Rng r = draw_rng.derive(static_cast<std::uint64_t>(i));
            emit("pretrain", i, draw_findings(cfg, r));
        }
    }
    auto emit_class_split = [&](const std::string& split, const std::vector<int>& classes, int per_class) {
        int index = 0;
        for (const int c : classes) {
            for (int i = 0; i < per_class; ++i, ++index) {
                std::vector<int> findings;
                if (c != kNoFindingIndex) findings.push_back(c);
                emit(split, index, findings);
            }
        }
    };
    emit_class_split("base-train", vocab.base_class_ids(), cfg.base_train_per_class);
    emit_class_split("unseen-train", vocab.unseen_class_ids(), cfg.unseen_train_per_class);
    emit_class_split("unseen-test", vocab.unseen_class_ids(), cfg.unseen_test_per_class);

    std::ofstream mf(out_dir / "manifest.jsonl", std::ios::binary);
    if (!mf) throw IoError("cannot open manifest for writing in " + out_dir.string());
    for (const auto& r : records) {
        json j;
        j["id"] = r.id;
        j["image"] = r.image_path;
        j["shape"] = {r.height, r.width, 1};
        j["report"] = r.report;
        j["labels"] = std::vector<int>(r.labels.values.begin(), r.labels.values.end());
        j["class_id"] = r.class_id;
        j["split"] = r.split;
        mf << j.dump() << '\n';
    }

    json meta;
    meta["config_hash"] = config_hash;
    meta["seed"] = cfg.seed;
    meta["image_size"] = cfg.image_size;
    meta["counts"] = {{"pretrain", cfg.pretrain_samples},
                      {"base-train", cfg.base_train_per_class * static_cast<int>(vocab.base_class_ids().size())},
                      {"unseen-train", cfg.unseen_train_per_class * static_cast<int>(vocab.unseen_class_ids().size())},
                      {"unseen-test", cfg.unseen_test_per_class * static_cast<int>(vocab.unseen_class_ids().size())}};
    std::ofstream metaf(out_dir / "meta.json", std::ios::binary);
    metaf << meta.dump(2) << '\n';

    return records;
}

std::vector<SampleRecord> load_manifest(const std::filesystem::path& corpus_dir) {
    std::ifstream mf(corpus_dir / "manifest.jsonl");
    if (!mf) throw IoError("cannot open manifest in " + corpus_dir.string());
    std::vector<SampleRecord> records;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(mf, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const std::exception& e) {
            throw IoError("manifest line " + std::to_string(lineno) + ": " + e.what());
        }
        SampleRecord r;
        r.id = j.at("id").get<std::string>();
        r.image_path = j.at("image").get<std::string>();
        const auto shape = j.at("shape").get<std::vector<int>>();
        if (shape.size() != 3 || shape[2] != 1) {
            throw IoError("manifest line " + std::to_string(lineno) + ": unsupported image shape");
        }
        r.height = shape[0];
        r.width = shape[1];
        r.report = j.at("report").get<std::string>();
        const auto labels = j.at("labels").get<std::vector<int>>();
        if (labels.size() != kNumObservations) {
            throw IoError("manifest line " + std::to_string(lineno) + ": labels must have 14 entries");
        }
        for (int k = 0; k < kNumObservations; ++k) {
            r.labels.values[static_cast<std::size_t>(k)] = static_cast<std::uint8_t>(labels[static_cast<std::size_t>(k)] ? 1 : 0);
        }
        r.class_id = j.at("class_id").get<int>();
        r.split = j.at("split").get<std::string>();
        records.push_back(std::move(r));
    }
    return records;
}

Tensor load_image(const std::filesystem::path& corpus_dir, const SampleRecord& rec) {
    const auto path = corpus_dir / rec.image_path;
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open image " + path.string());
    const std::size_t count = static_cast<std::size_t>(rec.height) * static_cast<std::size_t>(rec.width);
    std::vector<float> px(count);
    for (auto& v : px) {
        if (!wire::read_le(is, v)) throw IoError("image " + path.string() + " is truncated");
    }
    return Tensor::from_floats({rec.height, rec.width, 1}, std::move(px));
}

LabelVector extract_labels(const std::string& report, const ObservationVocabulary& vocab) {
    LabelVector lv{};
    for (const auto& sentence : split_sentences(report)) {
        const auto tokens = word_tokens(sentence);
        for (int k = 1; k < vocab.size(); ++k) {
            if (lv.values[static_cast<std::size_t>(k)]) continue;
            for (const auto& syn : vocab.at(k).synonyms) {
                const auto phrase = word_tokens(syn);
                for (std::size_t pos = 0; pos + phrase.size() <= tokens.size(); ++pos) {
                    if (!match_at(tokens, pos, phrase)) continue;
                    if (!negated_before(tokens, pos)) {
                        lv.values[static_cast<std::size_t>(k)] = 1;
                        break;
                    }
                }
                if (lv.values[static_cast<std::size_t>(k)]) break;
            }
        }
    }
    lv.apply_no_finding_rule();
    return lv;
}

std::vector<std::string> sentence_filter(const std::string& report, int min_tokens) {
    std::vector<std::string> kept;
    for (const auto& raw : split_sentences(report)) {
        const std::string s = trim(raw);
        if (s.empty()) continue;
        if (static_cast<int>(word_tokens(s).size()) >= min_tokens) kept.push_back(s);
    }
    return kept;
}

SimilarityTargets gt_similarity(const std::vector<LabelVector>& img_labels,
                                const std::vector<LabelVector>& txt_labels, Dtype dt) {
    if (img_labels.empty() || txt_labels.empty()) throw DomainError("gt_similarity: empty label batch");
    const std::int64_t n = static_cast<std::int64_t>(img_labels.size());
    const std::int64_t m = static_cast<std::int64_t>(txt_labels.size());
    std::vector<double> s(static_cast<std::size_t>(n * m));
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < m; ++j) {
            s[static_cast<std::size_t>(i * m + j)] =
                img_labels[static_cast<std::size_t>(i)].cosine(txt_labels[static_cast<std::size_t>(j)]);
        }
    }
    auto softmax_lines = [](const std::vector<double>& src, std::int64_t rows, std::int64_t cols, bool over_rows) {
        // over_rows: normalize each row; else normalize each column.
        std::vector<double> out(src.size());
        const std::int64_t outer = over_rows ? rows : cols;
        const std::int64_t inner = over_rows ? cols : rows;
        for (std::int64_t a = 0; a < outer; ++a) {
            auto at = [&](std::int64_t b) { return over_rows ? a * cols + b : b * cols + a; };
            double mx = src[static_cast<std::size_t>(at(0))];
            for (std::int64_t b = 1; b < inner; ++b) mx = std::max(mx, src[static_cast<std::size_t>(at(b))]);
            double sum = 0;
            for (std::int64_t b = 0; b < inner; ++b) {
                const double e = std::exp(src[static_cast<std::size_t>(at(b))] - mx);
                out[static_cast<std::size_t>(at(b))] = e;
                sum += e;
            }
            for (std::int64_t b = 0; b < inner; ++b) out[static_cast<std::size_t>(at(b))] /= sum;
        }
        return out;
    };
    SimilarityTargets t;
    t.s = Tensor::from_doubles({n, m}, s, dt);
    t.y_img2txt = Tensor::from_doubles({n, m}, softmax_lines(s, n, m, true), dt);
    t.y_txt2img = Tensor::from_doubles({n, m}, softmax_lines(s, n, m, false), dt);
    return t;
}

Tensor hflip(const Tensor& image) {
    const std::int64_t h = image.dim(0), w = image.dim(1);
    Tensor out = Tensor::zeros({h, w, 1});
    auto src = image.data<float>();
    auto dst = out.data_mut<float>();
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) dst[static_cast<std::size_t>(y * w + x)] = src[static_cast<std::size_t>(y * w + (w - 1 - x))];
    }
    return out;
}

Tensor augment(const Tensor& image, std::uint64_t seed) {
    if (image.rank() != 3 || image.dim(2) != 1) {
        throw ShapeError("augment: expected an (H, W, 1) image, got " + shape_str(image.shape()));
    }
    const std::int64_t h = image.dim(0), w = image.dim(1);
    Rng rng(seed);
    auto src = image.to_doubles();

    // resize to (H+4, W+4), bilinear
    const std::int64_t rh = h + 4, rw = w + 4;
    std::vector<double> resized(static_cast<std::size_t>(rh * rw));
    for (std::int64_t y = 0; y < rh; ++y) {
        for (std::int64_t x = 0; x < rw; ++x) {
            const double sy = std::clamp((y + 0.5) * static_cast<double>(h) / static_cast<double>(rh) - 0.5, 0.0,
                                         static_cast<double>(h - 1));
            const double sx = std::clamp((x + 0.5) * static_cast<double>(w) / static_cast<double>(rw) - 0.5, 0.0,
                                         static_cast<double>(w - 1));
            const auto y0 = static_cast<std::int64_t>(sy), x0 = static_cast<std::int64_t>(sx);
            const std::int64_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
            const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
            const double v = src[static_cast<std::size_t>(y0 * w + x0)] * (1 - fy) * (1 - fx) +
                             src[static_cast<std::size_t>(y0 * w + x1)] * (1 - fy) * fx +
                             src[static_cast<std::size_t>(y1 * w + x0)] * fy * (1 - fx) +
                             src[static_cast<std::size_t>(y1 * w + x1)] * fy * fx;
            resized[static_cast<std::size_t>(y * rw + x)] = v;
        }
    }

    // random crop back to (H, W)
    const auto cy = static_cast<std::int64_t>(rng.below(5));
    const auto cx = static_cast<std::int64_t>(rng.below(5));
    std::vector<double> cropped(static_cast<std::size_t>(h * w));
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            cropped[static_cast<std::size_t>(y * w + x)] = resized[static_cast<std::size_t>((y + cy) * rw + (x + cx))];
        }
    }

    if (rng.bernoulli(0.5)) {
        for (std::int64_t y = 0; y < h; ++y) {
            for (std::int64_t x = 0; x < w / 2; ++x) {
                std::swap(cropped[static_cast<std::size_t>(y * w + x)],
                          cropped[static_cast<std::size_t>(y * w + (w - 1 - x))]);
            }
        }
    }

    const double brightness = rng.uniform(0.8, 1.2);
    for (auto& v : cropped) v = std::clamp(v * brightness, 0.0, 1.0);

    // rotation, nearest neighbor, clamped to the canvas
    const double deg = rng.uniform(-10.0, 10.0);
    const double rad = deg * 3.14159265358979323846 / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double cyc = (static_cast<double>(h) - 1) / 2.0, cxc = (static_cast<double>(w) - 1) / 2.0;
    std::vector<float> out(static_cast<std::size_t>(h * w));
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            const double dy = static_cast<double>(y) - cyc, dx = static_cast<double>(x) - cxc;
            const double sy = cs * dy - sn * dx + cyc;
            const double sx = sn * dy + cs * dx + cxc;
            const auto ny = std::clamp(static_cast<std::int64_t>(std::llround(sy)), std::int64_t(0), h - 1);
            const auto nx = std::clamp(static_cast<std::int64_t>(std::llround(sx)), std::int64_t(0), w - 1);
            out[static_cast<std::size_t>(y * w + x)] = static_cast<float>(cropped[static_cast<std::size_t>(ny * w + nx)]);
        }
    }
    return Tensor::from_floats({h, w, 1}, std::move(out));
}

}  // namespace vlp
