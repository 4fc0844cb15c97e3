#include "vlprompt/evalharness.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <thread>

namespace vlp {

namespace {

using json = nlohmann::ordered_json;

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

std::string fmt6(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

double auc_rank(const std::vector<double>& scores, const std::vector<int>& is_positive) {
    std::size_t n_pos = 0, n_neg = 0;
    for (const int p : is_positive) (p ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0) return nan();

    // midranks over the pooled scores
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(scores.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;  // 1-based midrank
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    double pos_rank_sum = 0;
    for (std::size_t k = 0; k < scores.size(); ++k) {
        if (is_positive[k]) pos_rank_sum += rank[k];
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (pos_rank_sum - np * (np + 1) / 2.0) / (np * nn);
}

MetricsReport evaluate(const Model& model, const PromptGeneratorParams& params, const std::vector<int>& class_ids,
                       const std::vector<SampleRecord>& split, const std::vector<Tensor>& images) {
    if (split.empty()) throw DomainError("evaluate: empty split");
    if (split.size() != images.size()) throw ShapeError("evaluate: split/image count mismatch");
    const auto t0 = std::chrono::steady_clock::now();

    const std::size_t k = class_ids.size();
    auto class_index = [&](int cid) {
        for (std::size_t c = 0; c < k; ++c) {
            if (class_ids[c] == cid) return static_cast<int>(c);
        }
        return -1;
    };

    MetricsReport rep;
    rep.class_ids = class_ids;
    rep.confusion.assign(k, std::vector<int>(k, 0));
    std::vector<std::vector<double>> class_scores(k);  // per class: score per sample
    std::vector<std::vector<int>> class_truth(k);

    int correct = 0;
    for (std::size_t s = 0; s < split.size(); ++s) {
        const int truth = class_index(split[s].class_id);
        if (truth < 0) throw DomainError("evaluate: sample class " + std::to_string(split[s].class_id) +
                                         " is outside the evaluated class set");
        Classification c = classify(model, params, images[s], class_ids);
        const int pred = class_index(c.predicted_class);
        rep.confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)]++;
        if (pred == truth) ++correct;
        for (std::size_t ci = 0; ci < k; ++ci) {
            class_scores[ci].push_back(c.probs[ci]);
            class_truth[ci].push_back(static_cast<std::size_t>(truth) == ci ? 1 : 0);
        }
    }
    rep.accuracy = static_cast<double>(correct) / static_cast<double>(split.size());

    const auto& vocab = ObservationVocabulary::standard();
    double auc_sum = 0;
    int auc_n = 0;
    for (std::size_t c = 0; c < k; ++c) {
        ClassMetrics cm;
        cm.class_id = class_ids[c];
        cm.class_name = vocab.at(class_ids[c]).name;
        const int tp = rep.confusion[c][c];
        int fn = 0, fp = 0;
        for (std::size_t o = 0; o < k; ++o) {
            if (o != c) {
                fn += rep.confusion[c][o];
                fp += rep.confusion[o][c];
            }
        }
        const int total = static_cast<int>(split.size());
        const int tn = total - tp - fn - fp;
        const int support = tp + fn;
        if (support == 0) {
            cm.absent = true;
            cm.precision = cm.recall = cm.specificity = cm.f1 = nan();
            rep.absent_class_warning = true;
        } else {
            cm.precision = (tp + fp) ? static_cast<double>(tp) / (tp + fp) : 0.0;
            cm.recall = static_cast<double>(tp) / support;
            cm.specificity = (tn + fp) ? static_cast<double>(tn) / (tn + fp) : 0.0;
            cm.f1 = (cm.precision + cm.recall) > 0 ? 2 * cm.precision * cm.recall / (cm.precision + cm.recall) : 0.0;
            const double auc = auc_rank(class_scores[c], class_truth[c]);
            if (!std::isnan(auc)) {
                auc_sum += auc;
                ++auc_n;
            }
        }
        rep.per_class.push_back(std::move(cm));
    }
    rep.macro_auc = auc_n ? auc_sum / auc_n : nan();
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

ProtocolSpec parse_protocol(const std::string& text) {
    if (text == "zero") return {"zero", 0};
    if (text == "full") return {"full", -1};
    if (text.rfind("few:", 0) == 0) {
        const std::string num = text.substr(4);
        int n = -1;
        try {
            n = std::stoi(num);
        } catch (...) {
            throw ConfigError("protocol: bad shot count '" + num + "'");
        }
        static const int allowed[] = {1, 2, 4, 8, 16};
        for (const int a : allowed) {
            if (n == a) return {"few:" + std::to_string(n), n};
        }
        throw ConfigError("protocol: few-shot count " + std::to_string(n) + " not in {1, 2, 4, 8, 16}");
    }
    throw ConfigError("protocol must be zero, few:<n> or full, got '" + text + "'");
}

std::vector<ProtocolSpec> protocol_grid() {
    return {{"zero", 0}, {"few:1", 1}, {"few:2", 2}, {"few:4", 4}, {"few:8", 8}, {"few:16", 16}, {"full", -1}};
}

ProtocolRunResult run_protocols(const RunProtocolInputs& in, const std::vector<ProtocolSpec>& protocols,
                                const PromptSchedule& schedule, int max_threads) {
    if (!in.model || !in.tokenizer) throw DomainError("run_protocols: missing model");
    if (in.per_seed_params.size() != in.seeds.size()) {
        throw DomainError("run_protocols: need one trained prompt generator per seed");
    }
    const auto& vocab = ObservationVocabulary::standard();
    const auto& unseen = vocab.unseen_class_ids();

    struct Job {
        std::size_t protocol_idx;
        std::size_t seed_idx;
    };
    std::vector<Job> jobs;
    for (std::size_t p = 0; p < protocols.size(); ++p) {
        for (std::size_t s = 0; s < in.seeds.size(); ++s) jobs.push_back({p, s});
    }
    std::vector<MetricsReport> reports(jobs.size());

    auto run_job = [&](const Job& job) {
        const ProtocolSpec& spec = protocols[job.protocol_idx];
        const std::uint64_t seed = in.seeds[job.seed_idx];

        // every protocol starts from the base-trained generator with
        // name-initialized unseen class rows
        PromptGeneratorParams params = in.per_seed_params[job.seed_idx].clone();
        zero_shot_setup(params, unseen, vocab, *in.tokenizer, in.model->txt.tok_emb);

        ShotSelection selection;
        if (spec.shots > 0) {
            params = fewshot_finetune(*in.model, params, unseen, spec.shots, in.unseen_train,
                                      in.unseen_train_images, schedule, seed, &selection);
        } else if (spec.shots < 0) {
            params = fullshot_train(*in.model, params, unseen, in.unseen_train, in.unseen_train_images, schedule,
                                    seed);
        }
        MetricsReport rep = evaluate(*in.model, params, unseen, in.unseen_test, in.unseen_test_images);
        rep.protocol = spec.name;
        rep.seed = seed;
        rep.shots = spec.shots;
        rep.shot_selection = std::move(selection);
        return rep;
    };

    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    const std::size_t workers =
        std::min<std::size_t>(jobs.size(), max_threads > 0 ? static_cast<std::size_t>(max_threads) : hw);
    if (workers <= 1) {
        for (std::size_t j = 0; j < jobs.size(); ++j) reports[j] = run_job(jobs[j]);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (;;) {
                    const std::size_t j = next.fetch_add(1);
                    if (j >= jobs.size()) return;
                    reports[j] = run_job(jobs[j]);
                }
            });
        }
        for (auto& t : pool) t.join();
    }

    ProtocolRunResult out;
    out.reports = std::move(reports);
    for (std::size_t p = 0; p < protocols.size(); ++p) {
        std::vector<double> accs;
        for (std::size_t s = 0; s < in.seeds.size(); ++s) accs.push_back(out.reports[p * in.seeds.size() + s].accuracy);
        std::sort(accs.begin(), accs.end());
        const double median = accs.size() % 2 ? accs[accs.size() / 2]
                                              : 0.5 * (accs[accs.size() / 2 - 1] + accs[accs.size() / 2]);
        out.summary.emplace_back(protocols[p].name, median);
    }
    return out;
}

std::string metrics_csv(const std::vector<MetricsReport>& reports) {
    std::string csv = "protocol,seed,shots,class,precision,recall,specificity,f1,accuracy,auc,seconds\n";
    for (const auto& rep : reports) {
        for (const auto& cm : rep.per_class) {
            csv += rep.protocol + "," + std::to_string(rep.seed) + "," + std::to_string(rep.shots) + "," +
                   cm.class_name + "," + fmt6(cm.precision) + "," + fmt6(cm.recall) + "," + fmt6(cm.specificity) +
                   "," + fmt6(cm.f1) + ",,," + "0.000000\n";
        }
        csv += rep.protocol + "," + std::to_string(rep.seed) + "," + std::to_string(rep.shots) + ",overall,,,,," +
               fmt6(rep.accuracy) + "," + fmt6(rep.macro_auc) + ",0.000000\n";
    }
    return csv;
}

std::string metrics_json(const ProtocolRunResult& result, const std::string& config_hash) {
    json j;
    j["config_hash"] = config_hash;
    json reports = json::array();
    for (const auto& rep : result.reports) {
        json r;
        r["protocol"] = rep.protocol;
        r["seed"] = rep.seed;
        r["shots"] = rep.shots;
        r["accuracy"] = rep.accuracy;
        r["macro_auc"] = std::isnan(rep.macro_auc) ? json() : json(rep.macro_auc);
        r["wall_seconds"] = rep.wall_seconds;
        r["absent_class_warning"] = rep.absent_class_warning;
        json conf = json::array();
        for (const auto& row : rep.confusion) conf.push_back(row);
        r["confusion"] = conf;
        json per_class = json::array();
        for (const auto& cm : rep.per_class) {
            json c;
            c["class"] = cm.class_name;
            c["precision"] = cm.absent ? json() : json(cm.precision);
            c["recall"] = cm.absent ? json() : json(cm.recall);
            c["specificity"] = cm.absent ? json() : json(cm.specificity);
            c["f1"] = cm.absent ? json() : json(cm.f1);
            per_class.push_back(c);
        }
        r["per_class"] = per_class;
        if (rep.shot_selection.shots > 0) {
            r["shot_sample_ids"] = rep.shot_selection.sample_ids;
        }
        reports.push_back(r);
    }
    j["reports"] = reports;
    json summary = json::array();
    for (const auto& [name, median_acc] : result.summary) {
        summary.push_back({{"protocol", name}, {"median_accuracy", median_acc}});
    }
    j["summary"] = summary;
    return j.dump(2);
}

}  // namespace vlp
