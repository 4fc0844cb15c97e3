#include "vlprompt/cli.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "vlprompt/checkpoint.hpp"
#include "vlprompt/config.hpp"
#include "vlprompt/corpus.hpp"
#include "vlprompt/evalharness.hpp"
#include "vlprompt/introspect.hpp"
#include "vlprompt/pretrain.hpp"
#include "vlprompt/promptgen.hpp"

namespace vlp {

namespace {

namespace fs = std::filesystem;

struct GlobalOpts {
    std::string config_path;
    std::string out_dir;
    bool seed_set = false;
    std::uint64_t seed = 0;
};

RunConfig load_config(const GlobalOpts& g) {
    RunConfig cfg = g.config_path.empty() ? RunConfig{} : RunConfig::from_file(g.config_path);
    if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
    if (g.seed_set) {
        cfg.seed = g.seed;
        cfg.corpus.seed = g.seed;
    }
    cfg.validate();
    return cfg;
}

fs::path corpus_dir(const RunConfig& cfg) { return fs::path(cfg.out_dir) / "corpus"; }
fs::path pretrain_ckpt_path(const RunConfig& cfg) { return fs::path(cfg.out_dir) / "checkpoints" / "pretrain.mpck"; }
fs::path prompt_ckpt_path(const RunConfig& cfg, const std::string& mask, std::uint64_t seed) {
    return fs::path(cfg.out_dir) / "checkpoints" / ("prompt_" + mask + "_seed" + std::to_string(seed) + ".mpck");
}

void write_text(const fs::path& path, const std::string& text) {
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << text;
    if (!os) throw IoError("short write to " + path.string());
}

struct LoadedSplits {
    std::vector<SampleRecord> base_train, unseen_train, unseen_test;
    std::vector<Tensor> base_train_images, unseen_train_images, unseen_test_images;
};

LoadedSplits load_splits(const RunConfig& cfg) {
    const auto dir = corpus_dir(cfg);
    LoadedSplits out;
    for (const auto& rec : load_manifest(dir)) {
        if (rec.split == "base-train") {
            out.base_train_images.push_back(load_image(dir, rec));
            out.base_train.push_back(rec);
        } else if (rec.split == "unseen-train") {
            out.unseen_train_images.push_back(load_image(dir, rec));
            out.unseen_train.push_back(rec);
        } else if (rec.split == "unseen-test") {
            out.unseen_test_images.push_back(load_image(dir, rec));
            out.unseen_test.push_back(rec);
        }
    }
    return out;
}

struct PretrainedModel {
    Model model;
    Tokenizer tokenizer;
};

PretrainedModel load_pretrained(const RunConfig& cfg) {
    const auto path = pretrain_ckpt_path(cfg);
    if (!fs::exists(path)) {
        throw IoError("pretraining checkpoint " + path.string() + " not found; run `pretrain` first");
    }
    Checkpoint ckpt = load_checkpoint(path);
    if (!ckpt.meta.config_hash.empty() && ckpt.meta.config_hash != cfg.hash()) {
        std::cerr << "warning: checkpoint config hash " << ckpt.meta.config_hash
                  << " does not match the current config " << cfg.hash() << "\n";
    }
    Tokenizer tok(cfg.encoder.max_seq_len);
    Model model = model_from_checkpoint(ckpt, cfg.encoder, tok);
    model.set_requires_grad_all(false);  // frozen for every post-pretraining stage
    return {std::move(model), std::move(tok)};
}

/// Loads a cached prompt generator or trains one on the base classes.
PromptGeneratorParams base_trained_params(const RunConfig& cfg, const PretrainedModel& pm, const LoadedSplits& splits,
                                          const TrainableMask& mask, std::uint64_t seed, bool allow_cache = true) {
    const auto path = prompt_ckpt_path(cfg, mask.to_string(), seed);
    if (allow_cache && fs::exists(path)) {
        return prompt_params_from_checkpoint(load_checkpoint(path), cfg.encoder);
    }
    PromptGeneratorParams params = make_prompt_generator_name_init(
        cfg.prompt, cfg.encoder, ObservationVocabulary::standard(), pm.tokenizer, pm.model.txt.tok_emb, seed);
    std::vector<int> class_ids;
    for (const auto& rec : splits.base_train) class_ids.push_back(rec.class_id);
    PromptTrainLog log = prompt_train(pm.model, params, ObservationVocabulary::standard().base_class_ids(),
                                      splits.base_train_images, class_ids, cfg.prompt, mask, seed);
    std::cout << "prompt-train[" << mask.to_string() << ", seed " << seed << "]: final loss "
              << log.epoch_mean_loss.back() << ", train accuracy " << log.epoch_accuracy.back() << "\n";
    CheckpointMeta meta;
    meta.config_hash = cfg.hash();
    meta.seed = seed;
    meta.epoch = cfg.prompt.epochs;
    meta.extra["mask"] = mask.to_string();
    save_checkpoint(prompt_checkpoint(pm.model, params, meta), path);
    return params;
}

std::string seeds_tag(const std::vector<std::uint64_t>& seeds) {
    std::string tag;
    for (const auto s : seeds) tag += (tag.empty() ? "s" : "-") + std::to_string(s);
    return tag;
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int cmd_gen_corpus(const RunConfig& cfg) {
    const auto dir = corpus_dir(cfg);
    const auto records = generate_corpus(cfg.corpus, dir, cfg.hash());
    std::cout << "corpus: " << records.size() << " samples in " << dir.string() << "\n";
    return 0;
}

int cmd_pretrain(const RunConfig& cfg) {
    const auto dir = corpus_dir(cfg);
    if (!fs::exists(dir / "manifest.jsonl")) {
        throw IoError("corpus not found in " + dir.string() + "; run `gen-corpus` first");
    }
    std::ostringstream log_csv;
    PretrainResult result = pretrain_run(cfg, dir, &log_csv);
    write_text(fs::path(cfg.out_dir) / "logs" / "pretrain_loss.csv", log_csv.str());

    CheckpointMeta meta;
    meta.config_hash = cfg.hash();
    meta.seed = cfg.seed;
    meta.epoch = cfg.pretrain.epochs;
    save_checkpoint(model_checkpoint(result.model, meta), pretrain_ckpt_path(cfg));

    std::cout << "pretrain: first-epoch loss " << result.epoch_mean_loss.front() << ", final-epoch loss "
              << result.epoch_mean_loss.back() << ", retrieval top-1 " << result.retrieval_top1 << "\n";
    std::cout << "checkpoint: " << pretrain_ckpt_path(cfg).string() << "\n";
    return 0;
}

int cmd_prompt_train(const RunConfig& cfg, const std::string& mask_str, std::uint64_t seed) {
    const TrainableMask mask = TrainableMask::from_string(mask_str);
    PretrainedModel pm = load_pretrained(cfg);
    LoadedSplits splits = load_splits(cfg);
    if (splits.base_train.empty()) throw IoError("corpus has no base-train split");
    base_trained_params(cfg, pm, splits, mask, seed, /*allow_cache=*/false);
    std::cout << "prompt-train: mask " << mask.to_string() << ", seed " << seed << " -> "
              << prompt_ckpt_path(cfg, mask.to_string(), seed).string() << "\n";
    return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& protocol_str, const std::vector<std::uint64_t>& seeds,
             int max_threads) {
    PretrainedModel pm = load_pretrained(cfg);
    LoadedSplits splits = load_splits(cfg);

    std::vector<ProtocolSpec> protocols;
    if (protocol_str == "grid") {
        protocols = protocol_grid();
    } else {
        protocols.push_back(parse_protocol(protocol_str));
    }

    RunProtocolInputs in;
    in.model = &pm.model;
    in.tokenizer = &pm.tokenizer;
    in.seeds = seeds;
    in.unseen_train = splits.unseen_train;
    in.unseen_train_images = splits.unseen_train_images;
    in.unseen_test = splits.unseen_test;
    in.unseen_test_images = splits.unseen_test_images;
    for (const auto s : seeds) {
        in.per_seed_params.push_back(base_trained_params(cfg, pm, splits, TrainableMask{}, s));
    }

    ProtocolRunResult result = run_protocols(in, protocols, cfg.prompt, max_threads);

    const std::string run_id = "eval_" + cfg.hash().substr(0, 8) + "_" +
                               (protocol_str == "grid" ? "grid" : protocols[0].name) + "_" + seeds_tag(seeds);
    std::string run_file = run_id;
    for (auto& ch : run_file) {
        if (ch == ':') ch = '-';
    }
    const auto csv_path = fs::path(cfg.out_dir) / "metrics" / (run_file + ".csv");
    write_text(csv_path, metrics_csv(result.reports));
    write_text(fs::path(cfg.out_dir) / "metrics" / (run_file + ".json"), metrics_json(result, cfg.hash()));

    for (const auto& [name, acc] : result.summary) {
        std::cout << name << ": median accuracy " << acc << "\n";
    }
    std::cout << "metrics: " << csv_path.string() << "\n";
    return 0;
}

int cmd_ablate(const RunConfig& cfg, const std::vector<std::uint64_t>& seeds, int max_threads) {
    PretrainedModel pm = load_pretrained(cfg);
    LoadedSplits splits = load_splits(cfg);
    const std::vector<std::string> variants = {"class", "context_class", "metanet_class", "full"};
    const auto protocols = protocol_grid();

    struct Job {
        std::size_t variant_idx;
        std::size_t seed_idx;
    };
    std::vector<Job> jobs;
    for (std::size_t v = 0; v < variants.size(); ++v) {
        for (std::size_t s = 0; s < seeds.size(); ++s) jobs.push_back({v, s});
    }
    // one grid result per (variant, seed)
    std::vector<std::vector<MetricsReport>> grid_reports(jobs.size());

    auto run_job = [&](const Job& job) {
        const TrainableMask mask = TrainableMask::from_string(variants[job.variant_idx]);
        const std::uint64_t seed = seeds[job.seed_idx];
        RunProtocolInputs in;
        in.model = &pm.model;
        in.tokenizer = &pm.tokenizer;
        in.seeds = {seed};
        in.unseen_train = splits.unseen_train;
        in.unseen_train_images = splits.unseen_train_images;
        in.unseen_test = splits.unseen_test;
        in.unseen_test_images = splits.unseen_test_images;
        in.per_seed_params.push_back(base_trained_params(cfg, pm, splits, mask, seed));
        return run_protocols(in, protocols, cfg.prompt, /*max_threads=*/1).reports;
    };

    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    const std::size_t workers =
        std::min<std::size_t>(jobs.size(), max_threads > 0 ? static_cast<std::size_t>(max_threads) : hw);
    if (workers <= 1) {
        for (std::size_t j = 0; j < jobs.size(); ++j) grid_reports[j] = run_job(jobs[j]);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (;;) {
                    const std::size_t j = next.fetch_add(1);
                    if (j >= jobs.size()) return;
                    grid_reports[j] = run_job(jobs[j]);
                }
            });
        }
        for (auto& t : pool) t.join();
    }

    // long-form rows
    std::string csv = "variant,protocol,seed,accuracy\n";
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        for (const auto& rep : grid_reports[j]) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.6f", rep.accuracy);
            csv += variants[jobs[j].variant_idx] + "," + rep.protocol + "," + std::to_string(rep.seed) + "," + buf +
                   "\n";
        }
    }
    // 4 x 7 median table
    std::string table = "variant";
    for (const auto& p : protocols) table += "," + p.name;
    table += "\n";
    for (std::size_t v = 0; v < variants.size(); ++v) {
        table += variants[v];
        for (std::size_t p = 0; p < protocols.size(); ++p) {
            std::vector<double> accs;
            for (std::size_t j = 0; j < jobs.size(); ++j) {
                if (jobs[j].variant_idx != v) continue;
                accs.push_back(grid_reports[j][p].accuracy);
            }
            std::sort(accs.begin(), accs.end());
            const double median = accs.size() % 2 ? accs[accs.size() / 2]
                                                  : 0.5 * (accs[accs.size() / 2 - 1] + accs[accs.size() / 2]);
            char buf[32];
            std::snprintf(buf, sizeof(buf), ",%.6f", median);
            table += buf;
        }
        table += "\n";
    }

    const std::string tag = "ablate_" + cfg.hash().substr(0, 8) + "_" + seeds_tag(seeds);
    write_text(fs::path(cfg.out_dir) / "metrics" / (tag + ".csv"), csv);
    write_text(fs::path(cfg.out_dir) / "metrics" / (tag + "_table.csv"), table);
    std::cout << table;
    std::cout << "ablation: " << (fs::path(cfg.out_dir) / "metrics" / (tag + ".csv")).string() << "\n";
    return 0;
}

int cmd_inspect(const RunConfig& cfg, const std::string& ckpt_path, bool do_nearest, bool do_context_sim,
                bool do_footprint, bool do_activation, int k, int n_images) {
    const fs::path path = ckpt_path.empty() ? prompt_ckpt_path(cfg, "full", cfg.seeds.front()) : fs::path(ckpt_path);
    if (!fs::exists(path)) throw IoError("checkpoint " + path.string() + " not found");
    Checkpoint ckpt = load_checkpoint(path);
    Tokenizer tok(cfg.encoder.max_seq_len);
    Model model = model_from_checkpoint(ckpt, cfg.encoder, tok);
    model.set_requires_grad_all(false);

    const fs::path out = fs::path(cfg.out_dir) / "inspect";
    const bool any = do_nearest || do_context_sim || do_footprint || do_activation;
    if (!any) throw ConfigError("inspect: choose at least one of --nearest-words/--context-sim/--footprint/--activation-map");

    if (do_nearest || do_context_sim || do_activation) {
        if (!ckpt.has("prompt.ctx") && (do_nearest || do_context_sim)) {
            throw IoError("checkpoint " + path.string() + " carries no prompt generator tensors");
        }
    }

    if (do_nearest) {
        PromptGeneratorParams params = prompt_params_from_checkpoint(ckpt, cfg.encoder);
        std::vector<std::vector<WordNeighbor>> per_slot;
        for (std::int64_t slot = 0; slot < params.ctx.dim(0); ++slot) {
            Tensor v = Tensor::from_doubles({params.ctx.dim(1)}, [&] {
                std::vector<double> row(static_cast<std::size_t>(params.ctx.dim(1)));
                for (std::int64_t j = 0; j < params.ctx.dim(1); ++j) {
                    row[static_cast<std::size_t>(j)] = params.ctx.value_at(slot * params.ctx.dim(1) + j);
                }
                return row;
            }());
            per_slot.push_back(nearest_words(v, model.txt.tok_emb, tok, k));
        }
        write_text(out / "nearest_words.csv", neighbors_csv(per_slot));
        std::cout << "nearest words: " << (out / "nearest_words.csv").string() << "\n";
    }
    if (do_context_sim) {
        PromptGeneratorParams params = prompt_params_from_checkpoint(ckpt, cfg.encoder);
        LoadedSplits splits = load_splits(cfg);
        if (static_cast<int>(splits.unseen_test_images.size()) < n_images) {
            throw DomainError("inspect: unseen-test split smaller than requested image count");
        }
        std::vector<Tensor> images(splits.unseen_test_images.begin(),
                                   splits.unseen_test_images.begin() + n_images);
        Tensor sim = context_similarity_matrix(model, params, images);
        write_text(out / "context_similarity.csv", matrix_csv(sim));
        std::cout << "context similarity: " << (out / "context_similarity.csv").string() << "\n";
    }
    if (do_footprint) {
        FootprintReport report = count_footprint(ckpt, cfg.encoder, cfg.prompt);
        write_text(out / "footprint.csv", footprint_csv(report));
        std::cout << footprint_csv(report);
    }
    if (do_activation) {
        LoadedSplits splits = load_splits(cfg);
        if (splits.unseen_test_images.empty()) throw DomainError("inspect: no unseen-test images");
        const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(n_images), splits.unseen_test_images.size());
        std::error_code ec;
        fs::create_directories(out, ec);
        for (std::size_t i = 0; i < count; ++i) {
            Tensor heat = activation_map(model, splits.unseen_test_images[i]);
            const std::string stem = "activation_" + splits.unseen_test[i].id;
            write_text(out / (stem + ".csv"), matrix_csv(heat));
            write_pgm(heat, out / (stem + ".pgm"));
        }
        std::cout << "activation maps: " << count << " files in " << out.string() << "\n";
    }
    return 0;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            seeds.push_back(std::stoull(item));
        } catch (...) {
            throw ConfigError("bad seed list entry '" + item + "'");
        }
    }
    if (seeds.empty()) throw ConfigError("seed list is empty");
    return seeds;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args) {
    CLI::App app{"weakly supervised prompt learning for vision-language classification"};
    app.require_subcommand(0, 1);
    app.fallthrough(false);

    GlobalOpts g;
    app.add_option("--config", g.config_path, "path to the run config json");
    app.add_option("--out", g.out_dir, "output directory (overrides the config)");
    auto* seed_opt = app.add_option("--seed", g.seed, "master seed override");

    auto* gen = app.add_subcommand("gen-corpus", "generate the synthetic image-report corpus");
    auto* pre = app.add_subcommand("pretrain", "decoupled image-text semantic-matching pretraining");

    auto* pt = app.add_subcommand("prompt-train", "train the prompt generator on base classes");
    std::string mask_str = "full";
    std::uint64_t pt_seed = 0;
    bool pt_seed_set = false;
    pt->add_option("--mask", mask_str, "trainable groups: full|class|context_class|metanet_class");
    auto* pt_seed_opt = pt->add_option("--train-seed", pt_seed, "prompt training seed (default: first eval seed)");

    auto* ev = app.add_subcommand("eval", "run zero/few/full-shot protocols on the unseen split");
    std::string protocol = "grid";
    std::string seeds_str;
    int threads = 0;
    ev->add_option("--protocol", protocol, "zero | few:<n> | full | grid");
    ev->add_option("--seeds", seeds_str, "comma-separated evaluation seeds");
    ev->add_option("--threads", threads, "worker threads (default: hardware)");

    auto* ab = app.add_subcommand("ablate", "run the 4-variant x 7-protocol ablation grid");
    std::string ab_seeds_str;
    int ab_threads = 0;
    ab->add_option("--seeds", ab_seeds_str, "comma-separated evaluation seeds");
    ab->add_option("--threads", ab_threads, "worker threads (default: hardware)");

    auto* ins = app.add_subcommand("inspect", "post-hoc analyses of a trained checkpoint");
    std::string ins_ckpt;
    bool do_nearest = false, do_ctx = false, do_foot = false, do_act = false;
    int k = 30, n_images = 10;
    ins->add_option("--checkpoint", ins_ckpt, "checkpoint to inspect (default: prompt_full_seed<first>)");
    ins->add_flag("--nearest-words", do_nearest, "nearest vocabulary words per learned context slot");
    ins->add_flag("--context-sim", do_ctx, "pairwise cosine of per-image conditioned contexts");
    ins->add_flag("--footprint", do_foot, "parameter and FLOP accounting per component");
    ins->add_flag("--activation-map", do_act, "last-layer activation heatmaps");
    ins->add_option("-k", k, "neighbors per context slot");
    ins->add_option("-n", n_images, "images for --context-sim / --activation-map");

    std::vector<const char*> argv;
    argv.push_back("vlprompt");
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, exit 0
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help() << "\n";
        return 2;
    }
    g.seed_set = seed_opt->count() > 0;
    pt_seed_set = pt_seed_opt->count() > 0;

    try {
        if (app.get_subcommands().empty()) {
            std::cout << app.help() << "\n";
            return 0;
        }
        RunConfig cfg = load_config(g);
        if (gen->parsed()) return cmd_gen_corpus(cfg);
        if (pre->parsed()) return cmd_pretrain(cfg);
        if (pt->parsed()) {
            const std::uint64_t s = pt_seed_set ? pt_seed : cfg.seeds.front();
            return cmd_prompt_train(cfg, mask_str, s);
        }
        if (ev->parsed()) {
            const auto seeds = seeds_str.empty() ? cfg.seeds : parse_seed_list(seeds_str);
            return cmd_eval(cfg, protocol, seeds, threads);
        }
        if (ab->parsed()) {
            const auto seeds = ab_seeds_str.empty() ? cfg.seeds : parse_seed_list(ab_seeds_str);
            return cmd_ablate(cfg, seeds, ab_threads);
        }
        if (ins->parsed()) return cmd_inspect(cfg, ins_ckpt, do_nearest, do_ctx, do_foot, do_act, k, n_images);
        std::cout << app.help() << "\n";
        return 0;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace vlp
