#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "vlprompt/checkpoint.hpp"
#include "vlprompt/config.hpp"

using namespace vlp;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const char* tag) {
    return fs::temp_directory_path() / (std::string("vlp_ckpt_") + tag + "_" + std::to_string(::getpid()) + ".mpck");
}

Checkpoint sample_checkpoint() {
    Checkpoint ckpt;
    ckpt.meta.config_hash = "deadbeefcafef00d";
    ckpt.meta.seed = 42;
    ckpt.meta.epoch = 7;
    ckpt.meta.extra["mask"] = "full";
    Rng rng(3);
    ckpt.tensors.emplace_back("alpha", Tensor::uniform({3, 4}, rng, -1, 1));
    ckpt.tensors.emplace_back("beta.w", Tensor::uniform({2, 2, 2}, rng, -1, 1));
    ckpt.tensors.emplace_back("prompt.ctx", Tensor::uniform({5, 4}, rng, -1, 1));
    return ckpt;
}

}  // namespace

TEST_CASE("checkpoint save/load round-trips bit-exactly") {
    const auto path = temp_file("roundtrip");
    Checkpoint ckpt = sample_checkpoint();
    save_checkpoint(ckpt, path);
    Checkpoint loaded = load_checkpoint(path);

    CHECK(loaded.meta.config_hash == "deadbeefcafef00d");
    CHECK(loaded.meta.seed == 42);
    CHECK(loaded.meta.epoch == 7);
    CHECK(loaded.meta.extra.at("mask") == "full");
    REQUIRE(loaded.tensors.size() == ckpt.tensors.size());
    for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
        CHECK(loaded.tensors[i].first == ckpt.tensors[i].first);
        CHECK(loaded.tensors[i].second.shape() == ckpt.tensors[i].second.shape());
        // bit-exact float payloads
        auto a = ckpt.tensors[i].second.data<float>();
        auto b = loaded.tensors[i].second.data<float>();
        CHECK(std::equal(a.begin(), a.end(), b.begin()));
    }
    fs::remove(path);
}

TEST_CASE("saving twice produces identical bytes") {
    const auto p1 = temp_file("bytes1");
    const auto p2 = temp_file("bytes2");
    save_checkpoint(sample_checkpoint(), p1);
    save_checkpoint(sample_checkpoint(), p2);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    const std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);
    CHECK(!s1.empty());
    fs::remove(p1);
    fs::remove(p2);
}

TEST_CASE("truncated checkpoints are rejected with a byte offset") {
    const auto path = temp_file("trunc");
    save_checkpoint(sample_checkpoint(), path);
    const auto full_size = fs::file_size(path);

    // cut the file mid-tensor-payload
    for (const auto frac : {0.35, 0.7, 0.95}) {
        const auto cut = static_cast<std::uintmax_t>(static_cast<double>(full_size) * frac);
        std::ifstream in(path, std::ios::binary);
        std::string bytes(cut, '\0');
        in.read(bytes.data(), static_cast<std::streamsize>(cut));
        const auto tpath = temp_file("truncated");
        std::ofstream out(tpath, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.close();
        CHECK_THROWS_WITH_AS(load_checkpoint(tpath), doctest::Contains("byte offset"), IoError);
        fs::remove(tpath);
    }
    fs::remove(path);
}

TEST_CASE("bad magic and version mismatches are named") {
    const auto path = temp_file("magic");
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOPE" << std::string(64, '\0');
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"), IoError);
    {
        std::ofstream os(path, std::ios::binary);
        os << "MPCK";
        const std::uint32_t bad_version = 999;
        os.write(reinterpret_cast<const char*>(&bad_version), 4);
        os << std::string(16, '\0');
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("999"), IoError);
    CHECK_THROWS_AS(load_checkpoint(fs::temp_directory_path() / "vlp_no_such_file.mpck"), IoError);
    fs::remove(path);
}

TEST_CASE("restore_tensors copies values and validates shapes") {
    const auto path = temp_file("restore");
    save_checkpoint(sample_checkpoint(), path);
    Checkpoint loaded = load_checkpoint(path);

    Tensor dst = Tensor::zeros({3, 4}, Dtype::F32, true);
    restore_tensors(loaded, {{"alpha", dst}});
    CHECK(dst.value_at(5) == loaded.at("alpha").value_at(5));

    Tensor wrong = Tensor::zeros({4, 3});
    CHECK_THROWS_AS(restore_tensors(loaded, {{"alpha", wrong}}), IoError);
    CHECK_THROWS_AS(restore_tensors(loaded, {{"missing", dst}}), IoError);
    fs::remove(path);
}

TEST_CASE("config: defaults validate, canonical hash is stable") {
    RunConfig cfg;
    cfg.validate();
    CHECK(cfg.hash().size() == 16);
    CHECK(cfg.hash() == RunConfig{}.hash());

    RunConfig other;
    other.seed = 999;
    CHECK(other.hash() != cfg.hash());
}

TEST_CASE("config: json parsing, unknown keys, named errors") {
    RunConfig cfg = RunConfig::from_json_text(R"({"seed": 5, "pretrain": {"epochs": 3}})");
    CHECK(cfg.seed == 5);
    CHECK(cfg.corpus.seed == 5);
    CHECK(cfg.pretrain.epochs == 3);

    CHECK_THROWS_WITH_AS(RunConfig::from_json_text(R"({"bogus": 1})"), doctest::Contains("bogus"), ConfigError);
    CHECK_THROWS_WITH_AS(RunConfig::from_json_text(R"({"pretrain": {"lr": -1}})"), doctest::Contains("pretrain.lr"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(RunConfig::from_json_text(R"({"corpus": {"typo_key": 2}})"), doctest::Contains("typo_key"),
                         ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"encoder": {"variant": "vgg"}})"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text("not json at all"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"tau_init": -0.5})"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"seeds": []})"), ConfigError);
    // wrong type gets a field-naming error
    CHECK_THROWS_WITH_AS(RunConfig::from_json_text(R"({"pretrain": {"epochs": "ten"}})"),
                         doctest::Contains("pretrain.epochs"), ConfigError);
}
