#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "vlprompt/errors.hpp"

namespace vlp {

/// Word-level tokenizer over the report lexicon plus observation class names.
/// Ids are dense; PAD is always 0, then UNK, BOS, EOS, then sorted words.
/// The vocabulary is derived from static template text, so every run of the
/// program builds the identical tokenizer.
class Tokenizer {
public:
    static constexpr std::int64_t kPad = 0;

    explicit Tokenizer(int max_len = 32);

    /// BOS + words + EOS, padded with PAD or truncated (EOS kept last).
    std::vector<std::int64_t> encode(const std::string& text) const;
    /// Ids of the words of a phrase, no specials, no padding. Unknown words
    /// map to UNK.
    std::vector<std::int64_t> word_ids(const std::string& phrase) const;
    const std::string& token(std::int64_t id) const;

    std::int64_t unk_id() const { return 1; }
    std::int64_t bos_id() const { return 2; }
    std::int64_t eos_id() const { return 3; }
    bool is_special(std::int64_t id) const { return id < 4; }

    int vocab_size() const { return static_cast<int>(tokens_.size()); }
    int max_len() const { return max_len_; }

private:
    int max_len_;
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::int64_t> index_;
};

}  // namespace vlp
