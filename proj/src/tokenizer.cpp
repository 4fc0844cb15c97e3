#include "vlprompt/tokenizer.hpp"

#include <algorithm>

#include "vlprompt/corpus.hpp"
#include "vlprompt/vocab.hpp"

namespace vlp {

Tokenizer::Tokenizer(int max_len) : max_len_(max_len) {
    if (max_len_ < 3) throw ConfigError("tokenizer: max_len must be at least 3 (BOS + word + EOS)");
    std::vector<std::string> words = report_lexicon();
    for (const auto& obs : ObservationVocabulary::standard().entries()) {
        for (auto& w : word_tokens(obs.name)) words.push_back(std::move(w));
    }
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());

    tokens_ = {"<pad>", "<unk>", "<bos>", "<eos>"};
    tokens_.insert(tokens_.end(), words.begin(), words.end());
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = static_cast<std::int64_t>(i);
}

std::vector<std::int64_t> Tokenizer::encode(const std::string& text) const {
    std::vector<std::int64_t> ids;
    ids.reserve(static_cast<std::size_t>(max_len_));
    ids.push_back(bos_id());
    for (const auto& w : word_tokens(text)) {
        if (static_cast<int>(ids.size()) == max_len_ - 1) break;  // leave room for EOS
        const auto it = index_.find(w);
        ids.push_back(it == index_.end() ? unk_id() : it->second);
    }
    ids.push_back(eos_id());
    ids.resize(static_cast<std::size_t>(max_len_), kPad);
    return ids;
}

std::vector<std::int64_t> Tokenizer::word_ids(const std::string& phrase) const {
    std::vector<std::int64_t> ids;
    for (const auto& w : word_tokens(phrase)) {
        const auto it = index_.find(w);
        ids.push_back(it == index_.end() ? unk_id() : it->second);
    }
    return ids;
}

const std::string& Tokenizer::token(std::int64_t id) const {
    if (id < 0 || id >= static_cast<std::int64_t>(tokens_.size())) {
        throw Error("tokenizer: id " + std::to_string(id) + " out of range");
    }
    return tokens_[static_cast<std::size_t>(id)];
}

}  // namespace vlp
