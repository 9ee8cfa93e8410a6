#pragma once

// Word-level vocabulary with fixed PAD/UNK slots and deterministic ordering.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "xlm/common.hpp"

namespace xlm {

inline std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::istringstream in(text);
    std::string w;
    while (in >> w) words.push_back(w);
    return words;
}

class Vocabulary {
public:
    static constexpr std::uint32_t kPad = 0;
    static constexpr std::uint32_t kUnk = 1;
    static constexpr const char* kPadWord = "<pad>";
    static constexpr const char* kUnkWord = "<unk>";

    Vocabulary() {
        words_ = {kPadWord, kUnkWord};
        ids_ = {{kPadWord, kPad}, {kUnkWord, kUnk}};
    }

    // Ordering: frequency descending, then lexicographic; ids dense from 0
    // with PAD=0 and UNK=1 always.
    static Vocabulary build(const std::vector<std::string>& sentences) {
        std::map<std::string, std::uint64_t> freq;
        for (const std::string& s : sentences)
            for (const std::string& w : split_words(s)) ++freq[w];
        std::vector<std::pair<std::string, std::uint64_t>> order(freq.begin(), freq.end());
        std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        Vocabulary v;
        for (auto& [word, count] : order) v.intern(word);
        return v;
    }

    std::uint32_t id_of(const std::string& word) const {
        auto it = ids_.find(word);
        if (it == ids_.end()) throw vocab_error("word not in vocabulary: '" + word + "'");
        return it->second;
    }

    bool contains(const std::string& word) const { return ids_.count(word) != 0; }

    const std::string& word_of(std::uint32_t id) const {
        if (id >= words_.size())
            throw bounds_error("token id " + std::to_string(id) + " out of vocabulary of size " +
                               std::to_string(words_.size()));
        return words_[id];
    }

    std::uint32_t size() const { return static_cast<std::uint32_t>(words_.size()); }

    std::vector<std::uint32_t> encode(const std::string& sentence) const {
        std::vector<std::uint32_t> ids;
        for (const std::string& w : split_words(sentence)) ids.push_back(id_of(w));
        return ids;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw persistence_error("cannot write vocabulary: " + path);
        for (const std::string& w : words_) out << w << "\n";
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw persistence_error("cannot read vocabulary: " + path);
        Vocabulary v;
        v.words_.clear();
        v.ids_.clear();
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            v.ids_[line] = static_cast<std::uint32_t>(v.words_.size());
            v.words_.push_back(line);
        }
        if (v.words_.size() < 2 || v.words_[kPad] != kPadWord || v.words_[kUnk] != kUnkWord)
            throw persistence_error("vocabulary file lacks <pad>/<unk> header rows: " + path);
        return v;
    }

private:
    void intern(const std::string& word) {
        if (ids_.count(word)) return;
        ids_[word] = static_cast<std::uint32_t>(words_.size());
        words_.push_back(word);
    }

    std::vector<std::string> words_;
    std::unordered_map<std::string, std::uint32_t> ids_;
};

}  // namespace xlm
