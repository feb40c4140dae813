#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "rsmoe/error.hpp"

namespace rsmoe {

// Closed word-level vocabulary. Ids 0..3 are the specials; grammar words get
// dense ids in sorted order, so the mapping is stable for a fixed lexicon.
// The word "." is not stored: it encodes to sep_id and sep_id decodes to it.
struct Vocab {
    static constexpr int pad_id = 0;
    static constexpr int bos_id = 1;
    static constexpr int eos_id = 2;
    static constexpr int sep_id = 3;

    std::vector<std::string> words;
    std::unordered_map<std::string, int> index;

    static Vocab build(std::vector<std::string> lexicon);

    int size() const { return (int)words.size(); }
    bool contains(const std::string& w) const { return index.count(w) != 0; }
    int id_of(const std::string& w) const;

    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& ids) const;
};

}  // namespace rsmoe
