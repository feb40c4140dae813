#include "rsmoe/vocab.hpp"

#include <algorithm>
#include <sstream>

namespace rsmoe {

Vocab Vocab::build(std::vector<std::string> lexicon) {
    std::sort(lexicon.begin(), lexicon.end());
    lexicon.erase(std::unique(lexicon.begin(), lexicon.end()), lexicon.end());
    Vocab v;
    v.words = {"<pad>", "<bos>", "<eos>", "<sep>"};
    for (auto& w : lexicon) {
        if (w.empty()) throw ConfigError("vocab: empty word in lexicon");
        if (w == ".") continue;  // rendered form of sep, never a word id
        v.words.push_back(w);
    }
    if ((int)v.words.size() >= 300)
        throw ConfigError("vocab: lexicon grew to " + std::to_string(v.words.size()) +
                          " entries, limit is 300");
    for (int i = 0; i < (int)v.words.size(); ++i) v.index[v.words[i]] = i;
    return v;
}

int Vocab::id_of(const std::string& w) const {
    auto it = index.find(w);
    if (it == index.end()) throw VocabError("unknown word \"" + w + "\"");
    return it->second;
}

std::vector<int> Vocab::encode(const std::string& text) const {
    std::vector<int> out;
    std::istringstream is(text);
    std::string w;
    while (is >> w) {
        if (w == ".") {
            out.push_back(sep_id);
            continue;
        }
        out.push_back(id_of(w));
    }
    return out;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (id < 0 || id >= size())
            throw VocabError("id " + std::to_string(id) + " out of range for vocab of " +
                             std::to_string(size()));
        if (id == pad_id || id == bos_id || id == eos_id) continue;
        if (!out.empty()) out += ' ';
        out += (id == sep_id) ? "." : words[id];
    }
    return out;
}

}  // namespace rsmoe
