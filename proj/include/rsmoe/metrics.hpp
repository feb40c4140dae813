#pragma once

#include <map>
#include <string>
#include <vector>

#include "rsmoe/scene.hpp"

namespace rsmoe::metrics {

using Tokens = std::vector<std::string>;

Tokens tokenize(const std::string& s);

// Stem table and synonym classes used by the unigram matchers. Captions have
// a closed vocabulary, so stemming is table driven rather than rule driven.
struct Lexicon {
    std::map<std::string, std::string> stem_of;
    std::map<std::string, int> synonym_class;

    std::string stem(const std::string& w) const;
    bool synonyms(const std::string& a, const std::string& b) const;
};

// Built from the scene word tables: class plurals stem to their singular and
// the caption paraphrase families are synonyms.
Lexicon default_caption_lexicon();

// Corpus-level n-gram precision with per-reference clipping. The brevity
// penalty uses the reference length closest to each candidate, preferring
// the shorter one on ties. A zero matched count at order >= 2 falls back to
// 1/(total+1) so long candidates are not scored identically to empty ones.
struct CorpusBleu {
    double score[5] = {0, 0, 0, 0, 0};      // score[n] is BLEU-n, n in 1..4
    double precision[5] = {0, 0, 0, 0, 0};  // unsmoothed clipped precision per order
    double brevity = 0.0;
};

CorpusBleu bleu(const std::vector<Tokens>& cands, const std::vector<std::vector<Tokens>>& refs);

// Mean over candidates of the best per-reference LCS F-score with beta=1.2.
double rouge_l(const std::vector<Tokens>& cands, const std::vector<std::vector<Tokens>>& refs);

// Staged greedy unigram alignment (exact, then stem, then synonym, each pass
// left to right matching the first free reference token), harmonic F with
// recall weight 9, times a fragmentation penalty 0.5*(chunks/matches)^3.
// Per candidate the best reference score counts; corpus score is the mean.
double meteor(const std::vector<Tokens>& cands, const std::vector<std::vector<Tokens>>& refs,
              const Lexicon& lex);

// TF-IDF n-gram cosine, n = 1..4. Document frequencies come from the
// reference sets, one document per image; idf = log(images / max(1, df)).
// Per image: mean cosine over its references, mean over n, times 10.
double cider(const std::vector<Tokens>& cands, const std::vector<std::vector<Tokens>>& refs);

struct MetricReport {
    double bleu1 = 0, bleu2 = 0, bleu3 = 0, bleu4 = 0;  // all x100
    double rouge = 0;                                   // x100
    double meteor = 0;                                  // x100
    double cider = 0;                                   // x100, range 0..1000
    bool degenerate = false;  // every candidate was empty

    std::string to_tsv_header() const;
    std::string to_tsv() const;
};

MetricReport score_corpus(const std::vector<std::string>& cands,
                          const std::vector<std::vector<std::string>>& refs);

// Scene-graph fidelity of generated captions: exact theme accuracy plus
// multiset F1 over object triples and relation descriptors, via the caption
// parser.
struct SemanticScore {
    double theme_acc = 0;
    double object_f1 = 0;
    double relation_f1 = 0;
};

SemanticScore semantic_scores(const std::vector<std::string>& cands,
                              const std::vector<scene::SceneGraph>& truths);

}  // namespace rsmoe::metrics
