#include "rsmoe/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include "rsmoe/io_util.hpp"

namespace rsmoe::metrics {

namespace {

using GramCounts = std::map<std::string, int>;

std::string gram_key(const Tokens& t, int start, int n) {
    std::string k = t[start];
    for (int i = 1; i < n; ++i) {
        k += '\x1f';
        k += t[start + i];
    }
    return k;
}

GramCounts ngram_counts(const Tokens& t, int n) {
    GramCounts out;
    for (int i = 0; i + n <= (int)t.size(); ++i) ++out[gram_key(t, i, n)];
    return out;
}

void check_corpus(const std::vector<Tokens>& cands, const std::vector<std::vector<Tokens>>& refs) {
    if (cands.empty()) throw InputError("metrics: empty corpus");
    if (cands.size() != refs.size())
        throw InputError("metrics: candidate and reference counts differ");
    for (const auto& r : refs)
        if (r.empty()) throw InputError("metrics: image without references");
}

}  // namespace

Tokens tokenize(const std::string& s) { return split_words(s); }

std::string Lexicon::stem(const std::string& w) const {
    auto it = stem_of.find(w);
    return it == stem_of.end() ? w : it->second;
}

bool Lexicon::synonyms(const std::string& a, const std::string& b) const {
    auto ia = synonym_class.find(a);
    auto ib = synonym_class.find(b);
    return ia != synonym_class.end() && ib != synonym_class.end() && ia->second == ib->second;
}

Lexicon default_caption_lexicon() {
    Lexicon lex;
    for (const auto& c : scene::classes()) lex.stem_of[c + "s"] = c;
    const auto& groups = scene::synonym_groups();
    for (size_t g = 0; g < groups.size(); ++g)
        for (const auto& w : groups[g]) lex.synonym_class[w] = (int)g;
    return lex;
}

CorpusBleu bleu(const std::vector<Tokens>& cands, const std::vector<std::vector<Tokens>>& refs) {
    check_corpus(cands, refs);
    double matched[5] = {0, 0, 0, 0, 0};
    double total[5] = {0, 0, 0, 0, 0};
    long long c_len = 0, r_len = 0;

    for (size_t i = 0; i < cands.size(); ++i) {
        const Tokens& c = cands[i];
        c_len += (long long)c.size();
        int best = -1;
        for (const auto& r : refs[i]) {
            const int rl = (int)r.size();
            if (best < 0 || std::llabs(rl - (long long)c.size()) < std::llabs(best - (long long)c.size()) ||
                (std::llabs(rl - (long long)c.size()) == std::llabs(best - (long long)c.size()) && rl < best))
                best = rl;
        }
        r_len += best;

        for (int n = 1; n <= 4; ++n) {
            GramCounts cc = ngram_counts(c, n);
            GramCounts cap;
            for (const auto& r : refs[i])
                for (const auto& [g, k] : ngram_counts(r, n))
                    cap[g] = std::max(cap[g], k);
            for (const auto& [g, k] : cc) {
                auto it = cap.find(g);
                matched[n] += std::min(k, it == cap.end() ? 0 : it->second);
                total[n] += k;
            }
        }
    }

    CorpusBleu out;
    for (int n = 1; n <= 4; ++n) out.precision[n] = total[n] > 0 ? matched[n] / total[n] : 0.0;
    out.brevity =
        c_len == 0 ? 0.0 : std::exp(std::min(0.0, 1.0 - (double)r_len / (double)c_len));
    for (int k = 1; k <= 4; ++k) {
        double logsum = 0.0;
        bool ok = c_len > 0;
        for (int n = 1; n <= k && ok; ++n) {
            double p = out.precision[n];
            if (matched[n] == 0 && n >= 2 && total[n] > 0) p = 1.0 / (total[n] + 1.0);
            if (p <= 0.0)
                ok = false;
            else
                logsum += std::log(p);
        }
        out.score[k] = ok ? out.brevity * std::exp(logsum / k) : 0.0;
    }
    return out;
}

namespace {

int lcs_len(const Tokens& a, const Tokens& b) {
    const int n = (int)a.size(), m = (int)b.size();
    std::vector<int> prev(m + 1, 0), cur(m + 1, 0);
    for (int i = 1; i <= n; ++i) {
        for (int j = 1; j <= m; ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[m];
}

}  // namespace

double rouge_l(const std::vector<Tokens>& cands, const std::vector<std::vector<Tokens>>& refs) {
    check_corpus(cands, refs);
    const double b2 = 1.2 * 1.2;
    double sum = 0.0;
    for (size_t i = 0; i < cands.size(); ++i) {
        double best = 0.0;
        for (const auto& r : refs[i]) {
            if (cands[i].empty() || r.empty()) continue;
            const double l = lcs_len(cands[i], r);
            const double rec = l / (double)r.size();
            const double prec = l / (double)cands[i].size();
            if (rec + b2 * prec > 0.0)
                best = std::max(best, (1.0 + b2) * rec * prec / (rec + b2 * prec));
        }
        sum += best;
    }
    return sum / (double)cands.size();
}

namespace {

double meteor_pair(const Tokens& c, const Tokens& r, const Lexicon& lex) {
    if (c.empty() || r.empty()) return 0.0;
    std::vector<int> match_of(c.size(), -1);
    std::vector<bool> used(r.size(), false);
    for (int stage = 0; stage < 3; ++stage) {
        for (size_t i = 0; i < c.size(); ++i) {
            if (match_of[i] >= 0) continue;
            for (size_t j = 0; j < r.size(); ++j) {
                if (used[j]) continue;
                bool hit = false;
                if (stage == 0)
                    hit = c[i] == r[j];
                else if (stage == 1)
                    hit = lex.stem(c[i]) == lex.stem(r[j]);
                else
                    hit = lex.synonyms(c[i], r[j]);
                if (hit) {
                    match_of[i] = (int)j;
                    used[j] = true;
                    break;
                }
            }
        }
    }
    int m = 0;
    for (int v : match_of)
        if (v >= 0) ++m;
    if (m == 0) return 0.0;
    const double prec = (double)m / (double)c.size();
    const double rec = (double)m / (double)r.size();
    const double f = 10.0 * prec * rec / (rec + 9.0 * prec);
    int chunks = 0;
    for (size_t i = 0; i < c.size(); ++i) {
        if (match_of[i] < 0) continue;
        // a chunk extends only while both sides stay consecutive; an
        // unmatched token in between always breaks the run
        if (!(i > 0 && match_of[i - 1] >= 0 && match_of[i - 1] == match_of[i] - 1)) ++chunks;
    }
    const double frag = (double)chunks / (double)m;
    return f * (1.0 - 0.5 * frag * frag * frag);
}

}  // namespace

double meteor(const std::vector<Tokens>& cands, const std::vector<std::vector<Tokens>>& refs,
              const Lexicon& lex) {
    check_corpus(cands, refs);
    double sum = 0.0;
    for (size_t i = 0; i < cands.size(); ++i) {
        double best = 0.0;
        for (const auto& r : refs[i]) best = std::max(best, meteor_pair(cands[i], r, lex));
        sum += best;
    }
    return sum / (double)cands.size();
}

double cider(const std::vector<Tokens>& cands, const std::vector<std::vector<Tokens>>& refs) {
    check_corpus(cands, refs);
    const int images = (int)cands.size();
    double total = 0.0;
    for (int n = 1; n <= 4; ++n) {
        GramCounts df;
        for (const auto& rs : refs) {
            GramCounts seen;
            for (const auto& r : rs)
                for (const auto& [g, k] : ngram_counts(r, n)) seen[g] = 1;
            for (const auto& [g, k] : seen) df[g] += 1;
        }
        auto idf = [&](const std::string& g) {
            auto it = df.find(g);
            return std::log((double)images / std::max(1.0, it == df.end() ? 0.0 : (double)it->second));
        };
        auto tfidf = [&](const Tokens& t) {
            std::map<std::string, double> v;
            GramCounts cc = ngram_counts(t, n);
            double tot = 0.0;
            for (const auto& [g, k] : cc) tot += k;
            if (tot > 0.0)
                for (const auto& [g, k] : cc) v[g] = ((double)k / tot) * idf(g);
            return v;
        };
        for (int i = 0; i < images; ++i) {
            auto vc = tfidf(cands[i]);
            double nc = 0.0;
            for (const auto& [g, x] : vc) nc += x * x;
            nc = std::sqrt(nc);
            double mean_cos = 0.0;
            for (const auto& r : refs[i]) {
                auto vr = tfidf(r);
                double nr = 0.0, dot = 0.0;
                for (const auto& [g, x] : vr) nr += x * x;
                nr = std::sqrt(nr);
                if (nc > 0.0 && nr > 0.0) {
                    for (const auto& [g, x] : vc) {
                        auto it = vr.find(g);
                        if (it != vr.end()) dot += x * it->second;
                    }
                    mean_cos += dot / (nc * nr);
                }
            }
            total += mean_cos / (double)refs[i].size() / (double)images;
        }
    }
    return 10.0 * total / 4.0;
}

std::string MetricReport::to_tsv_header() const {
    return "bleu1\tbleu2\tbleu3\tbleu4\trouge_l\tmeteor\tcider";
}

std::string MetricReport::to_tsv() const {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f", bleu1, bleu2,
                  bleu3, bleu4, rouge, meteor, cider);
    return buf;
}

MetricReport score_corpus(const std::vector<std::string>& cands,
                          const std::vector<std::vector<std::string>>& refs) {
    std::vector<Tokens> ct;
    std::vector<std::vector<Tokens>> rt;
    ct.reserve(cands.size());
    rt.reserve(refs.size());
    for (const auto& c : cands) ct.push_back(tokenize(c));
    for (const auto& rs : refs) {
        rt.emplace_back();
        for (const auto& r : rs) rt.back().push_back(tokenize(r));
    }
    MetricReport rep;
    rep.degenerate = true;
    for (const auto& c : ct)
        if (!c.empty()) rep.degenerate = false;

    CorpusBleu b = bleu(ct, rt);
    rep.bleu1 = 100.0 * b.score[1];
    rep.bleu2 = 100.0 * b.score[2];
    rep.bleu3 = 100.0 * b.score[3];
    rep.bleu4 = 100.0 * b.score[4];
    rep.rouge = 100.0 * rouge_l(ct, rt);
    rep.meteor = 100.0 * metrics::meteor(ct, rt, default_caption_lexicon());
    rep.cider = 100.0 * metrics::cider(ct, rt);
    return rep;
}

namespace {

std::vector<std::array<int, 3>> object_tuples(const scene::SceneGraph& g) {
    std::vector<std::array<int, 3>> out;
    for (const auto& o : g.objects) out.push_back({o.cls, o.color, o.count});
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::array<int, 5>> relation_tuples(const scene::SceneGraph& g) {
    std::vector<std::array<int, 5>> out;
    for (const auto& r : g.relations) {
        if (r.a < 0 || r.b < 0 || r.a >= (int)g.objects.size() || r.b >= (int)g.objects.size())
            continue;
        out.push_back({g.objects[r.a].cls, g.objects[r.a].color, r.rel, g.objects[r.b].cls,
                       g.objects[r.b].color});
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

template <typename T>
double multiset_f1(std::vector<T> a, std::vector<T> b) {
    if (a.empty() && b.empty()) return 1.0;
    if (a.empty() || b.empty()) return 0.0;
    size_t inter = 0;
    size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] == b[j]) {
            ++inter;
            ++i;
            ++j;
        } else if (a[i] < b[j]) {
            ++i;
        } else {
            ++j;
        }
    }
    const double p = (double)inter / (double)a.size();
    const double r = (double)inter / (double)b.size();
    return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

}  // namespace

SemanticScore semantic_scores(const std::vector<std::string>& cands,
                              const std::vector<scene::SceneGraph>& truths) {
    if (cands.empty() || cands.size() != truths.size())
        throw InputError("semantic_scores: corpus size mismatch");
    SemanticScore s;
    for (size_t i = 0; i < cands.size(); ++i) {
        scene::ParseResult pr = scene::parse_caption(cands[i]);
        s.theme_acc += pr.has_theme && pr.graph.theme == truths[i].theme ? 1.0 : 0.0;
        s.object_f1 += multiset_f1(object_tuples(pr.graph), object_tuples(truths[i]));
        s.relation_f1 += multiset_f1(relation_tuples(pr.graph), relation_tuples(truths[i]));
    }
    s.theme_acc /= (double)cands.size();
    s.object_f1 /= (double)cands.size();
    s.relation_f1 /= (double)cands.size();
    return s;
}

}  // namespace rsmoe::metrics
