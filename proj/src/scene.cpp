#include "rsmoe/scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>

#include "rsmoe/io_util.hpp"

namespace rsmoe::scene {

namespace {

const std::vector<std::string> kThemes = {"residential", "industrial", "rural", "airport",
                                          "harbor"};
const std::vector<std::string> kClasses = {"building", "road", "tree", "plane",
                                           "tank",     "boat", "field"};
const std::vector<std::string> kColors = {"red", "gray", "green", "white", "blue", "brown"};
const std::vector<std::string> kRelationNames = {"left-of", "right-of", "above", "below",
                                                 "adjacent-to"};
const std::vector<std::string> kCounts = {"one", "two", "three", "four"};

const double kThemeBg[5][3] = {{0.76, 0.72, 0.66},
                               {0.38, 0.38, 0.42},
                               {0.55, 0.68, 0.38},
                               {0.80, 0.80, 0.82},
                               {0.16, 0.34, 0.55}};

const double kColorRgb[6][3] = {{0.85, 0.10, 0.10}, {0.50, 0.50, 0.50}, {0.10, 0.60, 0.15},
                                {0.97, 0.97, 0.97}, {0.12, 0.25, 0.85}, {0.45, 0.30, 0.12}};

// 4x4 sub-block mask per class, bit index = r*4 + c
const uint16_t kClassMask[7] = {
    0xFFFF,  // building: solid
    0x0F0F,  // road: stripes
    0xA5A5,  // tree: checker
    0x44F4,  // plane: cross
    0x9669,  // tank: core + corners
    0xFF00,  // boat: lower half
    0xF99F,  // field: ring
};

std::string article(const std::string& w) {
    switch (w.empty() ? ' ' : w[0]) {
        case 'a':
        case 'e':
        case 'i':
        case 'o':
        case 'u':
            return "an";
        default:
            return "a";
    }
}

std::string plural(const std::string& cls) { return cls + "s"; }

std::string object_phrase(const SceneObject& o) {
    std::string cls = kClasses[o.cls];
    if (o.count > 1) cls = plural(cls);
    return kCounts[o.count - 1] + " " + kColors[o.color] + " " + cls;
}

std::string relation_phrase(int rel) {
    switch (rel) {
        case kLeftOf: return "left of";
        case kRightOf: return "right of";
        case kAbove: return "above";
        case kBelow: return "below";
        default: return "adjacent to";
    }
}

std::string object_ref(const SceneObject& o) {
    return "the " + kColors[o.color] + " " + kClasses[o.cls];
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

std::vector<std::string> object_phrases(const SceneGraph& g, bool reversed) {
    std::vector<std::string> out;
    for (const auto& o : g.objects) out.push_back(object_phrase(o));
    if (reversed) std::reverse(out.begin(), out.end());
    return out;
}

std::vector<std::string> relation_clauses(const SceneGraph& g, const std::string& verb,
                                          bool reversed) {
    std::vector<std::string> out;
    for (const auto& r : g.relations)
        out.push_back(object_ref(g.objects[r.a]) + " " + verb + " " + relation_phrase(r.rel) +
                      " " + object_ref(g.objects[r.b]));
    if (reversed) std::reverse(out.begin(), out.end());
    return out;
}

std::string theme_sentence_variant(const SceneGraph& g, int v) {
    const std::string& t = kThemes[g.theme];
    const std::string art = article(t);
    switch (v) {
        case 1: return "an aerial picture of " + art + " " + t + " area";
        case 2: return "the scene shows " + art + " " + t + " area";
        case 3: return "this photo depicts " + art + " " + t + " area";
        case 4: return "an overhead view of " + art + " " + t + " area";
        default: return "this is an image of " + art + " " + t + " area";
    }
}

std::string object_sentence_variant(const SceneGraph& g, int v) {
    switch (v) {
        case 1: return "the picture shows " + join(object_phrases(g, false), " and ");
        case 2: return "there are " + join(object_phrases(g, true), " and ") + " in this scene";
        case 3: return "this photo has " + join(object_phrases(g, false), " and ");
        case 4: return "the view contains " + join(object_phrases(g, true), " and ");
        default: return "the image contains " + join(object_phrases(g, false), " and ");
    }
}

std::string relation_sentence_variant(const SceneGraph& g, int v) {
    if (g.relations.empty()) return "no notable relations";
    switch (v) {
        case 1: return join(relation_clauses(g, "lies", false), " and ");
        case 2: return join(relation_clauses(g, "is", true), " and ");
        case 3: return join(relation_clauses(g, "sits", false), " and ");
        default: return join(relation_clauses(g, "is", false), " and ");
    }
}

std::string quadrant(const SceneObject& o) {
    return std::string(o.row < kGrid / 2 ? "top" : "bottom") + " " +
           (o.col < kGrid / 2 ? "left" : "right");
}

}  // namespace

const std::vector<std::string>& themes() { return kThemes; }
const std::vector<std::string>& classes() { return kClasses; }
const std::vector<std::string>& colors() { return kColors; }
const std::vector<std::string>& relations() { return kRelationNames; }
const std::vector<std::string>& counts() { return kCounts; }

int derive_relation(const SceneObject& a, const SceneObject& b) {
    const int dr = b.row - a.row;
    const int dc = b.col - a.col;
    if (std::abs(dc) >= std::abs(dr)) return dc > 0 ? kLeftOf : kRightOf;
    return dr > 0 ? kAbove : kBelow;
}

bool relation_holds(const SceneGraph& g, const Relation& r) {
    if (r.a < 0 || r.b < 0 || r.a >= (int)g.objects.size() || r.b >= (int)g.objects.size())
        return false;
    const SceneObject& a = g.objects[r.a];
    const SceneObject& b = g.objects[r.b];
    const int dr = b.row - a.row;
    const int dc = b.col - a.col;
    switch (r.rel) {
        case kLeftOf: return dc > 0 && dc >= std::abs(dr);
        case kRightOf: return dc < 0 && -dc >= std::abs(dr);
        case kAbove: return dr > 0 && dr > std::abs(dc);
        case kBelow: return dr < 0 && -dr > std::abs(dc);
        case kAdjacent: return std::max(std::abs(dr), std::abs(dc)) == 1;
        default: return false;
    }
}

SceneGraph generate_scene(Rng& rng) {
    SceneGraph g;
    g.theme = randint(rng, 0, (int)kThemes.size() - 1);

    const int n_obj = randint(rng, 2, 4);

    int cells[kGrid * kGrid];
    for (int i = 0; i < kGrid * kGrid; ++i) cells[i] = i;
    for (int i = 0; i < n_obj; ++i)
        std::swap(cells[i], cells[randint(rng, i, kGrid * kGrid - 1)]);

    const int n_combo = (int)(kClasses.size() * kColors.size());
    std::vector<int> combos(n_combo);
    for (int i = 0; i < n_combo; ++i) combos[i] = i;
    for (int i = 0; i < n_obj; ++i)
        std::swap(combos[i], combos[randint(rng, i, n_combo - 1)]);

    for (int i = 0; i < n_obj; ++i) {
        SceneObject o;
        o.cls = combos[i] / (int)kColors.size();
        o.color = combos[i] % (int)kColors.size();
        o.count = randint(rng, 1, 4);
        o.row = cells[i] / kGrid;
        o.col = cells[i] % kGrid;
        g.objects.push_back(o);
    }

    for (int i = 0; i < n_obj && (int)g.relations.size() < 4; ++i) {
        for (int j = i + 1; j < n_obj && (int)g.relations.size() < 4; ++j) {
            if (randint(rng, 0, 1) == 0) continue;
            const SceneObject& a = g.objects[i];
            const SceneObject& b = g.objects[j];
            const bool touch =
                std::max(std::abs(a.row - b.row), std::abs(a.col - b.col)) == 1;
            int rel = (touch && randint(rng, 0, 1) == 1) ? kAdjacent : derive_relation(a, b);
            g.relations.push_back({i, j, rel});
        }
    }
    return g;
}

Tensor render(const SceneGraph& g) {
    if (g.theme < 0 || g.theme >= (int)kThemes.size()) throw DataError("render: bad theme id");
    Tensor img = Tensor::zeros({kImage, kImage, 3});
    double* px = img.data();
    for (int y = 0; y < kImage; ++y)
        for (int x = 0; x < kImage; ++x)
            for (int c = 0; c < 3; ++c) px[((size_t)y * kImage + x) * 3 + c] = kThemeBg[g.theme][c];

    for (const auto& o : g.objects) {
        if (o.row < 0 || o.row >= kGrid || o.col < 0 || o.col >= kGrid)
            throw DataError("render: object cell out of grid");
        if (o.count < 1 || o.count > 4) throw DataError("render: object count out of range");
        const uint16_t mask = kClassMask[o.cls];
        for (int s = 0; s < o.count; ++s) {
            const int oy = o.row * kCell + (s / 2) * 4;
            const int ox = o.col * kCell + (s % 2) * 4;
            for (int b = 0; b < 16; ++b) {
                if (!(mask >> b & 1)) continue;
                const int y = oy + b / 4;
                const int x = ox + b % 4;
                for (int c = 0; c < 3; ++c)
                    px[((size_t)y * kImage + x) * 3 + c] = kColorRgb[o.color][c];
            }
        }
    }
    return img;
}

CaptionBundle caption_of(const SceneGraph& g) {
    if (g.objects.empty()) throw DataError("caption_of: scene has no objects");
    CaptionBundle b;
    b.theme_sentence = theme_sentence_variant(g, 0);
    b.object_sentence = object_sentence_variant(g, 0);
    b.relation_sentence = relation_sentence_variant(g, 0);
    std::vector<std::string> pos;
    for (const auto& o : g.objects)
        pos.push_back(object_ref(o) + " is in the " + quadrant(o));
    b.position_sentence = join(pos, " and ");
    b.full_caption =
        b.theme_sentence + " . " + b.object_sentence + " . " + b.relation_sentence;
    return b;
}

std::vector<std::string> references_of(const SceneGraph& g, int k) {
    if (k < 1) throw ConfigError("references_of: k must be at least 1");
    std::vector<std::string> out;
    for (int v = 0; v < k; ++v) {
        const int t = v % 5;
        out.push_back(theme_sentence_variant(g, t) + " . " + object_sentence_variant(g, t) +
                      " . " + relation_sentence_variant(g, t));
    }
    return out;
}

Dataset generate_dataset(uint64_t seed, int n) {
    if (n < 0) throw ConfigError("generate_dataset: negative count");
    Dataset ds;
    ds.seed = seed;
    ds.items.reserve(n);
    std::vector<int> deck(kThemes.size());
    for (int i = 0; i < n; ++i) {
        if (i % (int)kThemes.size() == 0) {
            // theme deck reshuffled once per full pass keeps themes balanced
            Rng dr = make_rng(seed, 5000 + (uint64_t)(i / (int)kThemes.size()));
            for (size_t t = 0; t < kThemes.size(); ++t) deck[t] = (int)t;
            for (size_t t = 0; t < kThemes.size(); ++t)
                std::swap(deck[t], deck[randint(dr, (int)t, (int)kThemes.size() - 1)]);
        }
        Rng rec = make_rng(seed, 1000 + (uint64_t)i);
        Sample s;
        s.graph = generate_scene(rec);
        s.graph.theme = deck[i % (int)kThemes.size()];
        s.captions = caption_of(s.graph);
        s.references = references_of(s.graph, 5);
        Tensor img = render(s.graph);
        s.image_u8.resize(img.numel());
        std::vector<double> dq(img.numel());
        for (size_t p = 0; p < img.numel(); ++p) {
            s.image_u8[p] = (uint8_t)std::lround(img.data()[p] * 255.0);
            dq[p] = s.image_u8[p] / 255.0;
        }
        s.image = Tensor::from({kImage, kImage, 3}, std::move(dq));
        ds.items.push_back(std::move(s));
    }
    return ds;
}

namespace {

struct WordTables {
    std::map<std::string, int> theme, cls, color, count, rel;
    WordTables() {
        for (size_t i = 0; i < kThemes.size(); ++i) theme[kThemes[i]] = (int)i;
        for (size_t i = 0; i < kClasses.size(); ++i) {
            cls[kClasses[i]] = (int)i;
            cls[plural(kClasses[i])] = (int)i;
        }
        for (size_t i = 0; i < kColors.size(); ++i) color[kColors[i]] = (int)i;
        for (size_t i = 0; i < kCounts.size(); ++i) count[kCounts[i]] = (int)i + 1;
        rel["left"] = kLeftOf;
        rel["right"] = kRightOf;
        rel["above"] = kAbove;
        rel["below"] = kBelow;
        rel["adjacent"] = kAdjacent;
    }
};

const WordTables& tables() {
    static const WordTables t;
    return t;
}

template <typename M>
std::optional<int> look(const M& m, const std::string& w) {
    auto it = m.find(w);
    if (it == m.end()) return std::nullopt;
    return it->second;
}

bool contains_any(const std::vector<std::string>& toks, const std::map<std::string, int>& m) {
    for (const auto& t : toks)
        if (m.count(t)) return true;
    return false;
}

struct PairHit {
    int pos, color, cls;
};

std::optional<PairHit> find_color_class(const std::vector<std::string>& toks, int from) {
    const auto& tb = tables();
    for (int p = from; p + 1 < (int)toks.size(); ++p) {
        auto c = look(tb.color, toks[p]);
        if (!c) continue;
        auto k = look(tb.cls, toks[p + 1]);
        if (!k) continue;
        return PairHit{p, *c, *k};
    }
    return std::nullopt;
}

int find_or_add_object(SceneGraph& g, int cls, int color) {
    for (size_t i = 0; i < g.objects.size(); ++i)
        if (g.objects[i].cls == cls && g.objects[i].color == color) return (int)i;
    g.objects.push_back({cls, color, 0, -1, -1});
    return (int)g.objects.size() - 1;
}

}  // namespace

ParseResult parse_caption(const std::string& text) {
    ParseResult res;
    res.graph.theme = -1;
    const auto& tb = tables();

    std::vector<std::vector<std::string>> clauses(1);
    for (const auto& w : split_words(text)) {
        if (w == ".")
            clauses.emplace_back();
        else
            clauses.back().push_back(w);
    }

    struct PendingRel {
        int cls_a, color_a, rel, cls_b, color_b;
    };
    std::vector<PendingRel> rels;

    for (const auto& cl : clauses) {
        if (cl.empty()) continue;

        bool matched = false;
        for (const auto& w : cl) {
            if (auto t = look(tb.theme, w)) {
                res.graph.theme = *t;
                res.has_theme = true;
                matched = true;
                break;
            }
        }
        if (matched) continue;

        if (std::find(cl.begin(), cl.end(), "notable") != cl.end()) continue;  // "no notable relations"

        bool positional = false;
        for (const auto& w : cl)
            if (w == "top" || w == "bottom") positional = true;
        if (positional) continue;  // recognized; grid positions are not captured in graphs

        if (contains_any(cl, tb.rel)) {
            int extracted = 0;
            int i = 0;
            while (true) {
                auto e1 = find_color_class(cl, i);
                if (!e1) break;
                int q = -1;
                for (int p = e1->pos + 2; p < (int)cl.size(); ++p)
                    if (tb.rel.count(cl[p])) {
                        q = p;
                        break;
                    }
                if (q < 0) break;
                auto e2 = find_color_class(cl, q + 1);
                if (!e2) break;
                rels.push_back({e1->cls, e1->color, *look(tb.rel, cl[q]), e2->cls, e2->color});
                ++extracted;
                i = e2->pos + 2;
            }
            if (extracted == 0) ++res.dropped;
            continue;
        }

        int objects_found = 0;
        for (int p = 0; p + 2 < (int)cl.size(); ++p) {
            auto n = look(tb.count, cl[p]);
            if (!n) continue;
            auto c = look(tb.color, cl[p + 1]);
            if (!c) continue;
            auto k = look(tb.cls, cl[p + 2]);
            if (!k) continue;
            res.graph.objects.push_back({*k, *c, *n, -1, -1});
            ++objects_found;
            p += 2;
        }
        if (objects_found == 0) ++res.dropped;
    }

    for (const auto& pr : rels) {
        Relation r;
        r.a = find_or_add_object(res.graph, pr.cls_a, pr.color_a);
        r.b = find_or_add_object(res.graph, pr.cls_b, pr.color_b);
        r.rel = pr.rel;
        res.graph.relations.push_back(r);
    }
    return res;
}

namespace {

std::vector<std::array<int, 3>> object_tuples(const SceneGraph& g) {
    std::vector<std::array<int, 3>> out;
    for (const auto& o : g.objects) out.push_back({o.cls, o.color, o.count});
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::array<int, 5>> relation_tuples(const SceneGraph& g) {
    std::vector<std::array<int, 5>> out;
    for (const auto& r : g.relations) {
        if (r.a < 0 || r.b < 0 || r.a >= (int)g.objects.size() || r.b >= (int)g.objects.size())
            continue;
        const auto& a = g.objects[r.a];
        const auto& b = g.objects[r.b];
        out.push_back({a.cls, a.color, r.rel, b.cls, b.color});
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

}  // namespace

bool graph_equivalent(const SceneGraph& a, const SceneGraph& b) {
    return a.theme == b.theme && object_tuples(a) == object_tuples(b) &&
           relation_tuples(a) == relation_tuples(b);
}

std::vector<std::string> lexicon() {
    std::vector<std::string> out = {
        "this",  "is",       "an",    "image",    "of",       "a",     "area",  "the",
        "contains", "and",   "there", "are",      "in",       "scene", "aerial", "picture",
        "shows", "photo",    "depicts", "has",    "overhead", "view",  "no",    "notable",
        "relations", "left", "right", "above",    "below",    "adjacent", "to", "top",
        "bottom", "lies",    "sits",  "describe", "theme",    "objects",  "positions",
        "details"};
    for (const auto& w : kThemes) out.push_back(w);
    for (const auto& w : kClasses) {
        out.push_back(w);
        out.push_back(plural(w));
    }
    for (const auto& w : kColors) out.push_back(w);
    for (const auto& w : kCounts) out.push_back(w);
    return out;
}

const std::vector<std::vector<std::string>>& synonym_groups() {
    static const std::vector<std::vector<std::string>> groups = {
        {"image", "picture", "photo", "view"},
        {"contains", "shows", "has", "depicts"},
        {"is", "lies", "sits"},
        {"scene", "area"},
    };
    return groups;
}

const Vocab& default_vocab() {
    static const Vocab v = Vocab::build(lexicon());
    return v;
}

const std::string& default_instruction() {
    static const std::string s = "describe the image";
    return s;
}

namespace {

constexpr const char* kDatasetFormat = "rsmoe-dataset-v1";

std::map<std::string, std::string> parse_kv_line(const std::string& line, int lineno) {
    std::map<std::string, std::string> kv;
    for (const auto& field : split(line, '\t')) {
        if (field.empty()) continue;
        size_t eq = field.find('=');
        if (eq == std::string::npos)
            throw DataError("dataset line " + std::to_string(lineno) +
                            ": field without '=': " + field);
        kv[field.substr(0, eq)] = field.substr(eq + 1);
    }
    return kv;
}

const std::string& require(const std::map<std::string, std::string>& kv, const std::string& key,
                           int lineno) {
    auto it = kv.find(key);
    if (it == kv.end())
        throw DataError("dataset line " + std::to_string(lineno) + ": missing key " + key);
    return it->second;
}

int word_index(const std::vector<std::string>& table, const std::string& w, int lineno) {
    for (size_t i = 0; i < table.size(); ++i)
        if (table[i] == w) return (int)i;
    throw DataError("dataset line " + std::to_string(lineno) + ": unknown word " + w);
}

int to_int(const std::string& s, int lineno) {
    try {
        size_t used = 0;
        int v = std::stoi(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError("dataset line " + std::to_string(lineno) + ": bad integer " + s);
    }
}

}  // namespace

void write_dataset(const std::string& path, const Dataset& ds) {
    std::ostringstream os;
    os << "format=" << kDatasetFormat << "\tseed=" << ds.seed << "\tcount=" << ds.items.size()
       << "\timage=" << kImage << "\tgrid=" << kGrid << "\n";
    for (size_t i = 0; i < ds.items.size(); ++i) {
        const Sample& s = ds.items[i];
        os << "id=" << i << "\ttheme=" << kThemes[s.graph.theme] << "\tobjects=";
        for (size_t j = 0; j < s.graph.objects.size(); ++j) {
            const auto& o = s.graph.objects[j];
            os << (j ? ";" : "") << kClasses[o.cls] << ':' << kColors[o.color] << ':' << o.count
               << ':' << o.row << ':' << o.col;
        }
        os << "\trelations=";
        for (size_t j = 0; j < s.graph.relations.size(); ++j) {
            const auto& r = s.graph.relations[j];
            os << (j ? ";" : "") << r.a << ':' << kRelationNames[r.rel] << ':' << r.b;
        }
        os << "\tcaption_theme=" << s.captions.theme_sentence
           << "\tcaption_objects=" << s.captions.object_sentence
           << "\tcaption_relations=" << s.captions.relation_sentence
           << "\tcaption_positions=" << s.captions.position_sentence << "\trefs=";
        for (size_t j = 0; j < s.references.size(); ++j)
            os << (j ? "|" : "") << s.references[j];
        os << "\timage_b64=" << base64_encode(s.image_u8) << "\n";
    }
    write_text_file(path, os.str());
}

Dataset read_dataset(const std::string& path) {
    const std::string content = read_text_file(path);
    std::vector<std::string> lines = split(content, '\n');
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    if (lines.empty()) throw DataError("dataset file is empty: " + path);

    auto head = parse_kv_line(lines[0], 1);
    if (require(head, "format", 1) != kDatasetFormat)
        throw DataError("unsupported dataset format \"" + head["format"] + "\", expected " +
                        kDatasetFormat);
    Dataset ds;
    ds.seed = std::stoull(require(head, "seed", 1));
    const int count = to_int(require(head, "count", 1), 1);
    if (count != (int)lines.size() - 1)
        throw DataError("dataset header claims " + std::to_string(count) + " records, found " +
                        std::to_string(lines.size() - 1));

    for (size_t li = 1; li < lines.size(); ++li) {
        const int lineno = (int)li + 1;
        auto kv = parse_kv_line(lines[li], lineno);
        Sample s;
        s.graph.theme = word_index(kThemes, require(kv, "theme", lineno), lineno);

        for (const auto& of : split(require(kv, "objects", lineno), ';')) {
            if (of.empty()) continue;
            auto f = split(of, ':');
            if (f.size() != 5)
                throw DataError("dataset line " + std::to_string(lineno) + ": bad object " + of);
            SceneObject o;
            o.cls = word_index(kClasses, f[0], lineno);
            o.color = word_index(kColors, f[1], lineno);
            o.count = to_int(f[2], lineno);
            o.row = to_int(f[3], lineno);
            o.col = to_int(f[4], lineno);
            if (o.count < 1 || o.count > 4 || o.row < 0 || o.row >= kGrid || o.col < 0 ||
                o.col >= kGrid)
                throw DataError("dataset line " + std::to_string(lineno) +
                                ": object fields out of range");
            s.graph.objects.push_back(o);
        }
        if (s.graph.objects.empty())
            throw DataError("dataset line " + std::to_string(lineno) + ": record has no objects");

        for (const auto& rf : split(require(kv, "relations", lineno), ';')) {
            if (rf.empty()) continue;
            auto f = split(rf, ':');
            if (f.size() != 3)
                throw DataError("dataset line " + std::to_string(lineno) + ": bad relation " + rf);
            Relation r;
            r.a = to_int(f[0], lineno);
            r.rel = word_index(kRelationNames, f[1], lineno);
            r.b = to_int(f[2], lineno);
            if (r.a < 0 || r.b < 0 || r.a >= (int)s.graph.objects.size() ||
                r.b >= (int)s.graph.objects.size())
                throw DataError("dataset line " + std::to_string(lineno) +
                                ": relation endpoint out of range");
            s.graph.relations.push_back(r);
        }

        s.captions.theme_sentence = require(kv, "caption_theme", lineno);
        s.captions.object_sentence = require(kv, "caption_objects", lineno);
        s.captions.relation_sentence = require(kv, "caption_relations", lineno);
        s.captions.position_sentence = require(kv, "caption_positions", lineno);
        s.captions.full_caption = s.captions.theme_sentence + " . " +
                                  s.captions.object_sentence + " . " +
                                  s.captions.relation_sentence;

        for (const auto& r : split(require(kv, "refs", lineno), '|')) s.references.push_back(r);
        if (s.references.empty())
            throw DataError("dataset line " + std::to_string(lineno) + ": no references");

        s.image_u8 = base64_decode(require(kv, "image_b64", lineno));
        if ((int)s.image_u8.size() != kImage * kImage * 3)
            throw DataError("dataset line " + std::to_string(lineno) + ": image payload has " +
                            std::to_string(s.image_u8.size()) + " bytes");
        std::vector<double> px(s.image_u8.size());
        for (size_t p = 0; p < px.size(); ++p) px[p] = s.image_u8[p] / 255.0;
        s.image = Tensor::from({kImage, kImage, 3}, std::move(px));

        ds.items.push_back(std::move(s));
    }
    return ds;
}

}  // namespace rsmoe::scene
