#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rsmoe/rng.hpp"
#include "rsmoe/tensor.hpp"
#include "rsmoe/vocab.hpp"

namespace rsmoe::scene {

constexpr int kGrid = 4;
constexpr int kCell = 8;
constexpr int kImage = kGrid * kCell;  // 32

// word tables; indices into these are the ids stored in SceneGraph
const std::vector<std::string>& themes();     // 5
const std::vector<std::string>& classes();    // 7, singular
const std::vector<std::string>& colors();     // 6
const std::vector<std::string>& relations();  // left-of right-of above below adjacent-to
const std::vector<std::string>& counts();     // one..four

enum Rel { kLeftOf = 0, kRightOf = 1, kAbove = 2, kBelow = 3, kAdjacent = 4 };

struct SceneObject {
    int cls = 0;
    int color = 0;
    int count = 1;  // 1..4, rendered as painted sub-blocks
    int row = 0;    // grid cell, one per object
    int col = 0;
};

struct Relation {
    int a = 0;  // object indices
    int b = 0;
    int rel = 0;
};

struct SceneGraph {
    int theme = 0;
    std::vector<SceneObject> objects;   // 2..4 from the generator, disjoint cells
    std::vector<Relation> relations;    // each geometrically consistent
};

struct CaptionBundle {
    std::string theme_sentence;
    std::string object_sentence;
    std::string relation_sentence;
    std::string position_sentence;  // grid quadrants; not part of full_caption
    std::string full_caption;       // theme . objects . relations
};

struct Sample {
    SceneGraph graph;
    CaptionBundle captions;
    std::vector<std::string> references;  // 5 paraphrases, [0] == full_caption
    std::vector<uint8_t> image_u8;        // kImage*kImage*3, row-major RGB
    Tensor image;                         // image_u8 / 255
};

struct Dataset {
    uint64_t seed = 0;
    std::vector<Sample> items;
};

// Relation geometry. derive_relation picks the directional relation for the
// ordered pair (a,b); relation_holds re-checks any relation against cell
// positions, including adjacency (Chebyshev distance 1).
int derive_relation(const SceneObject& a, const SceneObject& b);
bool relation_holds(const SceneGraph& g, const Relation& r);

SceneGraph generate_scene(Rng& rng);
Dataset generate_dataset(uint64_t seed, int n);

// 32x32x3 doubles in [0,1]; background from theme, object cells painted with
// per-class patterns in the object color, count shown as painted sub-blocks.
Tensor render(const SceneGraph& g);

CaptionBundle caption_of(const SceneGraph& g);
std::vector<std::string> references_of(const SceneGraph& g, int k = 5);

struct ParseResult {
    SceneGraph graph;
    bool has_theme = false;
    int dropped = 0;  // clauses that matched no template
};

// Lenient template parser for model output. Object clauses yield
// (class,color,count) entries; relation clauses yield relations whose
// endpoints are looked up by (class,color), adding count-0 stubs when the
// caption never listed the endpoint. Position clauses are recognized and
// skipped; anything else is dropped.
ParseResult parse_caption(const std::string& text);

// theme + (class,color,count) multiset + relation descriptor set; grid
// positions are not compared because captions do not carry them.
bool graph_equivalent(const SceneGraph& a, const SceneGraph& b);

std::vector<std::string> lexicon();
const std::vector<std::vector<std::string>>& synonym_groups();
const Vocab& default_vocab();
const std::string& default_instruction();

void write_dataset(const std::string& path, const Dataset& ds);
Dataset read_dataset(const std::string& path);

}  // namespace rsmoe::scene
