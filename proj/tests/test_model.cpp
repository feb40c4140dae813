#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>

#include "doctest.h"
#include "rsmoe/checkpoint.hpp"
#include "rsmoe/io_util.hpp"
#include "rsmoe/moe.hpp"
#include "rsmoe/train.hpp"

using namespace rsmoe;

namespace {

ModelConfig tiny() {
    ModelConfig c;
    c.d_model = 16;
    c.heads = 2;
    c.ffn_hidden = 24;
    c.n_queries = 4;
    c.max_len = 32;
    return c;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape() == b.shape());
    double m = 0;
    for (size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(a.vec()[i] - b.vec()[i]));
    return m;
}

}  // namespace

TEST_CASE("image encoder: shapes, frozen, no tape") {
    ModelConfig cfg = tiny();
    Rng g = make_rng(1, 10);
    ImageEncoder enc(cfg, g);
    scene::Dataset d = scene::generate_dataset(3, 1);

    Graph tape;
    Tensor f = enc.forward(d.items[0].image);
    CHECK(tape.node_count() == 0);  // fully frozen module records nothing
    CHECK(f.shape() == Shape{cfg.n_patches(), cfg.d_model});

    ParamList ps;
    enc.params("img", ps);
    for (const auto& p : ps) CHECK_FALSE(p.t.requires_grad());

    Tensor f2 = enc.forward(d.items[0].image);
    CHECK(max_abs_diff(f, f2) == 0.0);
}

TEST_CASE("vlm encoder: shape and instruction sensitivity") {
    ModelConfig cfg = tiny();
    const Vocab& v = scene::default_vocab();
    Rng gi = make_rng(1, 10), gv = make_rng(1, 11);
    ImageEncoder enc(cfg, gi);
    VlmEncoder vlm(cfg, v.size(), gv);
    scene::Dataset d = scene::generate_dataset(3, 1);
    Tensor fi = enc.forward(d.items[0].image);

    Tensor a = vlm.forward(fi, v.encode("describe the image"));
    CHECK(a.shape() == Shape{cfg.n_queries, cfg.d_model});
    Tensor b = vlm.forward(fi, v.encode("describe the theme of the image"));
    CHECK(max_abs_diff(a, b) > 0.0);

    std::vector<int> too_long(VlmEncoder::kMaxInstr + 1, 5);
    CHECK_THROWS_AS((void)vlm.forward(fi, too_long), InputError);
}

TEST_CASE("prefix causal mask lets prefix see everything behind it") {
    Tensor m = prefix_causal_mask(5, 2);
    REQUIRE(m.shape() == Shape{5, 5});
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) {
            const bool visible = j < 2 || j <= i;
            CHECK(m.at(i, j) == (visible ? 0.0 : kMaskOff));
        }
}

TEST_CASE("decoder: hidden shape, loss, greedy generate") {
    ModelConfig cfg = tiny();
    const Vocab& v = scene::default_vocab();
    Rng g = make_rng(2, 12);
    DecoderModel dec(cfg, v.size(), g);
    Rng gp = make_rng(2, 1);
    Tensor prefix = Tensor::uniform({cfg.n_queries, cfg.d_model}, gp, -0.5, 0.5);

    const std::vector<int> ids = v.encode("the red boat");
    Tensor h = dec.hidden(prefix, ids);
    CHECK(h.shape() == Shape{cfg.n_queries + (int)ids.size(), cfg.d_model});

    Tensor l = dec.loss(prefix, ids);
    CHECK(l.numel() == 1);
    CHECK(l.item() > 0.0);

    std::vector<int> out = dec.generate(prefix, 8);
    CHECK(out.size() <= 8);
    for (int id : out) {
        CHECK(id >= 0);
        CHECK(id < v.size());
        CHECK(id != 1);
        CHECK(id != 2);
    }
    // deterministic decode
    CHECK(dec.generate(prefix, 8) == out);
}

TEST_CASE("decoder clone is deep") {
    ModelConfig cfg = tiny();
    Rng g = make_rng(4, 12);
    DecoderModel dec(cfg, 20, g);
    DecoderModel copy = dec.clone();
    dec.tok.table.data()[0] += 1.0;
    CHECK(copy.tok.table.at(0, 0) != dec.tok.table.at(0, 0));
    ParamList a, b;
    dec.params("x", a);
    copy.params("x", b);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].name == b[i].name);
}

TEST_CASE("adapter attach is exact identity; merge reproduces it") {
    Rng g = make_rng(5, 0);
    AdaptedLinear lin(12, 8, g);
    Rng gx = make_rng(5, 1);
    Tensor x = Tensor::uniform({3, 12}, gx, -1, 1);
    Tensor before = lin.forward(x);

    Rng ga = make_rng(5, 2);
    lin.attach(4, 8.0, ga);
    CHECK(max_abs_diff(lin.forward(x), before) == 0.0);  // b starts at zero

    // push the adapter off zero, then fold it in
    for (auto& val : lin.adapter->b.vec()) val = 0.01;
    Tensor adapted = lin.forward(x);
    CHECK(max_abs_diff(adapted, before) > 0.0);
    lin.merge();
    CHECK_FALSE(lin.adapted());
    CHECK(max_abs_diff(lin.forward(x), adapted) < 1e-12);

    Rng gb = make_rng(5, 3);
    CHECK_NOTHROW(lin.attach(2, 4.0, gb));  // re-attach after merge is fine
    CHECK_THROWS_AS(lin.attach(2, 4.0, gb), ConfigError);
    lin.merge();
    CHECK_THROWS_AS(lin.merge(), ConfigError);
}

TEST_CASE("stage one freeze: adapters plus norms stay under a tenth of the weights") {
    ModelConfig cfg;  // full-size model, the ratio is a property of the real shape
    const Vocab& v = scene::default_vocab();
    CaptionModel m(cfg, v.size(), 9);
    Rng g = make_rng(9, 40);
    const int sites = attach_stage1_adapters(m, g);
    CHECK(sites == 26);
    apply_stage1_freeze(m);
    ParamStats st = param_stats(m.params());
    CHECK(st.trainable > 0);
    CHECK(st.ratio() < 0.10);

    ParamList ps = m.params();
    for (const auto& p : ps) {
        if (p.name.rfind("img.", 0) == 0) CHECK_FALSE(p.t.requires_grad());
        if (p.name.find(".lora_") != std::string::npos) CHECK(p.t.requires_grad());
    }
}

TEST_CASE("router: frozen embedding snapshot and argmax routing") {
    ModelConfig cfg = tiny();
    const Vocab& v = scene::default_vocab();
    Rng g = make_rng(6, 12);
    DecoderModel dec(cfg, v.size(), g);
    Router r(dec.tok.table, 3, 77);

    // the router keeps a copy, not a view
    const double before = r.emb.at(4, 0);
    dec.tok.table.data()[4 * cfg.d_model] += 3.0;
    CHECK(r.emb.at(4, 0) == before);

    auto p = r.probs(v.encode("describe the objects in the image"));
    REQUIRE(p.size() == 3);
    double sum = 0;
    for (double x : p) {
        CHECK(x > 0.0);
        sum += x;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    const int choice = r.route(v.encode("describe the objects in the image"));
    CHECK(choice >= 0);
    CHECK(choice < 3);

    // equal scores break to the lowest index
    for (auto& h : r.heads) {
        for (auto& val : h.w.vec()) val = 0.0;
        for (auto& val : h.b.vec()) val = 0.0;
    }
    CHECK(r.route(v.encode("describe the image")) == 0);
}

TEST_CASE("role splits and their targets") {
    CHECK(roles_for(1) == std::vector<std::string>{"full"});
    CHECK(roles_for(2) == std::vector<std::string>{"theme", "details"});
    CHECK(roles_for(3) == std::vector<std::string>{"theme", "objects", "relations"});
    CHECK(roles_for(4) ==
          std::vector<std::string>{"theme", "objects", "positions", "relations"});
    CHECK_THROWS_AS((void)roles_for(5), ConfigError);

    scene::Dataset d = scene::generate_dataset(12, 1);
    const scene::CaptionBundle& c = d.items[0].captions;
    CHECK(target_for("full", c) == c.full_caption);
    CHECK(target_for("theme", c) == c.theme_sentence);
    CHECK(target_for("objects", c) == c.object_sentence);
    CHECK(target_for("relations", c) == c.relation_sentence);
    CHECK(target_for("positions", c) == c.position_sentence);
    CHECK(target_for("details", c) == c.object_sentence + " . " + c.relation_sentence);

    for (const auto& role : roles_for(4)) {
        const std::string instr = instruction_for(role);
        CHECK(instr.rfind("describe", 0) == 0);
        CHECK_NOTHROW((void)scene::default_vocab().encode(instr));
    }
}

TEST_CASE("moe assembly clones the stage-one decoder into every expert") {
    ModelConfig cfg = tiny();
    const Vocab& v = scene::default_vocab();
    CaptionModel base(cfg, v.size(), 31);
    MoeModel m = build_moe(base, 3, true, 31);
    REQUIRE(m.experts.size() == 3);
    for (const auto& e : m.experts)
        CHECK(max_abs_diff(e.tok.table, base.llm.tok.table) == 0.0);

    scene::Dataset d = scene::generate_dataset(31, 1);
    MoeCaption cap = moe_generate(m, d.items[0].image, v);
    CHECK(cap.segments.size() == 3);
    CHECK(cap.expert_of.size() == 3);
    // text is the non-empty segments joined with the separator
    std::string joined;
    for (const auto& s : cap.segments) {
        if (s.empty()) continue;
        if (!joined.empty()) joined += " . ";
        joined += s;
    }
    CHECK(cap.text == joined);
}

TEST_CASE("caption checkpoint round trips bitwise") {
    ModelConfig cfg = tiny();
    const Vocab& v = scene::default_vocab();
    CaptionModel m(cfg, v.size(), 13);
    const std::string p1 = "/tmp/rsmoe_ck1.bin", p2 = "/tmp/rsmoe_ck2.bin";
    save_caption_model(p1, m, v, "stage1");
    CHECK(checkpoint_kind(p1) == "caption");

    Vocab v2;
    std::string stage;
    CaptionModel r = load_caption_model(p1, v2, stage);
    CHECK(stage == "stage1");
    CHECK(v2.size() == v.size());
    ParamList pa = m.params(), pb = r.params();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].name == pb[i].name);
        CHECK(pa[i].t.vec() == pb[i].t.vec());
        CHECK(pa[i].t.requires_grad() == pb[i].t.requires_grad());
    }
    save_caption_model(p2, r, v2, stage);
    CHECK(read_text_file(p1) == read_text_file(p2));

    // captions agree after reload
    scene::Dataset d = scene::generate_dataset(13, 2);
    NoGradGuard ng;
    const std::vector<int> instr = v.encode(scene::default_instruction());
    for (const auto& it : d.items) {
        Tensor fa = m.encode(it.image, instr);
        Tensor fb = r.encode(it.image, instr);
        CHECK(m.llm.generate(fa, 16) == r.llm.generate(fb, 16));
    }
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("moe checkpoint round trips and keeps roles") {
    ModelConfig cfg = tiny();
    const Vocab& v = scene::default_vocab();
    CaptionModel base(cfg, v.size(), 14);
    MoeModel m = build_moe(base, 2, true, 14);
    const std::string p = "/tmp/rsmoe_ck3.bin";
    save_moe_model(p, m, v, "stage2");
    CHECK(checkpoint_kind(p) == "moe");

    Vocab v2;
    std::string stage;
    MoeModel r = load_moe_model(p, v2, stage);
    CHECK(r.roles == m.roles);
    CHECK(r.use_router == m.use_router);
    ParamList pa = m.params(), pb = r.params();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].t.vec() == pb[i].t.vec());

    scene::Dataset d = scene::generate_dataset(14, 1);
    CHECK(moe_generate(m, d.items[0].image, v).text ==
          moe_generate(r, d.items[0].image, v2).text);
    std::remove(p.c_str());
}

TEST_CASE("checkpoint rejects damage, wrong kind and unmerged adapters") {
    ModelConfig cfg = tiny();
    const Vocab& v = scene::default_vocab();
    CaptionModel m(cfg, v.size(), 15);
    const std::string p = "/tmp/rsmoe_ck4.bin";
    save_caption_model(p, m, v, "stage1");
    const std::string original = read_text_file(p);

    // flip one payload byte
    std::string bad = original;
    bad[bad.size() - 100] = (char)(bad[bad.size() - 100] ^ 0x40);
    write_text_file(p, bad);
    Vocab dummy;
    std::string stage;
    CHECK_THROWS_AS((void)load_caption_model(p, dummy, stage), IntegrityError);

    // truncate
    write_text_file(p, original.substr(0, original.size() - 13));
    CHECK_THROWS_AS((void)load_caption_model(p, dummy, stage), IntegrityError);

    // bad magic
    write_text_file(p, "not-a-checkpoint\n" + original.substr(original.find('\n') + 1));
    CHECK_THROWS_AS((void)load_caption_model(p, dummy, stage), CheckpointError);

    // wrong kind
    write_text_file(p, original);
    CHECK_THROWS_AS((void)load_moe_model(p, dummy, stage), CheckpointError);

    // unmerged adapters refuse to serialize
    Rng ga = make_rng(15, 40);
    attach_stage1_adapters(m, ga);
    CHECK_THROWS_AS(save_caption_model(p, m, v, "stage1"), ConfigError);

    CHECK_THROWS_AS((void)load_caption_model("/tmp/rsmoe_no_ck.bin", dummy, stage), IoError);
    std::remove(p.c_str());
}

TEST_CASE("set_trainable flips the flag the optimizer keys on") {
    ModelConfig cfg = tiny();
    Rng g = make_rng(8, 11);
    VlmEncoder vlm(cfg, 20, g);
    ParamList ps;
    vlm.params("vlm", ps);
    set_trainable(ps, true);
    size_t on = 0;
    for (const auto& p : ps) on += p.t.requires_grad();
    CHECK(on == ps.size());
    set_trainable(ps, false);
    for (const auto& p : ps) CHECK_FALSE(p.t.requires_grad());
}
