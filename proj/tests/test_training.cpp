#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <map>

#include "doctest.h"
#include "rsmoe/io_util.hpp"
#include "rsmoe/kernels.hpp"
#include "rsmoe/train.hpp"

using namespace rsmoe;

namespace {

ModelConfig tiny() {
    ModelConfig c;
    c.d_model = 16;
    c.heads = 2;
    c.ffn_hidden = 24;
    c.n_queries = 4;
    c.max_len = 96;
    return c;
}

RunConfig quick_rc(uint64_t seed) {
    RunConfig rc;
    rc.seed = seed;
    rc.epochs_stage1 = 3;
    rc.epochs_stage2 = 3;
    rc.epochs_onestage = 3;
    rc.batch = 2;
    rc.lr = 1e-3;
    rc.model = tiny();
    return rc;
}

uint64_t hash_params(const ParamList& ps, const std::string& prefix) {
    uint64_t h = 1469598103934665603ull;
    for (const auto& p : ps) {
        if (p.name.rfind(prefix, 0) != 0) continue;
        h = hash_bytes(p.name.data(), p.name.size(), h);
        h = hash_bytes(p.t.vec().data(), p.t.numel() * sizeof(double), h);
    }
    return h;
}

// reference AdamW, written separately from the library implementation
void reference_adamw(std::vector<double>& w, const std::vector<double>& g,
                     std::vector<double>& m, std::vector<double>& v, int t, double lr,
                     const AdamWConfig& c) {
    for (size_t i = 0; i < w.size(); ++i) {
        w[i] -= lr * c.weight_decay * w[i];
        m[i] = c.beta1 * m[i] + (1 - c.beta1) * g[i];
        v[i] = c.beta2 * v[i] + (1 - c.beta2) * g[i] * g[i];
        const double mh = m[i] / (1 - std::pow(c.beta1, t));
        const double vh = v[i] / (1 - std::pow(c.beta2, t));
        w[i] -= lr * mh / (std::sqrt(vh) + c.eps);
    }
}

std::vector<double> losses_from_log(const std::string& path) {
    std::vector<double> out;
    for (const auto& line : split(read_text_file(path), '\n')) {
        if (line.empty() || line[0] == '#' || line.rfind("step", 0) == 0) continue;
        const auto cols = split(line, '\t');
        REQUIRE(cols.size() == 5);
        out.push_back(std::stod(cols[3]));
    }
    return out;
}

}  // namespace

TEST_CASE("adamw matches a hand-rolled reference for several steps") {
    Rng g = make_rng(1, 0);
    Tensor p = Tensor::uniform({5}, g, -1, 1).set_requires_grad(true);
    std::vector<double> w = p.vec(), m(5, 0), v(5, 0);

    AdamWConfig cfg;
    AdamW opt({{"p", p}}, cfg);
    for (int t = 1; t <= 7; ++t) {
        std::vector<double> grad(5);
        for (auto& x : grad) x = uniform(g, -2, 2);
        for (int i = 0; i < 5; ++i) p.grad()[i] = grad[i];
        const double lr = 0.01 * t;
        opt.step(lr);
        opt.zero_grad();
        reference_adamw(w, grad, m, v, t, lr, cfg);
        for (int i = 0; i < 5; ++i) CHECK(p.at(i) == doctest::Approx(w[i]).epsilon(1e-12));
    }
    CHECK(opt.steps_taken() == 7);
}

TEST_CASE("a step without gradients shrinks weights by exactly 1 - lr*wd") {
    Tensor p = Tensor::from({3}, {1.0, -2.0, 0.5}).set_requires_grad(true);
    AdamWConfig cfg;
    cfg.weight_decay = 0.05;
    AdamW opt({{"p", p}}, cfg);
    const double lr = 0.1;
    opt.step(lr);
    CHECK(p.at(0) == 1.0 * (1 - lr * cfg.weight_decay));
    CHECK(p.at(1) == -2.0 * (1 - lr * cfg.weight_decay));
    CHECK(p.at(2) == 0.5 * (1 - lr * cfg.weight_decay));
}

TEST_CASE("adamw ignores frozen parameters") {
    Tensor a = Tensor::from({2}, {1, 2}).set_requires_grad(true);
    Tensor b = Tensor::from({2}, {3, 4});  // frozen
    AdamW opt({{"a", a}, {"b", b}});
    CHECK(opt.params().size() == 1);
    opt.step(0.5);
    CHECK(b.at(0) == 3.0);
    CHECK(b.at(1) == 4.0);
}

TEST_CASE("adamw rejects non-finite gradients by name") {
    Tensor p = Tensor::from({2}, {1, 2}).set_requires_grad(true);
    AdamW opt({{"culprit", p}});
    p.grad()[1] = std::nan("");
    try {
        opt.step(0.1);
        CHECK(false);
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("culprit") != std::string::npos);
    }
}

TEST_CASE("gradient clipping scales to the ceiling and reports the raw norm") {
    Tensor a = Tensor::from({2}, {0, 0}).set_requires_grad(true);
    Tensor b = Tensor::from({1}, {0}).set_requires_grad(true);
    a.grad()[0] = 3.0;
    a.grad()[1] = 0.0;
    b.grad()[0] = 4.0;
    ParamList ps = {{"a", a}, {"b", b}};
    const double norm = clip_grad_norm(ps, 1.0);  // sqrt(9 + 16) = 5
    CHECK(norm == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(a.grad()[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(b.grad()[0] == doctest::Approx(0.8).epsilon(1e-12));

    const double again = clip_grad_norm(ps, 10.0);  // now below the ceiling
    CHECK(again == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(a.grad()[0] == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("lr schedule hits its pins exactly") {
    LrSchedule s{2e-3, 1e-5, 10, 100};
    CHECK(s.at(0) == 0.0);
    CHECK(s.at(5) == doctest::Approx(1e-3).epsilon(1e-15));
    CHECK(s.at(10) == 2e-3);
    CHECK(s.at(99) == 1e-5);
    for (int t = 10; t < 99; ++t) CHECK(s.at(t) >= s.at(t + 1));
    for (int t = 0; t < 10; ++t) CHECK(s.at(t) <= s.at(t + 1));

    LrSchedule flat{1e-3, 1e-3, 0, 1};
    CHECK(flat.at(0) == 1e-3);
}

TEST_CASE("stage one training reduces the loss and merges its adapters") {
    scene::Dataset train = scene::generate_dataset(21, 8);
    RunConfig rc = quick_rc(21);
    rc.epochs_stage1 = 6;
    rc.lr = 3e-3;
    rc.log_path = "/tmp/rsmoe_s1_log.tsv";
    CaptionModel m = run_stage1(train, rc);

    const std::vector<double> losses = losses_from_log(rc.log_path);
    REQUIRE(losses.size() == (size_t)(6 * 4));
    double head = 0, tail = 0;
    for (int i = 0; i < 4; ++i) head += losses[i];
    for (int i = 0; i < 4; ++i) tail += losses[losses.size() - 1 - i];
    CHECK(tail < head);

    // adapters merged away: no lora rows remain
    for (const auto& p : m.params()) CHECK(p.name.find(".lora_") == std::string::npos);
    std::remove(rc.log_path.c_str());
}

TEST_CASE("stage one is deterministic and thread-mode invariant") {
    scene::Dataset train = scene::generate_dataset(22, 6);
    RunConfig rc = quick_rc(22);
    rc.epochs_stage1 = 2;

    kernels::set_mode(kernels::Mode::serial);
    CaptionModel a = run_stage1(train, rc);
    kernels::set_mode(kernels::Mode::parallel);
    CaptionModel b = run_stage1(train, rc);
    CHECK(hash_params(a.params(), "") == hash_params(b.params(), ""));
}

TEST_CASE("stage two updates only the chosen expert and its router head") {
    scene::Dataset train = scene::generate_dataset(23, 6);
    RunConfig rc = quick_rc(23);
    CaptionModel base = run_stage1(train, rc);

    // reference: untouched expansion of the same stage-one model
    MoeModel before = build_moe(base, 3, true, rc.seed);

    rc.only_expert = 1;
    MoeModel after = run_stage2(base, train, rc);

    ParamList pb = before.params(), pa = after.params();
    CHECK(hash_params(pa, "expert0.") == hash_params(pb, "expert0."));
    CHECK(hash_params(pa, "expert2.") == hash_params(pb, "expert2."));
    CHECK(hash_params(pa, "expert1.") != hash_params(pb, "expert1."));
    // head 1 moves, heads 0 and 2 do not; the trunk belongs to expert 0's
    // step and must stay put as well
    CHECK(hash_params(pa, "router.head1") != hash_params(pb, "router.head1"));
    CHECK(hash_params(pa, "router.head0") == hash_params(pb, "router.head0"));
    CHECK(hash_params(pa, "router.head2") == hash_params(pb, "router.head2"));
    CHECK(hash_params(pa, "router.trunk") == hash_params(pb, "router.trunk"));
    CHECK(hash_params(pa, "router.emb") == hash_params(pb, "router.emb"));
    // the shared encoder stack is frozen in stage two
    CHECK(hash_params(pa, "vlm.") == hash_params(pb, "vlm."));
    CHECK(hash_params(pa, "img.") == hash_params(pb, "img."));
}

TEST_CASE("stage two with every expert trains the trunk and all heads") {
    scene::Dataset train = scene::generate_dataset(24, 6);
    RunConfig rc = quick_rc(24);
    CaptionModel base = run_stage1(train, rc);
    MoeModel before = build_moe(base, 2, true, rc.seed);
    rc.n_experts = 2;
    MoeModel after = run_stage2(base, train, rc);
    ParamList pb = before.params(), pa = after.params();
    for (const char* pre : {"expert0.", "expert1.", "router.head0", "router.head1",
                            "router.trunk"})
        CHECK(hash_params(pa, pre) != hash_params(pb, pre));
    CHECK(hash_params(pa, "router.emb") == hash_params(pb, "router.emb"));
}

TEST_CASE("freeze plans expose the right trainable sets") {
    const Vocab& v = scene::default_vocab();
    RunConfig rc = quick_rc(25);
    CaptionModel cm(rc.model, v.size(), 25);
    Rng g = make_rng(25, 40);
    attach_stage1_adapters(cm, g);
    apply_stage1_freeze(cm);
    for (const auto& p : cm.params()) {
        const bool expect = p.name.find(".lora_") != std::string::npos ||
                            p.name.ends_with(".gamma") || p.name.ends_with(".beta") ||
                            p.name == "vlm.queries" || p.name == "vlm.proj.w" ||
                            p.name == "vlm.proj.b" || p.name == "llm.tok.table";
        const bool img = p.name.rfind("img.", 0) == 0;
        CHECK(p.t.requires_grad() == (expect && !img));
    }

    merge_stage1_adapters(cm);
    MoeModel mm = build_moe(cm, 3, true, 25);
    for (int i = 0; i < 3; ++i) {
        Rng gr = make_rng(25, 41 + (uint64_t)i);
        attach_expert_adapters(mm.experts[i], mm.cfg.lora_rank, mm.cfg.lora_alpha, gr);
    }
    apply_stage2_freeze(mm);
    ParamStats st = param_stats(mm.params());
    CHECK(st.trainable > 0);
    for (const auto& p : mm.params()) {
        const bool expect =
            (p.name.rfind("expert", 0) == 0 && p.name.find(".lora_") != std::string::npos) ||
            p.name.rfind("router.trunk.", 0) == 0 || p.name.rfind("router.head", 0) == 0;
        CHECK(p.t.requires_grad() == expect);
    }
}

TEST_CASE("single-stage baseline trains and merges everything") {
    scene::Dataset train = scene::generate_dataset(26, 6);
    RunConfig rc = quick_rc(26);
    rc.n_experts = 2;
    rc.log_path = "/tmp/rsmoe_os_log.tsv";
    MoeModel m = run_onestage(train, rc);
    for (const auto& p : m.params()) CHECK(p.name.find(".lora_") == std::string::npos);
    const std::vector<double> losses = losses_from_log(rc.log_path);
    CHECK(losses.back() < losses.front());
    std::remove(rc.log_path.c_str());

    const Vocab& v = scene::default_vocab();
    EvalOutput ev = evaluate_moe(m, train, v);
    CHECK(ev.captions.size() == train.items.size());
    std::remove(rc.log_path.c_str());
}

TEST_CASE("router-free stage two trains experts on a rotating role mixture") {
    scene::Dataset train = scene::generate_dataset(27, 6);
    RunConfig rc = quick_rc(27);
    CaptionModel base = run_stage1(train, rc);

    rc.use_router = false;
    MoeModel no_router = run_stage2(base, train, rc);
    rc.use_router = true;
    MoeModel routed = run_stage2(base, train, rc);

    // the training mixtures differ, so the experts must end up different
    CHECK(hash_params(no_router.params(), "expert0.") !=
          hash_params(routed.params(), "expert0."));
    // and without a router its parameters never move
    MoeModel pristine = build_moe(base, 3, false, rc.seed);
    CHECK(hash_params(no_router.params(), "router.") ==
          hash_params(pristine.params(), "router."));
}

TEST_CASE("run config validation") {
    RunConfig rc = quick_rc(1);
    rc.batch = 0;
    CHECK_THROWS_AS(rc.validate(), ConfigError);
    rc = quick_rc(1);
    rc.min_lr = rc.lr * 2;
    CHECK_THROWS_AS(rc.validate(), ConfigError);
    rc = quick_rc(1);
    rc.n_experts = 9;
    CHECK_THROWS_AS(rc.validate(), ConfigError);
    rc = quick_rc(1);
    rc.clip_norm = -1;
    CHECK_THROWS_AS(rc.validate(), ConfigError);
    scene::Dataset empty;
    CHECK_THROWS_AS((void)run_stage1(empty, quick_rc(1)), DataError);
}
