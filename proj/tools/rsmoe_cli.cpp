// Command line front end: dataset synthesis, the two training stages, the
// single-stage baseline, captioning, evaluation, the ablation grid and a
// numeric gradient self-check.
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rsmoe/checkpoint.hpp"
#include "rsmoe/io_util.hpp"
#include "rsmoe/kernels.hpp"
#include "rsmoe/train.hpp"

namespace {

using namespace rsmoe;

struct TrainArgs {
    RunConfig rc;
    std::string data;
    std::string out;
    std::string config_path;
    int epochs = 0;  // 0 keeps the per-stage default
    bool no_clip = false;
};

void add_train_options(CLI::App* cmd, TrainArgs& a) {
    cmd->add_option("--data", a.data, "dataset file from `synth`")->required();
    cmd->add_option("--out", a.out, "checkpoint to write")->required();
    cmd->add_option("--seed", a.rc.seed, "run seed");
    cmd->add_option("--epochs", a.epochs, "epoch count for this stage");
    cmd->add_option("--batch", a.rc.batch, "batch size");
    cmd->add_option("--lr", a.rc.lr, "peak learning rate");
    cmd->add_option("--min-lr", a.rc.min_lr, "cosine floor");
    cmd->add_option("--weight-decay", a.rc.weight_decay, "decoupled weight decay");
    cmd->add_flag("--no-clip", a.no_clip, "disable gradient norm clipping");
    cmd->add_option("--clip-norm", a.rc.clip_norm, "gradient norm ceiling");
    cmd->add_option("--log", a.rc.log_path, "step log TSV path");
    cmd->add_option("--config", a.config_path, "model config file, key=value lines");
}

void finish_train_args(TrainArgs& a) {
    a.rc.clip = !a.no_clip;
    if (!a.config_path.empty()) a.rc.model = ModelConfig::parse(read_text_file(a.config_path));
    if (a.epochs > 0) {
        a.rc.epochs_stage1 = a.epochs;
        a.rc.epochs_stage2 = a.epochs;
        a.rc.epochs_onestage = a.epochs;
    }
}

scene::Dataset load_data(const std::string& path) { return scene::read_dataset(path); }

AblationCell parse_cell(const std::string& s) {
    // two-stage/router/N=3
    const std::vector<std::string> parts = split(s, '/');
    if (parts.size() != 3 || parts[2].rfind("N=", 0) != 0)
        throw ConfigError("bad cell spec: " + s + " (want pipeline/router|no-router/N=<k>)");
    AblationCell c;
    c.pipeline = parts[0];
    if (parts[1] == "router")
        c.use_router = true;
    else if (parts[1] == "no-router")
        c.use_router = false;
    else
        throw ConfigError("bad cell spec: " + s);
    c.n_experts = std::atoi(parts[2].c_str() + 2);
    return c;
}

void print_eval(const EvalOutput& ev) {
    std::printf("%s", ev.report.to_tsv_header().c_str());
    std::printf("%s", ev.report.to_tsv().c_str());
    std::printf("theme_acc\t%.4f\nobject_f1\t%.4f\nrelation_f1\t%.4f\n", ev.semantic.theme_acc,
                ev.semantic.object_f1, ev.semantic.relation_f1);
}

int run_gradcheck(uint64_t seed) {
    // Full-pipeline loss, random parameter coordinates against central
    // differences. Mirrors the library's own test tolerance.
    ModelConfig cfg;
    cfg.d_model = 16;
    cfg.heads = 2;
    cfg.ffn_hidden = 24;
    cfg.n_queries = 4;
    cfg.max_len = 24;
    const Vocab& v = scene::default_vocab();
    scene::Dataset d = scene::generate_dataset(seed, 1);
    CaptionModel m(cfg, v.size(), seed);
    Rng ar = make_rng(seed, 40);
    attach_stage1_adapters(m, ar);
    apply_stage1_freeze(m);
    const std::vector<int> instr = v.encode(scene::default_instruction());
    const std::vector<int> target = v.encode(d.items[0].captions.theme_sentence);
    auto loss_fn = [&]() {
        Tensor fv = m.encode(d.items[0].image, instr);
        return m.llm.loss(fv, target);
    };
    ParamList ps = m.params();
    Rng pick = make_rng(seed, 99);
    double worst = 0.0;
    int checked = 0;
    for (const auto& p : ps) {
        if (!p.t.requires_grad()) continue;
        if (randint(pick, 0, 3) != 0 && checked > 0) continue;
        // step ladder: near-zero gradients need the large steps, stiff
        // embedding coordinates need the small ones
        const double err =
            grad_check_multi(loss_fn, p.t, {3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5, 3e-6});
        if (err > worst) worst = err;
        ++checked;
    }
    std::printf("gradcheck seed=%llu params=%d max_rel_err=%.3e\n", (unsigned long long)seed,
                checked, worst);
    return worst < 1e-4 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale instruction-routed captioning"};
    app.require_subcommand(1);
    bool serial = false;
    app.add_flag("--serial", serial, "force serial kernels");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a dataset file");
    uint64_t synth_seed = 1;
    int synth_count = 100;
    std::string synth_out;
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--count", synth_count, "number of scenes")->required();
    synth->add_option("--out", synth_out, "dataset file to write")->required();

    // train-stage1 / train-stage2 / train-onestage
    TrainArgs s1, s2, os;
    auto* t1 = app.add_subcommand("train-stage1", "train the base captioner");
    add_train_options(t1, s1);
    auto* t2 = app.add_subcommand("train-stage2", "specialize experts from a stage-one model");
    add_train_options(t2, s2);
    std::string s2_init;
    t2->add_option("--init", s2_init, "stage-one checkpoint")->required();
    t2->add_option("--experts", s2.rc.n_experts, "expert count, 1..4");
    bool s2_no_router = false, s2_router_joint = false;
    t2->add_flag("--no-router", s2_no_router, "train experts on a rotating role mixture");
    t2->add_flag("--router-joint", s2_router_joint, "shared softmax router loss");
    t2->add_option("--only-expert", s2.rc.only_expert, "debug: update a single expert");
    auto* to = app.add_subcommand("train-onestage", "single-stage joint baseline");
    add_train_options(to, os);
    to->add_option("--experts", os.rc.n_experts, "expert count, 1..4");
    bool os_no_router = false;
    to->add_flag("--no-router", os_no_router, "fixed role-slot assignment at inference");

    // caption
    auto* cap = app.add_subcommand("caption", "caption dataset images with a checkpoint");
    std::string cap_model, cap_data;
    int cap_index = 0;
    bool cap_all = false, cap_segments = false;
    cap->add_option("--model", cap_model, "checkpoint")->required();
    cap->add_option("--data", cap_data, "dataset file")->required();
    cap->add_option("--index", cap_index, "item to caption");
    cap->add_flag("--all", cap_all, "caption every item, one line each");
    cap->add_flag("--segments", cap_segments, "also print per-expert segments");

    // eval
    auto* ev = app.add_subcommand("eval", "score a checkpoint against references");
    std::string ev_model, ev_data;
    ev->add_option("--model", ev_model, "checkpoint")->required();
    ev->add_option("--data", ev_data, "dataset file")->required();

    // ablate
    auto* ab = app.add_subcommand("ablate", "run the pipeline/router/expert grid");
    std::string ab_cells =
        "two-stage/router/N=3,two-stage/no-router/N=3,two-stage/router/N=1,one-stage/router/N=3";
    std::string ab_seeds = "101,102,103";
    int ab_train_n = 300, ab_eval_n = 48, ab_threads = 0;
    TrainArgs abr;
    ab->add_option("--cells", ab_cells, "comma list, e.g. two-stage/router/N=3");
    ab->add_option("--seeds", ab_seeds, "comma list of seeds");
    ab->add_option("--train-n", ab_train_n, "training scenes per seed");
    ab->add_option("--eval-n", ab_eval_n, "evaluation scenes per seed");
    ab->add_option("--threads", ab_threads, "worker threads, 0 reads RSMOE_THREADS");
    ab->add_option("--epochs-stage1", abr.rc.epochs_stage1, "stage-one epochs");
    ab->add_option("--epochs-stage2", abr.rc.epochs_stage2, "stage-two epochs");
    ab->add_option("--epochs-onestage", abr.rc.epochs_onestage, "baseline epochs");
    ab->add_option("--batch", abr.rc.batch, "batch size");
    ab->add_option("--lr", abr.rc.lr, "peak learning rate");
    ab->add_option("--config", abr.config_path, "model config file");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "numeric gradient self-check");
    uint64_t gc_seed = 1;
    gc->add_option("--seed", gc_seed, "check seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (serial) kernels::set_mode(kernels::Mode::serial);
        const Vocab& v = scene::default_vocab();

        if (synth->parsed()) {
            if (synth_count < 1) throw ConfigError("count must be positive");
            scene::write_dataset(synth_out, scene::generate_dataset(synth_seed, synth_count));
            std::printf("wrote %d scenes to %s\n", synth_count, synth_out.c_str());
        } else if (t1->parsed()) {
            finish_train_args(s1);
            CaptionModel m = run_stage1(load_data(s1.data), s1.rc);
            save_caption_model(s1.out, m, v, "stage1");
            std::printf("wrote %s\n", s1.out.c_str());
        } else if (t2->parsed()) {
            finish_train_args(s2);
            s2.rc.use_router = !s2_no_router;
            s2.rc.router_joint = s2_router_joint;
            Vocab ckpt_vocab;
            std::string stage;
            CaptionModel init = load_caption_model(s2_init, ckpt_vocab, stage);
            s2.rc.model = init.cfg;
            MoeModel m = run_stage2(init, load_data(s2.data), s2.rc);
            save_moe_model(s2.out, m, v, "stage2");
            std::printf("wrote %s\n", s2.out.c_str());
        } else if (to->parsed()) {
            finish_train_args(os);
            os.rc.use_router = !os_no_router;
            MoeModel m = run_onestage(load_data(os.data), os.rc);
            save_moe_model(os.out, m, v, "onestage");
            std::printf("wrote %s\n", os.out.c_str());
        } else if (cap->parsed()) {
            scene::Dataset d = load_data(cap_data);
            const std::string kind = checkpoint_kind(cap_model);
            Vocab mv;
            std::string stage;
            const int lo = cap_all ? 0 : cap_index;
            const int hi = cap_all ? (int)d.items.size() : cap_index + 1;
            if (lo < 0 || hi > (int)d.items.size()) throw DataError("index out of range");
            if (kind == "caption") {
                CaptionModel m = load_caption_model(cap_model, mv, stage);
                NoGradGuard ng;
                const std::vector<int> instr = mv.encode(scene::default_instruction());
                for (int i = lo; i < hi; ++i) {
                    Tensor fv = m.encode(d.items[i].image, instr);
                    std::printf("%s\n", mv.decode(m.llm.generate(fv, m.cfg.max_len)).c_str());
                }
            } else {
                MoeModel m = load_moe_model(cap_model, mv, stage);
                for (int i = lo; i < hi; ++i) {
                    MoeCaption c = moe_generate(m, d.items[i].image, mv);
                    std::printf("%s\n", c.text.c_str());
                    if (cap_segments)
                        for (size_t s = 0; s < c.segments.size(); ++s)
                            std::printf("  %s -> expert %d: %s\n", m.roles[s].c_str(),
                                        c.expert_of[s], c.segments[s].c_str());
                }
            }
        } else if (ev->parsed()) {
            scene::Dataset d = load_data(ev_data);
            const std::string kind = checkpoint_kind(ev_model);
            Vocab mv;
            std::string stage;
            EvalOutput out = kind == "caption"
                                 ? evaluate_caption(load_caption_model(ev_model, mv, stage), d, mv)
                                 : evaluate_moe(load_moe_model(ev_model, mv, stage), d, mv);
            print_eval(out);
        } else if (ab->parsed()) {
            finish_train_args(abr);
            std::vector<AblationCell> cells;
            for (const auto& s : split(ab_cells, ',')) cells.push_back(parse_cell(s));
            std::vector<uint64_t> seeds;
            for (const auto& s : split(ab_seeds, ','))
                seeds.push_back(std::strtoull(s.c_str(), nullptr, 10));
            int threads = ab_threads;
            if (threads <= 0) {
                const char* env = std::getenv("RSMOE_THREADS");
                threads = env ? std::atoi(env) : 1;
                if (threads <= 0) threads = 1;
            }
            auto res = run_ablation(cells, seeds, ab_train_n, ab_eval_n, abr.rc, threads);
            std::printf("%s", ablation_table(res).c_str());
        } else if (gc->parsed()) {
            return run_gradcheck(gc_seed);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
