#include "rsmoe/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>
#include <thread>

#include "rsmoe/kernels.hpp"

namespace rsmoe {

namespace {

void shuffle_order(std::vector<int>& order, Rng& g) {
    for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[randint(g, 0, (int)i - 1)]);
}

class StepLogger {
  public:
    StepLogger(const std::string& path, const RunConfig& rc, const char* stage) {
        if (path.empty()) return;
        f_.open(path);
        if (!f_) throw IoError("cannot open " + path + " for writing");
        char head[512];
        std::snprintf(head, sizeof head,
                      "# stage=%s seed=%llu batch=%d lr=%.17g min_lr=%.17g weight_decay=%.17g "
                      "clip=%d clip_norm=%.17g n_experts=%d use_router=%d\n",
                      stage, (unsigned long long)rc.seed, rc.batch, rc.lr, rc.min_lr,
                      rc.weight_decay, rc.clip ? 1 : 0, rc.clip_norm, rc.n_experts,
                      rc.use_router ? 1 : 0);
        f_ << head << "step\tepoch\tlr\tloss\tgrad_norm\n";
    }

    void row(int step, int epoch, double lr, double loss, double grad_norm) {
        if (!f_.is_open()) return;
        char b[256];
        std::snprintf(b, sizeof b, "%d\t%d\t%.17g\t%.17g\t%.17g\n", step, epoch, lr, loss,
                      grad_norm);
        f_ << b;
    }

  private:
    std::ofstream f_;
};

bool ends_with(const std::string& s, const char* suffix) {
    return s.ends_with(suffix);
}

bool stage1_trainable(const std::string& name) {
    if (name.rfind("img.", 0) == 0) return false;
    if (name.find(".lora_") != std::string::npos) return true;
    if (ends_with(name, ".gamma") || ends_with(name, ".beta")) return true;
    if (name == "vlm.queries" || name == "vlm.proj.w" || name == "vlm.proj.b") return true;
    if (name == "llm.tok.table") return true;
    return false;
}

bool stage2_trainable(const std::string& name) {
    if (name.rfind("expert", 0) == 0 && name.find(".lora_") != std::string::npos) return true;
    if (name.rfind("router.trunk.", 0) == 0 || name.rfind("router.head", 0) == 0) return true;
    return false;
}

bool onestage_trainable(const std::string& name) {
    if (name.rfind("img.", 0) == 0) return false;
    if (name == "router.emb") return false;
    if (name.rfind("router.", 0) == 0) return true;
    if (name.find(".lora_") != std::string::npos) return true;
    if (ends_with(name, ".gamma") || ends_with(name, ".beta")) return true;
    if (name == "vlm.queries" || name == "vlm.proj.w" || name == "vlm.proj.b") return true;
    if (name.rfind("expert", 0) == 0 && ends_with(name, ".tok.table")) return true;
    return false;
}

void apply_plan(const ParamList& ps, bool (*plan)(const std::string&)) {
    for (const auto& p : ps) {
        Tensor t = p.t;
        t.set_requires_grad(plan(p.name));
    }
}

double step_optimizer(AdamW& opt, const RunConfig& rc, double lr) {
    const double gn = clip_grad_norm(opt.params(), rc.clip ? rc.clip_norm : 1e300);
    opt.step(lr);
    opt.zero_grad();
    return gn;
}

// Per-head routing loss: the head scores its own instruction against zero in
// a two-way softmax, positives for its role, negatives for the others. Heads
// other than 0 see detached trunk features, so only expert 0's step moves the
// trunk and head j never takes gradients from expert i's step.
Tensor router_head_loss(const Router& router, const std::vector<std::vector<int>>& instrs,
                        int head) {
    Tensor total;
    for (size_t r = 0; r < instrs.size(); ++r) {
        Tensor feat;
        if (head == 0) {
            feat = router.features(instrs[r]);
        } else {
            NoGradGuard ng;
            feat = router.features(instrs[r]);
        }
        Tensor logits = concat_cols({router.head_score(head, feat), Tensor::zeros({1, 1})});
        Tensor ce = cross_entropy(logits, {(int)r == head ? 0 : 1}, -1);
        total = total.defined() ? add(total, ce) : ce;
    }
    return scale(total, 1.0 / (double)instrs.size());
}

Tensor router_joint_loss(const Router& router, const std::vector<std::vector<int>>& instrs) {
    Tensor total;
    for (size_t r = 0; r < instrs.size(); ++r) {
        Tensor feat = router.features(instrs[r]);
        std::vector<Tensor> scores;
        for (size_t h = 0; h < router.heads.size(); ++h)
            scores.push_back(router.head_score((int)h, feat));
        Tensor ce = cross_entropy(concat_cols(scores), {(int)r}, -1);
        total = total.defined() ? add(total, ce) : ce;
    }
    return scale(total, 1.0 / (double)instrs.size());
}

}  // namespace

void RunConfig::validate() const {
    if (batch < 1) throw ConfigError("batch must be at least 1");
    if (epochs_stage1 < 1 || epochs_stage2 < 1 || epochs_onestage < 1)
        throw ConfigError("epoch counts must be at least 1");
    if (lr <= 0 || min_lr < 0 || min_lr > lr) throw ConfigError("need 0 <= min_lr <= lr, lr > 0");
    if (weight_decay < 0) throw ConfigError("negative weight decay");
    if (clip && clip_norm <= 0) throw ConfigError("clip_norm must be positive");
    if (n_experts < 1 || n_experts > 4) throw ConfigError("n_experts must be 1..4");
    model.validate();
}

ParamStats param_stats(const ParamList& ps) {
    ParamStats s;
    for (const auto& p : ps) {
        s.total += p.t.numel();
        if (p.t.requires_grad()) s.trainable += p.t.numel();
    }
    return s;
}

void apply_stage1_freeze(CaptionModel& m) { apply_plan(m.params(), stage1_trainable); }
void apply_stage2_freeze(MoeModel& m) { apply_plan(m.params(), stage2_trainable); }
void apply_onestage_freeze(MoeModel& m) { apply_plan(m.params(), onestage_trainable); }

CaptionModel run_stage1(const scene::Dataset& train, const RunConfig& rc) {
    rc.validate();
    if (train.items.empty()) throw DataError("stage one: empty training set");
    const Vocab& v = scene::default_vocab();

    CaptionModel m(rc.model, v.size(), rc.seed);
    Rng ar = make_rng(rc.seed, 40);
    attach_stage1_adapters(m, ar);
    apply_stage1_freeze(m);

    AdamWConfig ac;
    ac.weight_decay = rc.weight_decay;
    AdamW opt(m.params(), ac);

    const int n = (int)train.items.size();
    const std::vector<int> instr = v.encode(scene::default_instruction());
    std::vector<std::vector<int>> targets(n);
    for (int s = 0; s < n; ++s) targets[s] = v.encode(train.items[s].captions.full_caption);

    const int spe = (n + rc.batch - 1) / rc.batch;
    LrSchedule sched{rc.lr, rc.min_lr, spe, spe * rc.epochs_stage1};
    StepLogger log(rc.log_path, rc, "stage1");

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    int step = 0;
    for (int epoch = 0; epoch < rc.epochs_stage1; ++epoch) {
        Rng sg = make_rng(rc.seed, 60 + (uint64_t)epoch);
        shuffle_order(order, sg);
        for (int s0 = 0; s0 < n; s0 += rc.batch) {
            const int bsz = std::min(rc.batch, n - s0);
            double loss_sum = 0.0;
            for (int b = 0; b < bsz; ++b) {
                const scene::Sample& ex = train.items[order[s0 + b]];
                Graph g;
                Tensor fv = m.encode(ex.image, instr);
                Tensor loss = m.llm.loss(fv, targets[order[s0 + b]]);
                g.backward(scale(loss, 1.0 / bsz));
                loss_sum += loss.item();
            }
            const double lr = sched.at(step);
            const double gn = step_optimizer(opt, rc, lr);
            log.row(step, epoch, lr, loss_sum / bsz, gn);
            ++step;
        }
    }
    merge_stage1_adapters(m);
    return m;
}

MoeModel run_stage2(const CaptionModel& stage1, const scene::Dataset& train,
                    const RunConfig& rc) {
    rc.validate();
    if (train.items.empty()) throw DataError("stage two: empty training set");
    const Vocab& v = scene::default_vocab();

    MoeModel m = build_moe(stage1, rc.n_experts, rc.use_router, rc.seed);
    const int ne = rc.n_experts;
    for (int i = 0; i < ne; ++i) {
        Rng gr = make_rng(rc.seed, 41 + (uint64_t)i);
        attach_expert_adapters(m.experts[i], m.cfg.lora_rank, m.cfg.lora_alpha, gr);
    }
    apply_stage2_freeze(m);

    std::vector<std::vector<int>> instrs;
    for (const auto& role : m.roles) instrs.push_back(v.encode(instruction_for(role)));

    // the encoder is frozen here, so its outputs are precomputed constants
    const int n = (int)train.items.size();
    std::vector<std::vector<Tensor>> f_vlm(n);
    std::vector<std::vector<std::vector<int>>> targets(n);
    {
        NoGradGuard ng;
        for (int s = 0; s < n; ++s) {
            Tensor fi = m.image_enc.forward(train.items[s].image);
            for (int i = 0; i < ne; ++i) {
                f_vlm[s].push_back(m.vlm.forward(fi, instrs[i]));
                targets[s].push_back(
                    v.encode(target_for(m.roles[i], train.items[s].captions)));
            }
        }
    }

    AdamWConfig ac;
    ac.weight_decay = rc.weight_decay;
    std::vector<AdamW> opts;
    for (int i = 0; i < ne; ++i) {
        ParamList ps;
        m.experts[i].params("expert" + std::to_string(i), ps);
        if (rc.use_router && !rc.router_joint) {
            if (i == 0) m.router.trunk.params("router.trunk", ps);
            m.router.heads[i].params("router.head" + std::to_string(i), ps);
        }
        opts.emplace_back(ps, ac);
    }
    std::unique_ptr<AdamW> router_opt;
    if (rc.use_router && rc.router_joint) {
        ParamList ps;
        m.router.trunk.params("router.trunk", ps);
        for (int i = 0; i < ne; ++i)
            m.router.heads[i].params("router.head" + std::to_string(i), ps);
        router_opt = std::make_unique<AdamW>(ps, ac);
    }

    const int spe = (n + rc.batch - 1) / rc.batch;
    LrSchedule sched{rc.lr, rc.min_lr, spe, spe * rc.epochs_stage2};
    StepLogger log(rc.log_path, rc, "stage2");

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    int step = 0;
    for (int epoch = 0; epoch < rc.epochs_stage2; ++epoch) {
        Rng sg = make_rng(rc.seed, 60 + (uint64_t)epoch);
        shuffle_order(order, sg);
        for (int s0 = 0; s0 < n; s0 += rc.batch) {
            const int bsz = std::min(rc.batch, n - s0);
            double loss_sum = 0.0;
            int loss_cnt = 0;
            for (int b = 0; b < bsz; ++b) {
                const int s = order[s0 + b];
                for (int i = 0; i < ne; ++i) {
                    if (rc.only_expert >= 0 && i != rc.only_expert) continue;
                    // without a router there is no instruction-based data
                    // split; every expert sees a rotating role mixture
                    const int role = rc.use_router ? i : (s + i) % ne;
                    Graph g;
                    Tensor loss = m.experts[i].loss(f_vlm[s][role], targets[s][role]);
                    g.backward(scale(loss, 1.0 / bsz));
                    loss_sum += loss.item();
                    ++loss_cnt;
                }
            }
            if (rc.use_router) {
                if (rc.router_joint) {
                    Graph g;
                    g.backward(router_joint_loss(m.router, instrs));
                } else {
                    for (int i = 0; i < ne; ++i) {
                        if (rc.only_expert >= 0 && i != rc.only_expert) continue;
                        Graph g;
                        g.backward(router_head_loss(m.router, instrs, i));
                    }
                }
            }
            const double lr = sched.at(step);
            double gn = 0.0;
            for (int i = 0; i < ne; ++i) {
                if (rc.only_expert >= 0 && i != rc.only_expert) continue;
                gn += step_optimizer(opts[i], rc, lr);
            }
            if (router_opt) gn += step_optimizer(*router_opt, rc, lr);
            log.row(step, epoch, lr, loss_cnt ? loss_sum / loss_cnt : 0.0, gn);
            ++step;
        }
    }
    for (int i = 0; i < ne; ++i) merge_expert_adapters(m.experts[i]);
    return m;
}

MoeModel run_onestage(const scene::Dataset& train, const RunConfig& rc) {
    rc.validate();
    if (train.items.empty()) throw DataError("single stage: empty training set");
    const Vocab& v = scene::default_vocab();

    MoeModel m = build_moe_fresh(rc.model, v.size(), rc.n_experts, rc.use_router, rc.seed);
    const int ne = rc.n_experts;
    Rng gv = make_rng(rc.seed, 40);
    attach_vlm_adapters(m.vlm, m.cfg.lora_rank, m.cfg.lora_alpha, gv);
    for (int i = 0; i < ne; ++i) {
        Rng gr = make_rng(rc.seed, 41 + (uint64_t)i);
        attach_expert_adapters(m.experts[i], m.cfg.lora_rank, m.cfg.lora_alpha, gr);
    }
    apply_onestage_freeze(m);

    std::vector<std::vector<int>> instrs;
    for (const auto& role : m.roles) instrs.push_back(v.encode(instruction_for(role)));

    const int n = (int)train.items.size();
    std::vector<Tensor> f_img(n);
    std::vector<std::vector<std::vector<int>>> targets(n);
    {
        NoGradGuard ng;
        for (int s = 0; s < n; ++s) {
            f_img[s] = m.image_enc.forward(train.items[s].image);
            for (int i = 0; i < ne; ++i)
                targets[s].push_back(
                    v.encode(target_for(m.roles[i], train.items[s].captions)));
        }
    }

    AdamWConfig ac;
    ac.weight_decay = rc.weight_decay;
    AdamW opt(m.params(), ac);

    const int spe = (n + rc.batch - 1) / rc.batch;
    LrSchedule sched{rc.lr, rc.min_lr, spe, spe * rc.epochs_onestage};
    StepLogger log(rc.log_path, rc, "onestage");

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    int step = 0;
    for (int epoch = 0; epoch < rc.epochs_onestage; ++epoch) {
        Rng sg = make_rng(rc.seed, 60 + (uint64_t)epoch);
        shuffle_order(order, sg);
        for (int s0 = 0; s0 < n; s0 += rc.batch) {
            const int bsz = std::min(rc.batch, n - s0);
            double loss_sum = 0.0;
            for (int b = 0; b < bsz; ++b) {
                const int s = order[s0 + b];
                for (int i = 0; i < ne; ++i) {
                    const int role = rc.use_router ? i : (s + i) % ne;
                    Graph g;
                    Tensor fv = m.vlm.forward(f_img[s], instrs[role]);
                    Tensor loss = m.experts[i].loss(fv, targets[s][role]);
                    g.backward(scale(loss, 1.0 / (bsz * ne)));
                    loss_sum += loss.item();
                }
            }
            if (rc.use_router) {
                for (int i = 0; i < ne; ++i) {
                    Graph g;
                    g.backward(router_head_loss(m.router, instrs, i));
                }
            }
            const double lr = sched.at(step);
            const double gn = step_optimizer(opt, rc, lr);
            log.row(step, epoch, lr, loss_sum / (bsz * ne), gn);
            ++step;
        }
    }
    merge_vlm_adapters(m.vlm);
    for (int i = 0; i < ne; ++i) merge_expert_adapters(m.experts[i]);
    return m;
}

EvalOutput evaluate_moe(const MoeModel& m, const scene::Dataset& eval_set, const Vocab& v) {
    if (eval_set.items.empty()) throw DataError("evaluate: empty dataset");
    EvalOutput out;
    std::vector<std::vector<std::string>> refs;
    std::vector<scene::SceneGraph> graphs;
    for (const auto& ex : eval_set.items) {
        out.captions.push_back(moe_generate(m, ex.image, v).text);
        refs.push_back(ex.references);
        graphs.push_back(ex.graph);
    }
    out.report = metrics::score_corpus(out.captions, refs);
    out.semantic = metrics::semantic_scores(out.captions, graphs);
    return out;
}

EvalOutput evaluate_caption(const CaptionModel& m, const scene::Dataset& eval_set,
                            const Vocab& v) {
    if (eval_set.items.empty()) throw DataError("evaluate: empty dataset");
    NoGradGuard ng;
    EvalOutput out;
    std::vector<std::vector<std::string>> refs;
    std::vector<scene::SceneGraph> graphs;
    const std::vector<int> instr = v.encode(scene::default_instruction());
    for (const auto& ex : eval_set.items) {
        Tensor fv = m.encode(ex.image, instr);
        out.captions.push_back(v.decode(m.llm.generate(fv, m.cfg.max_len)));
        refs.push_back(ex.references);
        graphs.push_back(ex.graph);
    }
    out.report = metrics::score_corpus(out.captions, refs);
    out.semantic = metrics::semantic_scores(out.captions, graphs);
    return out;
}

std::string AblationCell::label() const {
    return pipeline + (use_router ? "/router" : "/no-router") + "/N=" +
           std::to_string(n_experts);
}

std::vector<AblationResult> run_ablation(const std::vector<AblationCell>& cells,
                                         const std::vector<uint64_t>& seeds, int train_n,
                                         int eval_n, const RunConfig& base, int threads) {
    if (cells.empty() || seeds.empty()) throw ConfigError("ablation: nothing to run");
    if (train_n < 1 || eval_n < 1) throw ConfigError("ablation: dataset sizes must be positive");
    for (const auto& c : cells)
        if (c.pipeline != "two-stage" && c.pipeline != "one-stage")
            throw ConfigError("ablation: unknown pipeline " + c.pipeline);
    threads = std::max(1, std::min(threads, 64));

    const size_t ns = seeds.size();
    // one split for the whole grid; the seeds vary only the runs, so cell
    // differences are not confounded with dataset resampling
    const scene::Dataset train = scene::generate_dataset(base.seed, train_n);
    const scene::Dataset eval_set = scene::generate_dataset(base.seed + 10000, eval_n);

    bool any_two_stage = false;
    for (const auto& c : cells) any_two_stage |= c.pipeline == "two-stage";

    auto pool = [&](size_t count, auto&& body) {
        std::atomic<size_t> next{0};
        auto worker = [&]() {
            kernels::set_mode(kernels::Mode::serial);
            for (size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) body(i);
        };
        std::vector<std::thread> ts;
        const size_t tn = std::min((size_t)threads, count);
        for (size_t t = 0; t < tn; ++t) ts.emplace_back(worker);
        for (auto& t : ts) t.join();
    };

    // two-stage cells of one seed share the first stage, so the grid isolates
    // the second-stage factors
    std::vector<std::unique_ptr<CaptionModel>> stage1s(ns);
    if (any_two_stage) {
        pool(ns, [&](size_t k) {
            RunConfig rc = base;
            rc.seed = seeds[k];
            rc.log_path.clear();
            stage1s[k] = std::make_unique<CaptionModel>(run_stage1(train, rc));
        });
    }

    const Vocab& v = scene::default_vocab();
    std::vector<AblationResult> results(cells.size() * ns);
    pool(results.size(), [&](size_t idx) {
        const size_t ci = idx / ns;
        const size_t k = idx % ns;
        RunConfig rc = base;
        rc.seed = seeds[k];
        rc.n_experts = cells[ci].n_experts;
        rc.use_router = cells[ci].use_router;
        rc.log_path.clear();
        const auto t0 = std::chrono::steady_clock::now();
        MoeModel moe = cells[ci].pipeline == "two-stage"
                           ? run_stage2(*stage1s[k], train, rc)
                           : run_onestage(train, rc);
        EvalOutput ev = evaluate_moe(moe, eval_set, v);
        const auto t1 = std::chrono::steady_clock::now();
        AblationResult& r = results[idx];
        r.cell = cells[ci];
        r.seed = seeds[k];
        r.report = ev.report;
        r.semantic = ev.semantic;
        r.seconds = std::chrono::duration<double>(t1 - t0).count();
    });
    return results;
}

std::string ablation_table(const std::vector<AblationResult>& results) {
    std::string out =
        "cell\tseed\tbleu1\tbleu2\tbleu3\tbleu4\trouge_l\tmeteor\tcider\ttheme_acc\tobject_f1\t"
        "relation_f1\tseconds\n";
    char b[512];
    for (const auto& r : results) {
        std::snprintf(b, sizeof b,
                      "%s\t%llu\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%.4f\t%"
                      ".1f\n",
                      r.cell.label().c_str(), (unsigned long long)r.seed, r.report.bleu1,
                      r.report.bleu2, r.report.bleu3, r.report.bleu4, r.report.rouge,
                      r.report.meteor, r.report.cider, r.semantic.theme_acc,
                      r.semantic.object_f1, r.semantic.relation_f1, r.seconds);
        out += b;
    }
    // per-cell mean and sample deviation over seeds for the headline metrics
    std::vector<std::string> seen;
    for (const auto& r : results) {
        const std::string l = r.cell.label();
        if (std::find(seen.begin(), seen.end(), l) != seen.end()) continue;
        seen.push_back(l);
        std::vector<double> b1, cd;
        for (const auto& q : results)
            if (q.cell.label() == l) {
                b1.push_back(q.report.bleu1);
                cd.push_back(q.report.cider);
            }
        auto mean = [](const std::vector<double>& x) {
            double s = 0;
            for (double v : x) s += v;
            return s / (double)x.size();
        };
        auto sdev = [&](const std::vector<double>& x) {
            if (x.size() < 2) return 0.0;
            const double m = mean(x);
            double s = 0;
            for (double v : x) s += (v - m) * (v - m);
            return std::sqrt(s / (double)(x.size() - 1));
        };
        std::snprintf(b, sizeof b, "summary\t%s\tbleu1=%.4f+-%.4f\tcider=%.4f+-%.4f\n", l.c_str(),
                      mean(b1), sdev(b1), mean(cd), sdev(cd));
        out += b;
    }
    return out;
}

}  // namespace rsmoe
