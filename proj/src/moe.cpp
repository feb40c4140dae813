#include "rsmoe/moe.hpp"

#include <cmath>
#include <cstring>

namespace rsmoe {

namespace {

// Pairs two params() listings taken with the same prefix and copies data and
// trainability right to left. Layouts must match exactly.
void copy_params(const ParamList& src, const ParamList& dst) {
    if (src.size() != dst.size()) throw ConfigError("copy_params: layout mismatch");
    for (size_t i = 0; i < src.size(); ++i) {
        if (src[i].name != dst[i].name || src[i].t.shape() != dst[i].t.shape())
            throw ConfigError("copy_params: mismatch at " + src[i].name);
        Tensor t = dst[i].t;
        std::memcpy(t.data(), src[i].t.data(), src[i].t.numel() * sizeof(double));
        t.set_requires_grad(src[i].t.requires_grad());
    }
}

void require_merged(const ParamList& ps, const char* what) {
    for (const auto& p : ps)
        if (p.name.find(".lora_") != std::string::npos)
            throw ConfigError(std::string(what) + ": merge adapters first");
}

int attach_decoder_sites(DecoderModel& d, int rank, double alpha, Rng& rng) {
    int n = 0;
    for (auto& b : d.blocks) {
        b.attn.q.attach(rank, alpha, rng);
        b.attn.v.attach(rank, alpha, rng);
        b.ffn.fc1.attach(rank, alpha, rng);
        b.ffn.fc2.attach(rank, alpha, rng);
        n += 4;
    }
    return n;
}

int merge_decoder_sites(DecoderModel& d) {
    int n = 0;
    for (auto& b : d.blocks) {
        b.attn.q.merge();
        b.attn.v.merge();
        b.ffn.fc1.merge();
        b.ffn.fc2.merge();
        n += 4;
    }
    return n;
}

}  // namespace

CaptionModel::CaptionModel(const ModelConfig& config, int vocab, uint64_t seed) : cfg(config) {
    cfg.validate();
    Rng gi = make_rng(seed, 10);
    Rng gv = make_rng(seed, 11);
    Rng gl = make_rng(seed, 12);
    image_enc = ImageEncoder(cfg, gi);
    vlm = VlmEncoder(cfg, vocab, gv);
    llm = DecoderModel(cfg, vocab, gl);
}

Tensor CaptionModel::encode(const Tensor& image, const std::vector<int>& instr_ids) const {
    return vlm.forward(image_enc.forward(image), instr_ids);
}

ParamList CaptionModel::params() const {
    ParamList out;
    image_enc.params("img", out);
    vlm.params("vlm", out);
    llm.params("llm", out);
    return out;
}

int attach_vlm_adapters(VlmEncoder& e, int rank, double alpha, Rng& rng) {
    int n = 0;
    for (auto& b : e.blocks) {
        b.self_attn.q.attach(rank, alpha, rng);
        b.self_attn.v.attach(rank, alpha, rng);
        b.cross_attn.q.attach(rank, alpha, rng);
        b.cross_attn.k.attach(rank, alpha, rng);
        b.cross_attn.v.attach(rank, alpha, rng);
        b.cross_attn.o.attach(rank, alpha, rng);
        b.ffn.fc1.attach(rank, alpha, rng);
        b.ffn.fc2.attach(rank, alpha, rng);
        n += 8;
    }
    e.final_ffn.fc1.attach(rank, alpha, rng);
    e.final_ffn.fc2.attach(rank, alpha, rng);
    return n + 2;
}

int merge_vlm_adapters(VlmEncoder& e) {
    int n = 0;
    for (auto& b : e.blocks) {
        b.self_attn.q.merge();
        b.self_attn.v.merge();
        b.cross_attn.q.merge();
        b.cross_attn.k.merge();
        b.cross_attn.v.merge();
        b.cross_attn.o.merge();
        b.ffn.fc1.merge();
        b.ffn.fc2.merge();
        n += 8;
    }
    e.final_ffn.fc1.merge();
    e.final_ffn.fc2.merge();
    return n + 2;
}

int attach_stage1_adapters(CaptionModel& m, Rng& rng) {
    const int n = attach_vlm_adapters(m.vlm, m.cfg.lora_rank, m.cfg.lora_alpha, rng);
    return n + attach_decoder_sites(m.llm, m.cfg.lora_rank, m.cfg.lora_alpha, rng);
}

int merge_stage1_adapters(CaptionModel& m) {
    return merge_vlm_adapters(m.vlm) + merge_decoder_sites(m.llm);
}

int attach_expert_adapters(DecoderModel& d, int rank, double alpha, Rng& rng) {
    return attach_decoder_sites(d, rank, alpha, rng);
}

int merge_expert_adapters(DecoderModel& d) { return merge_decoder_sites(d); }

Router::Router(const Tensor& tok_table, int n_experts, uint64_t seed) {
    if (!tok_table.defined() || tok_table.shape().size() != 2)
        throw ConfigError("router: token table must be 2d");
    if (n_experts <= 0) throw ConfigError("router: need at least one expert");
    emb = Tensor::from(tok_table.shape(),
                       std::vector<double>(tok_table.data(), tok_table.data() + tok_table.numel()));
    const int d = tok_table.cols();
    Rng g = make_rng(seed, 20);
    trunk = Linear(d, d, g);
    for (int i = 0; i < n_experts; ++i) heads.emplace_back(d, 1, g);
}

Tensor Router::features(const std::vector<int>& instr_ids) const {
    if (instr_ids.empty()) throw InputError("router: empty instruction");
    return gelu(trunk.forward(mean_rows(embedding(emb, instr_ids))));
}

Tensor Router::head_score(int head, const Tensor& feat) const {
    if (head < 0 || head >= (int)heads.size()) throw InputError("router: head out of range");
    return heads[head].forward(feat);
}

std::vector<double> Router::probs(const std::vector<int>& instr_ids) const {
    NoGradGuard ng;
    Tensor feat = features(instr_ids);
    std::vector<double> s(heads.size());
    for (size_t i = 0; i < heads.size(); ++i) s[i] = heads[i].forward(feat).item();
    double mx = s[0];
    for (double v : s) mx = std::max(mx, v);
    double z = 0.0;
    for (double& v : s) {
        v = std::exp(v - mx);
        z += v;
    }
    for (double& v : s) v /= z;
    return s;
}

int Router::route(const std::vector<int>& instr_ids) const {
    std::vector<double> p = probs(instr_ids);
    int best = 0;
    for (size_t i = 1; i < p.size(); ++i)
        if (p[i] > p[best]) best = (int)i;
    return best;
}

void Router::params(const std::string& prefix, ParamList& out) const {
    add_param(out, prefix + ".emb", emb);
    trunk.params(prefix + ".trunk", out);
    for (size_t i = 0; i < heads.size(); ++i)
        heads[i].params(prefix + ".head" + std::to_string(i), out);
}

ParamList MoeModel::params() const {
    ParamList out;
    image_enc.params("img", out);
    vlm.params("vlm", out);
    for (size_t i = 0; i < experts.size(); ++i)
        experts[i].params("expert" + std::to_string(i), out);
    if (use_router) router.params("router", out);
    return out;
}

std::vector<std::string> roles_for(int n_experts) {
    switch (n_experts) {
        case 1: return {"full"};
        case 2: return {"theme", "details"};
        case 3: return {"theme", "objects", "relations"};
        case 4: return {"theme", "objects", "positions", "relations"};
        default: throw ConfigError("roles_for: expert count must be 1..4");
    }
}

std::string instruction_for(const std::string& role) {
    if (role == "full") return "describe the image";
    if (role == "theme") return "describe the theme of the image";
    if (role == "objects") return "describe the objects in the image";
    if (role == "relations") return "describe the relations in the image";
    if (role == "positions") return "describe the positions in the image";
    if (role == "details") return "describe the details of the image";
    throw ConfigError("instruction_for: unknown role " + role);
}

std::string target_for(const std::string& role, const scene::CaptionBundle& c) {
    if (role == "full") return c.full_caption;
    if (role == "theme") return c.theme_sentence;
    if (role == "objects") return c.object_sentence;
    if (role == "relations") return c.relation_sentence;
    if (role == "positions") return c.position_sentence;
    if (role == "details") return c.object_sentence + " . " + c.relation_sentence;
    throw ConfigError("target_for: unknown role " + role);
}

MoeModel build_moe(const CaptionModel& m, int n_experts, bool use_router, uint64_t seed) {
    ParamList src = m.params();
    require_merged(src, "build_moe");

    MoeModel out;
    out.cfg = m.cfg;
    out.roles = roles_for(n_experts);
    out.use_router = use_router;

    const int vocab = m.llm.vocab;
    Rng dummy = make_rng(seed, 30);
    out.image_enc = ImageEncoder(m.cfg, dummy);
    out.vlm = VlmEncoder(m.cfg, vocab, dummy);
    {
        ParamList a, b;
        m.image_enc.params("img", a);
        out.image_enc.params("img", b);
        copy_params(a, b);
    }
    {
        ParamList a, b;
        m.vlm.params("vlm", a);
        out.vlm.params("vlm", b);
        copy_params(a, b);
    }
    for (int i = 0; i < n_experts; ++i) out.experts.push_back(m.llm.clone());
    if (use_router) out.router = Router(m.llm.tok.table, n_experts, seed);
    return out;
}

MoeModel build_moe_fresh(const ModelConfig& cfg, int vocab, int n_experts, bool use_router,
                         uint64_t seed) {
    MoeModel out;
    out.cfg = cfg;
    out.cfg.validate();
    out.roles = roles_for(n_experts);
    out.use_router = use_router;
    Rng gi = make_rng(seed, 10);
    Rng gv = make_rng(seed, 11);
    out.image_enc = ImageEncoder(cfg, gi);
    out.vlm = VlmEncoder(cfg, vocab, gv);
    for (int i = 0; i < n_experts; ++i) {
        Rng gl = make_rng(seed, 12 + (uint64_t)i);
        out.experts.emplace_back(cfg, vocab, gl);
    }
    if (use_router) out.router = Router(out.experts[0].tok.table, n_experts, seed);
    return out;
}

MoeCaption moe_generate(const MoeModel& m, const Tensor& image, const Vocab& v) {
    NoGradGuard ng;
    MoeCaption out;
    Tensor f_img = m.image_enc.forward(image);
    for (size_t r = 0; r < m.roles.size(); ++r) {
        std::vector<int> instr = v.encode(instruction_for(m.roles[r]));
        Tensor f_vlm = m.vlm.forward(f_img, instr);
        const int e = m.use_router ? m.router.route(instr) : (int)r;
        std::vector<int> ids = m.experts[e].generate(f_vlm, m.cfg.max_len);
        out.segments.push_back(v.decode(ids));
        out.expert_of.push_back(e);
    }
    for (const auto& s : out.segments) {
        if (s.empty()) continue;
        if (!out.text.empty()) out.text += " . ";
        out.text += s;
    }
    return out;
}

}  // namespace rsmoe
