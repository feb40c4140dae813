#include "rsmoe/checkpoint.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <map>

#include "rsmoe/io_util.hpp"

namespace rsmoe {

namespace {

constexpr const char* kMagic = "rsmoe-checkpoint-v1";

struct TensorRow {
    std::string name;
    Shape shape;
    bool requires_grad = false;
};

std::string render(const std::string& kind, const std::string& stage, const ModelConfig& cfg,
                   const Vocab& v, const std::vector<std::string>& roles, int use_router,
                   const ParamList& ps) {
    std::string h;
    h += "kind=" + kind + "\n";
    h += "stage=" + stage + "\n";
    if (kind == "moe") {
        h += "use_router=" + std::to_string(use_router) + "\n";
        std::string r;
        for (size_t i = 0; i < roles.size(); ++i) r += (i ? "," : "") + roles[i];
        h += "roles=" + r + "\n";
    }
    std::string words;
    for (int i = 4; i < v.size(); ++i) {
        if (i > 4) words += ' ';
        words += v.words[i];
    }
    h += "vocab=" + words + "\n";
    for (const auto& line : split(cfg.serialize(), '\n'))
        if (!line.empty()) h += "cfg." + line + "\n";

    size_t payload = 0;
    h += "tensors=" + std::to_string(ps.size()) + "\n";
    for (const auto& p : ps) {
        if (p.name.find(".lora_") != std::string::npos)
            throw ConfigError("checkpoint: merge adapters before saving");
        h += "tensor=" + p.name + " " + std::to_string(p.t.shape().size());
        for (int d : p.t.shape()) h += " " + std::to_string(d);
        h += std::string(" ") + (p.t.requires_grad() ? "1" : "0") + "\n";
        payload += p.t.numel();
    }
    h += "payload_bytes=" + std::to_string(payload * sizeof(double)) + "\n";
    h += "end\n";
    return h;
}

std::string pack(const std::string& header, const ParamList& ps) {
    size_t total = 0;
    for (const auto& p : ps) total += p.t.numel();
    std::string body = header;
    const size_t at = body.size();
    body.resize(at + total * sizeof(double));
    char* dst = body.data() + at;
    for (const auto& p : ps) {
        std::memcpy(dst, p.t.data(), p.t.numel() * sizeof(double));
        dst += p.t.numel() * sizeof(double);
    }
    char line[64];
    std::snprintf(line, sizeof line, "checksum=%016" PRIx64 "\n",
                  hash_bytes(body.data(), body.size()));
    return std::string(kMagic) + "\n" + line + body;
}

struct Header {
    std::map<std::string, std::string> kv;
    std::vector<TensorRow> tensors;
    std::string payload;  // raw doubles
};

Header read_checkpoint(const std::string& path) {
    const std::string content = read_text_file(path);
    size_t e1 = content.find('\n');
    if (e1 == std::string::npos || content.substr(0, e1) != kMagic)
        throw CheckpointError(path + " is not a checkpoint (bad magic)");
    size_t e2 = content.find('\n', e1 + 1);
    if (e2 == std::string::npos) throw CheckpointError("missing checksum line");
    const std::string cs_line = content.substr(e1 + 1, e2 - e1 - 1);
    if (cs_line.rfind("checksum=", 0) != 0) throw CheckpointError("missing checksum line");
    uint64_t stored = 0;
    if (std::sscanf(cs_line.c_str() + 9, "%" SCNx64, &stored) != 1)
        throw CheckpointError("unreadable checksum");
    const uint64_t actual = hash_bytes(content.data() + e2 + 1, content.size() - e2 - 1);
    if (stored != actual) throw IntegrityError("checkpoint checksum mismatch in " + path);

    Header h;
    size_t pos = e2 + 1;
    while (true) {
        size_t e = content.find('\n', pos);
        if (e == std::string::npos) throw CheckpointError("unterminated header");
        const std::string line = content.substr(pos, e - pos);
        pos = e + 1;
        if (line == "end") break;
        size_t eq = line.find('=');
        if (eq == std::string::npos) throw CheckpointError("bad header line: " + line);
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "tensor") {
            auto f = split(val, ' ');
            if (f.size() < 3) throw CheckpointError("bad tensor row: " + line);
            TensorRow row;
            row.name = f[0];
            const int rank = std::atoi(f[1].c_str());
            if (rank < 0 || (int)f.size() != rank + 3)
                throw CheckpointError("bad tensor row: " + line);
            for (int i = 0; i < rank; ++i) row.shape.push_back(std::atoi(f[2 + i].c_str()));
            row.requires_grad = f.back() == "1";
            h.tensors.push_back(std::move(row));
        } else {
            h.kv[key] = val;
        }
    }
    h.payload = content.substr(pos);
    auto it = h.kv.find("payload_bytes");
    if (it == h.kv.end()) throw CheckpointError("header missing payload_bytes");
    if ((size_t)std::atoll(it->second.c_str()) != h.payload.size())
        throw IntegrityError("checkpoint payload truncated: expected " + it->second + " bytes, got " +
                             std::to_string(h.payload.size()));
    return h;
}

const std::string& field(const Header& h, const std::string& key) {
    auto it = h.kv.find(key);
    if (it == h.kv.end()) throw CheckpointError("header missing " + key);
    return it->second;
}

ModelConfig config_of(const Header& h) {
    std::string text;
    for (const auto& [k, v] : h.kv)
        if (k.rfind("cfg.", 0) == 0) text += k.substr(4) + "=" + v + "\n";
    return ModelConfig::parse(text);
}

Vocab vocab_of(const Header& h) {
    std::vector<std::string> words;
    for (const auto& w : split(field(h, "vocab"), ' '))
        if (!w.empty()) words.push_back(w);
    return Vocab::build(std::move(words));
}

void fill_params(const Header& h, const ParamList& ps) {
    if (h.tensors.size() != ps.size())
        throw CheckpointError("checkpoint has " + std::to_string(h.tensors.size()) +
                              " tensors, model expects " + std::to_string(ps.size()));
    const char* src = h.payload.data();
    for (size_t i = 0; i < ps.size(); ++i) {
        if (h.tensors[i].name != ps[i].name || h.tensors[i].shape != ps[i].t.shape())
            throw CheckpointError("checkpoint layout mismatch at " + h.tensors[i].name);
        Tensor t = ps[i].t;
        std::memcpy(t.data(), src, t.numel() * sizeof(double));
        src += t.numel() * sizeof(double);
        t.set_requires_grad(h.tensors[i].requires_grad);
    }
}

}  // namespace

void save_caption_model(const std::string& path, const CaptionModel& m, const Vocab& v,
                        const std::string& stage_tag) {
    ParamList ps = m.params();
    write_text_file(path, pack(render("caption", stage_tag, m.cfg, v, {}, 0, ps), ps));
}

CaptionModel load_caption_model(const std::string& path, Vocab& vocab_out,
                                std::string& stage_out) {
    Header h = read_checkpoint(path);
    if (field(h, "kind") != "caption")
        throw CheckpointError(path + " holds a " + field(h, "kind") + " model, expected caption");
    vocab_out = vocab_of(h);
    stage_out = field(h, "stage");
    CaptionModel m(config_of(h), vocab_out.size(), 0);
    fill_params(h, m.params());
    return m;
}

void save_moe_model(const std::string& path, const MoeModel& m, const Vocab& v,
                    const std::string& stage_tag) {
    ParamList ps = m.params();
    write_text_file(
        path, pack(render("moe", stage_tag, m.cfg, v, m.roles, m.use_router ? 1 : 0, ps), ps));
}

MoeModel load_moe_model(const std::string& path, Vocab& vocab_out, std::string& stage_out) {
    Header h = read_checkpoint(path);
    if (field(h, "kind") != "moe")
        throw CheckpointError(path + " holds a " + field(h, "kind") + " model, expected moe");
    vocab_out = vocab_of(h);
    stage_out = field(h, "stage");
    const bool use_router = field(h, "use_router") == "1";
    auto roles = split(field(h, "roles"), ',');
    MoeModel m = build_moe_fresh(config_of(h), vocab_out.size(), (int)roles.size(), use_router, 0);
    if (m.roles != roles) throw CheckpointError("checkpoint roles do not match the expert count");
    fill_params(h, m.params());
    return m;
}

std::string checkpoint_kind(const std::string& path) {
    return field(read_checkpoint(path), "kind");
}

}  // namespace rsmoe
