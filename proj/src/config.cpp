#include "rsmoe/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <vector>

#include "rsmoe/io_util.hpp"

namespace rsmoe {

namespace {

struct Field {
    const char* name;
    bool is_int;
    int ModelConfig::*i;
    double ModelConfig::*d;
};

const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        {"d_model", true, &ModelConfig::d_model, nullptr},
        {"heads", true, &ModelConfig::heads, nullptr},
        {"vit_blocks", true, &ModelConfig::vit_blocks, nullptr},
        {"vlm_blocks", true, &ModelConfig::vlm_blocks, nullptr},
        {"llm_blocks", true, &ModelConfig::llm_blocks, nullptr},
        {"ffn_hidden", true, &ModelConfig::ffn_hidden, nullptr},
        {"n_queries", true, &ModelConfig::n_queries, nullptr},
        {"image", true, &ModelConfig::image, nullptr},
        {"patch", true, &ModelConfig::patch, nullptr},
        {"max_len", true, &ModelConfig::max_len, nullptr},
        {"lora_rank", true, &ModelConfig::lora_rank, nullptr},
        {"lora_alpha", false, nullptr, &ModelConfig::lora_alpha},
    };
    return f;
}

}  // namespace

void ModelConfig::validate() const {
    if (d_model <= 0 || heads <= 0 || d_model % heads != 0)
        throw ConfigError("d_model must be a positive multiple of heads");
    if (vit_blocks <= 0 || vlm_blocks <= 0 || llm_blocks <= 0)
        throw ConfigError("block counts must be positive");
    if (ffn_hidden <= 0) throw ConfigError("ffn_hidden must be positive");
    if (n_queries <= 0) throw ConfigError("n_queries must be positive");
    if (image <= 0 || patch <= 0 || image % patch != 0)
        throw ConfigError("image must be a positive multiple of patch");
    if (max_len < 8) throw ConfigError("max_len must be at least 8");
    if (lora_rank <= 0) throw ConfigError("lora_rank must be positive");
    if (lora_alpha <= 0.0) throw ConfigError("lora_alpha must be positive");
}

std::string ModelConfig::serialize() const {
    std::string out;
    char buf[64];
    for (const auto& f : fields()) {
        if (f.is_int)
            std::snprintf(buf, sizeof buf, "%s=%d\n", f.name, this->*(f.i));
        else
            std::snprintf(buf, sizeof buf, "%s=%.17g\n", f.name, this->*(f.d));
        out += buf;
    }
    return out;
}

ModelConfig ModelConfig::parse(const std::string& text) {
    ModelConfig cfg;
    std::vector<bool> seen(fields().size(), false);
    for (const auto& line : split(text, '\n')) {
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("model config line without '=': " + line);
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        bool matched = false;
        for (size_t i = 0; i < fields().size(); ++i) {
            const Field& f = fields()[i];
            if (key != f.name) continue;
            if (f.is_int)
                cfg.*(f.i) = std::atoi(val.c_str());
            else
                cfg.*(f.d) = std::atof(val.c_str());
            seen[i] = true;
            matched = true;
            break;
        }
        if (!matched) throw ConfigError("unknown model config key: " + key);
    }
    for (size_t i = 0; i < fields().size(); ++i)
        if (!seen[i]) throw ConfigError(std::string("model config missing key: ") + fields()[i].name);
    cfg.validate();
    return cfg;
}

}  // namespace rsmoe
