#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rsmoe/error.hpp"

namespace rsmoe {

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        size_t p = s.find(sep, start);
        if (p == std::string::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, p - start));
        start = p + 1;
    }
}

inline std::vector<std::string> split_words(const std::string& s) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && s[i] == ' ') ++i;
        size_t j = i;
        while (j < s.size() && s[j] != ' ') ++j;
        if (j > i) out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

namespace detail {
inline const char* b64_alphabet() {
    return "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}
}  // namespace detail

inline std::string base64_encode(const std::vector<uint8_t>& in) {
    const char* tab = detail::b64_alphabet();
    std::string out;
    out.reserve((in.size() + 2) / 3 * 4);
    size_t i = 0;
    for (; i + 3 <= in.size(); i += 3) {
        uint32_t v = (in[i] << 16) | (in[i + 1] << 8) | in[i + 2];
        out += tab[(v >> 18) & 63];
        out += tab[(v >> 12) & 63];
        out += tab[(v >> 6) & 63];
        out += tab[v & 63];
    }
    if (i + 1 == in.size()) {
        uint32_t v = in[i] << 16;
        out += tab[(v >> 18) & 63];
        out += tab[(v >> 12) & 63];
        out += "==";
    } else if (i + 2 == in.size()) {
        uint32_t v = (in[i] << 16) | (in[i + 1] << 8);
        out += tab[(v >> 18) & 63];
        out += tab[(v >> 12) & 63];
        out += tab[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

inline std::vector<uint8_t> base64_decode(const std::string& in) {
    if (in.size() % 4 != 0) throw DataError("base64: length not a multiple of 4");
    int8_t rev[256];
    for (int i = 0; i < 256; ++i) rev[i] = -1;
    const char* tab = detail::b64_alphabet();
    for (int i = 0; i < 64; ++i) rev[(uint8_t)tab[i]] = (int8_t)i;
    std::vector<uint8_t> out;
    out.reserve(in.size() / 4 * 3);
    for (size_t i = 0; i < in.size(); i += 4) {
        int pad = 0;
        uint32_t v = 0;
        for (int k = 0; k < 4; ++k) {
            char c = in[i + k];
            if (c == '=') {
                if (i + 4 != in.size() || k < 2) throw DataError("base64: misplaced padding");
                ++pad;
                v <<= 6;
                continue;
            }
            if (pad > 0 || rev[(uint8_t)c] < 0)
                throw DataError(std::string("base64: invalid character '") + c + "'");
            v = (v << 6) | (uint32_t)rev[(uint8_t)c];
        }
        out.push_back((v >> 16) & 0xff);
        if (pad < 2) out.push_back((v >> 8) & 0xff);
        if (pad < 1) out.push_back(v & 0xff);
    }
    return out;
}

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace rsmoe
