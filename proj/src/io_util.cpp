#include "rsmoe/io_util.hpp"

#include <fstream>
#include <sstream>

namespace rsmoe {

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << content;
    if (!f) throw IoError("write failed for " + path);
}

}  // namespace rsmoe
