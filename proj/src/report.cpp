#include "smartlab/report.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace smartlab {

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

Summary::Summary(std::string name, std::uint64_t config_hash)
    : name_(std::move(name)), hash_(config_hash) {}

void Summary::check(std::string_view name, bool pass, std::string_view observed,
                    std::string_view expected) {
    std::string line = "check ";
    line.append(name);
    line += pass ? " pass" : " FAIL";
    line += " observed ";
    line.append(observed);
    line += " expected ";
    line.append(expected);
    lines_.push_back(std::move(line));
    if (!pass) ++failures_;
}

void Summary::constant(std::string_view name, double value) {
    std::string line = "const ";
    line.append(name);
    line += ' ';
    line += fmt_g17(value);
    lines_.push_back(std::move(line));
}

void Summary::note(std::string_view text) {
    std::string line = "note ";
    line.append(text);
    lines_.push_back(std::move(line));
}

std::string Summary::str() const {
    std::string out = "# summary " + name_ + "\n# config-hash " + hex64(hash_) + "\n";
    for (const std::string& l : lines_) {
        out += l;
        out += '\n';
    }
    return out;
}

void write_file(const std::string& path, std::string_view content) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(p.parent_path(), ec);
        if (ec) throw std::runtime_error("cannot create directory " + p.parent_path().string());
    }
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw std::runtime_error("write failed for " + path);
}

} // namespace smartlab
