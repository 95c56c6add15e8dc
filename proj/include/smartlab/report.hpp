#pragma once

// Report plumbing shared by the command-line pipelines: a stable 64-bit
// config hash (FNV-1a), round-trip double formatting for CSV cells, a
// structured pass/fail summary record, and a single-writer file helper.
// Output files carry no timestamps, so identical configs produce
// byte-identical artifacts.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace smartlab {

// Fowler–Noll–Vo 1a over the bytes of s.
std::uint64_t fnv1a64(std::string_view s);

// 16 lower-case hex digits, zero padded.
std::string hex64(std::uint64_t v);

// Shortest representation that round-trips a double ("%.17g").
std::string fmt_g17(double v);

// Structured per-run record: named pass/fail checks (each with observed and
// expected text), fitted constants, and free-form notes.  Rendered as a
// deterministic line-oriented text block, one record per line:
//   # summary <name>
//   # config-hash <16 hex>
//   check <name> pass|FAIL observed <...> expected <...>
//   const <name> <value>
//   note <text>
class Summary {
public:
    Summary(std::string name, std::uint64_t config_hash);

    void check(std::string_view name, bool pass, std::string_view observed,
               std::string_view expected);
    void constant(std::string_view name, double value);
    void note(std::string_view text);

    bool all_pass() const { return failures_ == 0; }
    int failures() const { return failures_; }
    std::uint64_t config_hash() const { return hash_; }

    std::string str() const;

private:
    std::string name_;
    std::uint64_t hash_ = 0;
    int failures_ = 0;
    std::vector<std::string> lines_;
};

// Writes content to path, creating parent directories; throws
// std::runtime_error on I/O failure.
void write_file(const std::string& path, std::string_view content);

} // namespace smartlab
